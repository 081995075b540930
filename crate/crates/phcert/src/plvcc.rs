//! Partial linearization via change of coordinates: momentum transform
//! p = T_d^T(q) p_orig with T_d the upper Cholesky factor of M_d^-1, which
//! makes the kinetic block of the transformed Hamiltonian the identity and
//! yields the canonical pH form
//!
//!   dq = A(q) grad_p H,  dp = -A^T(q) grad_q H + (J(q,p) - D(q,p)) grad_p H,
//!   H = 1/2 p^T p + U(q).

use std::sync::Arc;

use crate::model::{MatrixField, ScalarField, State};
use crate::pidpbc::ClosedLoopSystem;
use crate::{Error, MatF, Result, VecF};

/// Upper Cholesky factorization: returns upper-triangular T with strictly
/// positive diagonal such that T T^T = S.
///
/// Computed as the lower Cholesky factor of the index-reversed matrix,
/// reversed back.
pub fn upper_cholesky(s: &MatF) -> Result<MatF> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::Shape("cholesky input must be square".into()));
    }
    let rev = |m: &MatF| -> MatF {
        MatF::from_fn(n, n, |i, j| m[(n - 1 - i, n - 1 - j)])
    };
    let sr = rev(s);
    // hand-rolled lower Cholesky with pivot reporting
    let mut l = MatF::zeros(n, n);
    for j in 0..n {
        let mut diag = sr[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= 0.0 || !diag.is_finite() {
            // report the row in the original (unreversed) matrix
            return Err(Error::NotPositiveDefinite(n - 1 - j));
        }
        l[(j, j)] = diag.sqrt();
        for i in (j + 1)..n {
            let mut acc = sr[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / l[(j, j)];
        }
    }
    Ok(rev(&l))
}

/// Inverse of an upper-triangular matrix by back substitution.
pub fn inv_upper_triangular(t: &MatF) -> Result<MatF> {
    let n = t.nrows();
    let mut inv = MatF::zeros(n, n);
    for col in 0..n {
        for i in (0..=col).rev() {
            if t[(i, i)] == 0.0 {
                return Err(Error::DegenerateTransform);
            }
            let mut acc = if i == col { 1.0 } else { 0.0 };
            for k in (i + 1)..=col {
                acc -= t[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = acc / t[(i, i)];
        }
    }
    Ok(inv)
}

/// Upper-triangular projection with halved diagonal; satisfies
/// psi(Q) + psi(Q)^T = Q for symmetric Q.
fn psi_upper(q: &MatF) -> MatF {
    let n = q.nrows();
    MatF::from_fn(n, n, |i, j| {
        if i < j {
            q[(i, j)]
        } else if i == j {
            0.5 * q[(i, i)]
        } else {
            0.0
        }
    })
}

/// Forward-mode derivative of the upper Cholesky factor: given T with
/// T T^T = S and the partial dS, returns the upper-triangular dT solving
/// (dT) T^T + T (dT)^T = dS, via dT = T psi(T^-1 dS T^-T).
pub fn cholesky_partial(t: &MatF, t_inv: &MatF, ds: &MatF) -> MatF {
    let q = t_inv * ds * t_inv.transpose();
    t * psi_upper(&q)
}

/// All n partials of the upper Cholesky factor of a matrix field S(q).
pub fn cholesky_partials(
    t: &MatF,
    t_inv: &MatF,
    ds_list: &[MatF],
) -> Vec<MatF> {
    ds_list
        .iter()
        .map(|ds| cholesky_partial(t, t_inv, ds))
        .collect()
}

type MatrixQpFn = Arc<dyn Fn(&VecF, &VecF) -> MatF + Send + Sync>;

/// Everything the canonical dynamics and the certificate assembly need at
/// one configuration, computed once per evaluation point.
#[derive(Clone, Debug)]
pub struct CanonicalEval {
    pub a: MatF,
    /// dA/dq_i for each coordinate.
    pub da: Vec<MatF>,
    pub grad_u: VecF,
    pub hess_u: MatF,
}

enum Backend {
    Direct {
        a: MatrixField,
        j: MatrixQpFn,
        d: MatrixField,
        u: ScalarField,
    },
    ClosedLoop(Arc<ClosedLoopSystem>),
}

/// Canonical pH system: identity kinetic block, coordinate matrix A(q),
/// skew interconnection J(q, p), damping D(q, p), potential U with its
/// minimum at the origin.
pub struct CanonicalPHSystem {
    n: usize,
    origin_shift: VecF,
    /// U value at the canonical origin, subtracted so that U(0) = 0 (the
    /// sandwich bounds k1 ||x||^2 <= S <= k2 ||x||^2 need S(0) = 0).
    u_offset: f64,
    backend: Backend,
}

impl CanonicalPHSystem {
    /// Direct construction from fields, for analytic benchmarks.
    pub fn new_direct(
        n: usize,
        a: MatrixField,
        j: impl Fn(&VecF, &VecF) -> MatF + Send + Sync + 'static,
        d: MatrixField,
        u: ScalarField,
    ) -> Self {
        let u_offset = u.value(&VecF::zeros(n));
        Self {
            n,
            origin_shift: VecF::zeros(n),
            u_offset,
            backend: Backend::Direct {
                a,
                j: Arc::new(j),
                d,
                u,
            },
        }
    }

    /// Canonical system with constant A, constant D and no interconnection;
    /// covers the linear benchmarks.
    pub fn new_constant(a: MatF, d: MatF, u: ScalarField) -> Self {
        let n = a.nrows();
        Self::new_direct(
            n,
            MatrixField::constant(a, false, crate::model::Positivity::None),
            move |_q, _p| MatF::zeros(n, n),
            MatrixField::constant(d, true, crate::model::Positivity::SemiDefinite),
            u,
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// q_star of the underlying closed loop; zero for direct systems.
    pub fn origin_shift(&self) -> &VecF {
        &self.origin_shift
    }

    pub fn a_at(&self, q: &VecF) -> Result<MatF> {
        match &self.backend {
            Backend::Direct { a, .. } => Ok(a.eval_q(q)),
            Backend::ClosedLoop(cl) => Ok(Frame::at(cl, q, 0)?.a),
        }
    }

    pub fn d_at(&self, q: &VecF, p: &VecF) -> Result<MatF> {
        match &self.backend {
            Backend::Direct { d, .. } => Ok(d.eval(q, p)),
            Backend::ClosedLoop(cl) => {
                let f = Frame::at(cl, q, 0)?;
                f.damping(cl, p)
            }
        }
    }

    pub fn j_at(&self, q: &VecF, p: &VecF) -> Result<MatF> {
        match &self.backend {
            Backend::Direct { j, .. } => Ok(j(q, p)),
            Backend::ClosedLoop(cl) => {
                let f = Frame::at(cl, q, self.n)?;
                f.interconnection(cl, p)
            }
        }
    }

    pub fn u_value(&self, q: &VecF) -> f64 {
        let raw = match &self.backend {
            Backend::Direct { u, .. } => u.value(q),
            Backend::ClosedLoop(cl) => cl.ud_value(&(q + &self.origin_shift)),
        };
        raw - self.u_offset
    }

    pub fn u_grad(&self, q: &VecF) -> VecF {
        match &self.backend {
            Backend::Direct { u, .. } => u.gradient(q),
            Backend::ClosedLoop(cl) => cl.ud_grad(&(q + &self.origin_shift)),
        }
    }

    pub fn u_hess(&self, q: &VecF) -> MatF {
        match &self.backend {
            Backend::Direct { u, .. } => u.hessian(q),
            Backend::ClosedLoop(cl) => cl.ud_hess(&(q + &self.origin_shift)),
        }
    }

    /// H(q, p) = 1/2 p^T p + U(q).
    pub fn hamiltonian(&self, s: &State) -> f64 {
        0.5 * s.p.norm_squared() + self.u_value(&s.q)
    }

    /// grad H = col(grad U, p).
    pub fn grad_h(&self, s: &State) -> VecF {
        let gu = self.u_grad(&s.q);
        let mut out = VecF::zeros(2 * self.n);
        out.rows_mut(0, self.n).copy_from(&gu);
        out.rows_mut(self.n, self.n).copy_from(&s.p);
        out
    }

    /// A, dA/dq_i, grad U, hess U at one configuration.
    pub fn eval_bundle(&self, q: &VecF) -> Result<CanonicalEval> {
        let (a, da) = match &self.backend {
            Backend::Direct { a, .. } => {
                let av = a.eval_q(q);
                let da = (0..self.n).map(|i| a.partial(q, i)).collect();
                (av, da)
            }
            Backend::ClosedLoop(cl) => {
                let f = Frame::at(cl, q, self.n)?;
                let da = f.a_partials(cl)?;
                (f.a, da)
            }
        };
        Ok(CanonicalEval {
            a,
            da,
            grad_u: self.u_grad(q),
            hess_u: self.u_hess(q),
        })
    }

    /// Canonical vector field: dq = A p, dp = -A^T grad U + (J - D) p.
    pub fn deriv(&self, s: &State) -> Result<(VecF, VecF)> {
        match &self.backend {
            Backend::Direct { a, j, d, u } => {
                let av = a.eval_q(&s.q);
                let dq = &av * &s.p;
                let dp = -(av.transpose() * u.gradient(&s.q))
                    + (j(&s.q, &s.p) - d.eval(&s.q, &s.p)) * &s.p;
                Ok((dq, dp))
            }
            Backend::ClosedLoop(cl) => {
                let f = Frame::at(cl, &s.q, self.n)?;
                let dq = &f.a * &s.p;
                let j = f.interconnection(cl, &s.p)?;
                let d = f.damping(cl, &s.p)?;
                let dp = -(f.a.transpose() * self.u_grad(&s.q)) + (j - d) * &s.p;
                Ok((dq, dp))
            }
        }
    }

    pub fn validate_assumptions(
        &self,
        region: &crate::certify::Region,
    ) -> crate::model::AssumptionReport {
        let u = ScalarField::new({
            let s = self.share();
            move |q: &VecF| s.u_value(q)
        })
        .with_gradient({
            let s = self.share();
            move |q: &VecF| s.u_grad(q)
        })
        .with_hessian({
            let s = self.share();
            move |q: &VecF| s.u_hess(q)
        });
        crate::model::validate_assumptions(
            &u,
            &VecF::zeros(self.n),
            {
                let s = self.share();
                move |q: &VecF| s.a_at(q).expect("A evaluable on region")
            },
            {
                let s = self.share();
                move |q: &VecF, p: &VecF| s.d_at(q, p).expect("D evaluable on region")
            },
            region,
        )
    }

    fn share(&self) -> CanonicalPHSystem {
        CanonicalPHSystem {
            n: self.n,
            origin_shift: self.origin_shift.clone(),
            u_offset: self.u_offset,
            backend: match &self.backend {
                Backend::Direct { a, j, d, u } => Backend::Direct {
                    a: a.clone(),
                    j: j.clone(),
                    d: d.clone(),
                    u: u.clone(),
                },
                Backend::ClosedLoop(cl) => Backend::ClosedLoop(cl.clone()),
            },
        }
    }
}

impl Clone for CanonicalPHSystem {
    fn clone(&self) -> Self {
        self.share()
    }
}

/// Per-configuration cache: everything derived from M_d^-1 at one q is
/// computed once and reused across A, D, J and J_3.
struct Frame {
    q_orig: VecF,
    m_inv: MatF,
    t: MatF,
    t_inv: MatF,
    /// dT_d/dq_i, present when `n_partials` > 0 was requested.
    dt: Vec<MatF>,
    a: MatF,
}

impl Frame {
    fn at(cl: &ClosedLoopSystem, q: &VecF, n_partials: usize) -> Result<Frame> {
        let q_orig = q + &cl.gains.q_star;
        let m_inv = cl.base.inertia_inv(&q_orig)?;
        let md_inv = cl.md_inv(&q_orig)?;
        let t = upper_cholesky(&md_inv)?;
        let t_inv = inv_upper_triangular(&t)?;
        let a = &m_inv * t_inv.transpose();
        let dt = (0..n_partials)
            .map(|i| {
                cl.md_inv_partial(&q_orig, i)
                    .map(|ds| cholesky_partial(&t, &t_inv, &ds))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Frame {
            q_orig,
            m_inv,
            t,
            t_inv,
            dt,
            a,
        })
    }

    /// dA/dq_i = -M^-1 (dM/dq_i) M^-1 T^-T - M^-1 T^-T (dT/dq_i)^T T^-T.
    fn a_partials(&self, cl: &ClosedLoopSystem) -> Result<Vec<MatF>> {
        let t_inv_t = self.t_inv.transpose();
        (0..self.dt.len())
            .map(|i| {
                let dm = cl.base.inertia.partial(&self.q_orig, i);
                Ok(-(&self.m_inv) * &dm * &self.m_inv * &t_inv_t
                    - &self.m_inv * &t_inv_t * self.dt[i].transpose() * &t_inv_t)
            })
            .collect()
    }

    /// Momenta in original coordinates: p_orig = T^-T p.
    fn p_orig(&self, p: &VecF) -> VecF {
        self.t_inv.transpose() * p
    }

    /// D = T^T D_d T evaluated at the original-coordinate state.
    fn damping(&self, cl: &ClosedLoopSystem, p: &VecF) -> Result<MatF> {
        let dd = cl.dd(&self.q_orig, &self.p_orig(p))?;
        Ok(self.t.transpose() * dd * &self.t)
    }

    /// J = J_3 + T^T J_orig T with
    /// J_3 = sum_i (a_i b_i^T - b_i a_i^T),
    /// a_i = (dT/dq_i)^T T^-T p, b_i = A^T e_i.
    fn interconnection(&self, cl: &ClosedLoopSystem, p: &VecF) -> Result<MatF> {
        let n = p.len();
        let p_orig = self.p_orig(p);
        let mut j = self.t.transpose() * cl.jmat(&self.q_orig, &p_orig)? * &self.t;
        let at = self.a.transpose();
        for i in 0..self.dt.len() {
            let a_i = self.dt[i].transpose() * self.t_inv.transpose() * p;
            let b_i = at.column(i).into_owned();
            j += &a_i * b_i.transpose() - &b_i * a_i.transpose();
        }
        debug_assert!(self.dt.len() == n || self.dt.is_empty());
        Ok(j)
    }
}

/// Transforms a closed-loop mechanical system into the canonical pH form via
/// the upper-Cholesky momentum change of coordinates.
pub fn to_canonical(cl: &ClosedLoopSystem) -> CanonicalPHSystem {
    let n = cl.n();
    CanonicalPHSystem {
        n,
        origin_shift: cl.gains.q_star.clone(),
        u_offset: cl.ud_value(&cl.gains.q_star),
        backend: Backend::ClosedLoop(Arc::new(cl.clone())),
    }
}

/// Original-coordinate state -> canonical state:
/// q = q_orig - q_star, p = T_d^T(q_orig) p_orig.
pub fn map_state(cl: &ClosedLoopSystem, s: &State) -> Result<State> {
    let md_inv = cl.md_inv(&s.q)?;
    let t = upper_cholesky(&md_inv)?;
    Ok(State {
        q: &s.q - &cl.gains.q_star,
        p: t.transpose() * &s.p,
    })
}

/// Canonical state -> original-coordinate state.
pub fn inverse_map_state(cl: &ClosedLoopSystem, s: &State) -> Result<State> {
    let q_orig = &s.q + &cl.gains.q_star;
    let md_inv = cl.md_inv(&q_orig)?;
    let t = upper_cholesky(&md_inv)?;
    let t_inv = inv_upper_triangular(&t)?;
    Ok(State {
        q: q_orig,
        p: t_inv.transpose() * &s.p,
    })
}
