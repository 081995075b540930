//! PID passivity-based control: control-law evaluation, equilibrium
//! assignability, gain-condition checks, and construction of the shaped
//! closed-loop mechanical system
//!
//!   dq = M^-1 M_d grad_p H_d,  dp = -M_d M^-1 grad_q H_d + (J - D_d) grad_p H_d
//!
//! with M_d = M (M + G K_D G^T)^-1 M and the shaped potential
//! U_d = 1/2 (G^T q + kappa)^T K_I (G^T q + kappa) + U.

use crate::linalg;
use crate::model::{MechanicalSystem, ScalarField, State};
use crate::{Error, MatF, Result, VecF};

const SYM_TOL: f64 = 1e-10;
const EIG_MARGIN: f64 = 1e-12;

/// One PID-PBC instance: gains and the desired configuration.
#[derive(Clone, Debug)]
pub struct GainSet {
    pub kp: MatF,
    pub ki: MatF,
    pub kd: MatF,
    pub q_star: VecF,
}

impl GainSet {
    /// Validates symmetry and (semi-)definiteness: K_I must be PD, K_P and
    /// K_D PSD.
    pub fn new(kp: MatF, ki: MatF, kd: MatF, q_star: VecF) -> Result<Self> {
        let m = ki.nrows();
        for (name, mat) in [("K_P", &kp), ("K_I", &ki), ("K_D", &kd)] {
            if mat.nrows() != m || mat.ncols() != m {
                return Err(Error::InvalidGains(format!("{name} must be {m}x{m}")));
            }
            let scale = 1.0 + linalg::spectral_norm(mat);
            if linalg::symmetry_residual(mat) > SYM_TOL * scale {
                return Err(Error::InvalidGains(format!("{name} is not symmetric")));
            }
        }
        if linalg::min_eig_sym(&ki) < EIG_MARGIN {
            return Err(Error::SingularKi);
        }
        for (name, mat) in [("K_P", &kp), ("K_D", &kd)] {
            if linalg::min_eig_sym(mat) < -EIG_MARGIN {
                return Err(Error::InvalidGains(format!(
                    "{name} must be positive semi-definite"
                )));
            }
        }
        Ok(Self { kp, ki, kd, q_star })
    }

    /// Diagonal gains, the form used by all shipped scenarios.
    pub fn diagonal(kp: &[f64], ki: &[f64], kd: &[f64], q_star: &[f64]) -> Result<Self> {
        Self::new(
            MatF::from_diagonal(&VecF::from_row_slice(kp)),
            MatF::from_diagonal(&VecF::from_row_slice(ki)),
            MatF::from_diagonal(&VecF::from_row_slice(kd)),
            VecF::from_row_slice(q_star),
        )
    }

    pub fn m(&self) -> usize {
        self.ki.nrows()
    }

    pub fn kd_is_zero(&self) -> bool {
        self.kd.iter().all(|v| *v == 0.0)
    }
}

/// kappa = -G^T q_star - K_I^-1 G^T grad U(q_star).
pub fn compute_kappa(sys: &MechanicalSystem, gains: &GainSet) -> Result<VecF> {
    let g = sys.input_map();
    let gu = g.transpose() * sys.potential.gradient(&gains.q_star);
    let ki_inv_gu = gains
        .ki
        .clone()
        .lu()
        .solve(&gu)
        .ok_or(Error::SingularKi)?;
    Ok(-(g.transpose() * &gains.q_star) - ki_inv_gu)
}

/// An equilibrium is assignable iff the unactuated gravity forces vanish:
/// G_perp grad U(q_star) = 0. Trivially true for fully actuated systems.
pub fn check_assignable(sys: &MechanicalSystem, q_star: &VecF) -> bool {
    if sys.is_fully_actuated() {
        return true;
    }
    let residual = sys.input_annihilator() * sys.potential.gradient(q_star);
    residual.norm() <= 1e-9
}

/// Stabilizability condition: hess U(q_star) + G K_I G^T > 0.
/// Returns the pass flag and the minimum eigenvalue as margin.
pub fn check_gain_condition(sys: &MechanicalSystem, gains: &GainSet) -> (bool, f64) {
    let g = sys.input_map();
    let shaped = sys.potential.hessian(&gains.q_star) + &g * &gains.ki * g.transpose();
    let margin = linalg::min_eig_sym(&shaped);
    (margin > 0.0, margin)
}

/// Condition report for C1 (strong convexity of U_d), C2 (bounded
/// M^-1 M_d), and C3 (D_d positive definite), sampled over a region.
#[derive(Clone, Debug)]
pub struct ConditionsReport {
    pub c1_pass: bool,
    pub c1_margin: f64,
    pub c2_pass: bool,
    pub c2_max_norm: f64,
    pub c3_pass: bool,
    pub c3_margin: f64,
}

impl ConditionsReport {
    pub fn all_pass(&self) -> bool {
        self.c1_pass && self.c2_pass && self.c3_pass
    }
}

/// Damping-condition check for the unactuated block.
#[derive(Clone, Debug)]
pub struct DampingCheck {
    pub pass: bool,
    pub note: Option<String>,
}

/// Fully actuated: trivially true (with the note that K_P > 0 carries the
/// damping). Underactuated: requires G_perp D (G_perp)^T > 0 at all samples.
pub fn check_underactuated_damping(
    sys: &MechanicalSystem,
    samples: &[State],
) -> DampingCheck {
    if sys.is_fully_actuated() {
        return DampingCheck {
            pass: true,
            note: Some("fully actuated: requires K_P > 0".into()),
        };
    }
    let gp = sys.input_annihilator();
    let mut min_eig = f64::INFINITY;
    for s in samples {
        let d = sys.damping.eval(&s.q, &s.p);
        let block = &gp * &d * gp.transpose();
        min_eig = min_eig.min(linalg::min_eig_sym(&block));
    }
    DampingCheck {
        pass: min_eig > 0.0,
        note: None,
    }
}

/// The shaped mechanical system of the closed loop. All evaluators are pure;
/// construction validates the gain condition and freezes kappa.
#[derive(Clone)]
pub struct ClosedLoopSystem {
    pub base: MechanicalSystem,
    pub gains: GainSet,
    pub kappa: VecF,
    kd_zero: bool,
}

/// Builds the closed loop, rejecting gain sets that fail the
/// stabilizability condition.
pub fn build_closed_loop(sys: &MechanicalSystem, gains: &GainSet) -> Result<ClosedLoopSystem> {
    if gains.m() != sys.m() {
        return Err(Error::Shape(format!(
            "gain dim {} != m = {}",
            gains.m(),
            sys.m()
        )));
    }
    if gains.q_star.len() != sys.n() {
        return Err(Error::Shape("q_star dim mismatch".into()));
    }
    let (ok, _) = check_gain_condition(sys, gains);
    if !ok {
        return Err(Error::GainConditionFailed);
    }
    let kappa = compute_kappa(sys, gains)?;
    Ok(ClosedLoopSystem {
        base: sys.clone(),
        gains: gains.clone(),
        kappa,
        kd_zero: gains.kd_is_zero(),
    })
}

impl ClosedLoopSystem {
    pub fn n(&self) -> usize {
        self.base.n()
    }

    /// Shaped inertia M_d = M (M + G K_D G^T)^-1 M; equals M when K_D = 0.
    pub fn md(&self, q: &VecF) -> Result<MatF> {
        let m = self.base.inertia_at(q);
        if self.kd_zero {
            return Ok(m);
        }
        let g = self.base.input_map();
        let shifted = &m + &g * &self.gains.kd * g.transpose();
        let inv = shifted.try_inverse().ok_or(Error::SingularInertia)?;
        Ok(&m * inv * &m)
    }

    /// M_d^-1 = M^-1 + M^-1 G K_D G^T M^-1.
    pub fn md_inv(&self, q: &VecF) -> Result<MatF> {
        let minv = self.base.inertia_inv(q)?;
        if self.kd_zero {
            return Ok(minv);
        }
        let g = self.base.input_map();
        Ok(&minv + &minv * &g * &self.gains.kd * g.transpose() * &minv)
    }

    /// d(M_d^-1)/dq_i assembled from dM/dq_i.
    pub fn md_inv_partial(&self, q: &VecF, i: usize) -> Result<MatF> {
        let minv = self.base.inertia_inv(q)?;
        let dm = self.base.inertia.partial(q, i);
        let dminv = -(&minv) * &dm * &minv;
        if self.kd_zero {
            return Ok(dminv);
        }
        let g = self.base.input_map();
        let k = &g * &self.gains.kd * g.transpose();
        Ok(&dminv + &dminv * &k * &minv + &minv * &k * &dminv)
    }

    /// Shaped potential U_d(q) = 1/2 (G^T q + kappa)^T K_I (G^T q + kappa) + U(q).
    pub fn ud_value(&self, q: &VecF) -> f64 {
        let g = self.base.input_map();
        let z = g.transpose() * q + &self.kappa;
        0.5 * z.dot(&(&self.gains.ki * &z)) + self.base.potential.value(q)
    }

    pub fn ud_grad(&self, q: &VecF) -> VecF {
        let g = self.base.input_map();
        let z = g.transpose() * q + &self.kappa;
        &g * (&self.gains.ki * z) + self.base.potential.gradient(q)
    }

    pub fn ud_hess(&self, q: &VecF) -> MatF {
        let g = self.base.input_map();
        &g * &self.gains.ki * g.transpose() + self.base.potential.hessian(q)
    }

    /// Shaped potential as a field, for assumption validation.
    pub fn ud_field(&self) -> ScalarField {
        let a = self.clone();
        let b = self.clone();
        let c = self.clone();
        ScalarField::new(move |q| a.ud_value(q))
            .with_gradient(move |q| b.ud_grad(q))
            .with_hessian(move |q| c.ud_hess(q))
    }

    /// grad_q y as an m x n Jacobian (rows are outputs):
    /// column j is -G^T M^-1 (dM/dq_j) M^-1 p.
    pub fn jac_q_y(&self, q: &VecF, p: &VecF) -> Result<MatF> {
        let n = self.n();
        let m = self.base.m();
        let minv = self.base.inertia_inv(q)?;
        let gt = self.base.input_map().transpose();
        let minv_p = &minv * p;
        let mut jac = MatF::zeros(m, n);
        for j in 0..n {
            let dm = self.base.inertia.partial(q, j);
            let col = -(&gt) * (&minv * (&dm * &minv_p));
            jac.set_column(j, &col);
        }
        Ok(jac)
    }

    /// E(q) = M M_d^-1 = I + G K_D G^T M^-1.
    pub fn e_mat(&self, q: &VecF) -> Result<MatF> {
        let n = self.n();
        if self.kd_zero {
            return Ok(MatF::identity(n, n));
        }
        let g = self.base.input_map();
        let minv = self.base.inertia_inv(q)?;
        Ok(MatF::identity(n, n) + &g * &self.gains.kd * g.transpose() * &minv)
    }

    /// B(q, p) = G K_D (grad_q y)^T.
    pub fn b_mat(&self, q: &VecF, p: &VecF) -> Result<MatF> {
        let n = self.n();
        if self.kd_zero {
            return Ok(MatF::zeros(n, n));
        }
        let jac = self.jac_q_y(q, p)?;
        Ok(self.base.input_map() * &self.gains.kd * jac)
    }

    /// J(q, p) = E^-1 (B^T - B) E^-T, skew-symmetric; identically zero when
    /// K_D = 0.
    pub fn jmat(&self, q: &VecF, p: &VecF) -> Result<MatF> {
        let n = self.n();
        if self.kd_zero {
            return Ok(MatF::zeros(n, n));
        }
        let e_inv = linalg::invert(&self.e_mat(q)?)?;
        let b = self.b_mat(q, p)?;
        Ok(&e_inv * (b.transpose() - &b) * e_inv.transpose())
    }

    /// D_d(q, p) = E^-1 (D + G K_P G^T) E^-T.
    pub fn dd(&self, q: &VecF, p: &VecF) -> Result<MatF> {
        let g = self.base.input_map();
        let inner = self.base.damping.eval(q, p) + &g * &self.gains.kp * g.transpose();
        if self.kd_zero {
            return Ok(inner);
        }
        let e_inv = linalg::invert(&self.e_mat(q)?)?;
        Ok(&e_inv * inner * e_inv.transpose())
    }

    /// Shaped Hamiltonian H_d = 1/2 p^T M_d^-1 p + U_d.
    pub fn hd(&self, s: &State) -> Result<f64> {
        let mdinv = self.md_inv(&s.q)?;
        Ok(0.5 * s.p.dot(&(&mdinv * &s.p)) + self.ud_value(&s.q))
    }

    /// grad_q H_d, kinetic term via d(M_d^-1)/dq_i.
    pub fn grad_hd_q(&self, s: &State) -> Result<VecF> {
        let mut g = self.ud_grad(&s.q);
        for i in 0..self.n() {
            let dminv = self.md_inv_partial(&s.q, i)?;
            g[i] += 0.5 * s.p.dot(&(&dminv * &s.p));
        }
        Ok(g)
    }

    /// Full gradient of H_d, col(grad_q H_d, M_d^-1 p).
    pub fn grad_hd(&self, s: &State) -> Result<VecF> {
        let gq = self.grad_hd_q(s)?;
        let gp = self.md_inv(&s.q)? * &s.p;
        let mut out = VecF::zeros(2 * self.n());
        out.rows_mut(0, self.n()).copy_from(&gq);
        out.rows_mut(self.n(), self.n()).copy_from(&gp);
        Ok(out)
    }

    /// Closed-loop vector field: dq = M^-1 p,
    /// dp = -M_d M^-1 grad_q H_d + (J - D_d) M_d^-1 p.
    pub fn deriv(&self, s: &State) -> Result<(VecF, VecF)> {
        let minv = self.base.inertia_inv(&s.q)?;
        let dq = &minv * &s.p;
        let md = self.md(&s.q)?;
        let mdinv_p = self.md_inv(&s.q)? * &s.p;
        let j = self.jmat(&s.q, &s.p)?;
        let d = self.dd(&s.q, &s.p)?;
        let dp = -(&md * (&minv * self.grad_hd_q(s)?)) + (j - d) * mdinv_p;
        Ok((dq, dp))
    }

    /// Full structure matrix F_d of the closed loop, whose symmetric part
    /// must be negative semi-definite.
    pub fn fd_matrix(&self, q: &VecF, p: &VecF) -> Result<MatF> {
        let n = self.n();
        let minv = self.base.inertia_inv(q)?;
        let md = self.md(q)?;
        let top_right = &minv * &md;
        let j = self.jmat(q, p)?;
        let d = self.dd(q, p)?;
        let mut fd = MatF::zeros(2 * n, 2 * n);
        fd.view_mut((0, n), (n, n)).copy_from(&top_right);
        fd.view_mut((n, 0), (n, n)).copy_from(&(-(&md) * &minv));
        fd.view_mut((n, n), (n, n)).copy_from(&(j - d));
        Ok(fd)
    }

    /// PID-PBC law u = -K_P y - K_I (G^T q + kappa) - K_D ydot, with ydot
    /// computed model-based from the closed-loop field. With
    /// `gravity_compensation` (fully actuated only) the law becomes
    /// u = grad U - K_P y - K_I (G^T q - q_star) - K_D ydot.
    pub fn control_signal(&self, s: &State, gravity_compensation: bool) -> Result<VecF> {
        if gravity_compensation && !self.base.is_fully_actuated() {
            return Err(Error::GravityCompensationUnderactuated);
        }
        let y = self.base.passive_output(s)?;
        let gt = self.base.input_map().transpose();
        let mut u = -(&self.gains.kp * &y);
        if gravity_compensation {
            u += self.base.potential.gradient(&s.q)
                - &self.gains.ki * (&gt * &s.q - &self.gains.q_star);
        } else {
            u -= &self.gains.ki * (&gt * &s.q + &self.kappa);
        }
        if !self.kd_zero {
            // ydot = (grad_q y)^T qdot + (grad_p y)^T pdot along the
            // closed-loop flow, with grad_p y = M^-1 G.
            let (dq, dp) = self.deriv(s)?;
            let minv = self.base.inertia_inv(&s.q)?;
            let ydot = self.jac_q_y(&s.q, &s.p)? * dq + &gt * (&minv * dp);
            u -= &self.gains.kd * ydot;
        }
        Ok(u)
    }

    /// Samples C1-C3 over the given canonical-offset states (q_star + dq).
    pub fn check_conditions(&self, samples: &[State]) -> Result<ConditionsReport> {
        let mut c1 = f64::INFINITY;
        let mut c2 = 0.0f64;
        let mut c3 = f64::INFINITY;
        for s in samples {
            let q = &self.gains.q_star + &s.q;
            c1 = c1.min(linalg::min_eig_sym(&self.ud_hess(&q)));
            let minv = self.base.inertia_inv(&q)?;
            c2 = c2.max(linalg::spectral_norm(&(&minv * self.md(&q)?)));
            c3 = c3.min(linalg::min_eig_sym(&self.dd(&q, &s.p)?));
        }
        Ok(ConditionsReport {
            c1_pass: c1 > 0.0,
            c1_margin: c1,
            c2_pass: c2.is_finite(),
            c2_max_norm: c2,
            c3_pass: c3 > 0.0,
            c3_margin: c3,
        })
    }
}
