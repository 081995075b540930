//! State and system representations for mechanical systems in
//! port-Hamiltonian form, with analytic-or-numeric derivative evaluation.
//!
//! All field evaluators are side-effect-free (`Fn + Send + Sync`); any number
//! of evaluations may run concurrently.

use std::sync::Arc;

use crate::certify::Region;
use crate::linalg;
use crate::{diff, Error, MatF, Result, VecF};

/// Phase-space point: configuration `q` and conjugate momenta `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub q: VecF,
    pub p: VecF,
}

impl State {
    pub fn new(q: VecF, p: VecF) -> Result<Self> {
        if q.len() != p.len() || q.is_empty() {
            return Err(Error::Shape(format!(
                "state dims must match and be >= 1, got q: {}, p: {}",
                q.len(),
                p.len()
            )));
        }
        if q.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite state entry".into()));
        }
        Ok(Self { q, p })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: VecF::zeros(n),
            p: VecF::zeros(n),
        }
    }

    /// Euclidean norm of col(q, p).
    pub fn norm(&self) -> f64 {
        (self.q.norm_squared() + self.p.norm_squared()).sqrt()
    }
}

type ScalarFn = Arc<dyn Fn(&VecF) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&VecF) -> VecF + Send + Sync>;
type MatrixQFn = Arc<dyn Fn(&VecF) -> MatF + Send + Sync>;
type MatrixQpFn = Arc<dyn Fn(&VecF, &VecF) -> MatF + Send + Sync>;

/// Scalar field q -> R with optional analytic gradient/Hessian.
/// Missing derivatives fall back to central finite differences.
#[derive(Clone)]
pub struct ScalarField {
    value: ScalarFn,
    gradient: Option<VectorFn>,
    hessian: Option<MatrixQFn>,
}

impl ScalarField {
    pub fn new(value: impl Fn(&VecF) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            gradient: None,
            hessian: None,
        }
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&VecF) -> VecF + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn with_hessian(mut self, hessian: impl Fn(&VecF) -> MatF + Send + Sync + 'static) -> Self {
        self.hessian = Some(Arc::new(hessian));
        self
    }

    pub fn value(&self, q: &VecF) -> f64 {
        (self.value)(q)
    }

    pub fn gradient(&self, q: &VecF) -> VecF {
        match &self.gradient {
            Some(g) => g(q),
            None => diff::gradient(|x| (self.value)(x), q),
        }
    }

    pub fn hessian(&self, q: &VecF) -> MatF {
        match (&self.hessian, &self.gradient) {
            (Some(h), _) => h(q),
            // Jacobian of the analytic gradient is more accurate than second
            // differences of the value.
            (None, Some(g)) => linalg::sym_part(&diff::jacobian(|x| g(x), q)),
            (None, None) => diff::hessian(|x| (self.value)(x), q),
        }
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }
}

/// Structural flags declared at construction and re-checked on every
/// evaluation in debug builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Positivity {
    None,
    SemiDefinite,
    Definite,
}

/// Matrix field over (q) or (q, p), with optional analytic partials
/// d(.)/dq_i for q-only fields.
#[derive(Clone)]
pub struct MatrixField {
    value: MatrixQpFn,
    partials: Option<Vec<MatrixQFn>>,
    symmetric: bool,
    positivity: Positivity,
}

impl MatrixField {
    pub fn from_qp_fn(
        value: impl Fn(&VecF, &VecF) -> MatF + Send + Sync + 'static,
        symmetric: bool,
        positivity: Positivity,
    ) -> Self {
        Self {
            value: Arc::new(value),
            partials: None,
            symmetric,
            positivity,
        }
    }

    pub fn from_q_fn(
        value: impl Fn(&VecF) -> MatF + Send + Sync + 'static,
        symmetric: bool,
        positivity: Positivity,
    ) -> Self {
        Self {
            value: Arc::new(move |q, _p| value(q)),
            partials: None,
            symmetric,
            positivity,
        }
    }

    pub fn constant(m: MatF, symmetric: bool, positivity: Positivity) -> Self {
        let n = m.ncols();
        let mc = m.clone();
        Self {
            value: Arc::new(move |_, _| mc.clone()),
            partials: Some((0..n).map(|_| zero_partial(m.nrows(), n)).collect()),
            symmetric,
            positivity,
        }
    }

    /// Attach analytic partials d(.)/dq_i, one evaluator per coordinate.
    pub fn with_partials(
        mut self,
        partials: Vec<Arc<dyn Fn(&VecF) -> MatF + Send + Sync>>,
    ) -> Self {
        self.partials = Some(partials);
        self
    }

    pub fn eval(&self, q: &VecF, p: &VecF) -> MatF {
        let m = (self.value)(q, p);
        #[cfg(debug_assertions)]
        self.debug_check(&m);
        m
    }

    /// Evaluate a q-only field (p set to zero).
    pub fn eval_q(&self, q: &VecF) -> MatF {
        self.eval(q, &VecF::zeros(q.len()))
    }

    /// Partial derivative with respect to q_i; analytic when supplied,
    /// central finite differences otherwise. Only meaningful for q-only
    /// fields.
    pub fn partial(&self, q: &VecF, i: usize) -> MatF {
        match &self.partials {
            Some(ps) => ps[i](q),
            None => diff::matrix_partial(|x| (self.value)(x, &VecF::zeros(x.len())), q, i),
        }
    }

    pub fn has_analytic_partials(&self) -> bool {
        self.partials.is_some()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn positivity(&self) -> Positivity {
        self.positivity
    }

    #[cfg(debug_assertions)]
    fn debug_check(&self, m: &MatF) {
        let scale = 1.0 + linalg::spectral_norm(m);
        if self.symmetric {
            let res = linalg::symmetry_residual(m);
            assert!(
                res <= 1e-10 * scale,
                "matrix field declared symmetric but residual is {res:.3e}"
            );
        }
        match self.positivity {
            Positivity::None => {}
            Positivity::SemiDefinite => {
                let lam = linalg::min_eig_sym(m);
                assert!(
                    lam >= -1e-9 * scale,
                    "matrix field declared PSD but min eigenvalue is {lam:.3e}"
                );
            }
            Positivity::Definite => {
                let lam = linalg::min_eig_sym(m);
                assert!(
                    lam > 0.0,
                    "matrix field declared PD but min eigenvalue is {lam:.3e}"
                );
            }
        }
    }
}

fn zero_partial(r: usize, c: usize) -> MatrixQFn {
    Arc::new(move |_| MatF::zeros(r, c))
}

/// Mechanical system in port-Hamiltonian form: inertia M(q), potential U(q),
/// damping D(q, p), input map G = [0; I_m].
#[derive(Clone)]
pub struct MechanicalSystem {
    n: usize,
    m: usize,
    pub inertia: MatrixField,
    pub potential: ScalarField,
    pub damping: MatrixField,
}

impl MechanicalSystem {
    pub fn new(
        n: usize,
        m: usize,
        inertia: MatrixField,
        potential: ScalarField,
        damping: MatrixField,
    ) -> Result<Self> {
        if n == 0 || m > n {
            return Err(Error::Shape(format!("need 1 <= m <= n, got n={n}, m={m}")));
        }
        Ok(Self {
            n,
            m,
            inertia,
            potential,
            damping,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of unactuated coordinates, ell = n - m.
    pub fn ell(&self) -> usize {
        self.n - self.m
    }

    pub fn is_fully_actuated(&self) -> bool {
        self.n == self.m
    }

    /// Input map G = [0_{ell x m}; I_m].
    pub fn input_map(&self) -> MatF {
        let mut g = MatF::zeros(self.n, self.m);
        for j in 0..self.m {
            g[(self.ell() + j, j)] = 1.0;
        }
        g
    }

    /// Left annihilator G_perp = [I_ell 0_{ell x m}].
    pub fn input_annihilator(&self) -> MatF {
        let mut gp = MatF::zeros(self.ell(), self.n);
        for i in 0..self.ell() {
            gp[(i, i)] = 1.0;
        }
        gp
    }

    pub fn inertia_at(&self, q: &VecF) -> MatF {
        self.inertia.eval_q(q)
    }

    pub fn inertia_inv(&self, q: &VecF) -> Result<MatF> {
        self.inertia_at(q)
            .try_inverse()
            .ok_or(Error::SingularInertia)
    }

    /// Hamiltonian H(q, p) = 1/2 p^T M^-1(q) p + U(q).
    pub fn hamiltonian(&self, s: &State) -> Result<f64> {
        self.check_state(s)?;
        let minv = self.inertia_inv(&s.q)?;
        Ok(0.5 * s.p.dot(&(&minv * &s.p)) + self.potential.value(&s.q))
    }

    /// Gradient of H with respect to q, including the kinetic term assembled
    /// from dM/dq_i via dM^-1/dq_i = -M^-1 (dM/dq_i) M^-1.
    pub fn grad_h_q(&self, s: &State) -> Result<VecF> {
        self.check_state(s)?;
        let minv = self.inertia_inv(&s.q)?;
        let minv_p = &minv * &s.p;
        let mut g = self.potential.gradient(&s.q);
        for i in 0..self.n {
            let dm = self.inertia.partial(&s.q, i);
            g[i] -= 0.5 * minv_p.dot(&(&dm * &minv_p));
        }
        Ok(g)
    }

    /// Open-loop vector field of the pH equations:
    /// dq = M^-1 p, dp = -grad_q H - D M^-1 p + G u.
    pub fn eval_open_loop(&self, s: &State, u: &VecF) -> Result<(VecF, VecF)> {
        self.check_state(s)?;
        if u.len() != self.m {
            return Err(Error::Shape(format!(
                "control dim {} != m = {}",
                u.len(),
                self.m
            )));
        }
        let minv = self.inertia_inv(&s.q)?;
        let dq = &minv * &s.p;
        let d = self.damping.eval(&s.q, &s.p);
        let dp = -self.grad_h_q(s)? - &d * &dq + self.input_map() * u;
        Ok((dq, dp))
    }

    /// Passive output y = G^T M^-1(q) p.
    pub fn passive_output(&self, s: &State) -> Result<VecF> {
        let minv = self.inertia_inv(&s.q)?;
        Ok(self.input_map().transpose() * (&minv * &s.p))
    }

    /// Checks Assumptions 1-2 on the sampled region around `equilibrium`:
    /// strong convexity of the potential, vanishing gradient at the
    /// equilibrium, and boundedness of the coordinate matrix (here the
    /// inertia) and damping over the samples.
    pub fn validate_assumptions(&self, equilibrium: &VecF, region: &Region) -> AssumptionReport {
        let inertia = self.inertia.clone();
        validate_assumptions(
            &self.potential,
            equilibrium,
            move |q: &VecF| inertia.eval_q(q),
            {
                let damping = self.damping.clone();
                move |q: &VecF, p: &VecF| damping.eval(q, p)
            },
            region,
        )
    }

    fn check_state(&self, s: &State) -> Result<()> {
        if s.dim() != self.n {
            return Err(Error::Shape(format!(
                "state dim {} != n = {}",
                s.dim(),
                self.n
            )));
        }
        Ok(())
    }
}

/// Desk-scale validation report for the standing assumptions. Failures are
/// flags, not errors; the sampled region is recorded because only a compact
/// box is checked, never the global property.
#[derive(Clone, Debug)]
pub struct AssumptionReport {
    pub lambda_min_hess_u: f64,
    pub grad_u_at_equilibrium: f64,
    pub max_norm_a: f64,
    pub max_norm_d: f64,
    pub strong_convexity_pass: bool,
    pub equilibrium_pass: bool,
    pub boundedness_pass: bool,
    pub q_radii: Vec<f64>,
    pub p_radii: Vec<f64>,
    pub samples: usize,
}

impl AssumptionReport {
    pub fn pass(&self) -> bool {
        self.strong_convexity_pass && self.equilibrium_pass && self.boundedness_pass
    }
}

/// Shared assumption validation over a sampled box. The box is centered at
/// `equilibrium` with the region's radii; `a_at` is whichever coordinate
/// matrix Assumption 2 bounds (A for canonical systems, M for mechanical
/// ones).
pub fn validate_assumptions(
    potential: &ScalarField,
    equilibrium: &VecF,
    a_at: impl Fn(&VecF) -> MatF,
    d_at: impl Fn(&VecF, &VecF) -> MatF,
    region: &Region,
) -> AssumptionReport {
    let mut lam_min = f64::INFINITY;
    let mut max_a = 0.0f64;
    let mut max_d = 0.0f64;
    let mut count = 0usize;
    for s in region.samples() {
        let q = equilibrium + &s.q;
        let hess = potential.hessian(&q);
        lam_min = lam_min.min(linalg::min_eig_sym(&hess));
        max_a = max_a.max(linalg::spectral_norm(&a_at(&q)));
        max_d = max_d.max(linalg::spectral_norm(&d_at(&q, &s.p)));
        count += 1;
    }
    let grad0 = potential.gradient(equilibrium).norm();
    AssumptionReport {
        lambda_min_hess_u: lam_min,
        grad_u_at_equilibrium: grad0,
        max_norm_a: max_a,
        max_norm_d: max_d,
        strong_convexity_pass: lam_min > 0.0,
        equilibrium_pass: grad0 <= 1e-8,
        boundedness_pass: max_a.is_finite() && max_d.is_finite(),
        q_radii: region.q_radii.iter().copied().collect(),
        p_radii: region.p_radii.iter().copied().collect(),
        samples: count,
    }
}
