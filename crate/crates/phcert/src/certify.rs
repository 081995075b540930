//! Numerical exponential-stability certification.
//!
//! Builds the Lyapunov candidate S = H + eps p^T Phi(q) grad U(q), assembles
//! the decay matrix Upsilon whose quadratic form gives
//! Sdot = -grad H^T Upsilon grad H, runs a Schur-complement positive
//! definiteness test over a sampled region, bisects for the maximal
//! admissible eps, and packages the resulting decay-rate certificate.
//!
//! Two rates are emitted. `rate_paper` is
//! beta_max * mu / (1 + eps * ||A|| * beta_max); `rate_sound` is the
//! conservative variant mu * beta_min^2 / (2 k2) obtained from
//! ||grad H|| >= beta_min ||x||, and is the one used for envelope
//! verification.

use std::fmt;

use crate::model::State;
use crate::plvcc::{CanonicalEval, CanonicalPHSystem};
use crate::{linalg, Error, MatF, Result, VecF};

/// Choice of Phi in the Lyapunov cross term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhiChoice {
    /// Phi = A^T (the default used throughout the tuning guideline).
    ATranspose,
    /// Phi = A^-1.
    AInverse,
}

impl PhiChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "at" => Ok(Self::ATranspose),
            "ainv" => Ok(Self::AInverse),
            other => Err(Error::Config(format!(
                "unknown phi choice '{other}' (expected 'at' or 'ainv')"
            ))),
        }
    }
}

impl fmt::Display for PhiChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ATranspose => "at",
            Self::AInverse => "ainv",
        })
    }
}

/// Box around the equilibrium (the origin in canonical coordinates), sampled
/// by a deterministic tensor grid plus optional Halton refinement points.
#[derive(Clone, Debug)]
pub struct Region {
    pub q_radii: VecF,
    pub p_radii: VecF,
    pub grid_points_per_axis: usize,
    pub extra_samples: usize,
    pub seed: u64,
}

/// Hard cap on the total number of grid samples.
const SAMPLE_CAP: usize = 20_000;

impl Region {
    pub fn new(q_radii: VecF, p_radii: VecF) -> Result<Self> {
        if q_radii.len() != p_radii.len() || q_radii.is_empty() {
            return Err(Error::Shape("region radii dims must match".into()));
        }
        if q_radii.iter().chain(p_radii.iter()).any(|r| *r <= 0.0) {
            return Err(Error::Shape("region radii must be strictly positive".into()));
        }
        Ok(Self {
            q_radii,
            p_radii,
            grid_points_per_axis: 7,
            extra_samples: 0,
            seed: 0,
        })
    }

    /// Uniform radius box in both q and p.
    pub fn uniform(n: usize, q_radius: f64, p_radius: f64) -> Result<Self> {
        Self::new(
            VecF::from_element(n, q_radius),
            VecF::from_element(n, p_radius),
        )
    }

    pub fn with_grid(mut self, points_per_axis: usize) -> Self {
        self.grid_points_per_axis = points_per_axis.max(3);
        self
    }

    pub fn with_extra_samples(mut self, extra: usize, seed: u64) -> Self {
        self.extra_samples = extra;
        self.seed = seed;
        self
    }

    pub fn dim(&self) -> usize {
        self.q_radii.len()
    }

    fn effective_grid(&self, dims: usize) -> usize {
        let mut g = self.grid_points_per_axis.max(3);
        while g > 3 && (g as f64).powi(dims as i32) > SAMPLE_CAP as f64 {
            g -= 1;
        }
        g
    }

    /// Deterministic full phase-space samples (q, p).
    pub fn samples(&self) -> Vec<State> {
        let n = self.dim();
        let dims = 2 * n;
        let radii: Vec<f64> = self
            .q_radii
            .iter()
            .chain(self.p_radii.iter())
            .copied()
            .collect();
        let mut pts = grid_points(&radii, self.effective_grid(dims));
        pts.extend(halton_points(&radii, self.extra_samples, self.seed));
        pts.into_iter()
            .map(|x| State {
                q: VecF::from_row_slice(&x[..n]),
                p: VecF::from_row_slice(&x[n..]),
            })
            .collect()
    }

    /// Deterministic configuration-only samples.
    pub fn q_samples(&self) -> Vec<VecF> {
        let radii: Vec<f64> = self.q_radii.iter().copied().collect();
        let mut pts = grid_points(&radii, self.effective_grid(radii.len()));
        pts.extend(halton_points(&radii, self.extra_samples, self.seed));
        pts.into_iter().map(|x| VecF::from_row_slice(&x)).collect()
    }

    /// Whether a canonical state lies inside the box.
    pub fn contains(&self, s: &State) -> bool {
        s.q.len() == self.dim()
            && s.q.iter().zip(self.q_radii.iter()).all(|(v, r)| v.abs() <= *r)
            && s.p.iter().zip(self.p_radii.iter()).all(|(v, r)| v.abs() <= *r)
    }
}

fn grid_points(radii: &[f64], g: usize) -> Vec<Vec<f64>> {
    let dims = radii.len();
    let total = (g as f64).powi(dims as i32);
    if total > SAMPLE_CAP as f64 {
        // dimension too high for any tensor grid; fall back to Halton
        return halton_points(radii, SAMPLE_CAP, 0);
    }
    let mut out = Vec::with_capacity(total as usize);
    let mut idx = vec![0usize; dims];
    loop {
        let pt: Vec<f64> = (0..dims)
            .map(|d| {
                let t = idx[d] as f64 / (g - 1) as f64; // in [0, 1]
                (2.0 * t - 1.0) * radii[d]
            })
            .collect();
        out.push(pt);
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < g {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == dims {
                return out;
            }
        }
    }
}

const HALTON_BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn halton_points(radii: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count as u64)
        .map(|k| {
            radii
                .iter()
                .enumerate()
                .map(|(d, r)| {
                    let b = HALTON_BASES[d % HALTON_BASES.len()];
                    (2.0 * halton(seed + k + 1, b) - 1.0) * r
                })
                .collect()
        })
        .collect()
}

/// Lyapunov candidate S(q, p) = 1/2 p^T p + U(q) + eps p^T Phi(q) grad U(q).
pub fn lyapunov_value(
    csys: &CanonicalPHSystem,
    s: &State,
    epsilon: f64,
    phi_choice: PhiChoice,
) -> Result<f64> {
    let a = csys.a_at(&s.q)?;
    let phi = phi_of(&a, phi_choice)?;
    let gu = csys.u_grad(&s.q);
    Ok(csys.hamiltonian(s) + epsilon * s.p.dot(&(phi * gu)))
}

fn phi_of(a: &MatF, choice: PhiChoice) -> Result<MatF> {
    match choice {
        PhiChoice::ATranspose => Ok(a.transpose()),
        PhiChoice::AInverse => a.clone().try_inverse().ok_or(Error::SingularA),
    }
}

/// Phi and its time derivative along the flow (qdot = A p).
fn phi_and_dot(
    bundle: &CanonicalEval,
    p: &VecF,
    choice: PhiChoice,
) -> Result<(MatF, MatF)> {
    let qdot = &bundle.a * p;
    let n = p.len();
    let mut adot = MatF::zeros(n, n);
    for i in 0..n {
        adot += &bundle.da[i] * qdot[i];
    }
    match choice {
        PhiChoice::ATranspose => Ok((bundle.a.transpose(), adot.transpose())),
        PhiChoice::AInverse => {
            let ainv = bundle.a.clone().try_inverse().ok_or(Error::SingularA)?;
            let phidot = -(&ainv) * adot * &ainv;
            Ok((ainv, phidot))
        }
    }
}

/// Symmetric part of the decay matrix Upsilon, assembled so that
/// -grad H^T Upsilon_sym grad H equals Sdot along the flow:
///
///   Upsilon = [ eps A Phi,                 0            ]
///             [ eps (J + D) Phi - eps Phidot,  D - eps Phi hess(U) A ]
///
/// For Phi = A^T the (1,1) block symmetrizes to eps A A^T; the doubled form
/// in some block displays does not satisfy the Sdot identity and is not used.
pub fn upsilon_sym(
    csys: &CanonicalPHSystem,
    s: &State,
    epsilon: f64,
    phi_choice: PhiChoice,
) -> Result<MatF> {
    let bundle = csys.eval_bundle(&s.q)?;
    upsilon_sym_from_bundle(csys, &bundle, s, epsilon, phi_choice)
}

/// Same as [`upsilon_sym`] with a precomputed configuration bundle, for
/// sampling loops that sweep eps at fixed states.
pub fn upsilon_sym_from_bundle(
    csys: &CanonicalPHSystem,
    bundle: &CanonicalEval,
    s: &State,
    epsilon: f64,
    phi_choice: PhiChoice,
) -> Result<MatF> {
    let n = s.dim();
    let j = csys.j_at(&s.q, &s.p)?;
    let d = csys.d_at(&s.q, &s.p)?;
    let (phi, phidot) = phi_and_dot(bundle, &s.p, phi_choice)?;
    let b11 = epsilon * &bundle.a * &phi;
    let b21 = epsilon * (&j + &d) * &phi - epsilon * &phidot;
    let b22 = &d - epsilon * &phi * &bundle.hess_u * &bundle.a;
    let mut ups = MatF::zeros(2 * n, 2 * n);
    ups.view_mut((0, 0), (n, n)).copy_from(&b11);
    ups.view_mut((n, 0), (n, n)).copy_from(&b21);
    ups.view_mut((n, n), (n, n)).copy_from(&b22);
    Ok(linalg::sym_part(&ups))
}

/// The X, Y, Z blocks of the Schur decomposition of a symmetric 2n x 2n
/// matrix: [[X, Y], [Y^T, Z]].
pub fn schur_blocks(u_sym: &MatF) -> (MatF, MatF, MatF) {
    let n = u_sym.nrows() / 2;
    (
        u_sym.view((0, 0), (n, n)).into_owned(),
        u_sym.view((0, n), (n, n)).into_owned(),
        u_sym.view((n, n), (n, n)).into_owned(),
    )
}

/// Positive definiteness with slack: true iff X > delta I and
/// Z - Y^T X^-1 Y > delta I. Margin is the smaller of the two minimal
/// eigenvalues minus delta.
pub fn schur_pd_check(u_sym: &MatF, delta: f64) -> (bool, f64) {
    let (x, y, z) = schur_blocks(u_sym);
    let lam_x = linalg::min_eig_sym(&x);
    if lam_x <= delta {
        return (false, lam_x - delta);
    }
    let x_inv = match x.try_inverse() {
        Some(inv) => inv,
        None => return (false, f64::NEG_INFINITY),
    };
    let schur = z - y.transpose() * x_inv * y;
    let lam_s = linalg::min_eig_sym(&schur);
    (lam_s > delta, lam_x.min(lam_s) - delta)
}

/// Quadratic sandwich bounds of the canonical Hamiltonian over the region:
/// beta_min = min(1, min lambda_min(hess U)), beta_max = max(1, max
/// lambda_max(hess U)); the 1 accounts for the identity kinetic block.
pub fn convexity_bounds(csys: &CanonicalPHSystem, region: &Region) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for q in region.q_samples() {
        let h = csys.u_hess(&q);
        let lam_min = linalg::min_eig_sym(&h);
        if lam_min <= 0.0 {
            return Err(Error::NotConvex(q.iter().copied().collect()));
        }
        lo = lo.min(lam_min);
        hi = hi.max(linalg::max_eig_sym(&h));
    }
    Ok((lo.min(1.0), hi.max(1.0)))
}

/// Max spectral norm of Phi over the region's configuration samples.
pub fn phi_norm_max(
    csys: &CanonicalPHSystem,
    region: &Region,
    phi_choice: PhiChoice,
) -> Result<f64> {
    let mut max = 0.0f64;
    for q in region.q_samples() {
        let a = csys.a_at(&q)?;
        max = max.max(linalg::spectral_norm(&phi_of(&a, phi_choice)?));
    }
    Ok(max)
}

/// Max spectral norm of A over the region's configuration samples.
pub fn norm_a_max(csys: &CanonicalPHSystem, region: &Region) -> Result<f64> {
    let mut max = 0.0f64;
    for q in region.q_samples() {
        max = max.max(linalg::spectral_norm(&csys.a_at(&q)?));
    }
    Ok(max)
}

fn delta_slack(u_sym: &MatF) -> f64 {
    1e-9 * (1.0 + u_sym.trace().abs() / u_sym.nrows() as f64)
}

struct FeasibilityScan {
    feasible: bool,
    worst_margin: f64,
    worst_state: Option<State>,
}

fn scan(
    csys: &CanonicalPHSystem,
    bundles: &[(State, CanonicalEval)],
    epsilon: f64,
    phi_choice: PhiChoice,
) -> Result<FeasibilityScan> {
    let mut worst = f64::INFINITY;
    let mut worst_state = None;
    for (s, b) in bundles {
        let ups = upsilon_sym_from_bundle(csys, b, s, epsilon, phi_choice)?;
        let (ok, margin) = schur_pd_check(&ups, delta_slack(&ups));
        if margin < worst {
            worst = margin;
            worst_state = Some(s.clone());
        }
        if !ok {
            return Ok(FeasibilityScan {
                feasible: false,
                worst_margin: margin,
                worst_state,
            });
        }
    }
    Ok(FeasibilityScan {
        feasible: true,
        worst_margin: worst,
        worst_state,
    })
}

/// Largest eps (relative tolerance 1e-4) such that Upsilon_sym is positive
/// definite (with slack) at every region sample and k1 > 0, i.e.
/// eps < beta_min / (||Phi||_max beta_max^2). Deterministic given the
/// region. Errors when no eps down to 1e-12 is feasible.
pub fn max_feasible_epsilon(
    csys: &CanonicalPHSystem,
    region: &Region,
    phi_choice: PhiChoice,
) -> Result<f64> {
    let (beta_min, beta_max) = convexity_bounds(csys, region)?;
    let phi_max = phi_norm_max(csys, region, phi_choice)?;
    let k1_bound = beta_min / (phi_max * beta_max * beta_max);
    let bundles: Vec<(State, CanonicalEval)> = region
        .samples()
        .into_iter()
        .map(|s| {
            let b = csys.eval_bundle(&s.q)?;
            Ok((s, b))
        })
        .collect::<Result<Vec<_>>>()?;

    let hi = k1_bound * (1.0 - 1e-9);
    if scan(csys, &bundles, hi, phi_choice)?.feasible {
        return Ok(hi);
    }
    // find a feasible lower bracket by halving
    let mut lo = hi / 2.0;
    let mut last = None;
    while lo >= 1e-12 {
        let r = scan(csys, &bundles, lo, phi_choice)?;
        if r.feasible {
            break;
        }
        last = Some(r);
        lo /= 2.0;
    }
    if lo < 1e-12 {
        let detail = match last.and_then(|r| r.worst_state.map(|s| (s, r.worst_margin))) {
            Some((s, m)) => format!(
                "no feasible eps down to 1e-12; worst sample q = {:?}, margin = {m:.3e}",
                s.q.iter().collect::<Vec<_>>()
            ),
            None => "no feasible eps down to 1e-12".into(),
        };
        return Err(Error::Infeasible(detail));
    }
    // bisect between feasible lo and infeasible 2*lo
    let mut hi_inf = (2.0 * lo).min(hi);
    while (hi_inf - lo) / lo > 1e-4 {
        let mid = 0.5 * (lo + hi_inf);
        if scan(csys, &bundles, mid, phi_choice)?.feasible {
            lo = mid;
        } else {
            hi_inf = mid;
        }
    }
    Ok(lo)
}

/// Packaged conclusion of the certification run. Extrema are sample extrema
/// over the recorded region; no interval-arithmetic guarantee is claimed.
#[derive(Clone, Debug)]
pub struct Certificate {
    pub phi_choice: PhiChoice,
    /// eps actually certified: half the feasibility boundary.
    pub epsilon: f64,
    /// Feasibility boundary found by bisection.
    pub epsilon_star: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub norm_a_max: f64,
    pub phi_norm_max: f64,
    /// Min over samples of lambda_min(Upsilon_sym) at the certified eps.
    pub mu: f64,
    pub k1: f64,
    pub k2: f64,
    pub rate_paper: f64,
    pub rate_sound: f64,
    pub region: Region,
    pub samples: usize,
    /// Worst Schur margin over samples at the certified eps.
    pub margin: f64,
    /// User-asserted radial unboundedness of U (never inferred).
    pub global_flag: bool,
}

/// Safety cap on the certified eps.
const EPSILON_CAP: f64 = 1.0;

/// Runs the full Theorem-1 pipeline on a region: eps search, bounds, mu, and
/// both decay rates. The certified eps retreats to half the feasibility
/// boundary since sampling cannot prove definiteness between grid points.
pub fn make_certificate(
    csys: &CanonicalPHSystem,
    region: &Region,
    phi_choice: PhiChoice,
) -> Result<Certificate> {
    let eps_star = max_feasible_epsilon(csys, region, phi_choice)?;
    let epsilon = (eps_star / 2.0).min(EPSILON_CAP);
    certificate_at_epsilon(csys, region, phi_choice, epsilon, eps_star)
}

/// Certificate evaluation at a caller-fixed eps (used by the tuning
/// guideline, which compares gain sets at one shared eps). `eps_star` is
/// recorded as given.
pub fn certificate_at_epsilon(
    csys: &CanonicalPHSystem,
    region: &Region,
    phi_choice: PhiChoice,
    epsilon: f64,
    eps_star: f64,
) -> Result<Certificate> {
    let (beta_min, beta_max) = convexity_bounds(csys, region)?;
    let phi_max = phi_norm_max(csys, region, phi_choice)?;
    let a_max = norm_a_max(csys, region)?;

    let samples = region.samples();
    let mut mu = f64::INFINITY;
    let mut margin = f64::INFINITY;
    for s in &samples {
        let ups = upsilon_sym(csys, s, epsilon, phi_choice)?;
        mu = mu.min(linalg::min_eig_sym(&ups));
        let (_, m) = schur_pd_check(&ups, delta_slack(&ups));
        margin = margin.min(m);
    }
    if mu <= 0.0 {
        return Err(Error::Infeasible(format!(
            "mu = {mu:.3e} not positive at certified eps"
        )));
    }
    let k1 = (beta_min - epsilon * phi_max * beta_max * beta_max) / 2.0;
    let k2 = (beta_max + epsilon * phi_max * beta_max * beta_max) / 2.0;
    if k1 <= 0.0 {
        return Err(Error::Infeasible(format!("k1 = {k1:.3e} not positive")));
    }
    let rate_paper = beta_max * mu / (1.0 + epsilon * a_max * beta_max);
    let rate_sound = mu * beta_min * beta_min / (2.0 * k2);
    Ok(Certificate {
        phi_choice,
        epsilon,
        epsilon_star: eps_star,
        beta_min,
        beta_max,
        norm_a_max: a_max,
        phi_norm_max: phi_max,
        mu,
        k1,
        k2,
        rate_paper,
        rate_sound,
        region: region.clone(),
        samples: samples.len(),
        margin,
        global_flag: false,
    })
}

impl Certificate {
    /// Envelope bound sqrt(k2/k1) ||x0|| exp(-rate t).
    pub fn envelope(&self, x0_norm: f64, t: f64, rate: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::NegativeTime);
        }
        Ok((self.k2 / self.k1).sqrt() * x0_norm * (-rate * t).exp())
    }

    pub fn envelope_sound(&self, x0_norm: f64, t: f64) -> Result<f64> {
        self.envelope(x0_norm, t, self.rate_sound)
    }

    pub fn envelope_paper(&self, x0_norm: f64, t: f64) -> Result<f64> {
        self.envelope(x0_norm, t, self.rate_paper)
    }

    /// Flat key-value serialization, 17 significant digits, LF endings.
    pub fn to_kv_string(&self) -> String {
        let num = |v: f64| format!("{v:.16e}");
        let list = |v: &VecF| {
            v.iter()
                .map(|x| format!("{x:.16e}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        out.push_str(&format!("phi_choice = {}\n", self.phi_choice));
        out.push_str(&format!("epsilon = {}\n", num(self.epsilon)));
        out.push_str(&format!("beta_min = {}\n", num(self.beta_min)));
        out.push_str(&format!("beta_max = {}\n", num(self.beta_max)));
        out.push_str(&format!("norm_A_max = {}\n", num(self.norm_a_max)));
        out.push_str(&format!("mu = {}\n", num(self.mu)));
        out.push_str(&format!("k1 = {}\n", num(self.k1)));
        out.push_str(&format!("k2 = {}\n", num(self.k2)));
        out.push_str(&format!("rate_paper = {}\n", num(self.rate_paper)));
        out.push_str(&format!("rate_sound = {}\n", num(self.rate_sound)));
        out.push_str(&format!("q_radii = {}\n", list(&self.region.q_radii)));
        out.push_str(&format!("p_radii = {}\n", list(&self.region.p_radii)));
        out.push_str(&format!("samples = {}\n", self.samples));
        out.push_str(&format!("margin = {}\n", num(self.margin)));
        out.push_str(&format!("global_flag = {}\n", self.global_flag));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScalarField;
    use crate::MatF;

    /// 1-DoF analytic benchmark: A = 1, J = 0, D = d, U = 2q^2.
    pub(crate) fn bench_1dof(d: f64) -> CanonicalPHSystem {
        let u = ScalarField::new(|q: &VecF| 2.0 * q[0] * q[0])
            .with_gradient(|q: &VecF| VecF::from_element(1, 4.0 * q[0]))
            .with_hessian(|_q: &VecF| MatF::from_element(1, 1, 4.0));
        CanonicalPHSystem::new_constant(
            MatF::identity(1, 1),
            MatF::from_element(1, 1, d),
            u,
        )
    }

    fn state(q: f64, p: f64) -> State {
        State {
            q: VecF::from_element(1, q),
            p: VecF::from_element(1, p),
        }
    }

    #[test]
    fn lyapunov_value_example() {
        let csys = bench_1dof(1.0);
        // S = 1/2 p^2 + 2 q^2 + eps p * 4q = 2.5 + 0.05*4 = 2.7
        let v = lyapunov_value(&csys, &state(1.0, 1.0), 0.05, PhiChoice::ATranspose).unwrap();
        assert!((v - 2.7).abs() < 1e-12, "S = {v}");
        // eps = 0 collapses to the Hamiltonian
        let v0 = lyapunov_value(&csys, &state(1.0, 1.0), 0.0, PhiChoice::ATranspose).unwrap();
        assert!((v0 - 2.5).abs() < 1e-12);
        // S(0) = 0
        let vz = lyapunov_value(&csys, &state(0.0, 0.0), 0.05, PhiChoice::ATranspose).unwrap();
        assert!(vz.abs() < 1e-15);
    }

    #[test]
    fn upsilon_1dof_blocks() {
        // A = 1, J = 0, D = 1, hess U = 4, eps = 0.05. The (1,1) block is
        // eps * A Phi = 0.05: this is the assembly that satisfies the
        // Sdot = -grad H^T Upsilon grad H identity (the doubled
        // eps(AA^T + A^T A) variant seen in some displays does not).
        let csys = bench_1dof(1.0);
        let u = upsilon_sym(&csys, &state(0.3, -0.2), 0.05, PhiChoice::ATranspose).unwrap();
        let expect = MatF::from_row_slice(2, 2, &[0.05, 0.025, 0.025, 0.8]);
        assert!((&u - expect).norm() < 1e-12, "Upsilon = {u}");
    }

    #[test]
    fn upsilon_at_zero_eps() {
        let csys = bench_1dof(1.0);
        let u = upsilon_sym(&csys, &state(0.1, 0.1), 0.0, PhiChoice::ATranspose).unwrap();
        let expect = MatF::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!((&u - expect).norm() < 1e-14);
    }

    #[test]
    fn schur_check_examples() {
        let m = MatF::from_row_slice(2, 2, &[0.1, 0.025, 0.025, 0.8]);
        let (ok, margin) = schur_pd_check(&m, 0.0);
        assert!(ok);
        assert!((margin - 0.1).abs() < 1e-12, "margin = {margin}");
        let (ok_i, margin_i) = schur_pd_check(&MatF::identity(2, 2), 0.0);
        assert!(ok_i && (margin_i - 1.0).abs() < 1e-12);
        let (ok_bad, _) = schur_pd_check(&MatF::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 0.0);
        assert!(!ok_bad);
    }

    #[test]
    fn convexity_bounds_examples() {
        let region = Region::uniform(1, 0.5, 0.5).unwrap();
        let (lo, hi) = convexity_bounds(&bench_1dof(1.0), &region).unwrap();
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 4.0).abs() < 1e-12);

        let u = ScalarField::new(|q: &VecF| 0.5 * q.norm_squared())
            .with_gradient(|q: &VecF| q.clone())
            .with_hessian(|q: &VecF| MatF::identity(q.len(), q.len()));
        let csys =
            CanonicalPHSystem::new_constant(MatF::identity(2, 2), MatF::identity(2, 2), u);
        let region2 = Region::uniform(2, 0.5, 0.5).unwrap();
        let (lo2, hi2) = convexity_bounds(&csys, &region2).unwrap();
        assert!((lo2 - 1.0).abs() < 1e-12 && (hi2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eps_star_shrinks_with_damping() {
        let region = Region::uniform(1, 0.5, 0.5).unwrap();
        // moderate damping leaves the k1 bound binding; very heavy damping
        // makes the Schur feasibility bound D/(4 + D^2/4) the binding one
        let e1 = max_feasible_epsilon(&bench_1dof(1.0), &region, PhiChoice::ATranspose).unwrap();
        let e100 = max_feasible_epsilon(&bench_1dof(100.0), &region, PhiChoice::ATranspose).unwrap();
        assert!(e100 < e1, "eps(D=100) = {e100} !< eps(D=1) = {e1}");
    }

    #[test]
    fn k_bounds_at_fixed_eps() {
        // eps = 0.03: k1 = (1 - 0.03*16)/2 = 0.26, k2 = (4 + 0.48)/2 = 2.24
        let region = Region::uniform(1, 0.5, 0.5).unwrap();
        let cert = certificate_at_epsilon(
            &bench_1dof(1.0),
            &region,
            PhiChoice::ATranspose,
            0.03,
            0.0625,
        )
        .unwrap();
        assert!((cert.k1 - 0.26).abs() < 1e-12);
        assert!((cert.k2 - 2.24).abs() < 1e-12);
        assert!(cert.rate_paper > 0.0 && cert.rate_sound > 0.0);
        assert!(cert.k2 > cert.k1 && cert.k1 > 0.0);
    }

    #[test]
    fn envelope_examples() {
        let region = Region::uniform(1, 0.5, 0.5).unwrap();
        let cert =
            make_certificate(&bench_1dof(1.0), &region, PhiChoice::ATranspose).unwrap();
        let at0 = cert.envelope_sound(1.0, 0.0).unwrap();
        assert!((at0 - (cert.k2 / cert.k1).sqrt()).abs() < 1e-12);
        assert!(cert.envelope_sound(1.0, -1.0).is_err());
        let t1 = cert.envelope_sound(1.0, 1.0).unwrap();
        assert!((t1 - at0 * (-cert.rate_sound).exp()).abs() < 1e-12);
    }

    #[test]
    fn sandwich_and_negativity() {
        let region = Region::uniform(1, 0.5, 0.5).unwrap();
        let csys = bench_1dof(1.0);
        let cert = make_certificate(&csys, &region, PhiChoice::ATranspose).unwrap();
        for s in region.samples() {
            let x2 = s.norm() * s.norm();
            let sv = lyapunov_value(&csys, &s, cert.epsilon, cert.phi_choice).unwrap();
            assert!(sv >= cert.k1 * x2 - 1e-12, "sandwich lower at {s:?}");
            assert!(sv <= cert.k2 * x2 + 1e-12, "sandwich upper at {s:?}");
            if x2 > 1e-20 {
                let ups = upsilon_sym(&csys, &s, cert.epsilon, cert.phi_choice).unwrap();
                let gh = csys.grad_h(&s);
                let sdot = -gh.dot(&(&ups * &gh));
                assert!(sdot < 0.0, "Sdot = {sdot} at {s:?}");
            }
        }
    }

    #[test]
    fn region_samples_deterministic_and_capped() {
        let r = Region::uniform(3, 0.3, 0.5).unwrap().with_extra_samples(10, 42);
        let a = r.samples();
        let b = r.samples();
        assert_eq!(a.len(), b.len());
        assert!(a.len() <= 20_000 + 10);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
        for s in &a {
            assert!(r.contains(s));
        }
    }

    #[test]
    fn certificate_serialization_keys() {
        let region = Region::uniform(1, 0.5, 0.5).unwrap();
        let cert =
            make_certificate(&bench_1dof(1.0), &region, PhiChoice::ATranspose).unwrap();
        let text = cert.to_kv_string();
        for key in [
            "phi_choice", "epsilon", "beta_min", "beta_max", "norm_A_max", "mu", "k1",
            "k2", "rate_paper", "rate_sound", "q_radii", "p_radii", "samples", "margin",
            "global_flag",
        ] {
            assert!(
                text.lines().any(|l| l.starts_with(&format!("{key} = "))),
                "missing key {key}"
            );
        }
        assert!(!text.contains('\r'));
    }
}
