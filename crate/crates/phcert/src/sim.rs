//! Fixed-step RK4 integration of open-loop, closed-loop, and canonical
//! representations, energy auditing, empirical decay-rate estimation, and
//! envelope verification.

use std::io::Write;

use crate::certify::Certificate;
use crate::model::{MechanicalSystem, State};
use crate::pidpbc::ClosedLoopSystem;
use crate::plvcc::{self, CanonicalPHSystem};
use crate::{Error, Result, VecF};

/// A state-space vector field with an energy function. All three system
/// representations integrate through this.
pub trait Dynamics {
    fn n(&self) -> usize;
    fn deriv(&self, s: &State) -> Result<(VecF, VecF)>;
    fn energy(&self, s: &State) -> Result<f64>;
    /// Control signal along the trajectory, for closed-loop runs.
    fn control(&self, _s: &State) -> Option<Result<VecF>> {
        None
    }
}

/// Open-loop plant driven by the PID-PBC law evaluated online.
pub struct OpenLoopControlled<'a> {
    pub plant: &'a MechanicalSystem,
    pub controller: &'a ClosedLoopSystem,
}

impl Dynamics for OpenLoopControlled<'_> {
    fn n(&self) -> usize {
        self.plant.n()
    }

    fn deriv(&self, s: &State) -> Result<(VecF, VecF)> {
        let u = self.controller.control_signal(s, false)?;
        self.plant.eval_open_loop(s, &u)
    }

    fn energy(&self, s: &State) -> Result<f64> {
        self.controller.hd(s)
    }

    fn control(&self, s: &State) -> Option<Result<VecF>> {
        Some(self.controller.control_signal(s, false))
    }
}

impl Dynamics for ClosedLoopSystem {
    fn n(&self) -> usize {
        ClosedLoopSystem::n(self)
    }

    fn deriv(&self, s: &State) -> Result<(VecF, VecF)> {
        ClosedLoopSystem::deriv(self, s)
    }

    fn energy(&self, s: &State) -> Result<f64> {
        self.hd(s)
    }

    fn control(&self, s: &State) -> Option<Result<VecF>> {
        Some(self.control_signal(s, false))
    }
}

impl Dynamics for CanonicalPHSystem {
    fn n(&self) -> usize {
        CanonicalPHSystem::n(self)
    }

    fn deriv(&self, s: &State) -> Result<(VecF, VecF)> {
        CanonicalPHSystem::deriv(self, s)
    }

    fn energy(&self, s: &State) -> Result<f64> {
        Ok(self.hamiltonian(s))
    }
}

/// One classical 4-stage Runge-Kutta step.
pub fn rk4_step<F>(field: F, s: &State, h: f64) -> Result<State>
where
    F: Fn(&State) -> Result<(VecF, VecF)>,
{
    let stage = |base: &State, kq: &VecF, kp: &VecF, c: f64| State {
        q: &base.q + kq * c,
        p: &base.p + kp * c,
    };
    let (k1q, k1p) = field(s)?;
    let (k2q, k2p) = field(&stage(s, &k1q, &k1p, 0.5 * h))?;
    let (k3q, k3p) = field(&stage(s, &k2q, &k2p, 0.5 * h))?;
    let (k4q, k4p) = field(&stage(s, &k3q, &k3p, h))?;
    let q = &s.q + (k1q + 2.0 * k2q + 2.0 * k3q + k4q) * (h / 6.0);
    let p = &s.p + (k1p + 2.0 * k2p + 2.0 * k3p + k4p) * (h / 6.0);
    if q.iter().chain(p.iter()).any(|v| !v.is_finite()) {
        return Err(Error::BlowUp(f64::NAN));
    }
    Ok(State { q, p })
}

/// Uniformly sampled solution with energies (and control signals for
/// closed-loop runs).
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub energies: Vec<f64>,
    pub controls: Option<Vec<VecF>>,
    pub step: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &State {
        self.states.last().expect("non-empty trajectory")
    }

    /// Plain state norms ||col(q, p)||.
    pub fn state_norms(&self) -> Vec<f64> {
        self.states.iter().map(State::norm).collect()
    }

    /// Norms after mapping through the canonical change of coordinates, the
    /// norm in which the decay envelope is stated.
    pub fn canonical_norms(&self, cl: &ClosedLoopSystem) -> Result<Vec<f64>> {
        self.states
            .iter()
            .map(|s| plvcc::map_state(cl, s).map(|c| c.norm()))
            .collect()
    }
}

/// Integrates `sys` with fixed-step RK4 from `s0` over `horizon` seconds.
pub fn simulate<D: Dynamics>(sys: &D, s0: &State, horizon: f64, h: f64) -> Result<Trajectory> {
    if horizon <= 0.0 {
        return Err(Error::NonPositiveHorizon);
    }
    if h <= 0.0 {
        return Err(Error::Shape("step must be positive".into()));
    }
    let steps = (horizon / h).round() as usize;
    let record_controls = sys.control(s0).is_some();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut energies = Vec::with_capacity(steps + 1);
    let mut controls = if record_controls {
        Some(Vec::with_capacity(steps + 1))
    } else {
        None
    };
    let mut s = s0.clone();
    for k in 0..=steps {
        let t = k as f64 * h;
        times.push(t);
        energies.push(sys.energy(&s)?);
        if let (Some(cs), Some(u)) = (controls.as_mut(), sys.control(&s)) {
            cs.push(u?);
        }
        states.push(s.clone());
        if k < steps {
            s = rk4_step(|x| sys.deriv(x), &s, h).map_err(|e| match e {
                Error::BlowUp(_) => Error::BlowUp(t),
                other => other,
            })?;
        }
    }
    Ok(Trajectory {
        times,
        states,
        energies,
        controls,
        step: h,
    })
}

/// Energy monotonicity audit of a dissipative trajectory.
#[derive(Clone, Debug)]
pub struct EnergyAudit {
    pub max_increase: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Step index of the worst increase when the audit fails.
    pub fail_index: Option<usize>,
}

/// Max forward difference of the energy sequence; passes iff it stays below
/// 1e-8 * (1 + |E(0)|).
pub fn energy_audit(traj: &Trajectory) -> EnergyAudit {
    let tol = 1e-8 * (1.0 + traj.energies.first().map_or(0.0, |e| e.abs()));
    let mut max_inc = f64::NEG_INFINITY;
    let mut idx = None;
    for (i, w) in traj.energies.windows(2).enumerate() {
        let inc = w[1] - w[0];
        if inc > max_inc {
            max_inc = inc;
            idx = Some(i + 1);
        }
    }
    let pass = max_inc <= tol;
    EnergyAudit {
        max_increase: max_inc,
        tolerance: tol,
        pass,
        fail_index: if pass { None } else { idx },
    }
}

/// Least-squares decay-rate fit of log ||x(t)||.
#[derive(Clone, Debug)]
pub struct DecayFit {
    pub rate: f64,
    /// True when fewer than 3 envelope peaks existed and the fit fell back
    /// to all samples in the window.
    pub used_fallback: bool,
    pub points: usize,
}

/// Fits the slope of log ||x(t)|| over the window [0.2 T, 0.9 T], using only
/// local maxima of ||x(t)|| (envelope peaks) to avoid oscillation bias.
pub fn empirical_decay_rate(times: &[f64], norms: &[f64]) -> Result<DecayFit> {
    if times.len() != norms.len() || times.len() < 3 {
        return Err(Error::Shape("need at least 3 samples".into()));
    }
    let (first, last) = (norms[0], norms[norms.len() - 1]);
    if !(last < first) {
        return Err(Error::NotConverging);
    }
    let t_end = *times.last().unwrap();
    let (w_lo, w_hi) = (0.2 * t_end, 0.9 * t_end);
    let in_window = |i: usize| times[i] >= w_lo && times[i] <= w_hi && norms[i] > 1e-300;

    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..norms.len() - 1 {
        if in_window(i) && norms[i] > norms[i - 1] && norms[i] >= norms[i + 1] {
            peaks.push(i);
        }
    }
    let (indices, used_fallback) = if peaks.len() >= 3 {
        (peaks, false)
    } else {
        ((0..times.len()).filter(|&i| in_window(i)).collect(), true)
    };
    if indices.len() < 2 {
        return Err(Error::Shape("too few samples in fit window".into()));
    }
    // least squares ln(norm) = a + b t
    let n = indices.len() as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for &i in &indices {
        let t = times[i];
        let y = norms[i].ln();
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    Ok(DecayFit {
        rate: -slope,
        used_fallback,
        points: indices.len(),
    })
}

/// Checks every sampled norm against the certified decay envelope (using
/// rate_sound). The initial state must lie in the certified region.
pub fn verify_envelope(
    times: &[f64],
    canonical_norms: &[f64],
    x0: &State,
    cert: &Certificate,
) -> Result<bool> {
    if !cert.region.contains(x0) {
        return Err(Error::OutsideRegion);
    }
    let x0_norm = x0.norm();
    for (t, nx) in times.iter().zip(canonical_norms) {
        let bound = cert.envelope_sound(x0_norm, *t)? * (1.0 + 1e-6);
        if *nx > bound {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Writes the trajectory CSV: header `t,q1..qn,p1..pn,Hd,S,normx`, one row
/// per step, 17-significant-digit decimals, LF endings. `lyapunov` defaults
/// to the energy column when no certificate-specific S is available (the
/// eps = 0 collapse of the candidate).
pub fn write_trajectory_csv<W: Write>(
    mut w: W,
    traj: &Trajectory,
    lyapunov: Option<&[f64]>,
    normx: &[f64],
) -> Result<()> {
    let n = traj.states.first().map_or(0, State::dim);
    let mut header = String::from("t");
    for i in 1..=n {
        header.push_str(&format!(",q{i}"));
    }
    for i in 1..=n {
        header.push_str(&format!(",p{i}"));
    }
    header.push_str(",Hd,S,normx\n");
    w.write_all(header.as_bytes())?;
    for (i, s) in traj.states.iter().enumerate() {
        let mut row = format!("{:.16e}", traj.times[i]);
        for v in s.q.iter().chain(s.p.iter()) {
            row.push_str(&format!(",{v:.16e}"));
        }
        let sv = lyapunov.map_or(traj.energies[i], |l| l[i]);
        row.push_str(&format!(
            ",{:.16e},{:.16e},{:.16e}\n",
            traj.energies[i], sv, normx[i]
        ));
        w.write_all(row.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::{make_certificate, PhiChoice, Region};
    use crate::config::builtin_model;

    #[test]
    fn rk4_matches_exponential_decay() {
        // qdot = -q from q = 1 over one step h = 0.1
        let s0 = State {
            q: VecF::from_element(1, 1.0),
            p: VecF::zeros(1),
        };
        let s1 = rk4_step(|s: &State| Ok((-&s.q, VecF::zeros(1))), &s0, 0.1).unwrap();
        assert!((s1.q[0] - 0.90483750).abs() < 1e-8, "q = {}", s1.q[0]);
        assert_eq!(s1.p[0], 0.0);
    }

    #[test]
    fn rk4_zero_field_is_fixed_point() {
        let s0 = State {
            q: VecF::from_row_slice(&[0.4, -0.2]),
            p: VecF::from_row_slice(&[1.0, 2.0]),
        };
        let s1 = rk4_step(
            |_s: &State| Ok((VecF::zeros(2), VecF::zeros(2))),
            &s0,
            0.5,
        )
        .unwrap();
        assert_eq!(s1.q, s0.q);
        assert_eq!(s1.p, s0.p);
    }

    struct Harmonic;

    impl Dynamics for Harmonic {
        fn n(&self) -> usize {
            1
        }
        fn deriv(&self, s: &State) -> Result<(VecF, VecF)> {
            Ok((s.p.clone(), -&s.q))
        }
        fn energy(&self, s: &State) -> Result<f64> {
            Ok(0.5 * (s.q.norm_squared() + s.p.norm_squared()))
        }
    }

    #[test]
    fn harmonic_oscillator_period_accuracy() {
        let period = 2.0 * std::f64::consts::PI;
        let h = period / 6283.0; // ~1e-3, an exact divisor of the horizon
        let s0 = State {
            q: VecF::from_element(1, 1.0),
            p: VecF::zeros(1),
        };
        let traj = simulate(&Harmonic, &s0, period, h).unwrap();
        let sf = traj.final_state();
        let err = ((sf.q[0] - 1.0).powi(2) + sf.p[0].powi(2)).sqrt();
        assert!(err <= 1e-9, "period error = {err:.3e}");
    }

    #[test]
    fn decay_rate_pure_exponential() {
        let times: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
        let norms: Vec<f64> = times.iter().map(|t| (-2.0 * t).exp()).collect();
        let fit = empirical_decay_rate(&times, &norms).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-6, "rate = {}", fit.rate);
        assert!(fit.used_fallback); // monotone signal has no interior peaks
    }

    #[test]
    fn decay_rate_oscillatory_envelope() {
        let times: Vec<f64> = (0..=5000).map(|k| k as f64 * 0.002).collect();
        let norms: Vec<f64> = times
            .iter()
            .map(|t| (-t).exp() * (1.0 + 0.5 * (10.0 * t).cos()))
            .collect();
        let fit = empirical_decay_rate(&times, &norms).unwrap();
        assert!((fit.rate - 1.0).abs() < 0.05, "rate = {}", fit.rate);
        assert!(!fit.used_fallback);
    }

    #[test]
    fn decay_rate_rejects_non_decaying() {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let norms = vec![1.0; times.len()];
        assert!(matches!(
            empirical_decay_rate(&times, &norms),
            Err(Error::NotConverging)
        ));
    }

    #[test]
    fn energy_audit_flags_spike() {
        let energies = vec![1.0, 0.9, 0.95, 0.8, 0.7];
        let traj = Trajectory {
            times: (0..5).map(|k| k as f64 * 0.1).collect(),
            states: vec![State::zeros(1); 5],
            energies,
            controls: None,
            step: 0.1,
        };
        let audit = energy_audit(&traj);
        assert!(!audit.pass);
        assert_eq!(audit.fail_index, Some(2));
        assert!((audit.max_increase - 0.05).abs() < 1e-15);
    }

    #[test]
    fn energy_audit_passes_monotone() {
        let traj = Trajectory {
            times: (0..4).map(|k| k as f64 * 0.1).collect(),
            states: vec![State::zeros(1); 4],
            energies: vec![1.0, 0.5, 0.25, 0.125],
            controls: None,
            step: 0.1,
        };
        assert!(energy_audit(&traj).pass);
    }

    #[test]
    fn simulate_rejects_bad_horizon() {
        let s0 = State::zeros(1);
        assert!(matches!(
            simulate(&Harmonic, &s0, 0.0, 0.1),
            Err(Error::NonPositiveHorizon)
        ));
        assert!(simulate(&Harmonic, &s0, 1.0, -0.1).is_err());
    }

    #[test]
    fn msd1_closed_loop_converges() {
        let (cl, _) = msd1_loop();
        let s0 = State {
            q: VecF::from_element(1, 1.0),
            p: VecF::zeros(1),
        };
        // slow eigenvalue Re = -0.75 gives e^{-7.5} ~ 5.5e-4; the momentum
        // component carries an extra ~2.6x oscillation amplitude on top
        let traj = simulate(&cl, &s0, 10.0, 1e-3).unwrap();
        assert!(traj.final_state().norm() <= 2e-3);
        let longer = simulate(&cl, &s0, 14.0, 1e-3).unwrap();
        assert!(longer.final_state().norm() <= 1e-3);
        assert!(energy_audit(&traj).pass);
        assert!(traj.controls.is_some());
    }

    #[test]
    fn envelope_holds_and_is_falsifiable() {
        let (cl, csys) = msd1_loop();
        let region = Region::uniform(1, 0.5, 0.5).unwrap();
        let cert = make_certificate(&csys, &region, PhiChoice::ATranspose).unwrap();
        let s0 = State {
            q: VecF::from_element(1, 0.3),
            p: VecF::from_element(1, 0.3),
        };
        let traj = simulate(&cl, &s0, 10.0, 1e-3).unwrap();
        let norms = traj.canonical_norms(&cl).unwrap();
        let x0 = crate::plvcc::map_state(&cl, &s0).unwrap();
        assert!(verify_envelope(&traj.times, &norms, &x0, &cert).unwrap());

        // the certified rate is a lower bound on the empirical one
        let fit = empirical_decay_rate(&traj.times, &norms).unwrap();
        assert!(fit.rate >= cert.rate_sound - 0.01);

        // inflating the certified rate must falsify the envelope
        let mut inflated = cert.clone();
        inflated.rate_sound *= 1e4;
        assert_eq!(
            verify_envelope(&traj.times, &norms, &x0, &inflated).unwrap(),
            false
        );

        // initial states outside the region are rejected
        let far = State {
            q: VecF::from_element(1, 5.0),
            p: VecF::zeros(1),
        };
        assert!(matches!(
            verify_envelope(&traj.times, &norms, &far, &cert),
            Err(Error::OutsideRegion)
        ));
    }

    #[test]
    fn csv_format() {
        let traj = Trajectory {
            times: vec![0.0, 0.1],
            states: vec![
                State {
                    q: VecF::from_element(1, 1.0),
                    p: VecF::from_element(1, 2.0),
                },
                State {
                    q: VecF::from_element(1, 0.5),
                    p: VecF::from_element(1, 1.0),
                },
            ],
            energies: vec![3.0, 0.625],
            controls: None,
            step: 0.1,
        };
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj, None, &[2.0, 1.0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,q1,p1,Hd,S,normx"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("0.0000000000000000e0,1.0000000000000000e0"));
        assert_eq!(row.split(',').count(), 6);
        assert!(!text.contains('\r'));
    }

    fn msd1_loop() -> (ClosedLoopSystem, CanonicalPHSystem) {
        let sys = builtin_model("msd1").unwrap().unwrap();
        let gains = crate::pidpbc::GainSet::diagonal(&[1.0], &[2.0], &[0.0], &[0.0]).unwrap();
        let cl = crate::pidpbc::build_closed_loop(&sys, &gains).unwrap();
        let csys = plvcc::to_canonical(&cl);
        (cl, csys)
    }
}
