//! 3-DoF reduction of the Philips Experimental Robotic Arm (PERA): shoulder
//! yaw, elbow pitch, elbow yaw. Fully actuated, gravity acting on the elbow
//! pitch only.

use std::sync::Arc;

use crate::model::{MatrixField, MechanicalSystem, Positivity, ScalarField, State};
use crate::pidpbc::GainSet;
use crate::{Error, MatF, Result, VecF};

/// Physical parameters of the 3-DoF PERA model. The joint inertias are not
/// published for this arm; the defaults are plausible small-arm magnitudes
/// and are recorded in every output.
#[derive(Clone, Debug)]
pub struct PeraParams {
    /// Joint moments of inertia (kg m^2) for shoulder yaw, elbow pitch,
    /// elbow yaw.
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    /// Mass of the elbow+wrist link (kg).
    pub m2: f64,
    /// Distance to the link's center of mass (m).
    pub dc2: f64,
    /// Gravity (m/s^2).
    pub g: f64,
    /// Desired configuration (rad).
    pub q_star: VecF,
    /// Optional viscous damping diag(d1, d2, d3); zero by default.
    pub damping: Option<[f64; 3]>,
}

impl Default for PeraParams {
    fn default() -> Self {
        Self {
            i1: 0.02,
            i2: 0.01,
            i3: 0.005,
            m2: 1.0,
            dc2: 0.16,
            g: 9.81,
            q_star: VecF::from_row_slice(&[-1.8, 1.57, 0.78]),
            damping: None,
        }
    }
}

/// Builds the PERA mechanical system with analytic dM/dq and grad U.
///
/// M(q) = [[m11, 0, m13], [0, m22, 0], [m13, 0, m33]] with
/// m11 = I1+I2+I3 + m2 dc2^2 sin^2 q2, m13 = I3 cos q2,
/// m22 = I2+I3 + m2 dc2^2, m33 = I3, and U(q) = m2 dc2 g (1 - cos q2).
pub fn build_pera(params: &PeraParams) -> Result<MechanicalSystem> {
    let p = params.clone();
    let grav = p.m2 * p.dc2 * p.g;

    // reject inertia parameters that lose definiteness anywhere on the q2 circle
    for k in 0..=720 {
        let q2 = -std::f64::consts::PI + k as f64 * std::f64::consts::PI / 360.0;
        let m = pera_inertia(&p, q2);
        if m.clone().cholesky().is_none() {
            return Err(Error::InvalidGains(
                "inertia parameters yield indefinite M".into(),
            ));
        }
    }

    let pm = p.clone();
    let inertia = MatrixField::from_q_fn(
        move |q: &VecF| pera_inertia(&pm, q[1]),
        true,
        Positivity::Definite,
    )
    .with_partials(vec![
        Arc::new(|_q: &VecF| MatF::zeros(3, 3)),
        {
            let pp = p.clone();
            Arc::new(move |q: &VecF| {
                let (s2, c2) = q[1].sin_cos();
                let mdc2 = pp.m2 * pp.dc2 * pp.dc2;
                let mut dm = MatF::zeros(3, 3);
                dm[(0, 0)] = 2.0 * mdc2 * s2 * c2;
                dm[(0, 2)] = -pp.i3 * s2;
                dm[(2, 0)] = -pp.i3 * s2;
                dm
            })
        },
        Arc::new(|_q: &VecF| MatF::zeros(3, 3)),
    ]);

    let potential = ScalarField::new(move |q: &VecF| grav * (1.0 - q[1].cos()))
        .with_gradient(move |q: &VecF| VecF::from_row_slice(&[0.0, grav * q[1].sin(), 0.0]))
        .with_hessian(move |q: &VecF| {
            MatF::from_diagonal(&VecF::from_row_slice(&[0.0, grav * q[1].cos(), 0.0]))
        });

    let damping = match p.damping {
        Some(d) => MatrixField::constant(
            MatF::from_diagonal(&VecF::from_row_slice(&d)),
            true,
            Positivity::SemiDefinite,
        ),
        None => MatrixField::constant(MatF::zeros(3, 3), true, Positivity::SemiDefinite),
    };

    MechanicalSystem::new(3, 3, inertia, potential, damping)
}

fn pera_inertia(p: &PeraParams, q2: f64) -> MatF {
    let (s2, c2) = q2.sin_cos();
    let mdc2 = p.m2 * p.dc2 * p.dc2;
    let m11 = p.i1 + p.i2 + p.i3 + mdc2 * s2 * s2;
    let m13 = p.i3 * c2;
    let m22 = p.i2 + p.i3 + mdc2;
    MatF::from_row_slice(
        3,
        3,
        &[m11, 0.0, m13, 0.0, m22, 0.0, m13, 0.0, p.i3],
    )
}

/// The Table-1 gain sets. All use K_D = 0 (a PI-PBC scheme) and the same
/// desired configuration.
pub fn pera_scenarios() -> Vec<(String, GainSet)> {
    let q_star = [-1.8, 1.57, 0.78];
    let s1 = GainSet::diagonal(
        &[5.0, 15.0, 20.0],
        &[200.0, 250.0, 350.0],
        &[0.0; 3],
        &q_star,
    )
    .expect("S1 gains valid");
    let s2 = GainSet::diagonal(
        &[5.0, 15.0, 20.0],
        &[200.0, 250.0, 200.0],
        &[0.0; 3],
        &q_star,
    )
    .expect("S2 gains valid");
    let s3 = GainSet::diagonal(
        &[5.0, 1.0, 20.0],
        &[200.0, 250.0, 350.0],
        &[0.0; 3],
        &q_star,
    )
    .expect("S3 gains valid");
    vec![
        ("s1".to_string(), s1),
        ("s2".to_string(), s2),
        ("s3".to_string(), s3),
    ]
}

/// Scenario lookup by name (`s1`, `s2`, `s3`).
pub fn pera_scenario(name: &str) -> Result<GainSet> {
    pera_scenarios()
        .into_iter()
        .find(|(label, _)| label == name)
        .map(|(_, g)| g)
        .ok_or_else(|| Error::Config(format!("unknown PERA scenario '{name}'")))
}

/// Default initial state for the reproduction runs: the arm at rest at the
/// origin pose.
pub fn default_initial_state() -> State {
    State::zeros(3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::Region;
    use crate::{MatF, VecF};

    #[test]
    fn inertia_oracle_values() {
        let sys = build_pera(&PeraParams::default()).unwrap();
        // q2 = 0: the elbow-yaw axis aligns with the shoulder axis
        let m0 = sys.inertia.eval_q(&VecF::from_row_slice(&[0.3, 0.0, -0.7]));
        let expect0 = MatF::from_row_slice(
            3,
            3,
            &[0.035, 0.0, 0.005, 0.0, 0.0406, 0.0, 0.005, 0.0, 0.005],
        );
        assert!((&m0 - &expect0).norm() < 1e-12, "M(0) = {m0}");

        // q2 = pi/2: the coupling vanishes and the mass term moves to m11
        let mh = sys
            .inertia
            .eval_q(&VecF::from_row_slice(&[0.0, std::f64::consts::FRAC_PI_2, 0.0]));
        let expect_h = MatF::from_row_slice(
            3,
            3,
            &[0.0606, 0.0, 0.0, 0.0, 0.0406, 0.0, 0.0, 0.0, 0.005],
        );
        assert!((&mh - &expect_h).norm() < 1e-12, "M(pi/2) = {mh}");
    }

    #[test]
    fn potential_oracle_values() {
        let sys = build_pera(&PeraParams::default()).unwrap();
        let grav = 1.0 * 0.16 * 9.81;
        let q_pi = VecF::from_row_slice(&[0.0, std::f64::consts::PI, 0.0]);
        assert!((sys.potential.value(&q_pi) - 2.0 * grav).abs() < 1e-12);
        assert!((sys.potential.value(&q_pi) - 3.1392).abs() < 1e-12);
        let g = sys.potential.gradient(&VecF::from_row_slice(&[0.5, 0.4, -0.2]));
        assert_eq!(g[0], 0.0);
        assert_eq!(g[2], 0.0);
        assert!((g[1] - grav * 0.4f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn inertia_partial_matches_fd() {
        let sys = build_pera(&PeraParams::default()).unwrap();
        let q = VecF::from_row_slice(&[0.1, 0.7, -0.3]);
        let h = 1e-6;
        for i in 0..3 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let fd = (sys.inertia.eval_q(&qp) - sys.inertia.eval_q(&qm)) / (2.0 * h);
            let an = sys.inertia.partial(&q, i);
            assert!((&fd - &an).norm() < 1e-8, "dM/dq{} mismatch", i + 1);
        }
    }

    #[test]
    fn assumptions_hold_near_target() {
        let sys = build_pera(&PeraParams::default()).unwrap();
        let region = Region::uniform(3, 0.3, 0.5).unwrap().with_grid(3);
        let report = sys.validate_assumptions(&VecF::from_row_slice(&[-1.8, 1.57, 0.78]), &region);
        // gravity alone is not strongly convex in q1/q3; that is what the
        // integral action fixes, so only boundedness is expected here
        assert!(report.boundedness_pass);
        assert!(report.max_norm_a.is_finite() && report.max_norm_d.is_finite());
    }

    #[test]
    fn scenario_lookup() {
        assert!(pera_scenario("s2").is_ok());
        assert!(pera_scenario("s9").is_err());
        let names: Vec<String> = pera_scenarios().into_iter().map(|(l, _)| l).collect();
        assert_eq!(names, ["s1", "s2", "s3"]);
    }

    #[test]
    fn rejects_indefinite_inertia_parameters() {
        let params = PeraParams {
            i3: -0.005,
            ..PeraParams::default()
        };
        assert!(build_pera(&params).is_err());
    }
}
