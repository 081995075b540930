//! Command-line front end: certify / simulate / tune / demo.
//!
//! Exit codes: 0 success or certified, 2 well-formed but infeasible,
//! 1 error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phcert::certify::{self, PhiChoice, Region};
use phcert::config::{self, FileConfig};
use phcert::model::{MechanicalSystem, State};
use phcert::pidpbc::{build_closed_loop, ClosedLoopSystem, GainSet};
use phcert::plvcc::{self, to_canonical};
use phcert::sim;
use phcert::tune;
use phcert::{Error, Result, VecF};

#[derive(Parser)]
#[command(name = "phcert", version, about = "Port-Hamiltonian PID-PBC stability certification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Search for an exponential decay-rate certificate on a region.
    Certify(Common),
    /// Integrate the closed loop and write a trajectory CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Simulate (and emit) the canonical representation instead.
        #[arg(long)]
        canonical: bool,
    },
    /// Certify a batch of gain sets and rank them by predicted rate.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Comma-separated scenario labels (e.g. s1,s2,s3).
        #[arg(long, value_delimiter = ',')]
        sets: Option<Vec<String>>,
        /// Candidate grid name; `default` is the 1-DoF K_P x K_I grid.
        #[arg(long)]
        grid: Option<String>,
        /// Stop at the first candidate reaching this predicted rate.
        #[arg(long)]
        target_rate: Option<f64>,
    },
    /// Run a packaged reproduction scenario.
    Demo {
        /// Demo name: pera-fig2a | pera-fig2b.
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Builtin model (pera, pendulum, msd1) or path to a config file.
    #[arg(long, default_value = "pera")]
    model: String,
    /// Named gain scenario (s1 | s2 | s3, or pera-s1 etc.).
    #[arg(long)]
    gains: Option<String>,
    /// Diagonal K_P entries (scalar broadcasts).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    kp: Option<Vec<f64>>,
    /// Diagonal K_I entries (scalar broadcasts).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    ki: Option<Vec<f64>>,
    /// Diagonal K_D entries (scalar broadcasts).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    kd: Option<Vec<f64>>,
    /// Desired configuration (scalar broadcasts).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    qstar: Option<Vec<f64>>,
    /// Region radius per q axis (scalar broadcasts).
    #[arg(long, value_delimiter = ',')]
    qr: Option<Vec<f64>>,
    /// Region radius per p axis (scalar broadcasts).
    #[arg(long, value_delimiter = ',')]
    pr: Option<Vec<f64>>,
    /// Grid points per region axis.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Lyapunov cross-term choice: at | ainv.
    #[arg(long)]
    phi: Option<String>,
    /// Integration step.
    #[arg(long = "h")]
    step: Option<f64>,
    /// Simulation horizon in seconds.
    #[arg(long, allow_hyphen_values = true)]
    horizon: Option<f64>,
    /// Halton seed for extra region samples.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initial configuration for simulation (scalar broadcasts).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    q0: Option<Vec<f64>>,
    /// Initial momenta for simulation (scalar broadcasts).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    p0: Option<Vec<f64>>,
}

/// Everything resolved: model + gains + region + integrator settings.
struct Setup {
    sys: MechanicalSystem,
    gains: GainSet,
    region: Region,
    phi: PhiChoice,
    h: f64,
    horizon: f64,
    out: PathBuf,
    s0: State,
}

fn broadcast(v: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; n]),
        l if l == n => Ok(v.to_vec()),
        l => Err(Error::Config(format!(
            "{what} needs 1 or {n} entries, got {l}"
        ))),
    }
}

fn resolve(common: &Common) -> Result<Setup> {
    let mut file_cfg = FileConfig::default();
    let sys = match config::builtin_model(&common.model) {
        Some(built) => built?,
        None => {
            let text = fs::read_to_string(&common.model).map_err(|e| {
                Error::Config(format!("cannot read model '{}': {e}", common.model))
            })?;
            file_cfg = config::parse_config(&text)?;
            file_cfg
                .model
                .as_ref()
                .ok_or_else(|| {
                    Error::Config(format!("config '{}' has no [model] section", common.model))
                })?
                .build()?
        }
    };
    let n = sys.n();
    let m = sys.m();

    let gains = match common.gains.as_deref() {
        Some(name) => {
            let short = name.strip_prefix("pera-").unwrap_or(name);
            if common.model != "pera" {
                return Err(Error::Config(format!(
                    "named scenario '{name}' is only defined for the pera model"
                )));
            }
            phcert::pera::pera_scenario(short)?
        }
        None => {
            let take = |cli: &Option<Vec<f64>>, file: &Option<Vec<f64>>| -> Option<Vec<f64>> {
                cli.clone().or_else(|| file.clone())
            };
            let kp = take(&common.kp, &file_cfg.kp);
            let ki = take(&common.ki, &file_cfg.ki);
            let kd = take(&common.kd, &file_cfg.kd);
            let q_star = take(&common.qstar, &file_cfg.q_star);
            if common.model == "pera" && kp.is_none() && ki.is_none() {
                phcert::pera::pera_scenario("s1")?
            } else {
                let kp = broadcast(&kp.unwrap_or_else(|| vec![1.0]), m, "--kp")?;
                let ki = broadcast(&ki.unwrap_or_else(|| vec![2.0]), m, "--ki")?;
                let kd = broadcast(&kd.unwrap_or_else(|| vec![0.0]), m, "--kd")?;
                let q_star = broadcast(&q_star.unwrap_or_else(|| vec![0.0]), n, "--qstar")?;
                GainSet::diagonal(&kp, &ki, &kd, &q_star)?
            }
        }
    };

    let qr = common.qr.clone().or(file_cfg.qr).unwrap_or_else(|| vec![0.3]);
    let pr = common.pr.clone().or(file_cfg.pr).unwrap_or_else(|| vec![0.5]);
    let mut region = Region::new(
        VecF::from_row_slice(&broadcast(&qr, n, "--qr")?),
        VecF::from_row_slice(&broadcast(&pr, n, "--pr")?),
    )?;
    if let Some(g) = common.grid_points.or(file_cfg.grid) {
        region = region.with_grid(g);
    }
    if let Some(extra) = file_cfg.extra_samples {
        region = region.with_extra_samples(
            extra,
            common.seed.or(file_cfg.seed).unwrap_or(0),
        );
    }

    let phi = PhiChoice::parse(
        common
            .phi
            .as_deref()
            .or(file_cfg.phi.as_deref())
            .unwrap_or("at"),
    )?;
    // default step sized for the stiff PERA loop (fast joint + large K_P)
    let h = common.step.or(file_cfg.h).unwrap_or(2e-4);
    let horizon = common.horizon.or(file_cfg.horizon).unwrap_or(20.0);
    let out = common
        .out
        .clone()
        .or(file_cfg.out_dir.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    let q0 = match &common.q0 {
        Some(v) => VecF::from_row_slice(&broadcast(v, n, "--q0")?),
        None => VecF::zeros(n),
    };
    let p0 = match &common.p0 {
        Some(v) => VecF::from_row_slice(&broadcast(v, n, "--p0")?),
        None => VecF::zeros(n),
    };
    let s0 = State::new(q0, p0)?;

    Ok(Setup {
        sys,
        gains,
        region,
        phi,
        h,
        horizon,
        out,
        s0,
    })
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn cmd_certify(common: &Common) -> Result<()> {
    let setup = resolve(common)?;
    let cl = build_closed_loop(&setup.sys, &setup.gains)?;
    let csys = to_canonical(&cl);
    let cert = certify::make_certificate(&csys, &setup.region, setup.phi)?;
    write_out(&setup.out, "certificate.txt", &cert.to_kv_string())?;
    println!("rate_paper = {:.16e}", cert.rate_paper);
    println!("rate_sound = {:.16e}", cert.rate_sound);
    println!(
        "certified: eps = {:.6e} on |q| <= {:?}, |p| <= {:?}",
        cert.epsilon,
        cert.region.q_radii.iter().collect::<Vec<_>>(),
        cert.region.p_radii.iter().collect::<Vec<_>>()
    );
    Ok(())
}

fn simulate_closed(
    cl: &ClosedLoopSystem,
    setup: &Setup,
    canonical: bool,
) -> Result<(sim::Trajectory, Vec<f64>)> {
    if canonical {
        let csys = to_canonical(cl);
        let s0 = plvcc::map_state(cl, &setup.s0)?;
        let traj = sim::simulate(&csys, &s0, setup.horizon, setup.h)?;
        let norms = traj.state_norms();
        Ok((traj, norms))
    } else {
        let traj = sim::simulate(cl, &setup.s0, setup.horizon, setup.h)?;
        let norms = traj.canonical_norms(cl)?;
        Ok((traj, norms))
    }
}

fn cmd_simulate(common: &Common, canonical: bool) -> Result<()> {
    let setup = resolve(common)?;
    let cl = build_closed_loop(&setup.sys, &setup.gains)?;
    let (traj, norms) = simulate_closed(&cl, &setup, canonical)?;
    let mut csv = Vec::new();
    sim::write_trajectory_csv(&mut csv, &traj, None, &norms)?;
    let name = if canonical {
        "trajectory_canonical.csv"
    } else {
        "trajectory.csv"
    };
    write_out(&setup.out, name, &String::from_utf8_lossy(&csv))?;
    let final_err = if canonical {
        traj.final_state().q.norm()
    } else {
        (&traj.final_state().q - &setup.gains.q_star).norm()
    };
    println!("final |q - q*| = {final_err:.6e}");
    println!("final H_d = {:.6e}", traj.energies.last().unwrap());
    Ok(())
}

fn cmd_tune(
    common: &Common,
    sets: &Option<Vec<String>>,
    grid: &Option<String>,
    target_rate: Option<f64>,
) -> Result<()> {
    let setup = resolve(common)?;
    if let Some(grid_name) = grid {
        if grid_name != "default" {
            return Err(Error::Config(format!("unknown grid '{grid_name}'")));
        }
        if setup.sys.n() != 1 {
            return Err(Error::Config(
                "grid `default` is defined for 1-DoF models".into(),
            ));
        }
        let candidates = tune::default_grid_1dof(setup.gains.q_star[0]);
        let (best, report) = tune::grid_search(
            &setup.sys,
            &candidates,
            &setup.region,
            setup.phi,
            target_rate,
        )?;
        write_out(&setup.out, "tuning.csv", &report.to_csv())?;
        println!("best = {}", candidates[best].0);
        return Ok(());
    }

    let gain_sets: Vec<(String, GainSet)> = match sets {
        Some(labels) => {
            if common.model != "pera" {
                return Err(Error::Config(
                    "--sets refers to pera scenarios; use --grid for other models".into(),
                ));
            }
            labels
                .iter()
                .map(|l| {
                    let short = l.strip_prefix("pera-").unwrap_or(l);
                    phcert::pera::pera_scenario(short).map(|g| (short.to_string(), g))
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => vec![("cli".to_string(), setup.gains.clone())],
    };
    let report = tune::predict_ordering(&setup.sys, &gain_sets, &setup.region, setup.phi);
    write_out(&setup.out, "tuning.csv", &report.to_csv())?;
    if report.ranking.is_empty() {
        let reasons: Vec<String> = report
            .entries
            .iter()
            .filter_map(|e| e.reason.as_ref().map(|r| format!("{}: {r}", e.label)))
            .collect();
        return Err(Error::Infeasible(format!(
            "no gain set certified ({})",
            reasons.join("; ")
        )));
    }
    println!("ranking = {}", report.ranking.join(" > "));
    for e in &report.entries {
        println!(
            "{}: certified = {}, rate_paper = {:.6e}, rate_sound = {:.6e}",
            e.label, e.certified, e.rate_paper, e.rate_sound
        );
    }
    Ok(())
}

const DEMOS: &[(&str, [&str; 2])] = &[
    ("pera-fig2a", ["s1", "s2"]),
    ("pera-fig2b", ["s1", "s3"]),
];

fn cmd_demo(name: &str, out: &Option<PathBuf>) -> Result<()> {
    let Some((_, labels)) = DEMOS.iter().find(|(n, _)| *n == name) else {
        let available: Vec<&str> = DEMOS.iter().map(|(n, _)| *n).collect();
        return Err(Error::Config(format!(
            "unknown demo '{name}'; available: {}",
            available.join(", ")
        )));
    };
    let out = out.clone().unwrap_or_else(|| PathBuf::from("."));
    let sys = config::builtin_model("pera").expect("pera is builtin")?;
    let region = Region::uniform(3, 0.3, 0.5)?.with_grid(3);
    // compare at one shared eps, as the tuning guideline does
    let own: Vec<certify::Certificate> = labels
        .iter()
        .map(|l| {
            let gains = phcert::pera::pera_scenario(l)?;
            let cl = build_closed_loop(&sys, &gains)?;
            certify::make_certificate(&to_canonical(&cl), &region, PhiChoice::ATranspose)
        })
        .collect::<Result<Vec<_>>>()?;
    let shared_eps = own.iter().map(|c| c.epsilon).fold(f64::INFINITY, f64::min);
    let mut rates = String::from("label rate_paper rate_sound\n");
    let mut rate_of = Vec::new();
    for (label, own_cert) in labels.iter().zip(&own) {
        let gains = phcert::pera::pera_scenario(label)?;
        let cl = build_closed_loop(&sys, &gains)?;
        let csys = to_canonical(&cl);
        let cert = certify::certificate_at_epsilon(
            &csys,
            &region,
            PhiChoice::ATranspose,
            shared_eps,
            own_cert.epsilon_star,
        )?;
        write_out(&out, &format!("certificate_{label}.txt"), &cert.to_kv_string())?;
        let traj = sim::simulate(&cl, &phcert::pera::default_initial_state(), 20.0, 2e-4)?;
        let norms = traj.canonical_norms(&cl)?;
        let mut csv = Vec::new();
        sim::write_trajectory_csv(&mut csv, &traj, None, &norms)?;
        write_out(
            &out,
            &format!("trajectory_{label}.csv"),
            &String::from_utf8_lossy(&csv),
        )?;
        rates.push_str(&format!(
            "{label} {:.16e} {:.16e}\n",
            cert.rate_paper, cert.rate_sound
        ));
        rate_of.push((label.to_string(), cert.rate_paper));
        println!(
            "{label}: rate_paper = {:.6e}, rate_sound = {:.6e}",
            cert.rate_paper, cert.rate_sound
        );
    }
    write_out(&out, "rates.txt", &rates)?;
    if rate_of[0].1 > rate_of[1].1 {
        println!("{} decays faster than {}", rate_of[0].0, rate_of[1].0);
    } else {
        println!("{} decays faster than {}", rate_of[1].0, rate_of[0].0);
    }
    Ok(())
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) | Error::NotConvex(_) | Error::NoFeasibleGains => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Certify(common) => cmd_certify(common),
        Cmd::Simulate { common, canonical } => cmd_simulate(common, *canonical),
        Cmd::Tune {
            common,
            sets,
            grid,
            target_rate,
        } => cmd_tune(common, sets, grid, *target_rate),
        Cmd::Demo { name, out } => cmd_demo(name, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
