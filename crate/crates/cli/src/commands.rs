//! The four subcommands. Each returns an exit code or a [`CliError`].

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ntvcbf::certify::{certify, Certificate, Verdict};
use ntvcbf::neural::{load_model, save_model, CertNet, Role};
use ntvcbf::safeset::{label_samples, refine_in_place, LabeledDataset};
use ntvcbf::sim::{self, read_trajectory_csv, SimError, SimOptions};
use ntvcbf::stl::{parse_spec, TemporalOp};
use ntvcbf::training::{self, write_history_csv, TrainError};
use serde::Serialize;

use crate::config::{check_initial_state, Prepared, RunConfig};
use crate::runlog::RunLog;
use crate::{CliError, EXIT_FAILED, EXIT_OK};

/// Slack when comparing a rollout horizon with the specification horizon.
const HORIZON_TOL: f64 = 1e-9;

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn load_net(path: &Path, role: Role) -> Result<CertNet, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let net = load_model(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if net.role != role {
        return Err(CliError::Data(format!(
            "{} holds a {:?} network, expected {role:?}",
            path.display(),
            net.role
        )));
    }
    Ok(net)
}

fn check_dims(p: &Prepared, barrier: &CertNet, controller: &CertNet) -> Result<(), CliError> {
    let n = p.system.n;
    if barrier.n != n || controller.n != n || controller.output_dim() != p.system.m {
        return Err(CliError::Data(format!(
            "model dimensions (barrier n = {}, controller n = {} m = {}) do not match the system (n = {n}, m = {})",
            barrier.n,
            controller.n,
            controller.output_dim(),
            p.system.m
        )));
    }
    Ok(())
}

fn empty_safe_set(ds: &LabeledDataset) -> Result<(), CliError> {
    if ds.in_safe_count() == 0 {
        return Err(CliError::Unsatisfiable(format!(
            "no grid sample satisfies the active specification blocks (generation {}); \
             try a smaller epsilon or a different interval policy",
            ds.generation
        )));
    }
    Ok(())
}

fn log_certificate(log: &mut RunLog, cert: &Certificate) {
    let msg = format!(
        "certificate: eta_hat = {:.6e}, L = {:.6e}, epsilon = {}, margin = {:.6e}, verdict = {:?}",
        cert.eta_hat,
        cert.l_composite,
        cert.epsilon,
        cert.margin(),
        cert.verdict
    );
    println!("{msg}");
    log.line(&msg);
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    converged: bool,
    /// True when training stopped without meeting the convergence tolerance.
    failure: bool,
    epochs_run: usize,
    best_epoch: Option<usize>,
    best_total: Option<f64>,
    eta: f64,
    epsilon: f64,
    grid_size: usize,
    in_safe_count: usize,
    generation: usize,
    verdict: Verdict,
    margin: f64,
}

/// Labels the grid, trains both networks, writes the model files, the
/// loss history, the certificate and a summary.
pub fn train(config: &Path) -> Result<u8, CliError> {
    let cfg = RunConfig::load(config)?;
    let p = cfg.prepare()?;
    let out = cfg.output_dir();
    create_dir(&out)?;
    let mut log = RunLog::open(&out);
    log.line(&format!("train: config {}", config.display()));

    let grid = cfg.build_grid(&p.system, p.spec.horizon, cfg.grid.epsilon)?;
    log.line(&format!("grid: {} samples, epsilon {}", grid.len(), grid.epsilon));
    let ds = label_samples(&grid, &p.spec, &p.schedule);
    log.line(&format!("labeled: {} in-safe of {}", ds.in_safe_count(), ds.len()));
    empty_safe_set(&ds)?;

    let every = (p.train.epochs / 20).max(1);
    let mut observer = |r: &training::LossReport| {
        if r.epoch.is_multiple_of(every) || r.epoch == 1 {
            let msg = format!(
                "epoch {}: total {:.4e} (L1 {:.3e}, L2 {:.3e}, L3 {:.3e}, lip {:.3e}) eta_hat {:.4e} in-safe {}",
                r.epoch, r.total, r.l1, r.l2, r.l3, r.lip_penalty, r.eta_hat, r.in_safe_count
            );
            eprintln!("{msg}");
            log.line(&msg);
        }
    };
    let outcome = training::train_on(
        ds,
        &p.system,
        &cfg.nets.barrier,
        &cfg.nets.controller,
        &p.train,
        &mut observer,
    )
    .map_err(|e| match e {
        TrainError::Config(m) => CliError::Config(m),
        e @ TrainError::EmptySafeSet { .. } => CliError::Unsatisfiable(e.to_string()),
        TrainError::Net(e) => CliError::Data(e.to_string()),
    })?;

    write_file(&out.join("barrier.json"), &save_model(&outcome.barrier))?;
    write_file(&out.join("controller.json"), &save_model(&outcome.controller))?;
    let hist_path = out.join("history.csv");
    let f = fs::File::create(&hist_path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", hist_path.display())))?;
    write_history_csv(BufWriter::new(f), &outcome.history).map_err(data_err)?;

    let cert = certify(
        &outcome.barrier,
        &outcome.controller,
        &p.system,
        &outcome.dataset,
        p.train.lambda,
        p.train.alpha,
    )
    .map_err(data_err)?;
    write_file(&out.join("certificate.json"), &cert.to_json())?;
    log_certificate(&mut log, &cert);

    let best_total = outcome
        .best_epoch
        .and_then(|e| outcome.history.iter().find(|r| r.epoch == e))
        .map(|r| r.total);
    let summary = TrainSummary {
        converged: outcome.converged,
        failure: !outcome.converged,
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_total,
        eta: outcome.eta,
        epsilon: grid.epsilon,
        grid_size: grid.len(),
        in_safe_count: outcome.dataset.in_safe_count(),
        generation: outcome.dataset.generation,
        verdict: cert.verdict,
        margin: cert.margin(),
    };
    write_file(
        &out.join("train_summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;

    if outcome.converged {
        log.line("train: converged");
        println!("converged at epoch {}", outcome.history.len());
        Ok(EXIT_OK)
    } else {
        let msg = format!(
            "training did not reach total <= {:e} in {} epochs; try a smaller grid epsilon, \
             wider networks or a different learning rate",
            p.train.convergence_tol, p.train.epochs
        );
        eprintln!("{msg}");
        log.line(&msg);
        Ok(EXIT_FAILED)
    }
}

#[derive(Debug, Clone)]
pub struct VerifyArgs {
    pub config: PathBuf,
    pub barrier: PathBuf,
    pub controller: PathBuf,
    pub epsilon: Option<f64>,
    pub no_refine: bool,
    pub output: Option<PathBuf>,
}

/// Certifies saved networks on a freshly labeled grid.
pub fn verify(args: &VerifyArgs) -> Result<u8, CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let p = cfg.prepare()?;
    let barrier = load_net(&args.barrier, Role::Barrier)?;
    let controller = load_net(&args.controller, Role::Controller)?;
    check_dims(&p, &barrier, &controller)?;
    let eps = args.epsilon.unwrap_or(cfg.grid.epsilon);
    let out_path = match &args.output {
        Some(o) => o.clone(),
        None => {
            let dir = cfg.output_dir();
            create_dir(&dir)?;
            dir.join("certificate_verify.json")
        }
    };
    let mut log = RunLog::open(out_path.parent().unwrap_or(Path::new(".")));
    log.line(&format!("verify: config {}, epsilon {eps}", args.config.display()));

    let grid = cfg.build_grid(&p.system, p.spec.horizon, eps)?;
    let mut ds = label_samples(&grid, &p.spec, &p.schedule);
    empty_safe_set(&ds)?;
    if !args.no_refine {
        let rep = refine_in_place(&mut ds, &barrier, p.train.refine_bound());
        log.line(&format!(
            "refined: removed {} ({} negative, {} steep), {} in-safe remain",
            rep.removed(),
            rep.negative_value,
            rep.large_gradient,
            ds.in_safe_count()
        ));
        empty_safe_set(&ds)?;
    }
    let cert = certify(&barrier, &controller, &p.system, &ds, p.train.lambda, p.train.alpha).map_err(data_err)?;
    write_file(&out_path, &cert.to_json())?;
    log_certificate(&mut log, &cert);
    Ok(match cert.verdict {
        Verdict::Valid => EXIT_OK,
        Verdict::Invalid => EXIT_FAILED,
    })
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub config: PathBuf,
    pub barrier: Option<PathBuf>,
    pub controller: Option<PathBuf>,
    pub x0: Vec<Vec<f64>>,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
}

/// Rolls out the trained controller from each initial state and writes one
/// CSV per rollout.
pub fn simulate(args: &SimulateArgs) -> Result<u8, CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let p = cfg.prepare()?;
    let out = cfg.output_dir();
    let barrier = load_net(
        args.barrier.as_deref().unwrap_or(&out.join("barrier.json")),
        Role::Barrier,
    )?;
    let controller = load_net(
        args.controller.as_deref().unwrap_or(&out.join("controller.json")),
        Role::Controller,
    )?;
    check_dims(&p, &barrier, &controller)?;

    let starts = if args.x0.is_empty() {
        &cfg.sim.initial_states
    } else {
        &args.x0
    };
    if starts.is_empty() {
        return Err(CliError::Config(
            "no initial state: pass --x0 or set sim.initial_states".into(),
        ));
    }
    for x0 in starts {
        check_initial_state(&p.system, x0)?;
    }
    let horizon = args.horizon.or(cfg.sim.horizon).unwrap_or(p.raw_spec.horizon);
    if horizon < p.raw_spec.horizon - HORIZON_TOL {
        return Err(CliError::Config(format!(
            "rollout horizon {horizon} is shorter than the specification horizon {}; the trajectory cannot be scored",
            p.raw_spec.horizon
        )));
    }
    let opts = SimOptions {
        dt: args.dt.unwrap_or(cfg.sim.dt),
        horizon,
        hold: cfg.sim.hold(),
        ..SimOptions::new(horizon)
    };
    create_dir(&out)?;
    let mut log = RunLog::open(&out);
    log.line(&format!(
        "simulate: config {}, {} rollouts",
        args.config.display(),
        starts.len()
    ));

    for (k, x0) in starts.iter().enumerate() {
        let traj = sim::simulate(&p.system, &controller, x0, &opts).map_err(|e| match e {
            SimError::Step(_) | SimError::Horizon(_) | SimError::Dimension { .. } | SimError::OutsideDomain(_) => {
                CliError::Config(e.to_string())
            }
            e => CliError::Data(e.to_string()),
        })?;
        let series = sim::monitor_barrier(&traj, &barrier, &p.system, &controller, p.train.alpha).map_err(data_err)?;
        let path = out.join(format!("trajectory_{k}.csv"));
        let f = fs::File::create(&path).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        sim::write_trajectory_csv(BufWriter::new(f), &traj, Some(&series), Some((&p.spec, &p.schedule)))
            .map_err(data_err)?;
        let score = if traj.left_domain {
            None
        } else {
            Some(sim::score(&traj, &p.raw_spec).map_err(data_err)?)
        };
        let score_text = score.map_or_else(|| "n/a (left the state domain)".to_string(), |s| format!("{s:.6}"));
        let msg = format!(
            "trajectory {k}: x0 = {x0:?}, score = {score_text}, min B = {:.6e}, min Bdot+alpha*B = {:.6e}, file {}",
            series.min_b(),
            series.min_decay(),
            path.display()
        );
        println!("{msg}");
        log.line(&msg);
    }
    Ok(EXIT_OK)
}

/// Number of consecutive `x1, x2, ...` columns in a CSV header.
fn state_columns(header: &str) -> usize {
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    (1..).take_while(|i| cols.contains(&format!("x{i}").as_str())).count()
}

/// Scores a trajectory file against a specification file.
pub fn robustness(spec_path: &Path, traj_path: &Path) -> Result<u8, CliError> {
    let spec_text = fs::read_to_string(spec_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", spec_path.display())))?;
    let traj_text = fs::read_to_string(traj_path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", traj_path.display())))?;
    let n = state_columns(traj_text.lines().next().unwrap_or(""));
    if n == 0 {
        return Err(CliError::Data(format!(
            "{}: missing column \"x1\"",
            traj_path.display()
        )));
    }
    let spec = parse_spec(&spec_text, n).map_err(|e| CliError::Config(format!("{}:{e}", spec_path.display())))?;
    let traj = read_trajectory_csv(traj_text.as_bytes(), n)
        .map_err(|e| CliError::Data(format!("{}: {e}", traj_path.display())))?;
    let blocks = spec.block_robustness(&traj).map_err(data_err)?;
    let rho = spec.robustness(&traj).map_err(data_err)?;
    println!("robustness {rho}");
    for (i, (blk, r)) in spec.blocks.iter().zip(&blocks).enumerate() {
        let op = match blk.op {
            TemporalOp::Always => "G",
            TemporalOp::Eventually => "F",
        };
        println!("block {i} {op}[{}, {}]: {r}", blk.a, blk.b);
    }
    Ok(EXIT_OK)
}
