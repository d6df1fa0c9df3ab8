//! Joint training of the barrier and controller with periodic safe-set refinement.

mod loss;

pub use loss::{batch_loss_grad, dataset_batch_loss_grad, loss_l1, loss_l2, loss_l3, BatchEval, LossParams};

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{lipschitz_penalty, LipTargets};
use crate::dynamics::SystemModel;
use crate::neural::{Architecture, CertNet, ClampMode, NeuralError, ParamGrad};
use crate::safeset::{label_samples, refine_in_place, LabeledDataset, SampleGrid};
use crate::stl::{ActiveSchedule, Specification};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(
        "the sampled safe set is empty after refinement {generation} (epoch {epoch}); \
         the specification is unsatisfiable under the current interval policy and grid"
    )]
    EmptySafeSet { epoch: usize, generation: usize },
    #[error(transparent)]
    Net(#[from] NeuralError),
}

fn d_epochs() -> usize {
    5000
}
fn d_batch() -> usize {
    1024
}
fn d_lr() -> f64 {
    1e-3
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps_adam() -> f64 {
    1e-8
}
fn d_one() -> f64 {
    1.0
}
fn d_lambda() -> f64 {
    0.01
}
fn d_refine_every() -> usize {
    50
}
fn d_tol() -> f64 {
    1e-5
}
fn d_targets() -> LipTargets {
    LipTargets {
        l_b: 100.0,
        l_db: 1000.0,
        l_g: 100.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    /// Multiplies the learning rate after every epoch.
    #[serde(default = "d_one")]
    pub lr_decay: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps_adam")]
    pub eps_adam: f64,
    #[serde(default = "d_one")]
    pub k1: f64,
    #[serde(default = "d_one")]
    pub k2: f64,
    #[serde(default = "d_one")]
    pub k3: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_one")]
    pub alpha: f64,
    /// Margin; `-l_max * epsilon` when absent.
    #[serde(default)]
    pub eta: Option<f64>,
    /// Declared target for the composite Lipschitz constant.
    #[serde(default = "d_one")]
    pub l_max: f64,
    #[serde(default = "d_targets")]
    pub lip_targets: LipTargets,
    #[serde(default)]
    pub lip_weight: f64,
    /// Gradient bound used by refinement; `lip_targets.l_b` when absent.
    #[serde(default)]
    pub grad_bound: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_refine_every")]
    pub refine_every: usize,
    #[serde(default = "d_tol")]
    pub convergence_tol: f64,
    #[serde(default)]
    pub clamp_mode: ClampMode,
    /// Wall-clock budget in seconds, checked after each epoch. Runs cut short
    /// by it depend on machine speed and are not reproducible.
    #[serde(default)]
    pub time_limit_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        for (name, v) in [
            ("k1", self.k1),
            ("k2", self.k2),
            ("k3", self.k3),
            ("lambda", self.lambda),
            ("alpha", self.alpha),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("ADAM betas must lie in [0, 1)".into());
        }
        if !(self.eps_adam > 0.0) {
            return bad("eps_adam must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if let Some(eta) = self.eta {
            if !(eta <= 0.0) {
                return bad(format!("eta must be <= 0, got {eta}"));
            }
        }
        if !(self.l_max >= 0.0) {
            return bad("l_max must be nonnegative".into());
        }
        if !(1e-6..=1e-4).contains(&self.convergence_tol) {
            return bad(format!(
                "convergence_tol must lie in [1e-6, 1e-4], got {}",
                self.convergence_tol
            ));
        }
        if self.lip_weight < 0.0 {
            return bad("lip_weight must be nonnegative".into());
        }
        let t = &self.lip_targets;
        if !(t.l_b > 0.0 && t.l_db > 0.0 && t.l_g > 0.0) {
            return bad("Lipschitz targets must be positive".into());
        }
        if self.refine_every == 0 {
            return bad("refine_every must be positive".into());
        }
        if let Some(t) = self.time_limit_secs {
            if !(t > 0.0) {
                return bad(format!("time_limit_secs must be positive, got {t}"));
            }
        }
        Ok(())
    }

    pub fn resolved_eta(&self, epsilon: f64) -> f64 {
        self.eta.unwrap_or(-self.l_max * epsilon)
    }

    pub fn loss_params(&self, epsilon: f64) -> LossParams {
        LossParams {
            k1: self.k1,
            k2: self.k2,
            k3: self.k3,
            lambda: self.lambda,
            alpha: self.alpha,
            eta: self.resolved_eta(epsilon),
        }
    }

    pub fn refine_bound(&self) -> f64 {
        self.grad_bound.unwrap_or(self.lip_targets.l_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub epoch: usize,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    #[serde(rename = "L3")]
    pub l3: f64,
    pub lip_penalty: f64,
    pub total: f64,
    pub eta_hat: f64,
    pub generation: usize,
    #[serde(rename = "inSafe_count")]
    pub in_safe_count: usize,
}

pub fn write_history_csv<W: Write>(out: W, history: &[LossReport]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if history.is_empty() {
        w.write_record([
            "epoch",
            "L1",
            "L2",
            "L3",
            "lip_penalty",
            "total",
            "eta_hat",
            "generation",
            "inSafe_count",
        ])?;
    }
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps_adam,
        }
    }
}

/// One bias-corrected ADAM update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths");
    assert_eq!(params.len(), state.m.len(), "optimizer state length");
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t);
    let c2 = 1.0 - cfg.beta2.powi(state.t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
}

fn apply_adam(net: &mut CertNet, grad: &ParamGrad, state: &mut AdamState, cfg: &AdamConfig) {
    let mut p = net.params();
    adam_step(&mut p, &grad.flat(), state, cfg);
    net.set_params(&p);
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best networks seen (lowest epoch total).
    pub barrier: CertNet,
    pub controller: CertNet,
    pub history: Vec<LossReport>,
    pub dataset: LabeledDataset,
    pub converged: bool,
    pub best_epoch: Option<usize>,
    /// Margin actually used.
    pub eta: f64,
}

/// Labels `grid` against `spec` and trains on it.
pub fn train(
    spec: &Specification,
    sched: &ActiveSchedule,
    sys: &SystemModel,
    grid: &SampleGrid,
    barrier_arch: &Architecture,
    controller_arch: &Architecture,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&LossReport),
) -> Result<TrainOutcome, TrainError> {
    let ds = label_samples(grid, spec, sched);
    train_on(ds, sys, barrier_arch, controller_arch, cfg, observer)
}

/// Trains on an already labeled dataset.
pub fn train_on(
    mut ds: LabeledDataset,
    sys: &SystemModel,
    barrier_arch: &Architecture,
    controller_arch: &Architecture,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&LossReport),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if ds.grid.state_dim() != sys.n {
        return Err(TrainError::Config(format!(
            "grid has state dimension {}, system has {}",
            ds.grid.state_dim(),
            sys.n
        )));
    }
    if ds.in_safe_count() == 0 {
        return Err(TrainError::EmptySafeSet {
            epoch: 0,
            generation: ds.generation,
        });
    }
    let mut barrier = CertNet::barrier(sys.n, barrier_arch, cfg.seed)?;
    let mut controller = CertNet::controller(sys.n, controller_arch, &sys.input_box, cfg.seed.wrapping_add(1))?;
    if let Some(c) = controller.clamp.as_mut() {
        c.mode = cfg.clamp_mode;
    }
    let params = cfg.loss_params(ds.grid.epsilon);
    let mut adam = AdamConfig::from(cfg);
    let mut sb = AdamState::new(barrier.param_count());
    let mut sg = AdamState::new(controller.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let horizon = ds.grid.horizon();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, CertNet, CertNet)> = None;
    let mut converged = false;
    let started = Instant::now();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut l1, mut l2, mut l3, mut eta_hat, mut lip) = (0.0, 0.0, 0.0, f64::NEG_INFINITY, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut e = dataset_batch_loss_grad(
                &barrier,
                &controller,
                sys,
                &ds,
                batch,
                &params,
                1.0 / batch.len() as f64,
            );
            if cfg.lip_weight > 0.0 {
                let pen = lipschitz_penalty(
                    &barrier,
                    &controller,
                    &sys.state_box,
                    horizon,
                    &cfg.lip_targets,
                    cfg.lip_weight,
                );
                e.barrier_grad.add_assign(&pen.barrier_grad);
                e.controller_grad.add_assign(&pen.controller_grad);
                lip = pen.value;
            }
            e.barrier_grad.check_finite()?;
            e.controller_grad.check_finite()?;
            apply_adam(&mut barrier, &e.barrier_grad, &mut sb, &adam);
            apply_adam(&mut controller, &e.controller_grad, &mut sg, &adam);
            l1 += e.l1;
            l2 += e.l2;
            l3 += e.l3;
            eta_hat = eta_hat.max(e.eta_hat);
        }
        adam.lr *= cfg.lr_decay;
        let total = cfg.k1 * l1 + cfg.k2 * l2 + cfg.k3 * l3 + lip;
        let report = LossReport {
            epoch,
            l1,
            l2,
            l3,
            lip_penalty: lip,
            total,
            eta_hat,
            generation: ds.generation,
            in_safe_count: ds.in_safe_count(),
        };
        observer(&report);
        history.push(report);
        if best.as_ref().is_none_or(|b| total < b.0) {
            best = Some((total, epoch, barrier.clone(), controller.clone()));
        }
        if total <= cfg.convergence_tol {
            converged = true;
            break;
        }
        if cfg
            .time_limit_secs
            .is_some_and(|t| started.elapsed().as_secs_f64() >= t)
        {
            break;
        }
        if epoch % cfg.refine_every == 0 && epoch < cfg.epochs {
            refine_in_place(&mut ds, &barrier, cfg.refine_bound());
            if ds.in_safe_count() == 0 {
                return Err(TrainError::EmptySafeSet {
                    epoch,
                    generation: ds.generation,
                });
            }
        }
    }
    let (best_epoch, barrier, controller) = match best {
        Some((_, e, b, g)) => (Some(e), b, g),
        None => (None, barrier, controller),
    };
    Ok(TrainOutcome {
        barrier,
        controller,
        history,
        dataset: ds,
        converged,
        best_epoch,
        eta: params.eta,
    })
}
