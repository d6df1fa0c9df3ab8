//! Independent oracles and generators shared by the property and acceptance suites.
#![allow(dead_code)]

use ndarray::Array2;
use ntvcbf::certify::{estimate_net_bounds, eval_q};
use ntvcbf::neural::ClampMode;
use ntvcbf::stl::{BoolFormula, PNorm, PredicateAtom, TemporalBlock, TemporalOp, TRUE_ROBUSTNESS};
use ntvcbf::training::{batch_loss_grad, LossParams};
use ntvcbf::{Activation, Architecture, AugPoint, BoxSet, CertNet, Coupling, Label, SystemModel, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn random_atom(rng: &mut impl Rng, n: usize) -> PredicateAtom {
    if rng.gen_bool(0.4) {
        PredicateAtom::Affine {
            c: random_vec(rng, n, -2.0, 2.0),
            d: rng.gen_range(-1.0..1.0),
        }
    } else {
        let p = [PNorm::L1, PNorm::L2, PNorm::Inf][rng.gen_range(0..3)];
        PredicateAtom::Norm {
            center: random_vec(rng, n, -1.0, 1.0),
            scale: random_vec(rng, n, 0.2, 3.0),
            radius: rng.gen_range(0.05..2.0),
            p,
        }
    }
}

/// Random formula of depth at most `depth`.
pub fn random_formula(rng: &mut impl Rng, depth: usize, n: usize) -> BoolFormula {
    if depth == 0 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.08) {
            BoolFormula::True
        } else {
            BoolFormula::Atom(random_atom(rng, n))
        };
    }
    match rng.gen_range(0..3) {
        0 => BoolFormula::not(random_formula(rng, depth - 1, n)),
        k => {
            let children = (0..rng.gen_range(2..4))
                .map(|_| random_formula(rng, depth - 1, n))
                .collect();
            if k == 1 {
                BoolFormula::And(children)
            } else {
                BoolFormula::Or(children)
            }
        }
    }
}

pub fn formula_depth(f: &BoolFormula) -> usize {
    match f {
        BoolFormula::True | BoolFormula::Atom(_) => 0,
        BoolFormula::Not(g) => 1 + formula_depth(g),
        BoolFormula::And(gs) | BoolFormula::Or(gs) => 1 + gs.iter().map(formula_depth).max().unwrap_or(0),
    }
}

fn oracle_atom(a: &PredicateAtom, x: &[f64]) -> f64 {
    match a {
        PredicateAtom::Affine { c, d } => {
            let mut s = 0.0;
            for i in 0..c.len() {
                s += c[i] * x[i];
            }
            s + d
        }
        PredicateAtom::Norm {
            center,
            scale,
            radius,
            p,
        } => {
            let mut acc = 0.0f64;
            for i in 0..center.len() {
                let v = scale[i] * (x[i] - center[i]);
                match p {
                    PNorm::L1 => acc += v.abs(),
                    PNorm::L2 => acc += v * v,
                    PNorm::Inf => acc = acc.max(v.abs()),
                }
            }
            if *p == PNorm::L2 {
                acc = acc.sqrt();
            }
            radius - acc
        }
    }
}

/// Brute-force evaluator that pushes negations to the leaves first.
pub fn oracle_bool(f: &BoolFormula, x: &[f64]) -> f64 {
    fn go(f: &BoolFormula, x: &[f64], neg: bool) -> f64 {
        let sign = if neg { -1.0 } else { 1.0 };
        match f {
            BoolFormula::True => sign * TRUE_ROBUSTNESS,
            BoolFormula::Atom(a) => sign * oracle_atom(a, x),
            BoolFormula::Not(g) => go(g, x, !neg),
            BoolFormula::And(gs) | BoolFormula::Or(gs) => {
                let take_min = matches!(f, BoolFormula::And(_)) != neg;
                let mut best = if take_min { f64::INFINITY } else { f64::NEG_INFINITY };
                for g in gs {
                    let v = go(g, x, neg);
                    best = if take_min { best.min(v) } else { best.max(v) };
                }
                best
            }
        }
    }
    go(f, x, false)
}

/// Piecewise-constant trajectory on `[0, horizon]` sampled every `dt`.
pub fn piecewise_trajectory(rng: &mut impl Rng, n: usize, horizon: f64, dt: f64) -> Trajectory {
    let steps = (horizon / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut current = random_vec(rng, n, -2.0, 2.0);
    for k in 0..=steps {
        if rng.gen_bool(0.1) {
            current = random_vec(rng, n, -2.0, 2.0);
        }
        times.push(k as f64 * dt);
        states.push(current.clone());
    }
    Trajectory::from_states(times, states)
}

pub fn oracle_block(blk: &TemporalBlock, traj: &Trajectory) -> f64 {
    let mut vals = Vec::new();
    for (t, x) in traj.times.iter().zip(&traj.states) {
        if *t >= blk.a && *t <= blk.b {
            vals.push(oracle_bool(&blk.body, x));
        }
    }
    match blk.op {
        TemporalOp::Always => vals.into_iter().fold(f64::INFINITY, f64::min),
        TemporalOp::Eventually => vals.into_iter().fold(f64::NEG_INFINITY, f64::max),
    }
}

pub const ACTIVATIONS: [Activation; 3] = [Activation::Tanh, Activation::Softplus, Activation::Sigmoid];

pub fn random_arch(rng: &mut impl Rng, n: usize, exponential: bool) -> Architecture {
    let hidden = (0..rng.gen_range(1..3)).map(|_| rng.gen_range(3..9)).collect();
    let coupling = if exponential {
        Coupling::Exponential {
            coeffs: random_vec(rng, n, -0.5, 0.5),
        }
    } else {
        Coupling::Product
    };
    Architecture {
        hidden,
        activation: ACTIVATIONS[rng.gen_range(0..3)],
        coupling,
    }
}

pub fn random_point(rng: &mut impl Rng, sys: &SystemModel, horizon: f64) -> Vec<f64> {
    let mut p = sys.state_box.sample(rng);
    p.push(rng.gen_range(0.0..horizon));
    p
}

/// `||a - b|| / max(||b||, 1e-8)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-8)
}

fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error of a network's input Jacobian against central differences.
pub fn input_jacobian_error(net: &CertNet, p: &[f64]) -> f64 {
    let jac = net.input_jacobian(p).unwrap();
    (0..net.output_dim())
        .map(|k| {
            let fd = central_diff(p, 1e-6, |q| net.forward(q).unwrap()[k]);
            rel_err(&jac.gradient(k), &fd)
        })
        .fold(0.0, f64::max)
}

fn point_loss(b: &CertNet, g: &CertNet, sys: &SystemModel, pts: &Array2<f64>, labels: &[Label], p: &LossParams) -> f64 {
    batch_loss_grad(b, g, sys, pts, labels, p, 1.0).weighted(p)
}

/// Relative error of the analytic parameter gradient of the full loss at one
/// point, for the barrier (`role_barrier`) or the controller parameters. The
/// L3 term goes through the double-backprop path.
pub fn param_grad_error(
    b: &CertNet,
    g: &CertNet,
    sys: &SystemModel,
    p: &[f64],
    label: Label,
    role_barrier: bool,
) -> f64 {
    let pts = Array2::from_shape_vec((p.len(), 1), p.to_vec()).unwrap();
    let labels = [label];
    let (lambda, alpha) = (0.05, 1.5);
    // One below the smallest applicable residual: every hinge is active and
    // the loss stays O(1), so differencing does not lose digits.
    let s = AugPoint {
        x: p[..sys.n].to_vec(),
        t: p[sys.n],
    };
    let q = eval_q(b, g, sys, &s, label, lambda, alpha).unwrap();
    let own = if label == Label::InSafe { q.q1 } else { q.q2 };
    let lp = LossParams {
        k1: 1.0,
        k2: 0.7,
        k3: 1.3,
        lambda,
        alpha,
        eta: own.min(q.q3) - 1.0,
    };
    let eval = batch_loss_grad(b, g, sys, &pts, &labels, &lp, 1.0);
    let (analytic, theta) = if role_barrier {
        (eval.barrier_grad.flat(), b.params())
    } else {
        (eval.controller_grad.flat(), g.params())
    };
    let mut bb = b.clone();
    let mut gg = g.clone();
    let fd = central_diff(&theta, 1e-5, |th| {
        if role_barrier {
            bb.set_params(th);
        } else {
            gg.set_params(th);
        }
        point_loss(&bb, &gg, sys, &pts, &labels, &lp)
    });
    rel_err(&analytic, &fd)
}

/// One random gradient case. Returns the input Jacobian and parameter
/// gradient errors.
pub fn gradient_case(seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let sys = SystemModel::builtin(if seed.is_multiple_of(2) {
        "pendulum"
    } else {
        "spacecraft"
    })
    .unwrap();
    let exponential = (seed / 2) % 2 == 1;
    let barrier_role = (seed / 4).is_multiple_of(2);
    let b = CertNet::barrier(sys.n, &random_arch(&mut r, sys.n, exponential), r.gen()).unwrap();
    let mut g = CertNet::controller(sys.n, &random_arch(&mut r, sys.n, exponential), &sys.input_box, r.gen()).unwrap();
    if r.gen_bool(0.5) {
        if let Some(c) = g.clamp.as_mut() {
            c.mode = ClampMode::Smooth;
        }
    }
    let p = random_point(&mut r, &sys, 5.0);
    let label = if r.gen_bool(0.5) { Label::InSafe } else { Label::OutSafe };
    let jac = input_jacobian_error(if barrier_role { &b } else { &g }, &p);
    let par = param_grad_error(&b, &g, &sys, &p, label, barrier_role);
    (jac, par)
}

/// Largest Monte-Carlo slope `|N(p) - N(q)| / |p - q|` over `pairs` pairs,
/// mixing far pairs and close pairs.
pub fn max_sampled_slope(net: &CertNet, state_box: &BoxSet, horizon: f64, pairs: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut best = 0.0f64;
    for k in 0..pairs {
        let mut p = state_box.sample(&mut r);
        p.push(r.gen_range(0.0..horizon));
        let q: Vec<f64> = if k % 2 == 0 {
            let mut q = state_box.sample(&mut r);
            q.push(r.gen_range(0.0..horizon));
            q
        } else {
            p.iter().map(|v| v + r.gen_range(-1e-3..1e-3)).collect()
        };
        let a = net.forward(&p).unwrap();
        let b = net.forward(&q).unwrap();
        let num = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den = p.iter().zip(&q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        if den > 0.0 {
            best = best.max(num / den);
        }
    }
    best
}

/// Spectral bound and sampled slope for one random net.
pub fn spectral_case(seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let sys = SystemModel::builtin(["mecanum", "pendulum", "spacecraft"][(seed % 3) as usize]).unwrap();
    let arch = random_arch(&mut r, sys.n, seed % 2 == 1);
    let net = if r.gen_bool(0.5) {
        CertNet::barrier(sys.n, &arch, r.gen()).unwrap()
    } else {
        CertNet::controller(sys.n, &arch, &sys.input_box, r.gen()).unwrap()
    };
    let horizon = 4.0;
    let bound = estimate_net_bounds(&net, &sys.state_box, horizon).lipschitz;
    (bound, max_sampled_slope(&net, &sys.state_box, horizon, 10_000, seed))
}
