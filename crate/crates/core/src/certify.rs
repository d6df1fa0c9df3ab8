//! Residuals of the barrier conditions on samples, Lipschitz bounds and the
//! finite-sample validity verdict.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{monte_carlo_bounds, BoxSet, DynamicsBounds, SystemModel};
use crate::linalg::{spectral_norm, top_singular};
use crate::neural::{CertNet, NeuralError, ParamGrad, Tape};
use crate::safeset::{AugPoint, Label, LabeledDataset, CHUNK};

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("dataset is empty; a certificate needs at least one sample")]
    EmptyDataset,
    #[error("barrier expects state dimension {barrier}, controller {controller}, system {system}")]
    Dimension {
        barrier: usize,
        controller: usize,
        system: usize,
    },
    #[error(transparent)]
    Net(#[from] NeuralError),
    #[error("non-finite residual at sample {0}")]
    NonFinite(usize),
}

/// Closed-loop evaluation of both networks on a batch of columns.
pub(crate) struct ClosedLoop {
    pub ctape: Tape,
    /// Clamped input, `m x B`.
    pub u: Array2<f64>,
    /// Clamp slope per input entry.
    pub slope: Array2<f64>,
    /// Barrier tape whose tangent is `(f(x, u), 1)`.
    pub btape: Tape,
}

impl ClosedLoop {
    pub fn eval(barrier: &CertNet, controller: &CertNet, sys: &SystemModel, pts: &Array2<f64>) -> Self {
        let (n, cols) = (sys.n, pts.ncols());
        let ctape = controller.forward_tape(pts, None);
        let clamp = controller.clamp.as_ref().expect("controller carries a clamp");
        let mut u = ctape.out.clone();
        let mut slope = Array2::zeros(u.raw_dim());
        for ((k, j), v) in u.indexed_iter_mut() {
            let (c, s) = clamp.apply(k, *v);
            *v = c;
            slope[[k, j]] = s;
        }
        let mut tang = Array2::zeros((n + 1, cols));
        let (mut x, mut uj, mut f) = (vec![0.0; n], vec![0.0; sys.m], vec![0.0; n]);
        for j in 0..cols {
            for i in 0..n {
                x[i] = pts[[i, j]];
            }
            for k in 0..sys.m {
                uj[k] = u[[k, j]];
            }
            sys.eval_into(&x, &uj, &mut f);
            for i in 0..n {
                tang[[i, j]] = f[i];
            }
            tang[[n, j]] = 1.0;
        }
        let btape = barrier.forward_tape(pts, Some(&tang));
        Self { ctape, u, slope, btape }
    }

    pub fn b(&self, j: usize) -> f64 {
        self.btape.out[[0, j]]
    }

    /// `dB/dx f(x, g(x, t)) + dB/dt`.
    pub fn bdot(&self, j: usize) -> f64 {
        self.btape.out_tangent().expect("tangent recorded")[[0, j]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QValues {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl QValues {
    fn from_parts(b: f64, bdot: f64, label: Label, lambda: f64, alpha: f64) -> Self {
        let (q1, q2) = match label {
            Label::InSafe => (-b, 0.0),
            Label::OutSafe => (0.0, b + lambda),
        };
        Self {
            q1,
            q2,
            q3: -bdot - alpha * b,
        }
    }

    /// Largest residual among those whose indicator is on for `label`.
    pub fn applicable_max(&self, label: Label) -> f64 {
        match label {
            Label::InSafe => self.q1.max(self.q3),
            Label::OutSafe => self.q2.max(self.q3),
        }
    }
}

fn check_dims(barrier: &CertNet, controller: &CertNet, sys: &SystemModel) -> Result<(), CertifyError> {
    if barrier.n != sys.n || controller.n != sys.n || controller.output_dim() != sys.m {
        return Err(CertifyError::Dimension {
            barrier: barrier.n,
            controller: controller.n,
            system: sys.n,
        });
    }
    Ok(())
}

/// Residuals at one sample. `q1` is zero off the safe set and `q2` zero on it.
pub fn eval_q(
    barrier: &CertNet,
    controller: &CertNet,
    sys: &SystemModel,
    s: &AugPoint,
    label: Label,
    lambda: f64,
    alpha: f64,
) -> Result<QValues, CertifyError> {
    check_dims(barrier, controller, sys)?;
    let p = s.to_vec();
    let u = controller.forward(&p)?;
    let b = barrier.value(&p)?;
    let jac = barrier.input_jacobian(&p)?;
    let f = sys.eval_f(&s.x, &u).map_err(|_| CertifyError::NonFinite(0))?;
    let bdot = jac.d_dx[0].iter().zip(&f).map(|(g, f)| g * f).sum::<f64>() + jac.d_dt[0];
    Ok(QValues::from_parts(b, bdot, label, lambda, alpha))
}

/// `max_k max_s q_k(s)` over the residuals that apply at each sample.
/// Evaluated in fixed-size chunks, so nothing is materialised up front.
pub fn max_violation(
    barrier: &CertNet,
    controller: &CertNet,
    sys: &SystemModel,
    ds: &LabeledDataset,
    lambda: f64,
    alpha: f64,
) -> Result<f64, CertifyError> {
    check_dims(barrier, controller, sys)?;
    if ds.is_empty() {
        return Err(CertifyError::EmptyDataset);
    }
    let starts: Vec<usize> = (0..ds.len()).step_by(CHUNK).collect();
    let maxima = starts
        .par_iter()
        .map(|&start| {
            let idx: Vec<usize> = (start..(start + CHUNK).min(ds.len())).collect();
            let pts = ds.grid.points_matrix(&idx);
            let cl = ClosedLoop::eval(barrier, controller, sys, &pts);
            let mut m = f64::NEG_INFINITY;
            for (j, &i) in idx.iter().enumerate() {
                let q = QValues::from_parts(cl.b(j), cl.bdot(j), ds.label(i), lambda, alpha);
                let v = q.applicable_max(ds.label(i));
                if !v.is_finite() {
                    return Err(CertifyError::NonFinite(i));
                }
                m = m.max(v);
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(maxima.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsEstimate {
    pub l_b: f64,
    pub l_db: f64,
    pub l_g: f64,
    pub l_x: f64,
    pub l_u: f64,
    pub m_f: f64,
    pub m_b: f64,
    pub alpha: f64,
}

/// `max{L_b, L_db (M_f + 1) + M_b (L_x + L_u L_g) + alpha L_b}`.
pub fn composite_lipschitz(b: &BoundsEstimate) -> f64 {
    let l3 = b.l_db * (b.m_f + 1.0) + b.m_b * (b.l_x + b.l_u * b.l_g) + b.alpha * b.l_b;
    b.l_b.max(l3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Valid,
    Invalid,
}

pub fn check_validity(eta_hat: f64, l_composite: f64, epsilon: f64) -> Verdict {
    if eta_hat + l_composite * epsilon <= 0.0 {
        Verdict::Valid
    } else {
        Verdict::Invalid
    }
}

/// Upper bounds for one network over `X x [0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetBounds {
    /// `sup ||J||` of the coupling map.
    pub coupling_norm: f64,
    /// Lipschitz constant of the layers after the coupling map.
    pub mlp_lipschitz: f64,
    /// Lipschitz constant of the whole network in `(x, t)`.
    pub lipschitz: f64,
    /// `sup ||grad||`; equal to `lipschitz` for a differentiable network.
    pub grad_bound: f64,
    /// Lipschitz constant of the `(x, t)` gradient.
    pub grad_lipschitz: f64,
}

/// Bounds together with their sensitivities to each layer's spectral norm.
struct BoundTerms {
    sigma: Vec<f64>,
    bounds: NetBounds,
    d_lipschitz: Vec<f64>,
    d_grad_lipschitz: Vec<f64>,
}

fn bound_terms(net: &CertNet, state_box: &BoxSet, horizon: f64) -> BoundTerms {
    let sigma: Vec<f64> = net.layers.iter().map(|l| spectral_norm(&l.w)).collect();
    let h = net.hidden_count();
    let (s1, s2) = net.activation.slope_bounds();
    let jn = net.coupling.jacobian_norm_bound(state_box, horizon);
    let jl = net.coupling.jacobian_lipschitz_bound(state_box, horizon);
    let prod_except = |skip: usize| -> f64 {
        sigma
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, s)| s)
            .product()
    };
    let p: f64 = sigma.iter().product();
    let s1h = s1.powi(h as i32);
    let mlp = s1h * p;
    let d_mlp: Vec<f64> = (0..sigma.len()).map(|i| s1h * prod_except(i)).collect();

    // Gradient Lipschitz of the layer stack: c P S with
    // S = sum_{k < H} s1^k prod_{j <= k} sigma_j.
    let c = if h == 0 { 0.0 } else { s2 * s1.powi(h as i32 - 1) };
    let partial = |k: usize, skip: Option<usize>| -> f64 {
        s1.powi(k as i32)
            * sigma[..=k]
                .iter()
                .enumerate()
                .filter(|(j, _)| Some(*j) != skip)
                .map(|(_, s)| s)
                .product::<f64>()
    };
    let s_sum: f64 = (0..h).map(|k| partial(k, None)).sum();
    let lip_dn = c * p * s_sum;
    let d_lip_dn: Vec<f64> = (0..sigma.len())
        .map(|i| {
            let ds: f64 = (i..h).map(|k| partial(k, Some(i))).sum();
            c * (prod_except(i) * s_sum + p * ds)
        })
        .collect();

    let lipschitz = jn * mlp;
    let grad_lipschitz = jn * jn * lip_dn + jl * mlp;
    BoundTerms {
        bounds: NetBounds {
            coupling_norm: jn,
            mlp_lipschitz: mlp,
            lipschitz,
            grad_bound: lipschitz,
            grad_lipschitz,
        },
        d_lipschitz: d_mlp.iter().map(|d| jn * d).collect(),
        d_grad_lipschitz: d_lip_dn.iter().zip(&d_mlp).map(|(a, b)| jn * jn * a + jl * b).collect(),
        sigma,
    }
}

/// Spectral-norm product bounds over `X x [0, T]`. A controller's clamp is
/// 1-Lipschitz and does not change its bound.
pub fn estimate_net_bounds(net: &CertNet, state_box: &BoxSet, horizon: f64) -> NetBounds {
    bound_terms(net, state_box, horizon).bounds
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynamicsEstimate {
    /// Enters certificates.
    pub analytic: DynamicsBounds,
    /// Sampled lower estimate, for comparison only.
    pub sampled: DynamicsBounds,
}

pub fn estimate_dynamics_bounds(sys: &SystemModel, samples: usize, seed: u64) -> DynamicsEstimate {
    DynamicsEstimate {
        analytic: sys.bounds(),
        sampled: monte_carlo_bounds(sys, samples, seed),
    }
}

/// Lipschitz targets for the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipTargets {
    pub l_b: f64,
    pub l_db: f64,
    pub l_g: f64,
}

pub struct PenaltyEval {
    pub value: f64,
    pub barrier_grad: ParamGrad,
    pub controller_grad: ParamGrad,
}

/// `weight * sum ReLU(bound - target)` over `L_b`, `L_db` and `L_g`, with
/// gradients through `d sigma / dW = u v^T`.
pub fn lipschitz_penalty(
    barrier: &CertNet,
    controller: &CertNet,
    state_box: &BoxSet,
    horizon: f64,
    targets: &LipTargets,
    weight: f64,
) -> PenaltyEval {
    let mut out = PenaltyEval {
        value: 0.0,
        barrier_grad: ParamGrad::zeros(barrier),
        controller_grad: ParamGrad::zeros(controller),
    };
    if weight == 0.0 {
        return out;
    }
    let tb = bound_terms(barrier, state_box, horizon);
    let tg = bound_terms(controller, state_box, horizon);
    let mut sens_b = vec![0.0; tb.sigma.len()];
    let mut sens_g = vec![0.0; tg.sigma.len()];
    let mut hinge = |bound: f64, target: f64, d: &[f64], sens: &mut [f64]| {
        if bound > target {
            out.value += weight * (bound - target);
            for (s, d) in sens.iter_mut().zip(d) {
                *s += weight * d;
            }
        }
    };
    hinge(tb.bounds.lipschitz, targets.l_b, &tb.d_lipschitz, &mut sens_b);
    hinge(
        tb.bounds.grad_lipschitz,
        targets.l_db,
        &tb.d_grad_lipschitz,
        &mut sens_b,
    );
    hinge(tg.bounds.lipschitz, targets.l_g, &tg.d_lipschitz, &mut sens_g);
    for (net, sens, grad) in [
        (barrier, &sens_b, &mut out.barrier_grad),
        (controller, &sens_g, &mut out.controller_grad),
    ] {
        for (k, s) in sens.iter().enumerate() {
            if *s == 0.0 {
                continue;
            }
            let top = top_singular(&net.layers[k].w);
            let u = Array1::from(top.u);
            let v = Array1::from(top.v);
            let outer = u.insert_axis(ndarray::Axis(1)).dot(&v.insert_axis(ndarray::Axis(0)));
            grad.layers[k].w.scaled_add(*s, &outer);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateBounds {
    #[serde(flatten)]
    pub bounds: BoundsEstimate,
    /// Largest sampled `||grad B||`; diagnostic only.
    pub m_b_sampled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub eta_hat: f64,
    #[serde(rename = "L_composite")]
    pub l_composite: f64,
    pub epsilon: f64,
    pub verdict: Verdict,
    pub bounds: CertificateBounds,
    pub deviations: Vec<String>,
}

impl Certificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn margin(&self) -> f64 {
        self.eta_hat + self.l_composite * self.epsilon
    }
}

pub const DEVIATION_SPECTRAL: &str =
    "network Lipschitz constants are spectral-norm product bounds, not LMI certificates";
pub const DEVIATION_MB: &str = "M_b is the barrier Lipschitz bound; the sampled gradient maximum is diagnostic only";

/// Evaluates the residuals on `ds`, composes the Lipschitz constant and issues a verdict.
#[allow(clippy::too_many_arguments)]
pub fn certify(
    barrier: &CertNet,
    controller: &CertNet,
    sys: &SystemModel,
    ds: &LabeledDataset,
    lambda: f64,
    alpha: f64,
) -> Result<Certificate, CertifyError> {
    let eta_hat = max_violation(barrier, controller, sys, ds, lambda, alpha)?;
    let horizon = ds.grid.horizon();
    let nb = estimate_net_bounds(barrier, &sys.state_box, horizon);
    let ng = estimate_net_bounds(controller, &sys.state_box, horizon);
    let dyn_b = sys.bounds();
    let bounds = BoundsEstimate {
        l_b: nb.lipschitz,
        l_db: nb.grad_lipschitz,
        l_g: ng.lipschitz,
        l_x: dyn_b.l_x,
        l_u: dyn_b.l_u,
        m_f: dyn_b.m_f,
        m_b: nb.grad_bound,
        alpha,
    };
    let l = composite_lipschitz(&bounds);
    let mut deviations = vec![DEVIATION_SPECTRAL.to_string(), DEVIATION_MB.to_string()];
    if sys.declared_bounds.is_some() {
        deviations.push("dynamics bounds are user-declared".into());
    }
    Ok(Certificate {
        eta_hat,
        l_composite: l,
        epsilon: ds.grid.epsilon,
        verdict: check_validity(eta_hat, l, ds.grid.epsilon),
        bounds: CertificateBounds {
            bounds,
            m_b_sampled: sampled_grad_max(barrier, ds),
        },
        deviations,
    })
}

fn sampled_grad_max(barrier: &CertNet, ds: &LabeledDataset) -> f64 {
    let starts: Vec<usize> = (0..ds.len()).step_by(CHUNK).collect();
    starts
        .par_iter()
        .map(|&start| {
            let idx: Vec<usize> = (start..(start + CHUNK).min(ds.len())).collect();
            let g = barrier.input_gradient_batch(&ds.grid.points_matrix(&idx));
            g.columns()
                .into_iter()
                .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
                .fold(0.0, f64::max)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, Architecture, Coupling};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bounds(l_b: f64, l_db: f64, m_f: f64, m_b: f64, l_x: f64, l_u: f64, l_g: f64, alpha: f64) -> BoundsEstimate {
        BoundsEstimate {
            l_b,
            l_db,
            l_g,
            l_x,
            l_u,
            m_f,
            m_b,
            alpha,
        }
    }

    #[test]
    fn composite_examples() {
        assert_eq!(
            composite_lipschitz(&bounds(1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)),
            1.0
        );
        assert_eq!(
            composite_lipschitz(&bounds(2.0, 1.0, 3.0, 2.0, 1.0, 1.0, 1.0, 0.5)),
            9.0
        );
        let a = composite_lipschitz(&bounds(2.0, 1.0, 3.0, 2.0, 1.0, 1.0, 1.0, 1.0));
        assert_eq!(a - 9.0, 1.0);
    }

    #[test]
    fn validity_examples() {
        assert_eq!(check_validity(-0.1, 1.0, 0.05), Verdict::Valid);
        assert_eq!(check_validity(-0.25, 5.0, 0.05), Verdict::Valid);
        assert_eq!(check_validity(-0.0664, 3.32, 0.02), Verdict::Valid);
        assert_eq!(check_validity(-0.0664, 3.33, 0.02), Verdict::Invalid);
    }

    fn arch(hidden: &[usize], act: Activation, coupling: Coupling) -> Architecture {
        Architecture {
            hidden: hidden.to_vec(),
            activation: act,
            coupling,
        }
    }

    #[test]
    fn single_layer_bound_is_operator_norm() {
        let b = CertNet::barrier(2, &arch(&[], Activation::Tanh, Coupling::Product), 3).unwrap();
        let nb = estimate_net_bounds(&b, &BoxSet::symmetric(1.0, 2), 1.0);
        assert!((nb.mlp_lipschitz - spectral_norm(&b.layers[0].w)).abs() < 1e-15);
        assert_eq!(nb.grad_lipschitz, nb.mlp_lipschitz * nb_lip_coupling(&b));
    }

    fn nb_lip_coupling(b: &CertNet) -> f64 {
        b.coupling.jacobian_lipschitz_bound(&BoxSet::symmetric(1.0, 2), 1.0)
    }

    #[test]
    fn scaling_a_layer_doubles_bound() {
        let mut b = CertNet::barrier(2, &arch(&[8, 8], Activation::Tanh, Coupling::Product), 3).unwrap();
        let bx = BoxSet::symmetric(1.0, 2);
        let before = estimate_net_bounds(&b, &bx, 2.0).lipschitz;
        b.layers[1].w *= 2.0;
        let after = estimate_net_bounds(&b, &bx, 2.0).lipschitz;
        assert!((after / before - 2.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_hinge_arithmetic() {
        let bx = BoxSet::symmetric(1.0, 2);
        let b = CertNet::barrier(2, &arch(&[4], Activation::Tanh, Coupling::Product), 1).unwrap();
        let g = CertNet::controller(2, &arch(&[4], Activation::Tanh, Coupling::Product), &bx, 2).unwrap();
        let high = LipTargets {
            l_b: 1e9,
            l_db: 1e9,
            l_g: 1e9,
        };
        assert_eq!(lipschitz_penalty(&b, &g, &bx, 1.0, &high, 1.0).value, 0.0);
        let lb = estimate_net_bounds(&b, &bx, 1.0).lipschitz;
        let t = LipTargets {
            l_b: lb - 1.0,
            l_db: 1e9,
            l_g: 1e9,
        };
        assert!((lipschitz_penalty(&b, &g, &bx, 1.0, &t, 1.0).value - 1.0).abs() < 1e-12);
        let zero = LipTargets {
            l_b: 0.0,
            l_db: 0.0,
            l_g: 0.0,
        };
        assert_eq!(lipschitz_penalty(&b, &g, &bx, 1.0, &zero, 0.0).value, 0.0);
    }

    #[test]
    fn penalty_gradient_matches_differences() {
        let bx = BoxSet::symmetric(1.5, 2);
        let mut b = CertNet::barrier(2, &arch(&[5, 4], Activation::Tanh, Coupling::Product), 7).unwrap();
        let g = CertNet::controller(2, &arch(&[3], Activation::Tanh, Coupling::Product), &bx, 8).unwrap();
        let t = LipTargets {
            l_b: 0.0,
            l_db: 0.0,
            l_g: 0.0,
        };
        let pe = lipschitz_penalty(&b, &g, &bx, 2.0, &t, 0.7);
        let analytic = pe.barrier_grad.flat();
        let theta = b.params();
        let h = 1e-6;
        for i in (0..theta.len()).step_by(3) {
            let mut tp = theta.clone();
            tp[i] += h;
            b.set_params(&tp);
            let up = lipschitz_penalty(&b, &g, &bx, 2.0, &t, 0.7).value;
            tp[i] -= 2.0 * h;
            b.set_params(&tp);
            let dn = lipschitz_penalty(&b, &g, &bx, 2.0, &t, 0.7).value;
            b.set_params(&theta);
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - analytic[i]).abs() <= 1e-5 * fd.abs().max(1.0),
                "param {i}: {fd} vs {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn bounds_dominate_sampled_slopes() {
        let bx = BoxSet::new(vec![-2.0, -1.0], vec![2.0, 1.0]).unwrap();
        let horizon = 3.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (seed, act, coupling) in [
            (1, Activation::Tanh, Coupling::Product),
            (
                2,
                Activation::Sigmoid,
                Coupling::Exponential {
                    coeffs: vec![0.5, -0.5],
                },
            ),
            (3, Activation::Softplus, Coupling::Product),
        ] {
            let b = CertNet::barrier(2, &arch(&[8, 6], act, coupling), seed).unwrap();
            let nb = estimate_net_bounds(&b, &bx, horizon);
            let sample = |rng: &mut ChaCha8Rng| {
                let mut p = bx.sample(rng);
                p.push(rng.gen_range(0.0..horizon));
                p
            };
            for _ in 0..2000 {
                let (p, q) = (sample(&mut rng), sample(&mut rng));
                let d = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let slope = (b.value(&p).unwrap() - b.value(&q).unwrap()).abs() / d;
                assert!(slope <= nb.lipschitz);
                let gp = b.input_jacobian(&p).unwrap().gradient(0);
                let gq = b.input_jacobian(&q).unwrap().gradient(0);
                let gd = gp.iter().zip(&gq).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                assert!(gd / d <= nb.grad_lipschitz);
                assert!(gp.iter().map(|v| v * v).sum::<f64>().sqrt() <= nb.grad_bound);
            }
        }
    }

    #[test]
    fn q_examples() {
        let q = QValues::from_parts(0.3, 0.0, Label::InSafe, 0.1, 1.0);
        assert_eq!((q.q1, q.q2), (-0.3, 0.0));
        let q = QValues::from_parts(-0.2, 0.0, Label::OutSafe, 0.1, 1.0);
        assert_eq!(q.q1, 0.0);
        assert!((q.q2 + 0.1).abs() < 1e-15);
        assert_eq!(QValues::from_parts(1.0, 0.0, Label::InSafe, 0.1, 1.0).q3, -1.0);
    }
}
