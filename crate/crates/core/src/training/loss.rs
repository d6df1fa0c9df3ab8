//! Hinge losses on the barrier conditions and their exact parameter gradients.

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::certify::ClosedLoop;
use crate::dynamics::SystemModel;
use crate::neural::{CertNet, ParamGrad};
use crate::safeset::{Label, LabeledDataset};

/// Columns per parallel work item inside a batch. Fixed so the reduction
/// order does not depend on the worker count.
const SUB_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub eta: f64,
}

#[inline]
fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// `sum ReLU(-B(s) - eta)` over the columns of `pts`.
pub fn loss_l1(barrier: &CertNet, pts: &Array2<f64>, eta: f64) -> f64 {
    barrier.forward_tape(pts, None).out.iter().map(|b| relu(-b - eta)).sum()
}

/// `sum ReLU(B(s) + lambda - eta)` over the columns of `pts`.
pub fn loss_l2(barrier: &CertNet, pts: &Array2<f64>, eta: f64, lambda: f64) -> f64 {
    barrier
        .forward_tape(pts, None)
        .out
        .iter()
        .map(|b| relu(b + lambda - eta))
        .sum()
}

/// `sum ReLU(-dB/dx f(x, g(s)) - dB/dt - alpha B(s) - eta)` over the columns of `pts`.
pub fn loss_l3(
    barrier: &CertNet,
    controller: &CertNet,
    sys: &SystemModel,
    pts: &Array2<f64>,
    eta: f64,
    alpha: f64,
) -> f64 {
    if pts.ncols() == 0 {
        return 0.0;
    }
    let cl = ClosedLoop::eval(barrier, controller, sys, pts);
    (0..pts.ncols())
        .map(|j| relu(-cl.bdot(j) - alpha * cl.b(j) - eta))
        .sum()
}

/// Loss sums and gradients for one batch.
#[derive(Debug, Clone)]
pub struct BatchEval {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    /// Largest applicable residual seen in the batch.
    pub eta_hat: f64,
    pub barrier_grad: ParamGrad,
    pub controller_grad: ParamGrad,
}

impl BatchEval {
    pub fn weighted(&self, p: &LossParams) -> f64 {
        p.k1 * self.l1 + p.k2 * self.l2 + p.k3 * self.l3
    }

    fn merge(&mut self, o: BatchEval) {
        self.l1 += o.l1;
        self.l2 += o.l2;
        self.l3 += o.l3;
        self.eta_hat = self.eta_hat.max(o.eta_hat);
        self.barrier_grad.add_assign(&o.barrier_grad);
        self.controller_grad.add_assign(&o.controller_grad);
    }
}

/// Losses on columns `pts` with labels, plus the gradient of
/// `scale * (k1 L1 + k2 L2 + k3 L3)` with respect to both networks.
pub fn batch_loss_grad(
    barrier: &CertNet,
    controller: &CertNet,
    sys: &SystemModel,
    pts: &Array2<f64>,
    labels: &[Label],
    p: &LossParams,
    scale: f64,
) -> BatchEval {
    let (n, cols) = (sys.n, pts.ncols());
    let mut out = BatchEval {
        l1: 0.0,
        l2: 0.0,
        l3: 0.0,
        eta_hat: f64::NEG_INFINITY,
        barrier_grad: ParamGrad::zeros(barrier),
        controller_grad: ParamGrad::zeros(controller),
    };
    if cols == 0 {
        return out;
    }
    let cl = ClosedLoop::eval(barrier, controller, sys, pts);
    let mut ybar = Array2::zeros((1, cols));
    let mut ydbar = Array2::zeros((1, cols));
    let mut lam3 = vec![0.0; cols];
    for j in 0..cols {
        let (b, bd) = (cl.b(j), cl.bdot(j));
        let q3 = -bd - p.alpha * b;
        out.eta_hat = out.eta_hat.max(q3);
        match labels[j] {
            Label::InSafe => {
                out.eta_hat = out.eta_hat.max(-b);
                if -b - p.eta > 0.0 {
                    out.l1 += -b - p.eta;
                    ybar[[0, j]] -= scale * p.k1;
                }
            }
            Label::OutSafe => {
                let q2 = b + p.lambda;
                out.eta_hat = out.eta_hat.max(q2);
                if q2 - p.eta > 0.0 {
                    out.l2 += q2 - p.eta;
                    ybar[[0, j]] += scale * p.k2;
                }
            }
        }
        if q3 - p.eta > 0.0 {
            out.l3 += q3 - p.eta;
            ybar[[0, j]] -= scale * p.k3 * p.alpha;
            ydbar[[0, j]] = -scale * p.k3;
            lam3[j] = -scale * p.k3;
        }
    }
    barrier.backward(&cl.btape, &ybar, Some(&ydbar), Some(&mut out.barrier_grad), pts);
    if lam3.iter().any(|v| *v != 0.0) {
        // q3 depends on u through f: d q3 / d u = -(df/du)^T grad_x B.
        let gx = barrier.input_vjp(&cl.btape, &Array2::ones((1, cols)), pts);
        let mut ubar = Array2::zeros((sys.m, cols));
        let (mut x, mut u, mut lam, mut vjp) = (vec![0.0; n], vec![0.0; sys.m], vec![0.0; n], vec![0.0; sys.m]);
        for j in (0..cols).filter(|&j| lam3[j] != 0.0) {
            for i in 0..n {
                x[i] = pts[[i, j]];
                lam[i] = lam3[j] * gx[[i, j]];
            }
            for k in 0..sys.m {
                u[k] = cl.u[[k, j]];
            }
            sys.input_vjp(&x, &u, &lam, &mut vjp);
            for k in 0..sys.m {
                ubar[[k, j]] = vjp[k] * cl.slope[[k, j]];
            }
        }
        controller.backward(&cl.ctape, &ubar, None, Some(&mut out.controller_grad), pts);
    }
    out
}

/// [`batch_loss_grad`] over dataset indices, split into fixed sub-batches
/// evaluated in parallel and reduced in index order.
pub fn dataset_batch_loss_grad(
    barrier: &CertNet,
    controller: &CertNet,
    sys: &SystemModel,
    ds: &LabeledDataset,
    indices: &[usize],
    p: &LossParams,
    scale: f64,
) -> BatchEval {
    let parts: Vec<BatchEval> = indices
        .par_chunks(SUB_BATCH)
        .map(|chunk| {
            let pts = ds.grid.points_matrix(chunk);
            let labels: Vec<Label> = chunk.iter().map(|&i| ds.label(i)).collect();
            batch_loss_grad(barrier, controller, sys, &pts, &labels, p, scale)
        })
        .collect();
    let mut it = parts.into_iter();
    let mut acc = it
        .next()
        .unwrap_or_else(|| batch_loss_grad(barrier, controller, sys, &Array2::zeros((sys.n + 1, 0)), &[], p, scale));
    for part in it {
        acc.merge(part);
    }
    acc
}
