//! Certificate networks.
//!
//! Both the barrier and the controller share one architecture: a fixed
//! cross-coupling feature map `(x, t) -> (x, t, c(x, t))` of width `2n + 1`,
//! a stack of dense layers with a smooth activation, and an affine output.
//! The controller additionally saturates its output with a HardTanh clamp.

mod batch;
mod io;

pub use batch::{ParamGrad, Tape};
pub use io::{load_model, save_model, MODEL_VERSION};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::BoxSet;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("input has dimension {found}, network expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite value after layer {layer}")]
    NonFinite { layer: usize },
    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGradient { block: usize },
    #[error("unsupported model version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("layer {layer}: {reason}")]
    BrokenChain { layer: usize, reason: String },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Barrier,
    Controller,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Softplus,
    Sigmoid,
}

impl Activation {
    /// Value and first derivative.
    #[inline]
    pub fn eval(self, a: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let s = a.tanh();
                (s, 1.0 - s * s)
            }
            Activation::Softplus => {
                let sp = a.max(0.0) + (-a.abs()).exp().ln_1p();
                (sp, sigmoid(a))
            }
            Activation::Sigmoid => {
                let s = sigmoid(a);
                (s, s * (1.0 - s))
            }
        }
    }

    /// Second derivative from the cached value `s` and slope `d1`.
    #[inline]
    pub fn second(self, s: f64, d1: f64) -> f64 {
        match self {
            Activation::Tanh => -2.0 * s * d1,
            Activation::Softplus => d1 * (1.0 - d1),
            Activation::Sigmoid => d1 * (1.0 - 2.0 * s),
        }
    }

    /// `sup |sigma'|` and `sup |sigma''|`.
    pub fn slope_bounds(self) -> (f64, f64) {
        match self {
            // tanh'' = -2 tanh (1 - tanh^2), maximised at tanh^2 = 1/3
            Activation::Tanh => (1.0, 4.0 / (3.0 * 3f64.sqrt())),
            Activation::Softplus => (1.0, 0.25),
            // s(1-s)(1-2s) peaks at s = 1/2 - 1/(2 sqrt 3)
            Activation::Sigmoid => (0.25, 1.0 / (6.0 * 3f64.sqrt())),
        }
    }
}

#[inline]
fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coupling {
    /// Features `t * x_i`.
    Product,
    /// Features `exp(a_i t) * x_i` with fixed coefficients.
    Exponential { coeffs: Vec<f64> },
}

impl Coupling {
    pub fn exponential_unit(n: usize) -> Self {
        Coupling::Exponential { coeffs: vec![1.0; n] }
    }

    /// Coupling feature `i` and its partials `(d/dx_i, d/dt)`.
    #[inline]
    pub(crate) fn feature(&self, i: usize, x: f64, t: f64) -> (f64, f64, f64) {
        match self {
            Coupling::Product => (t * x, t, x),
            Coupling::Exponential { coeffs } => {
                let a = coeffs[i];
                let e = (a * t).exp();
                (e * x, e, a * e * x)
            }
        }
    }

    /// `sup ||J||_2` of the feature map over `X x [0, T]`.
    pub fn jacobian_norm_bound(&self, state_box: &BoxSet, horizon: f64) -> f64 {
        let xm = state_box.abs_max();
        match self {
            Coupling::Product => {
                // J^T J has eigenvalue 1 + t^2 (multiplicity n - 1) and the top
                // eigenvalue of [[1 + t^2, t|x|], [t|x|, 1 + |x|^2]], increasing in t and |x|.
                let t2 = horizon * horizon;
                let x2: f64 = xm.iter().map(|v| v * v).sum();
                let (a, c, b) = (1.0 + t2, 1.0 + x2, horizon * x2.sqrt());
                let lam = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
                lam.sqrt()
            }
            Coupling::Exponential { coeffs } => {
                // Frobenius bound: columns e_i + E_i e_{c_i} and e_t + sum a_i E_i x_i e_{c_i}.
                let mut fro2 = (xm.len() + 1) as f64;
                for (a, x) in coeffs.iter().zip(&xm) {
                    let e = exp_sup(*a, horizon);
                    fro2 += e * e + a * a * e * e * x * x;
                }
                fro2.sqrt()
            }
        }
    }

    /// Lipschitz constant of the feature-map Jacobian over `X x [0, T]`.
    pub fn jacobian_lipschitz_bound(&self, state_box: &BoxSet, horizon: f64) -> f64 {
        let n = state_box.dim() as f64;
        match self {
            // Entries t and x_i are linear in (x, t).
            Coupling::Product => n.sqrt().max(1.0),
            Coupling::Exponential { coeffs } => {
                let xm = state_box.abs_max();
                let mut sum = 0.0;
                let mut kmax: f64 = 0.0;
                for (a, x) in coeffs.iter().zip(&xm) {
                    let k = a.abs() * exp_sup(*a, horizon);
                    sum += k * k * (1.0 + 2.0 * a * a * x * x);
                    kmax = kmax.max(k);
                }
                (sum + 2.0 * kmax * kmax).sqrt()
            }
        }
    }
}

fn exp_sup(a: f64, horizon: f64) -> f64 {
    if a >= 0.0 {
        (a * horizon).exp()
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampMode {
    /// `lb` below, `ub` above, identity in between.
    #[default]
    Hard,
    /// `c + w tanh((y - c) / w)`: a smooth surrogate with the same range.
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clamp {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_hard")]
    pub mode: ClampMode,
}

fn is_hard(m: &ClampMode) -> bool {
    *m == ClampMode::Hard
}

impl Clamp {
    pub fn hard(bounds: &BoxSet) -> Self {
        Self {
            lb: bounds.lb.clone(),
            ub: bounds.ub.clone(),
            mode: ClampMode::Hard,
        }
    }

    /// Saturated value and slope for channel `k`. At a kink the slope is 0.
    #[inline]
    pub fn apply(&self, k: usize, y: f64) -> (f64, f64) {
        let (lb, ub) = (self.lb[k], self.ub[k]);
        match self.mode {
            ClampMode::Hard => {
                if y > lb && y < ub {
                    (y, 1.0)
                } else if y <= lb {
                    (lb, 0.0)
                } else {
                    (ub, 0.0)
                }
            }
            ClampMode::Smooth => {
                let c = 0.5 * (lb + ub);
                let w = 0.5 * (ub - lb);
                let s = ((y - c) / w).tanh();
                ((c + w * s).clamp(lb, ub), 1.0 - s * s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `rows = outputs`, `cols = inputs`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            w: Array2::zeros((rows, cols)),
            b: Array1::zeros(rows),
        }
    }
}

/// Shape of a network: hidden widths plus activation and coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_coupling")]
    pub coupling: Coupling,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_coupling() -> Coupling {
    Coupling::Product
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertNet {
    pub role: Role,
    /// State dimension; inputs are `(x, t)` of length `n + 1`.
    pub n: usize,
    pub coupling: Coupling,
    pub activation: Activation,
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Dense>,
    pub clamp: Option<Clamp>,
}

/// Output value and per-output gradient with respect to `(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputJacobian {
    /// `d_dx[k][i] = d out_k / d x_i`
    pub d_dx: Vec<Vec<f64>>,
    pub d_dt: Vec<f64>,
}

impl InputJacobian {
    /// Gradient of output `k` as one `(n + 1)`-vector.
    pub fn gradient(&self, k: usize) -> Vec<f64> {
        let mut g = self.d_dx[k].clone();
        g.push(self.d_dt[k]);
        g
    }
}

impl CertNet {
    /// Random network with uniform Glorot weights and zero biases.
    pub fn new(
        role: Role,
        n: usize,
        arch: &Architecture,
        outputs: usize,
        clamp: Option<Clamp>,
        seed: u64,
    ) -> Result<Self, NeuralError> {
        if let Coupling::Exponential { coeffs } = &arch.coupling {
            if coeffs.len() != n {
                return Err(NeuralError::Invalid(format!(
                    "exponential coupling needs {n} coefficients, got {}",
                    coeffs.len()
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![2 * n + 1];
        widths.extend(&arch.hidden);
        widths.push(outputs);
        let layers = widths
            .windows(2)
            .map(|io| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    w: Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..bound)),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        let net = Self {
            role,
            n,
            coupling: arch.coupling.clone(),
            activation: arch.activation,
            layers,
            clamp,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn barrier(n: usize, arch: &Architecture, seed: u64) -> Result<Self, NeuralError> {
        Self::new(Role::Barrier, n, arch, 1, None, seed)
    }

    pub fn controller(n: usize, arch: &Architecture, input_box: &BoxSet, seed: u64) -> Result<Self, NeuralError> {
        Self::new(
            Role::Controller,
            n,
            arch,
            input_box.dim(),
            Some(Clamp::hard(input_box)),
            seed,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.n + 1
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    pub fn hidden_count(&self) -> usize {
        self.layers.len() - 1
    }

    /// Layer dimensions chain from `2n + 1`; barrier has one clamp-free
    /// output; controller carries a clamp matching its output width.
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.n == 0 {
            return Err(NeuralError::Invalid("state dimension must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(NeuralError::Invalid("network has no layers".into()));
        }
        let mut width = 2 * self.n + 1;
        for (i, l) in self.layers.iter().enumerate() {
            if l.w.ncols() != width {
                return Err(NeuralError::BrokenChain {
                    layer: i,
                    reason: format!("expects {} inputs but previous width is {width}", l.w.ncols()),
                });
            }
            if l.b.len() != l.w.nrows() {
                return Err(NeuralError::BrokenChain {
                    layer: i,
                    reason: format!("bias has {} entries for {} rows", l.b.len(), l.w.nrows()),
                });
            }
            width = l.w.nrows();
        }
        match (self.role, &self.clamp) {
            (Role::Barrier, None) if width == 1 => Ok(()),
            (Role::Barrier, None) => Err(NeuralError::Invalid(format!(
                "barrier must have one output, has {width}"
            ))),
            (Role::Barrier, Some(_)) => Err(NeuralError::Invalid("barrier must not be clamped".into())),
            (Role::Controller, Some(c)) if c.lb.len() == width && c.ub.len() == width => {
                if c.lb.iter().zip(&c.ub).all(|(l, u)| l < u) {
                    Ok(())
                } else {
                    Err(NeuralError::Invalid("clamp needs lb < ub".into()))
                }
            }
            (Role::Controller, Some(_)) => Err(NeuralError::Invalid("clamp width differs from output width".into())),
            (Role::Controller, None) => Err(NeuralError::Invalid("controller requires an output clamp".into())),
        }
    }

    fn check_input(&self, p: &[f64]) -> Result<(), NeuralError> {
        if p.len() != self.input_dim() {
            return Err(NeuralError::Dimension {
                expected: self.input_dim(),
                found: p.len(),
            });
        }
        Ok(())
    }

    /// Output at `p = (x, t)`, clamped for the controller role.
    pub fn forward(&self, p: &[f64]) -> Result<Vec<f64>, NeuralError> {
        self.check_input(p)?;
        let mut h = self.couple(p);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut a = layer.w.dot(&Array1::from(h));
            a += &layer.b;
            if k < last {
                a.mapv_inplace(|v| self.activation.eval(v).0);
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(NeuralError::NonFinite { layer: k });
            }
            h = a.to_vec();
        }
        if let Some(c) = &self.clamp {
            for (k, v) in h.iter_mut().enumerate() {
                *v = c.apply(k, *v).0;
            }
        }
        Ok(h)
    }

    /// Scalar barrier value.
    pub fn value(&self, p: &[f64]) -> Result<f64, NeuralError> {
        Ok(self.forward(p)?[0])
    }

    pub(crate) fn couple(&self, p: &[f64]) -> Vec<f64> {
        let n = self.n;
        let t = p[n];
        let mut z = Vec::with_capacity(2 * n + 1);
        z.extend_from_slice(p);
        for i in 0..n {
            z.push(self.coupling.feature(i, p[i], t).0);
        }
        z
    }

    /// Exact partial derivatives of every output with respect to `(x, t)`,
    /// including the clamp slope for the controller.
    pub fn input_jacobian(&self, p: &[f64]) -> Result<InputJacobian, NeuralError> {
        self.check_input(p)?;
        let d = self.input_dim();
        let inputs = Array2::from_shape_fn((d, d), |(i, _)| p[i]);
        let tangents = Array2::eye(d);
        let tape = self.forward_tape(&inputs, Some(&tangents));
        let y = &tape.out;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::NonFinite {
                layer: self.layers.len() - 1,
            });
        }
        let yd = tape.out_tangent().expect("tangent requested");
        let mut d_dx = Vec::with_capacity(self.output_dim());
        let mut d_dt = Vec::with_capacity(self.output_dim());
        for k in 0..self.output_dim() {
            let slope = self.clamp.as_ref().map_or(1.0, |c| c.apply(k, y[[k, 0]]).1);
            d_dx.push((0..self.n).map(|i| slope * yd[[k, i]]).collect());
            d_dt.push(slope * yd[[k, self.n]]);
        }
        Ok(InputJacobian { d_dx, d_dt })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters flattened layer by layer: weights row-major, then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter vector length");
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.w.iter_mut()
                .chain(l.b.iter_mut())
                .for_each(|v| *v = *it.next().unwrap());
        }
    }

    /// Applies `f(param, index)` to every parameter in flattening order.
    pub fn update_params(&mut self, mut f: impl FnMut(&mut f64, usize)) {
        let mut i = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                f(v, i);
                i += 1;
            }
        }
    }
}
