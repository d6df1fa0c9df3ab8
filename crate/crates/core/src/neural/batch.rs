//! Batched evaluation with forward-mode tangents and reverse-mode adjoints.
//!
//! Samples are stored column-wise: a batch of `B` points is an `(n + 1) x B`
//! matrix. A tape optionally carries one tangent direction per column, which
//! yields directional input derivatives `dy = J(p) v`. The backward pass
//! accepts adjoints for both `y` and `dy`, so gradients of losses that contain
//! input derivatives (second-order terms) come out of a single sweep.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis, Zip};

use super::{CertNet, Dense, NeuralError};

#[derive(Debug, Clone)]
pub struct Tape {
    /// `acts[k]` is the input of layer `k`; `acts[0]` holds coupling features.
    acts: Vec<Array2<f64>>,
    /// `sigma'` of each hidden layer.
    slopes: Vec<Array2<f64>>,
    tangent: Option<TangentTape>,
    /// Output before any clamp, `outputs x B`.
    pub out: Array2<f64>,
}

#[derive(Debug, Clone)]
struct TangentTape {
    acts: Vec<Array2<f64>>,
    /// Tangent of each hidden pre-activation.
    pre: Vec<Array2<f64>>,
    out: Array2<f64>,
}

impl Tape {
    pub fn batch_len(&self) -> usize {
        self.out.ncols()
    }

    pub fn out_tangent(&self) -> Option<&Array2<f64>> {
        self.tangent.as_ref().map(|t| &t.out)
    }
}

/// Gradient container with the same shapes as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub layers: Vec<Dense>,
}

impl ParamGrad {
    pub fn zeros(net: &CertNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.w.nrows(), l.w.ncols()))
                .collect(),
        }
    }

    /// Same ordering as [`CertNet::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn add_assign(&mut self, other: &ParamGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.w *= c;
            l.b *= c;
        }
    }

    pub fn check_finite(&self) -> Result<(), NeuralError> {
        for (block, l) in self.layers.iter().enumerate() {
            if l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite()) {
                return Err(NeuralError::NonFiniteGradient { block });
            }
        }
        Ok(())
    }
}

impl CertNet {
    fn couple_batch(&self, points: &Array2<f64>) -> Array2<f64> {
        let (n, cols) = (self.n, points.ncols());
        let mut z = Array2::zeros((2 * n + 1, cols));
        z.slice_mut(ndarray::s![..=n, ..]).assign(points);
        for j in 0..cols {
            let t = points[[n, j]];
            for i in 0..n {
                z[[n + 1 + i, j]] = self.coupling.feature(i, points[[i, j]], t).0;
            }
        }
        z
    }

    fn couple_tangent_batch(&self, points: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
        let (n, cols) = (self.n, points.ncols());
        let mut z = Array2::zeros((2 * n + 1, cols));
        z.slice_mut(ndarray::s![..=n, ..]).assign(v);
        for j in 0..cols {
            let t = points[[n, j]];
            for i in 0..n {
                let (_, dx, dt) = self.coupling.feature(i, points[[i, j]], t);
                z[[n + 1 + i, j]] = dx * v[[i, j]] + dt * v[[n, j]];
            }
        }
        z
    }

    /// Pulls an adjoint on coupling features back to `(x, t)`.
    fn coupling_vjp(&self, points: &Array2<f64>, zbar: &Array2<f64>) -> Array2<f64> {
        let (n, cols) = (self.n, points.ncols());
        let mut p = zbar.slice(ndarray::s![..=n, ..]).to_owned();
        for j in 0..cols {
            let t = points[[n, j]];
            for i in 0..n {
                let (_, dx, dt) = self.coupling.feature(i, points[[i, j]], t);
                let c = zbar[[n + 1 + i, j]];
                p[[i, j]] += c * dx;
                p[[n, j]] += c * dt;
            }
        }
        p
    }

    /// Runs the network on every column of `points`, recording what the
    /// backward pass needs. With `tangents`, column `j` also carries the
    /// directional derivative along `tangents[:, j]`.
    pub fn forward_tape(&self, points: &Array2<f64>, tangents: Option<&Array2<f64>>) -> Tape {
        assert_eq!(points.nrows(), self.input_dim(), "batch row count");
        let last = self.layers.len() - 1;
        let mut acts = vec![self.couple_batch(points)];
        let mut slopes = Vec::with_capacity(last);
        let mut tan = tangents.map(|v| {
            assert_eq!(v.dim(), points.dim(), "tangent shape");
            TangentTape {
                acts: vec![self.couple_tangent_batch(points, v)],
                pre: Vec::with_capacity(last),
                out: Array2::zeros((0, 0)),
            }
        });
        for (k, layer) in self.layers.iter().enumerate() {
            let h = acts.last().expect("non-empty");
            let mut a = layer.w.dot(h);
            a += &layer.b.view().insert_axis(Axis(1));
            let ta = tan.as_ref().map(|t| layer.w.dot(t.acts.last().expect("non-empty")));
            if k == last {
                if let (Some(t), Some(ta)) = (tan.as_mut(), ta) {
                    t.out = ta;
                }
                return Tape {
                    acts,
                    slopes,
                    tangent: tan,
                    out: a,
                };
            }
            let mut d1 = Array2::zeros(a.raw_dim());
            let act = self.activation;
            Zip::from(&mut a).and(&mut d1).for_each(|a, d| {
                let (s, ds) = act.eval(*a);
                *a = s;
                *d = ds;
            });
            if let (Some(t), Some(ta)) = (tan.as_mut(), ta) {
                t.acts.push(&ta * &d1);
                t.pre.push(ta);
            }
            acts.push(a);
            slopes.push(d1);
        }
        unreachable!("network has at least one layer")
    }

    /// Clamped outputs for every column.
    pub fn forward_batch(&self, points: &Array2<f64>) -> Array2<f64> {
        let mut y = self.forward_tape(points, None).out;
        if let Some(c) = &self.clamp {
            for (k, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
                row.mapv_inplace(|v| c.apply(k, v).0);
            }
        }
        y
    }

    /// Reverse sweep. `ybar` is the adjoint of the (unclamped) output and
    /// `ydbar` the adjoint of its tangent. Parameter gradients accumulate
    /// into `grad`; the adjoint with respect to `(x, t)` along the primal
    /// path is returned.
    pub fn backward(
        &self,
        tape: &Tape,
        ybar: &Array2<f64>,
        ydbar: Option<&Array2<f64>>,
        mut grad: Option<&mut ParamGrad>,
        points: &Array2<f64>,
    ) -> Array2<f64> {
        let tt = ydbar.map(|_| tape.tangent.as_ref().expect("tape recorded without tangents"));
        let act = self.activation;
        let mut abar = ybar.clone();
        let mut adbar = ydbar.cloned();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if let Some(g) = grad.as_deref_mut() {
                let g = &mut g.layers[k];
                general_mat_mul(1.0, &abar, &tape.acts[k].t(), 1.0, &mut g.w);
                if let (Some(ad), Some(tt)) = (&adbar, tt) {
                    general_mat_mul(1.0, ad, &tt.acts[k].t(), 1.0, &mut g.w);
                }
                g.b += &abar.sum_axis(Axis(1));
            }
            let mut hbar = layer.w.t().dot(&abar);
            if k == 0 {
                return self.coupling_vjp(points, &hbar);
            }
            let j = k - 1;
            let (d1, s) = (&tape.slopes[j], &tape.acts[k]);
            match (adbar.as_ref(), tt) {
                (Some(ad), Some(tt)) => {
                    let mut hdbar = layer.w.t().dot(ad);
                    Zip::from(&mut hbar)
                        .and(&mut hdbar)
                        .and(d1)
                        .and(s)
                        .and(&tt.pre[j])
                        .for_each(|hb, hd, &d, &s, &ta| {
                            *hb = *hb * d + *hd * ta * act.second(s, d);
                            *hd *= d;
                        });
                    adbar = Some(hdbar);
                }
                _ => hbar *= d1,
            }
            abar = hbar;
        }
        unreachable!("network has at least one layer")
    }

    /// Gradient of `sum_k ybar[k, j] * y_k` with respect to `(x, t)`, per column.
    pub fn input_vjp(&self, tape: &Tape, ybar: &Array2<f64>, points: &Array2<f64>) -> Array2<f64> {
        self.backward(tape, ybar, None, None, points)
    }

    /// Input gradients of a scalar network at every column: `(n + 1) x B`.
    pub fn input_gradient_batch(&self, points: &Array2<f64>) -> Array2<f64> {
        let tape = self.forward_tape(points, None);
        let ones = Array2::ones((1, points.ncols()));
        self.input_vjp(&tape, &ones, points)
    }
}
