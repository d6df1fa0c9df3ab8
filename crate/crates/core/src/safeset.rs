//! Uniform epsilon-nets over `W = X x [0, T]`, safe-set labels and refinement.

use std::io::Write;

use bitvec::prelude::*;
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::BoxSet;
use crate::neural::CertNet;
use crate::stl::{ActiveSchedule, Specification};

/// Samples per chunk for parallel labeling and refinement.
pub(crate) const CHUNK: usize = 2048;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("covering radius must be positive, got {0}")]
    Epsilon(f64),
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("time spacing must be positive, got {0}")]
    TimeSpacing(f64),
    #[error("grid node count overflows a 64-bit counter")]
    TooManyNodes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugPoint {
    pub x: Vec<f64>,
    pub t: f64,
}

impl AugPoint {
    /// `(x, t)` as one vector.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.push(self.t);
        v
    }
}

/// Axis-aligned grid over `W`. Nodes are enumerated lazily; the first state
/// axis varies fastest and time slowest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleGrid {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub counts: Vec<usize>,
    /// Guaranteed covering radius in the joint `(x, t)` 2-norm.
    pub epsilon: f64,
    total: usize,
}

impl SampleGrid {
    /// Spacing `h = 2 eps / sqrt(n + 1)` on every axis, so each cell's
    /// half-diagonal is at most `eps`.
    pub fn build(state_box: &BoxSet, horizon: f64, epsilon: f64) -> Result<Self, GridError> {
        if !(epsilon > 0.0) {
            return Err(GridError::Epsilon(epsilon));
        }
        if !(horizon > 0.0) {
            return Err(GridError::Horizon(horizon));
        }
        let (lb, ub) = augmented_bounds(state_box, horizon);
        let half_diag = 0.5 * lb.iter().zip(&ub).map(|(l, u)| (u - l) * (u - l)).sum::<f64>().sqrt();
        let counts = if epsilon >= half_diag {
            vec![1; lb.len()]
        } else {
            let h = 2.0 * epsilon / (lb.len() as f64).sqrt();
            lb.iter()
                .zip(&ub)
                .map(|(l, u)| axis_count(u - l, h))
                .collect::<Result<_, _>>()?
        };
        Self::from_counts(lb, ub, counts, epsilon)
    }

    /// State axes as in [`SampleGrid::build`], time axis with its own spacing
    /// `dt`. The stored radius is the actual covering radius of the result.
    pub fn build_with_time_spacing(state_box: &BoxSet, horizon: f64, epsilon: f64, dt: f64) -> Result<Self, GridError> {
        if !(dt > 0.0) {
            return Err(GridError::TimeSpacing(dt));
        }
        let mut g = Self::build(state_box, horizon, epsilon)?;
        let k = g.counts.len() - 1;
        g.counts[k] = axis_count(horizon, dt)?;
        let mut g = Self::from_counts(g.lb, g.ub, g.counts, 0.0)?;
        g.epsilon = g.covering_radius();
        Ok(g)
    }

    fn from_counts(lb: Vec<f64>, ub: Vec<f64>, counts: Vec<usize>, epsilon: f64) -> Result<Self, GridError> {
        let total = counts
            .iter()
            .try_fold(1u64, |acc, &c| acc.checked_mul(c as u64))
            .and_then(|t| usize::try_from(t).ok())
            .ok_or(GridError::TooManyNodes)?;
        Ok(Self {
            lb,
            ub,
            counts,
            epsilon,
            total,
        })
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Augmented dimension `n + 1`.
    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn state_dim(&self) -> usize {
        self.counts.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.ub[self.dim() - 1]
    }

    fn coord(&self, axis: usize, k: usize) -> f64 {
        let c = self.counts[axis];
        if c == 1 {
            0.5 * (self.lb[axis] + self.ub[axis])
        } else {
            self.lb[axis] + (self.ub[axis] - self.lb[axis]) * k as f64 / (c - 1) as f64
        }
    }

    /// Writes node `index` as `(x, t)` into `out`.
    pub fn node_into(&self, mut index: usize, out: &mut [f64]) {
        debug_assert!(index < self.total);
        for (axis, o) in out.iter_mut().enumerate() {
            let c = self.counts[axis];
            *o = self.coord(axis, index % c);
            index /= c;
        }
    }

    pub fn node(&self, index: usize) -> AugPoint {
        let mut v = vec![0.0; self.dim()];
        self.node_into(index, &mut v);
        let t = v.pop().expect("time axis");
        AugPoint { x: v, t }
    }

    /// Nodes at the given indices as columns of an `(n + 1) x B` matrix.
    pub fn points_matrix(&self, indices: &[usize]) -> Array2<f64> {
        let d = self.dim();
        let mut m = Array2::zeros((d, indices.len()));
        let mut buf = vec![0.0; d];
        for (j, &i) in indices.iter().enumerate() {
            self.node_into(i, &mut buf);
            for (r, v) in buf.iter().enumerate() {
                m[[r, j]] = *v;
            }
        }
        m
    }

    pub fn iter(&self) -> impl Iterator<Item = AugPoint> + '_ {
        (0..self.total).map(|i| self.node(i))
    }

    /// Largest distance from a point of `W` to its nearest node.
    pub fn covering_radius(&self) -> f64 {
        (0..self.dim())
            .map(|a| {
                let len = self.ub[a] - self.lb[a];
                let gap = if self.counts[a] == 1 {
                    0.5 * len
                } else {
                    0.5 * len / (self.counts[a] - 1) as f64
                };
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Distance from `p` to the nearest node, by per-axis rounding.
    pub fn distance_to_nearest(&self, p: &[f64]) -> f64 {
        (0..self.dim())
            .map(|a| {
                let c = self.counts[a];
                let k = if c == 1 {
                    0
                } else {
                    let h = (self.ub[a] - self.lb[a]) / (c - 1) as f64;
                    (((p[a] - self.lb[a]) / h).round().max(0.0) as usize).min(c - 1)
                };
                let d = p[a] - self.coord(a, k);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

fn augmented_bounds(state_box: &BoxSet, horizon: f64) -> (Vec<f64>, Vec<f64>) {
    let mut lb = state_box.lb.clone();
    let mut ub = state_box.ub.clone();
    lb.push(0.0);
    ub.push(horizon);
    (lb, ub)
}

fn axis_count(len: f64, h: f64) -> Result<usize, GridError> {
    let c = (len / h).ceil() + 1.0;
    if !c.is_finite() || c >= u64::MAX as f64 {
        return Err(GridError::TooManyNodes);
    }
    Ok(c as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    InSafe,
    OutSafe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub grid: SampleGrid,
    in_safe: BitVec,
    /// Number of refinements applied so far.
    pub generation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub total: usize,
    pub in_safe: usize,
    pub out_safe: usize,
    /// Smallest active robustness among InSafe samples; a value near zero
    /// means the sampled safe set is thin.
    pub min_in_safe_robustness: Option<f64>,
    pub generation: usize,
}

/// Labels every grid node by the sign of the active robustness.
pub fn label_samples(grid: &SampleGrid, spec: &Specification, sched: &ActiveSchedule) -> LabeledDataset {
    let flags: Vec<bool> = (0..grid.len())
        .into_par_iter()
        .with_min_len(CHUNK)
        .map_init(
            || vec![0.0; grid.dim()],
            |buf, i| {
                grid.node_into(i, buf);
                let (x, t) = buf.split_at(grid.state_dim());
                sched.min_active_robustness(spec, x, t[0]).is_none_or(|r| r >= 0.0)
            },
        )
        .collect();
    LabeledDataset {
        grid: grid.clone(),
        in_safe: flags.into_iter().collect(),
        generation: 0,
    }
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn label(&self, i: usize) -> Label {
        if self.in_safe[i] {
            Label::InSafe
        } else {
            Label::OutSafe
        }
    }

    pub fn is_in_safe(&self, i: usize) -> bool {
        self.in_safe[i]
    }

    pub fn in_safe_count(&self) -> usize {
        self.in_safe.count_ones()
    }

    pub fn in_safe_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.in_safe.iter_ones()
    }

    pub fn point(&self, i: usize) -> AugPoint {
        self.grid.node(i)
    }

    pub fn stats(&self, spec: &Specification, sched: &ActiveSchedule) -> DatasetStats {
        let min_r = self
            .in_safe
            .iter_ones()
            .collect::<Vec<_>>()
            .par_iter()
            .with_min_len(CHUNK)
            .filter_map(|&i| {
                let p = self.grid.node(i);
                sched.min_active_robustness(spec, &p.x, p.t)
            })
            .reduce_with(f64::min);
        let in_safe = self.in_safe_count();
        DatasetStats {
            total: self.len(),
            in_safe,
            out_safe: self.len() - in_safe,
            min_in_safe_robustness: min_r,
            generation: self.generation,
        }
    }

    /// Writes `x1..xn, t, label, generation`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let n = self.grid.state_dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.extend(["t", "label", "generation"].map(String::from));
        w.write_record(&header)?;
        let mut buf = vec![0.0; n + 1];
        let generation = self.generation.to_string();
        for i in 0..self.len() {
            self.grid.node_into(i, &mut buf);
            let mut row: Vec<String> = buf.iter().map(f64::to_string).collect();
            row.push(if self.in_safe[i] { "in_safe" } else { "out_safe" }.into());
            row.push(generation.clone());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// What a refinement pass removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RefineReport {
    /// Removed because `B < 0`.
    pub negative_value: usize,
    /// Removed because `||grad B|| >= M_b` while `B >= 0`.
    pub large_gradient: usize,
}

impl RefineReport {
    pub fn removed(&self) -> usize {
        self.negative_value + self.large_gradient
    }
}

/// Relabels InSafe samples where the barrier is negative or its `(x, t)`
/// gradient norm reaches `m_b`. OutSafe samples are never touched.
pub fn refine_in_place(ds: &mut LabeledDataset, barrier: &CertNet, m_b: f64) -> RefineReport {
    let idx: Vec<usize> = ds.in_safe.iter_ones().collect();
    let grid = &ds.grid;
    let verdicts: Vec<(usize, u8)> = idx
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            let pts = grid.points_matrix(chunk);
            let tape = barrier.forward_tape(&pts, None);
            let ones = Array2::ones((1, chunk.len()));
            let grad = barrier.input_vjp(&tape, &ones, &pts);
            let mut out = Vec::new();
            for (j, &i) in chunk.iter().enumerate() {
                let b = tape.out[[0, j]];
                let g2: f64 = grad.column(j).iter().map(|v| v * v).sum();
                if b < 0.0 {
                    out.push((i, 0));
                } else if g2.sqrt() >= m_b {
                    out.push((i, 1));
                }
            }
            out.into_iter()
        })
        .collect();
    let mut report = RefineReport::default();
    for (i, why) in verdicts {
        ds.in_safe.set(i, false);
        if why == 0 {
            report.negative_value += 1;
        } else {
            report.large_gradient += 1;
        }
    }
    ds.generation += 1;
    report
}

pub fn refine(ds: &LabeledDataset, barrier: &CertNet, m_b: f64) -> LabeledDataset {
    let mut out = ds.clone();
    refine_in_place(&mut out, barrier, m_b);
    out
}
