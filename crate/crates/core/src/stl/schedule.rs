//! Interval assignment and the active-block schedule.
//!
//! `Always` blocks are enforced over their whole interval. `Eventually` blocks
//! are enforced over a sub-window `[t*, t* + delta]` picked by an
//! [`IntervalPolicy`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BoolFormula, PNorm, PredicateAtom, Specification, TemporalBlock, TemporalOp, TIME_TOL};
use crate::dynamics::BoxSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    Start,
    Midpoint,
    /// `t* = a + lambda (b - a - delta)`, `lambda` in `[0, 1]`.
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaRule {
    Absolute(f64),
    /// Fraction of each block's own interval width.
    FractionOfWidth(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalPolicy {
    pub anchor: Anchor,
    pub delta: DeltaRule,
}

impl Default for IntervalPolicy {
    fn default() -> Self {
        Self {
            anchor: Anchor::Midpoint,
            delta: DeltaRule::FractionOfWidth(0.2),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("block {index}: window width {delta} does not fit in [{a}, {b}]")]
    DeltaTooLarge { index: usize, delta: f64, a: f64, b: f64 },
    #[error("invalid interval policy: {0}")]
    Policy(String),
}

impl IntervalPolicy {
    fn window(&self, index: usize, a: f64, b: f64) -> Result<(f64, f64), ScheduleError> {
        let width = b - a;
        let delta = match self.delta {
            DeltaRule::Absolute(d) => d,
            DeltaRule::FractionOfWidth(f) => f * width,
        };
        if !(delta > 0.0) {
            return Err(ScheduleError::Policy(format!("delta must be positive, got {delta}")));
        }
        if delta > width {
            return Err(ScheduleError::DeltaTooLarge { index, delta, a, b });
        }
        let start = match self.anchor {
            Anchor::Start => a,
            Anchor::Midpoint => 0.5 * (a + b) - 0.5 * delta,
            Anchor::Fraction(l) => {
                if !(0.0..=1.0).contains(&l) {
                    return Err(ScheduleError::Policy(format!(
                        "anchor fraction must lie in [0, 1], got {l}"
                    )));
                }
                a + l * (width - delta)
            }
        };
        Ok((start, (start + delta).min(b)))
    }
}

/// One closed interval per block, in block order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSchedule {
    pub intervals: Vec<(f64, f64)>,
}

impl ActiveSchedule {
    /// Indices of the blocks whose interval contains `t`.
    pub fn active_blocks(&self, t: f64) -> Vec<usize> {
        self.active_iter(t).collect()
    }

    pub fn active_iter(&self, t: f64) -> impl Iterator<Item = usize> + '_ {
        self.intervals
            .iter()
            .enumerate()
            .filter(move |(_, &(lo, hi))| t >= lo - TIME_TOL && t <= hi + TIME_TOL)
            .map(|(i, _)| i)
    }

    /// Whether every instant of `[0, horizon]` has at least one active block.
    pub fn covers(&self, horizon: f64) -> bool {
        let mut iv = self.intervals.clone();
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut reach = 0.0f64;
        for (lo, hi) in iv {
            if lo > reach + TIME_TOL {
                return false;
            }
            reach = reach.max(hi);
        }
        !self.intervals.is_empty() && reach >= horizon - TIME_TOL
    }

    /// `min` of the active block bodies at `(x, t)`; `None` when nothing is active.
    pub fn min_active_robustness(&self, spec: &Specification, x: &[f64], t: f64) -> Option<f64> {
        self.active_iter(t)
            .map(|i| spec.blocks[i].body.robustness(x))
            .reduce(f64::min)
    }
}

pub fn assign_intervals(spec: &Specification, policy: &IntervalPolicy) -> Result<ActiveSchedule, ScheduleError> {
    let intervals = spec
        .blocks
        .iter()
        .enumerate()
        .map(|(i, blk)| match blk.op {
            TemporalOp::Always => Ok((blk.a, blk.b)),
            TemporalOp::Eventually => policy.window(i, blk.a, blk.b),
        })
        .collect::<Result<_, _>>()?;
    Ok(ActiveSchedule { intervals })
}

/// Prepends an `Always` block over the whole horizon that keeps the state in
/// `bounds` when the schedule would otherwise leave instants with no active
/// block. Returns `spec` unchanged when coverage already holds.
pub fn ensure_coverage(
    spec: &Specification,
    bounds: &BoxSet,
    policy: &IntervalPolicy,
) -> Result<Specification, ScheduleError> {
    if !spec.blocks.is_empty() && assign_intervals(spec, policy)?.covers(spec.horizon) {
        return Ok(spec.clone());
    }
    let center = bounds.center();
    let scale = bounds.half_widths().iter().map(|w| 1.0 / w).collect();
    let guard = TemporalBlock::always(
        0.0,
        spec.horizon,
        BoolFormula::Atom(PredicateAtom::Norm {
            center,
            scale,
            radius: 1.0,
            p: PNorm::Inf,
        }),
    );
    let mut out = spec.clone();
    out.blocks.insert(0, guard);
    Ok(out)
}
