//! The STL fragment: Boolean predicate formulas wrapped in a single layer of
//! `Always`/`Eventually` blocks, joined by conjunction.
//!
//! ```text
//! bool  ::= true | atom | not bool | bool and bool | bool or bool
//! block ::= G[a,b](bool) | F[a,b](bool)
//! spec  ::= block and block and ...
//! ```
//!
//! Robustness follows the usual quantitative semantics: atoms evaluate their
//! predicate function, negation flips the sign, conjunction is `min`,
//! disjunction is `max`, `Always` takes the minimum over the interval and
//! `Eventually` the maximum.

mod parse;
mod schedule;

pub use parse::{parse_spec, parse_spec_with_horizon, ParseError, ParseErrorKind};
pub use schedule::{
    assign_intervals, ensure_coverage, ActiveSchedule, Anchor, DeltaRule, IntervalPolicy, ScheduleError,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::Trajectory;

/// Robustness assigned to `true`. Stands in for `+inf` so that sums and
/// differences downstream stay finite.
pub const TRUE_ROBUSTNESS: f64 = 1e9;

/// Slack used when deciding whether a sample instant lies in a block interval.
pub(crate) const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PNorm {
    L1,
    L2,
    Inf,
}

impl PNorm {
    pub fn eval(self, v: impl Iterator<Item = f64>) -> f64 {
        match self {
            PNorm::L1 => v.map(f64::abs).sum(),
            PNorm::L2 => v.map(|a| a * a).sum::<f64>().sqrt(),
            PNorm::Inf => v.map(f64::abs).fold(0.0, f64::max),
        }
    }
}

/// A predicate `h(x) >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PredicateAtom {
    /// `c . x + d >= 0`
    Affine { c: Vec<f64>, d: f64 },
    /// `r - || S (x - center) ||_p >= 0` with `S = diag(scale)`.
    Norm {
        center: Vec<f64>,
        scale: Vec<f64>,
        radius: f64,
        p: PNorm,
    },
}

impl PredicateAtom {
    pub fn dim(&self) -> usize {
        match self {
            PredicateAtom::Affine { c, .. } => c.len(),
            PredicateAtom::Norm { center, .. } => center.len(),
        }
    }

    /// The predicate function `h(x)`.
    pub fn h(&self, x: &[f64]) -> f64 {
        match self {
            PredicateAtom::Affine { c, d } => c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() + d,
            PredicateAtom::Norm {
                center,
                scale,
                radius,
                p,
            } => {
                let v = x.iter().zip(center).zip(scale).map(|((x, c), s)| s * (x - c));
                radius - p.eval(v)
            }
        }
    }

    pub(crate) fn validate(&self, n: usize) -> Result<(), StlError> {
        if self.dim() != n {
            return Err(StlError::Dimension {
                expected: n,
                found: self.dim(),
            });
        }
        if let PredicateAtom::Norm { scale, radius, .. } = self {
            if scale.len() != n {
                return Err(StlError::Dimension {
                    expected: n,
                    found: scale.len(),
                });
            }
            if !(*radius > 0.0) {
                return Err(StlError::NonPositiveRadius(*radius));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BoolFormula {
    True,
    Atom(PredicateAtom),
    Not(Box<BoolFormula>),
    And(Vec<BoolFormula>),
    Or(Vec<BoolFormula>),
}

impl BoolFormula {
    pub fn not(f: BoolFormula) -> Self {
        BoolFormula::Not(Box::new(f))
    }

    /// Conjunction that collapses the single-child case.
    pub fn and(mut children: Vec<BoolFormula>) -> Self {
        if children.len() == 1 {
            children.pop().unwrap()
        } else {
            BoolFormula::And(children)
        }
    }

    pub fn or(mut children: Vec<BoolFormula>) -> Self {
        if children.len() == 1 {
            children.pop().unwrap()
        } else {
            BoolFormula::Or(children)
        }
    }

    pub fn robustness(&self, x: &[f64]) -> f64 {
        self.robustness_with_top(x, TRUE_ROBUSTNESS)
    }

    /// Robustness with `true` mapped to `top`.
    pub fn robustness_with_top(&self, x: &[f64], top: f64) -> f64 {
        match self {
            BoolFormula::True => top,
            BoolFormula::Atom(a) => a.h(x),
            BoolFormula::Not(f) => -f.robustness_with_top(x, top),
            BoolFormula::And(fs) => fs
                .iter()
                .map(|f| f.robustness_with_top(x, top))
                .fold(f64::INFINITY, f64::min),
            BoolFormula::Or(fs) => fs
                .iter()
                .map(|f| f.robustness_with_top(x, top))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub(crate) fn validate(&self, n: usize) -> Result<(), StlError> {
        match self {
            BoolFormula::True => Ok(()),
            BoolFormula::Atom(a) => a.validate(n),
            BoolFormula::Not(f) => f.validate(n),
            BoolFormula::And(fs) | BoolFormula::Or(fs) => {
                if fs.len() < 2 {
                    return Err(StlError::Arity);
                }
                fs.iter().try_for_each(|f| f.validate(n))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemporalOp {
    Always,
    Eventually,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalBlock {
    pub op: TemporalOp,
    pub a: f64,
    pub b: f64,
    pub body: BoolFormula,
}

impl TemporalBlock {
    pub fn always(a: f64, b: f64, body: BoolFormula) -> Self {
        Self {
            op: TemporalOp::Always,
            a,
            b,
            body,
        }
    }

    pub fn eventually(a: f64, b: f64, body: BoolFormula) -> Self {
        Self {
            op: TemporalOp::Eventually,
            a,
            b,
            body,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.a - TIME_TOL && t <= self.b + TIME_TOL
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StlError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("norm predicate radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("and/or needs at least two operands")]
    Arity,
    #[error("block {index}: interval [{a}, {b}] is empty or outside [0, {horizon}]")]
    Interval { index: usize, a: f64, b: f64, horizon: f64 },
    #[error("block {index}: trajectory does not cover [{a}, {b}]")]
    Coverage { index: usize, a: f64, b: f64 },
}

/// A conjunction of temporal blocks over the horizon `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Specification {
    pub blocks: Vec<TemporalBlock>,
    pub horizon: f64,
    /// State dimension every atom is written against.
    pub n: usize,
}

impl Specification {
    pub fn new(blocks: Vec<TemporalBlock>, horizon: f64, n: usize) -> Result<Self, StlError> {
        let spec = Self { blocks, horizon, n };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), StlError> {
        for (index, blk) in self.blocks.iter().enumerate() {
            if !(blk.a >= 0.0 && blk.a < blk.b && blk.b <= self.horizon + TIME_TOL) {
                return Err(StlError::Interval {
                    index,
                    a: blk.a,
                    b: blk.b,
                    horizon: self.horizon,
                });
            }
            blk.body.validate(self.n)?;
        }
        Ok(())
    }

    /// Robustness of every block evaluated at `t = 0` on the sampled trajectory.
    pub fn block_robustness(&self, traj: &Trajectory) -> Result<Vec<f64>, StlError> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(index, blk)| block_robustness(index, blk, traj))
            .collect()
    }

    /// `rho^Phi(x)`: minimum over blocks, `TRUE_ROBUSTNESS` for an empty spec.
    pub fn robustness(&self, traj: &Trajectory) -> Result<f64, StlError> {
        Ok(self.block_robustness(traj)?.into_iter().fold(TRUE_ROBUSTNESS, f64::min))
    }
}

fn block_robustness(index: usize, blk: &TemporalBlock, traj: &Trajectory) -> Result<f64, StlError> {
    let covered = match (traj.times.first(), traj.times.last()) {
        (Some(&t0), Some(&t1)) => t0 <= blk.a + TIME_TOL && t1 >= blk.b - TIME_TOL,
        _ => false,
    };
    let values = traj
        .times
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| blk.contains(**t))
        .map(|(_, x)| blk.body.robustness(x));
    let v = match blk.op {
        TemporalOp::Always => values.fold(f64::INFINITY, f64::min),
        TemporalOp::Eventually => values.fold(f64::NEG_INFINITY, f64::max),
    };
    if !covered || v.is_infinite() {
        return Err(StlError::Coverage {
            index,
            a: blk.a,
            b: blk.b,
        });
    }
    Ok(v)
}

/// `rho^phi(x)` for a Boolean formula.
pub fn robustness_bool(phi: &BoolFormula, x: &[f64]) -> f64 {
    phi.robustness(x)
}

/// `rho^Phi(x)` for a sampled trajectory.
pub fn robustness_signal(spec: &Specification, traj: &Trajectory) -> Result<f64, StlError> {
    spec.robustness(traj)
}
