//! Continuous-time control systems `xdot = f(x, u)` over box state and input sets.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("{what}: expected dimension {expected}, got {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("box bounds must satisfy lb < ub componentwise")]
    EmptyBox,
    #[error("unknown built-in system `{0}` (expected mecanum, pendulum or spacecraft)")]
    UnknownSystem(String),
    #[error("dynamics produced a non-finite derivative")]
    NonFinite,
}

/// Axis-aligned box `{ v : lb <= v <= ub }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

impl BoxSet {
    pub fn new(lb: Vec<f64>, ub: Vec<f64>) -> Result<Self, DynamicsError> {
        if lb.len() != ub.len() {
            return Err(DynamicsError::Dimension {
                what: "box upper bound",
                expected: lb.len(),
                found: ub.len(),
            });
        }
        if lb.is_empty() || lb.iter().zip(&ub).any(|(l, u)| !(l < u)) {
            return Err(DynamicsError::EmptyBox);
        }
        Ok(Self { lb, ub })
    }

    pub fn symmetric(half: f64, dim: usize) -> Self {
        Self {
            lb: vec![-half; dim],
            ub: vec![half; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lb.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lb.iter().zip(&self.ub).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lb.iter().zip(&self.ub).map(|(l, u)| 0.5 * (u - l)).collect()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim()
            && v.iter()
                .zip(self.lb.iter().zip(&self.ub))
                .all(|(x, (l, u))| *x >= *l && *x <= *u)
    }

    /// Box grown by `frac` of its width on every side.
    pub fn inflate(&self, frac: f64) -> Self {
        let (lb, ub) = self
            .lb
            .iter()
            .zip(&self.ub)
            .map(|(l, u)| {
                let m = frac * (u - l);
                (l - m, u + m)
            })
            .unzip();
        Self { lb, ub }
    }

    /// Largest `|v_i|` over the box, per component.
    pub fn abs_max(&self) -> Vec<f64> {
        self.lb
            .iter()
            .zip(&self.ub)
            .map(|(l, u)| l.abs().max(u.abs()))
            .collect()
    }

    /// `sup ||v||_2` over the box.
    pub fn max_norm(&self) -> f64 {
        self.abs_max().iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lb
            .iter()
            .zip(&self.ub)
            .map(|(l, u)| rng.gen_range(*l..=*u))
            .collect()
    }

    pub fn clamp(&self, v: &mut [f64]) {
        for ((x, l), u) in v.iter_mut().zip(&self.lb).zip(&self.ub) {
            *x = x.clamp(*l, *u);
        }
    }
}

/// User-supplied dynamics.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn eval(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    /// `(df/du)^T lambda`.
    fn input_vjp(&self, x: &[f64], u: &[f64], lambda: &[f64], out: &mut [f64]);
}

/// Analytic bounds over `X x U`: Lipschitz constants in `x` and `u`, and
/// `sup ||f||_2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsBounds {
    pub l_x: f64,
    pub l_u: f64,
    pub m_f: f64,
}

#[derive(Clone)]
pub enum SystemKind {
    Mecanum,
    Pendulum {
        mass: f64,
        length: f64,
        gravity: f64,
        damping: f64,
    },
    Spacecraft {
        inertia: [f64; 3],
    },
    /// `xdot = A x + B u`, row-major.
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
    },
    Custom(Arc<dyn Dynamics>),
}

impl fmt::Debug for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemKind::Mecanum => f.write_str("Mecanum"),
            SystemKind::Pendulum {
                mass,
                length,
                gravity,
                damping,
            } => f
                .debug_struct("Pendulum")
                .field("mass", mass)
                .field("length", length)
                .field("gravity", gravity)
                .field("damping", damping)
                .finish(),
            SystemKind::Spacecraft { inertia } => f.debug_struct("Spacecraft").field("inertia", inertia).finish(),
            SystemKind::Linear { a, b } => f.debug_struct("Linear").field("a", a).field("b", b).finish(),
            SystemKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SystemModel {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub state_box: BoxSet,
    pub input_box: BoxSet,
    pub kind: SystemKind,
    /// Bounds declared for custom systems; built-ins compute theirs.
    pub declared_bounds: Option<DynamicsBounds>,
}

pub const PENDULUM_MASS: f64 = 0.5;
pub const PENDULUM_LENGTH: f64 = 0.5;
pub const PENDULUM_GRAVITY: f64 = 9.8;
pub const PENDULUM_DAMPING: f64 = 0.1;
pub const SPACECRAFT_INERTIA: [f64; 3] = [200.0, 200.0, 100.0];

impl SystemModel {
    /// Built-in benchmarks: `mecanum`, `pendulum` (the narrow state box),
    /// `pendulum_wide` (symmetric state box) and `spacecraft`.
    pub fn builtin(name: &str) -> Result<Self, DynamicsError> {
        use std::f64::consts::FRAC_PI_2;
        let pendulum = |lo: f64| SystemModel {
            name: name.to_string(),
            n: 2,
            m: 1,
            state_box: BoxSet {
                lb: vec![lo, -2.15],
                ub: vec![FRAC_PI_2 + 0.15, 2.15],
            },
            input_box: BoxSet::symmetric(12.0, 1),
            kind: SystemKind::Pendulum {
                mass: PENDULUM_MASS,
                length: PENDULUM_LENGTH,
                gravity: PENDULUM_GRAVITY,
                damping: PENDULUM_DAMPING,
            },
            declared_bounds: None,
        };
        match name {
            "mecanum" => Ok(SystemModel {
                name: name.into(),
                n: 2,
                m: 2,
                state_box: BoxSet::symmetric(2.0, 2),
                input_box: BoxSet::symmetric(0.2, 2),
                kind: SystemKind::Mecanum,
                declared_bounds: None,
            }),
            "pendulum" => Ok(pendulum(-0.15)),
            "pendulum_wide" => Ok(pendulum(-FRAC_PI_2 - 0.15)),
            "spacecraft" => Ok(SystemModel {
                name: name.into(),
                n: 3,
                m: 3,
                state_box: BoxSet::symmetric(0.25, 3),
                input_box: BoxSet::symmetric(20.0, 3),
                kind: SystemKind::Spacecraft {
                    inertia: SPACECRAFT_INERTIA,
                },
                declared_bounds: None,
            }),
            other => Err(DynamicsError::UnknownSystem(other.to_string())),
        }
    }

    pub fn linear(
        name: &str,
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        state_box: BoxSet,
        input_box: BoxSet,
    ) -> Result<Self, DynamicsError> {
        let n = state_box.dim();
        let m = input_box.dim();
        if a.len() != n || a.iter().any(|r| r.len() != n) {
            return Err(DynamicsError::Dimension {
                what: "A matrix",
                expected: n,
                found: a.len(),
            });
        }
        if b.len() != n || b.iter().any(|r| r.len() != m) {
            return Err(DynamicsError::Dimension {
                what: "B matrix",
                expected: n,
                found: b.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            n,
            m,
            state_box,
            input_box,
            kind: SystemKind::Linear { a, b },
            declared_bounds: None,
        })
    }

    /// Registers opaque dynamics. Their bounds must be declared: a
    /// certificate cannot rest on sampled estimates.
    pub fn custom(
        name: &str,
        dynamics: Arc<dyn Dynamics>,
        state_box: BoxSet,
        input_box: BoxSet,
        bounds: DynamicsBounds,
    ) -> Result<Self, DynamicsError> {
        if dynamics.state_dim() != state_box.dim() {
            return Err(DynamicsError::Dimension {
                what: "state box",
                expected: dynamics.state_dim(),
                found: state_box.dim(),
            });
        }
        if dynamics.input_dim() != input_box.dim() {
            return Err(DynamicsError::Dimension {
                what: "input box",
                expected: dynamics.input_dim(),
                found: input_box.dim(),
            });
        }
        Ok(Self {
            name: name.into(),
            n: state_box.dim(),
            m: input_box.dim(),
            state_box,
            input_box,
            kind: SystemKind::Custom(dynamics),
            declared_bounds: Some(bounds),
        })
    }

    /// `f(x, u)` with dimension checks.
    pub fn eval_f(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        if x.len() != self.n {
            return Err(DynamicsError::Dimension {
                what: "state",
                expected: self.n,
                found: x.len(),
            });
        }
        if u.len() != self.m {
            return Err(DynamicsError::Dimension {
                what: "input",
                expected: self.m,
                found: u.len(),
            });
        }
        let mut out = vec![0.0; self.n];
        self.eval_into(x, u, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite);
        }
        Ok(out)
    }

    /// Unchecked `f(x, u)` into `out`.
    pub fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        match &self.kind {
            SystemKind::Mecanum => out.copy_from_slice(u),
            SystemKind::Pendulum {
                mass,
                length,
                gravity,
                damping,
            } => {
                let ml2 = mass * length * length;
                out[0] = x[1];
                out[1] = u[0] / ml2 - gravity / length * x[0].sin() - damping / ml2 * x[1];
            }
            SystemKind::Spacecraft { inertia: [j1, j2, j3] } => {
                out[0] = (j2 - j3) / j1 * x[1] * x[2] + u[0] / j1;
                out[1] = (j3 - j1) / j2 * x[0] * x[2] + u[1] / j2;
                out[2] = (j1 - j2) / j3 * x[0] * x[1] + u[2] / j3;
            }
            SystemKind::Linear { a, b } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = a[i].iter().zip(x).map(|(a, x)| a * x).sum::<f64>()
                        + b[i].iter().zip(u).map(|(b, u)| b * u).sum::<f64>();
                }
            }
            SystemKind::Custom(d) => d.eval(x, u, out),
        }
    }

    /// `(df/du)^T lambda` into `out` (length `m`).
    pub fn input_vjp(&self, x: &[f64], u: &[f64], lambda: &[f64], out: &mut [f64]) {
        match &self.kind {
            SystemKind::Mecanum => out.copy_from_slice(lambda),
            SystemKind::Pendulum { mass, length, .. } => {
                out[0] = lambda[1] / (mass * length * length);
            }
            SystemKind::Spacecraft { inertia } => {
                for i in 0..3 {
                    out[i] = lambda[i] / inertia[i];
                }
            }
            SystemKind::Linear { b, .. } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = (0..self.n).map(|i| b[i][j] * lambda[i]).sum();
                }
            }
            SystemKind::Custom(d) => d.input_vjp(x, u, lambda, out),
        }
    }

    /// Sound closed-form bounds over `X x U`.
    pub fn analytic_bounds(&self) -> DynamicsBounds {
        let xm = self.state_box.abs_max();
        let um = self.input_box.abs_max();
        match &self.kind {
            SystemKind::Mecanum => DynamicsBounds {
                l_x: 0.0,
                l_u: 1.0,
                m_f: self.input_box.max_norm(),
            },
            SystemKind::Pendulum {
                mass,
                length,
                gravity,
                damping,
            } => {
                let ml2 = mass * length * length;
                let g_l = gravity / length;
                let d = damping / ml2;
                // Jacobian [[0, 1], [-(g/l) cos x1, -d]]; Frobenius norm bounds the operator norm.
                let cos_max = max_abs_cos(self.state_box.lb[0], self.state_box.ub[0]);
                let sin_max = max_abs_sin(self.state_box.lb[0], self.state_box.ub[0]);
                let c = g_l * cos_max;
                let l_x = (1.0 + c * c + d * d).sqrt();
                let f2 = um[0] / ml2 + g_l * sin_max + d * xm[1];
                DynamicsBounds {
                    l_x,
                    l_u: 1.0 / ml2,
                    m_f: (xm[1] * xm[1] + f2 * f2).sqrt(),
                }
            }
            SystemKind::Spacecraft { inertia: [j1, j2, j3] } => {
                let k = [(j2 - j3) / j1, (j3 - j1) / j2, (j1 - j2) / j3];
                // Jacobian entries k_i x_j over the off-diagonal pairs.
                let fro2 = k[0] * k[0] * (xm[2] * xm[2] + xm[1] * xm[1])
                    + k[1] * k[1] * (xm[2] * xm[2] + xm[0] * xm[0])
                    + k[2] * k[2] * (xm[1] * xm[1] + xm[0] * xm[0]);
                let inv = [1.0 / j1, 1.0 / j2, 1.0 / j3];
                let f = [
                    k[0].abs() * xm[1] * xm[2] + um[0] * inv[0],
                    k[1].abs() * xm[0] * xm[2] + um[1] * inv[1],
                    k[2].abs() * xm[0] * xm[1] + um[2] * inv[2],
                ];
                DynamicsBounds {
                    l_x: fro2.sqrt(),
                    l_u: inv.iter().copied().fold(0.0, f64::max),
                    m_f: f.iter().map(|v| v * v).sum::<f64>().sqrt(),
                }
            }
            SystemKind::Linear { a, b } => {
                let na = crate::linalg::spectral_norm_rows(a);
                let nb = crate::linalg::spectral_norm_rows(b);
                DynamicsBounds {
                    l_x: na,
                    l_u: nb,
                    m_f: na * self.state_box.max_norm() + nb * self.input_box.max_norm(),
                }
            }
            SystemKind::Custom(_) => self.declared_bounds.expect("custom systems carry declared bounds"),
        }
    }

    /// Bounds that enter certificates: declared values when present, else analytic.
    pub fn bounds(&self) -> DynamicsBounds {
        self.declared_bounds.unwrap_or_else(|| self.analytic_bounds())
    }
}

fn max_abs_cos(lo: f64, hi: f64) -> f64 {
    use std::f64::consts::PI;
    // |cos| peaks at multiples of pi.
    let k0 = (lo / PI).ceil();
    if k0 * PI <= hi {
        1.0
    } else {
        lo.cos().abs().max(hi.cos().abs())
    }
}

fn max_abs_sin(lo: f64, hi: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    let k0 = ((lo - FRAC_PI_2) / PI).ceil();
    if k0 * PI + FRAC_PI_2 <= hi {
        1.0
    } else {
        lo.sin().abs().max(hi.sin().abs())
    }
}

/// Sampled lower estimates of the bounds in [`DynamicsBounds`]; diagnostic only.
pub fn monte_carlo_bounds(sys: &SystemModel, pairs: usize, seed: u64) -> DynamicsBounds {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut l_x, mut l_u, mut m_f) = (0.0f64, 0.0f64, 0.0f64);
    let mut f1 = vec![0.0; sys.n];
    let mut f2 = vec![0.0; sys.n];
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    for _ in 0..pairs {
        let x1 = sys.state_box.sample(&mut rng);
        let x2 = sys.state_box.sample(&mut rng);
        let u1 = sys.input_box.sample(&mut rng);
        let u2 = sys.input_box.sample(&mut rng);
        sys.eval_into(&x1, &u1, &mut f1);
        m_f = m_f.max(f1.iter().map(|v| v * v).sum::<f64>().sqrt());
        sys.eval_into(&x2, &u1, &mut f2);
        let dx = dist(&x1, &x2);
        if dx > 0.0 {
            l_x = l_x.max(dist(&f1, &f2) / dx);
        }
        sys.eval_into(&x1, &u2, &mut f2);
        let du = dist(&u1, &u2);
        if du > 0.0 {
            l_u = l_u.max(dist(&f1, &f2) / du);
        }
    }
    DynamicsBounds { l_x, l_u, m_f }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn pendulum_equilibrium_and_gravity() {
        let p = SystemModel::builtin("pendulum").unwrap();
        assert_eq!(p.eval_f(&[0.0, 0.0], &[0.0]).unwrap(), vec![0.0, 0.0]);
        let f = p.eval_f(&[FRAC_PI_2, 0.0], &[0.0]).unwrap();
        assert_eq!(f[0], 0.0);
        assert!((f[1] + 19.6).abs() < 1e-12);
    }

    #[test]
    fn spacecraft_torque_response() {
        let s = SystemModel::builtin("spacecraft").unwrap();
        assert_eq!(s.eval_f(&[0.0; 3], &[20.0, 0.0, 0.0]).unwrap(), vec![0.1, 0.0, 0.0]);
        let SystemKind::Spacecraft { inertia } = s.kind else {
            unreachable!()
        };
        assert_eq!(inertia, [200.0, 200.0, 100.0]);
    }

    #[test]
    fn builtin_constants() {
        let m = SystemModel::builtin("mecanum").unwrap();
        assert_eq!(m.input_box, BoxSet::symmetric(0.2, 2));
        assert_eq!(m.state_box, BoxSet::symmetric(2.0, 2));
        let p = SystemModel::builtin("pendulum").unwrap();
        assert!(matches!(p.kind, SystemKind::Pendulum { damping, .. } if damping == 0.1));
        assert_eq!(p.input_box, BoxSet::symmetric(12.0, 1));
        assert_eq!(p.state_box.lb[0], -0.15);
        let w = SystemModel::builtin("pendulum_wide").unwrap();
        assert_eq!(w.state_box.lb[0], -FRAC_PI_2 - 0.15);
        assert!(SystemModel::builtin("quadrotor").is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let m = SystemModel::builtin("mecanum").unwrap();
        assert!(matches!(
            m.eval_f(&[0.0], &[0.0, 0.0]),
            Err(DynamicsError::Dimension { .. })
        ));
        assert!(matches!(
            m.eval_f(&[0.0, 0.0], &[0.0]),
            Err(DynamicsError::Dimension { .. })
        ));
    }

    #[test]
    fn mecanum_bounds() {
        let b = SystemModel::builtin("mecanum").unwrap().analytic_bounds();
        assert_eq!(b.l_x, 0.0);
        assert_eq!(b.l_u, 1.0);
        assert!((b.m_f - 0.08f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pendulum_lx_dominated_by_gravity_term() {
        let b = SystemModel::builtin("pendulum").unwrap().analytic_bounds();
        assert!(b.l_x >= 19.6);
        assert!(b.l_x < 19.7);
        assert_eq!(b.l_u, 8.0);
    }

    #[test]
    fn static_system_has_zero_bounds() {
        let s = SystemModel::linear(
            "static",
            vec![vec![0.0]],
            vec![vec![0.0]],
            BoxSet::symmetric(1.0, 1),
            BoxSet::symmetric(1.0, 1),
        )
        .unwrap();
        let b = s.analytic_bounds();
        assert_eq!((b.l_x, b.l_u, b.m_f), (0.0, 0.0, 0.0));
    }

    #[test]
    fn trig_extremes() {
        assert_eq!(max_abs_cos(-0.15, 1.72), 1.0);
        assert!((max_abs_cos(0.5, 1.0) - 0.5f64.cos()).abs() < 1e-15);
        assert_eq!(max_abs_sin(-0.15, 1.72), 1.0);
        assert!((max_abs_sin(-0.15, 1.0) - 1.0f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn analytic_bounds_dominate_samples() {
        for name in ["mecanum", "pendulum", "pendulum_wide", "spacecraft"] {
            let s = SystemModel::builtin(name).unwrap();
            let a = s.analytic_bounds();
            let mc = monte_carlo_bounds(&s, 10_000, 17);
            assert!(mc.l_x <= a.l_x + 1e-12, "{name} l_x {} > {}", mc.l_x, a.l_x);
            assert!(mc.l_u <= a.l_u + 1e-12, "{name} l_u {} > {}", mc.l_u, a.l_u);
            assert!(mc.m_f <= a.m_f + 1e-12, "{name} m_f {} > {}", mc.m_f, a.m_f);
        }
    }

    #[test]
    fn mecanum_ignores_state() {
        let m = SystemModel::builtin("mecanum").unwrap();
        let u = [0.1, -0.05];
        assert_eq!(m.eval_f(&[1.0, 2.0], &u).unwrap(), m.eval_f(&[-1.5, 0.3], &u).unwrap());
    }
}
