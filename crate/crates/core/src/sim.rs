//! Closed-loop RK4 rollouts and along-trajectory monitoring.

use std::io::{Read, Write};

use thiserror::Error;

use crate::dynamics::SystemModel;
use crate::neural::{CertNet, NeuralError};
use crate::stl::{ActiveSchedule, Specification, StlError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("time step must be positive, got {0}")]
    Step(f64),
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("initial state has dimension {found}, system has {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("initial state {0:?} lies outside the state box")]
    OutsideDomain(Vec<f64>),
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Net(#[from] NeuralError),
    #[error("trajectory file: {0}")]
    Csv(#[from] csv::Error),
    #[error("trajectory file is missing column {0:?}")]
    MissingColumn(String),
    #[error("trajectory file row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Input applied at each sample instant; empty for recorded signals.
    pub inputs: Vec<Vec<f64>>,
    /// Set when the rollout stopped early because the state left the
    /// inflated state box.
    pub left_domain: bool,
}

impl Trajectory {
    pub fn from_states(times: Vec<f64>, states: Vec<Vec<f64>>) -> Self {
        assert_eq!(times.len(), states.len(), "one state per sample time");
        Self {
            times,
            states,
            inputs: Vec::new(),
            left_domain: false,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }
}

/// State feedback `u = g(x, t)`.
pub trait Policy: Sync {
    fn control(&self, x: &[f64], t: f64) -> Result<Vec<f64>, NeuralError>;
}

impl Policy for CertNet {
    fn control(&self, x: &[f64], t: f64) -> Result<Vec<f64>, NeuralError> {
        let mut p = x.to_vec();
        p.push(t);
        self.forward(&p)
    }
}

impl<F> Policy for F
where
    F: Fn(&[f64], f64) -> Vec<f64> + Sync,
{
    fn control(&self, x: &[f64], t: f64) -> Result<Vec<f64>, NeuralError> {
        Ok(self(x, t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputHold {
    /// Feedback evaluated at every RK4 stage.
    #[default]
    Continuous,
    /// Input frozen over each step at its start-of-step value.
    ZeroOrder,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    pub horizon: f64,
    pub hold: InputHold,
    /// Relative inflation of the state box before a rollout is stopped.
    pub escape_margin: f64,
}

impl SimOptions {
    pub fn new(horizon: f64) -> Self {
        Self {
            dt: 1e-2,
            horizon,
            hold: InputHold::Continuous,
            escape_margin: 0.5,
        }
    }
}

pub fn simulate(sys: &SystemModel, policy: &dyn Policy, x0: &[f64], opts: &SimOptions) -> Result<Trajectory, SimError> {
    if !(opts.dt > 0.0) {
        return Err(SimError::Step(opts.dt));
    }
    if !(opts.horizon > 0.0) {
        return Err(SimError::Horizon(opts.horizon));
    }
    if x0.len() != sys.n {
        return Err(SimError::Dimension {
            expected: sys.n,
            found: x0.len(),
        });
    }
    if !sys.state_box.contains(x0) {
        return Err(SimError::OutsideDomain(x0.to_vec()));
    }
    let domain = sys.state_box.inflate(opts.escape_margin);
    let steps = (opts.horizon / opts.dt - 1e-9).ceil().max(1.0) as usize;
    let n = sys.n;
    let dt = opts.dt;
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
        left_domain: false,
    };
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut stage = vec![0.0; n];
    for step in 0..=steps {
        let t = step as f64 * dt;
        let u0 = policy.control(&x, t)?;
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.inputs.push(u0.clone());
        if step == steps {
            break;
        }
        let input = |xs: &[f64], ts: f64| -> Result<Vec<f64>, NeuralError> {
            match opts.hold {
                InputHold::Continuous => policy.control(xs, ts),
                InputHold::ZeroOrder => Ok(u0.clone()),
            }
        };
        sys.eval_into(&x, &u0, &mut k1);
        axpy(&x, 0.5 * dt, &k1, &mut stage);
        sys.eval_into(&stage, &input(&stage, t + 0.5 * dt)?, &mut k2);
        axpy(&x, 0.5 * dt, &k2, &mut stage);
        sys.eval_into(&stage, &input(&stage, t + 0.5 * dt)?, &mut k3);
        axpy(&x, dt, &k3, &mut stage);
        sys.eval_into(&stage, &input(&stage, t + dt)?, &mut k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite(t + dt));
        }
        if !domain.contains(&x) {
            traj.times.push(t + dt);
            traj.states.push(x.clone());
            traj.inputs.push(policy.control(&x, t + dt)?);
            traj.left_domain = true;
            break;
        }
    }
    Ok(traj)
}

fn axpy(x: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for ((o, x), k) in out.iter_mut().zip(x).zip(k) {
        *o = x + a * k;
    }
}

/// Barrier value and `dB/dt + alpha B` along a trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BarrierSeries {
    pub b: Vec<f64>,
    pub bdot_plus_alpha_b: Vec<f64>,
}

impl BarrierSeries {
    pub fn min_b(&self) -> f64 {
        self.b.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_decay(&self) -> f64 {
        self.bdot_plus_alpha_b.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn monitor_barrier(
    traj: &Trajectory,
    barrier: &CertNet,
    sys: &SystemModel,
    controller: &dyn Policy,
    alpha: f64,
) -> Result<BarrierSeries, SimError> {
    let mut out = BarrierSeries::default();
    let mut f = vec![0.0; sys.n];
    for (&t, x) in traj.times.iter().zip(&traj.states) {
        let mut p = x.clone();
        p.push(t);
        let b = barrier.value(&p)?;
        let jac = barrier.input_jacobian(&p)?;
        let u = controller.control(x, t)?;
        sys.eval_into(x, &u, &mut f);
        let bdot = jac.d_dx[0].iter().zip(&f).map(|(g, f)| g * f).sum::<f64>() + jac.d_dt[0];
        out.b.push(b);
        out.bdot_plus_alpha_b.push(bdot + alpha * b);
    }
    Ok(out)
}

/// Satisfaction score: `>= 0` iff the sampled trajectory satisfies `spec`.
pub fn score(traj: &Trajectory, spec: &Specification) -> Result<f64, StlError> {
    spec.robustness(traj)
}

/// Writes `t, x1..xn, u1..um, B, Bdot_plus_alphaB, min_active_robustness`.
/// Barrier columns are left empty when no series is given.
pub fn write_trajectory_csv<W: Write>(
    out: W,
    traj: &Trajectory,
    series: Option<&BarrierSeries>,
    spec: Option<(&Specification, &ActiveSchedule)>,
) -> Result<(), SimError> {
    let n = traj.states.first().map_or(0, Vec::len);
    let m = traj.inputs.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend(["B", "Bdot_plus_alphaB", "min_active_robustness"].map(String::from));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    for (k, (&t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(f64::to_string));
        if let Some(u) = traj.inputs.get(k) {
            row.extend(u.iter().map(f64::to_string));
        }
        row.push(opt(series.map(|s| s.b[k])));
        row.push(opt(series.map(|s| s.bdot_plus_alpha_b[k])));
        row.push(opt(spec.and_then(|(s, sch)| sch.min_active_robustness(s, x, t))));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads the `t` and `x1..xn` columns of a trajectory file; other columns are ignored.
pub fn read_trajectory_csv<R: Read>(input: R, n: usize) -> Result<Trajectory, SimError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| SimError::MissingColumn(name.to_string()))
    };
    let t_col = find("t")?;
    let x_cols = (1..=n).map(|i| find(&format!("x{i}"))).collect::<Result<Vec<_>, _>>()?;
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64, SimError> {
            let s = rec.get(c).unwrap_or("").trim();
            s.parse().map_err(|_| SimError::BadRow {
                row: row + 1,
                reason: format!("column {:?} is not a number: {s:?}", &headers[c]),
            })
        };
        let t = num(t_col)?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(SimError::BadRow {
                    row: row + 1,
                    reason: "times must be strictly increasing".into(),
                });
            }
        }
        times.push(t);
        states.push(x_cols.iter().map(|&c| num(c)).collect::<Result<_, _>>()?);
    }
    Ok(Trajectory::from_states(times, states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{BoxSet, PENDULUM_GRAVITY, PENDULUM_LENGTH, PENDULUM_MASS, SPACECRAFT_INERTIA};
    use std::f64::consts::{E, FRAC_PI_3};

    fn exp_system() -> SystemModel {
        SystemModel::linear(
            "exp",
            vec![vec![1.0]],
            vec![vec![0.0]],
            BoxSet::symmetric(10.0, 1),
            BoxSet::symmetric(1.0, 1),
        )
        .unwrap()
    }

    #[test]
    fn constant_input_is_exact() {
        let sys = SystemModel::builtin("mecanum").unwrap();
        let u = |_: &[f64], _: f64| vec![0.1, 0.0];
        let tr = simulate(&sys, &u, &[0.0, 0.0], &SimOptions::new(1.0)).unwrap();
        let xf = tr.final_state().unwrap();
        assert!((xf[0] - 0.1).abs() < 1e-14 && xf[1] == 0.0);
        assert!((tr.times.last().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(tr.inputs.len(), tr.states.len());
    }

    #[test]
    fn exponential_growth_error() {
        let zero = |_: &[f64], _: f64| vec![0.0];
        let tr = simulate(&exp_system(), &zero, &[1.0], &SimOptions::new(1.0)).unwrap();
        assert!((tr.final_state().unwrap()[0] - E).abs() <= 1e-8);
    }

    #[test]
    fn halving_step_shows_fourth_order() {
        let zero = |_: &[f64], _: f64| vec![0.0];
        let err = |dt: f64| {
            let opts = SimOptions {
                dt,
                ..SimOptions::new(1.0)
            };
            (simulate(&exp_system(), &zero, &[1.0], &opts)
                .unwrap()
                .final_state()
                .unwrap()[0]
                - E)
                .abs()
        };
        let order = (err(0.1) / err(0.05)).log2();
        assert!(order >= 3.5, "observed order {order}");
    }

    #[test]
    fn pendulum_gravity_balance_is_stationary() {
        let sys = SystemModel::builtin("pendulum").unwrap();
        let torque = PENDULUM_MASS * PENDULUM_GRAVITY * PENDULUM_LENGTH * FRAC_PI_3.sin();
        let u = move |_: &[f64], _: f64| vec![torque];
        let tr = simulate(&sys, &u, &[FRAC_PI_3, 0.0], &SimOptions::new(1.0)).unwrap();
        for x in &tr.states {
            assert!((x[0] - FRAC_PI_3).abs() <= 1e-6 && x[1].abs() <= 1e-6);
        }
    }

    #[test]
    fn spacecraft_free_rotation_conserves_energy() {
        let sys = SystemModel::builtin("spacecraft").unwrap();
        let zero = |_: &[f64], _: f64| vec![0.0; 3];
        let energy = |x: &[f64]| 0.5 * (0..3).map(|i| SPACECRAFT_INERTIA[i] * x[i] * x[i]).sum::<f64>();
        let x0 = [0.2, -0.15, 0.1];
        let tr = simulate(&sys, &zero, &x0, &SimOptions::new(1.0)).unwrap();
        let e0 = energy(&x0);
        let drift = (energy(tr.final_state().unwrap()) - e0).abs() / e0;
        assert!(drift <= 1e-6, "drift {drift}");
    }

    #[test]
    fn leaving_the_domain_sets_flag() {
        let tr = simulate(
            &SystemModel::builtin("mecanum").unwrap(),
            &|_: &[f64], _: f64| vec![0.2, 0.0],
            &[1.9, 0.0],
            &SimOptions {
                escape_margin: 0.01,
                ..SimOptions::new(15.0)
            },
        )
        .unwrap();
        assert!(tr.left_domain);
        assert!(*tr.times.last().unwrap() < 15.0);
    }

    #[test]
    fn zero_order_hold_differs_from_continuous_feedback() {
        let sys = exp_system();
        let sys = SystemModel::linear("int", vec![vec![0.0]], vec![vec![1.0]], sys.state_box, sys.input_box).unwrap();
        let fb = |x: &[f64], _: f64| vec![-x[0]];
        let cont = simulate(&sys, &fb, &[1.0], &SimOptions::new(1.0)).unwrap();
        let zoh = simulate(
            &sys,
            &fb,
            &[1.0],
            &SimOptions {
                hold: InputHold::ZeroOrder,
                ..SimOptions::new(1.0)
            },
        )
        .unwrap();
        assert!((cont.final_state().unwrap()[0] - (-1f64).exp()).abs() < 1e-9);
        assert!((zoh.final_state().unwrap()[0] - 0.99f64.powi(100)).abs() < 1e-12);
    }

    #[test]
    fn outside_initial_state_rejected() {
        let sys = SystemModel::builtin("mecanum").unwrap();
        let r = simulate(
            &sys,
            &|_: &[f64], _: f64| vec![0.0, 0.0],
            &[3.0, 0.0],
            &SimOptions::new(1.0),
        );
        assert!(matches!(r, Err(SimError::OutsideDomain(_))));
    }

    #[test]
    fn csv_round_trip_and_missing_column() {
        let tr = Trajectory {
            times: vec![0.0, 0.5],
            states: vec![vec![1.0, 2.0], vec![1.5, -0.25]],
            inputs: vec![vec![0.1], vec![0.2]],
            left_domain: false,
        };
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &tr, None, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1,x2,u1,B,Bdot_plus_alphaB,min_active_robustness"));
        let back = read_trajectory_csv(text.as_bytes(), 2).unwrap();
        assert_eq!(back.states, tr.states);
        let err = read_trajectory_csv("t,x1\n0,1\n".as_bytes(), 2).unwrap_err();
        assert!(matches!(err, SimError::MissingColumn(c) if c == "x2"));
    }
}
