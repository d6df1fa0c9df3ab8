//! Acceptance checks. Prints one PASS/FAIL line per criterion and always exits
//! zero; the hard assertions live in the unit and property suites.
//!
//! Set `NTVCBF_ACCEPTANCE_QUICK=1` to skip the two training runs.

mod common;

use std::f64::consts::{E, FRAC_PI_3};
use std::time::Instant;

use common::*;
use ntvcbf::certify::{certify, check_validity, composite_lipschitz};
use ntvcbf::dynamics::{PENDULUM_GRAVITY, PENDULUM_LENGTH, PENDULUM_MASS, SPACECRAFT_INERTIA};
use ntvcbf::safeset::{label_samples, refine_in_place};
use ntvcbf::sim::{monitor_barrier, simulate};
use ntvcbf::stl::{
    assign_intervals, ensure_coverage, parse_spec, robustness_bool, robustness_signal, Anchor, DeltaRule,
    Specification, TemporalBlock,
};
use ntvcbf::training::train;
use ntvcbf::{
    Activation, Architecture, BoundsEstimate, BoxSet, CertNet, Coupling, IntervalPolicy, SampleGrid, SimOptions,
    SystemModel, TrainConfig, Trajectory, Verdict,
};
use rand::Rng;

const PHI1: &str = "G[0,15](norm2(x, [0,0]) <= 1.6 and norm2(x, [1,0]) > 0.3) and G[12,15](norm2(x, [0,0]) <= 0.3)";
const PHI2: &str = "G[0,16](x1 >= 0 and x1 <= pi/2 and |x2| <= 2) and G[7,9](|x1 - pi/3| <= 0.2 and |x2| <= 0.2) \
                    and G[14,16](|x1 - pi/4| <= 0.2 and |x2| <= 0.2)";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report(id: usize, name: &str, started: Instant, o: Outcome) -> bool {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!(
        "[{tag}] {id} {name}: {} ({:.1} s)",
        o.detail,
        started.elapsed().as_secs_f64()
    );
    o.pass
}

fn robustness_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut r = rng(1);
    let mut mismatches = 0;
    for _ in 0..500 {
        let n = r.gen_range(1..4);
        let f = random_formula(&mut r, 5, n);
        assert!(formula_depth(&f) <= 5);
        for _ in 0..20 {
            let x = random_vec(&mut r, n, -3.0, 3.0);
            if robustness_bool(&f, &x).to_bits() != oracle_bool(&f, &x).to_bits() {
                mismatches += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 5.0,
        format!("{mismatches} mismatches in 10000 evaluations, {secs:.2} s"),
    )
}

fn signal_semantics() -> Outcome {
    let mut r = rng(2);
    let dt = 0.25;
    let mut mismatches = 0;
    for _ in 0..100 {
        let traj = piecewise_trajectory(&mut r, 2, 12.5, dt);
        let a = r.gen_range(0..30);
        let w = r.gen_range(1..20);
        let (a, b) = (a as f64 * dt, (a + w) as f64 * dt);
        let body = random_formula(&mut r, 3, 2);
        let blk = if r.gen_bool(0.5) {
            TemporalBlock::always(a, b, body)
        } else {
            TemporalBlock::eventually(a, b, body)
        };
        let spec = Specification::new(vec![blk.clone()], 12.5, 2).unwrap();
        if robustness_signal(&spec, &traj).unwrap().to_bits() != oracle_block(&blk, &traj).to_bits() {
            mismatches += 1;
        }
    }
    let phi1 = parse_spec(PHI1, 2).unwrap();
    let times: Vec<f64> = (0..=1500).map(|k| k as f64 * 0.01).collect();
    let origin = Trajectory::from_states(times.clone(), vec![vec![0.0, 0.0]; times.len()]);
    let hand = robustness_signal(&phi1, &origin).unwrap();
    let hand_ok = (hand - 0.3).abs() <= 1e-12;
    outcome(
        mismatches == 0 && hand_ok,
        format!("{mismatches} mismatches in 100 trajectories, origin case {hand}"),
    )
}

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let (mut jac_max, mut par_max) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let (j, p) = gradient_case(seed);
        jac_max = jac_max.max(j);
        par_max = par_max.max(p);
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        jac_max <= 1e-4 && par_max <= 1e-4 && secs < 30.0,
        format!("max input jacobian error {jac_max:.2e}, max parameter error {par_max:.2e}, {secs:.2} s"),
    )
}

fn certificate_arithmetic() -> Outcome {
    let worked = BoundsEstimate {
        l_b: 2.0,
        l_db: 1.0,
        m_f: 3.0,
        m_b: 2.0,
        l_x: 1.0,
        l_u: 1.0,
        l_g: 1.0,
        alpha: 0.5,
    };
    let l = composite_lipschitz(&worked);
    let eps = 0.05;
    let boundary = check_validity(-l * eps, l, eps);
    let above = check_validity(-l * eps + 1e-12, l, eps);
    let pass = l == 9.0 && boundary == Verdict::Valid && above == Verdict::Invalid;
    outcome(pass, format!("L = {l}, boundary {boundary:?}, just above {above:?}"))
}

fn clamp_and_bounds() -> Outcome {
    let mut r = rng(5);
    let mut outside = 0;
    for k in 0..20 {
        let sys = SystemModel::builtin(["mecanum", "pendulum", "spacecraft"][k % 3]).unwrap();
        let mut arch = random_arch(&mut r, sys.n, k % 2 == 0);
        arch.hidden = vec![16, 16];
        let g = CertNet::controller(sys.n, &arch, &sys.input_box, r.gen()).unwrap();
        for _ in 0..5000 {
            let mut p = random_vec(&mut r, sys.n, -50.0, 50.0);
            p.push(r.gen_range(-10.0..100.0));
            if !sys.input_box.contains(&g.forward(&p).unwrap()) {
                outside += 1;
            }
        }
    }
    let mut exceed = 0;
    let mut tightest = f64::INFINITY;
    for seed in 0..20 {
        let (bound, slope) = spectral_case(1000 + seed);
        if slope > bound {
            exceed += 1;
        }
        tightest = tightest.min(bound / slope.max(1e-300));
    }
    outcome(
        outside == 0 && exceed == 0,
        format!("{outside} of 100000 outputs outside U, {exceed} of 20 nets with a slope above the bound, min bound/slope {tightest:.2}"),
    )
}

fn dynamics_checks() -> Outcome {
    let pend = SystemModel::builtin("pendulum").unwrap();
    let torque = PENDULUM_MASS * PENDULUM_GRAVITY * PENDULUM_LENGTH * FRAC_PI_3.sin();
    let u = move |_: &[f64], _: f64| vec![torque];
    let tr = simulate(&pend, &u, &[FRAC_PI_3, 0.0], &SimOptions::new(1.0)).unwrap();
    let station = tr
        .states
        .iter()
        .map(|x| (x[0] - FRAC_PI_3).abs().max(x[1].abs()))
        .fold(0.0, f64::max);

    let sc = SystemModel::builtin("spacecraft").unwrap();
    let zero3 = |_: &[f64], _: f64| vec![0.0; 3];
    let energy = |x: &[f64]| 0.5 * (0..3).map(|i| SPACECRAFT_INERTIA[i] * x[i] * x[i]).sum::<f64>();
    let x0 = [0.2, -0.15, 0.1];
    let tr = simulate(&sc, &zero3, &x0, &SimOptions::new(1.0)).unwrap();
    let drift = (energy(tr.final_state().unwrap()) - energy(&x0)).abs() / energy(&x0);

    let exp = SystemModel::linear(
        "exp",
        vec![vec![1.0]],
        vec![vec![0.0]],
        BoxSet::symmetric(10.0, 1),
        BoxSet::symmetric(1.0, 1),
    )
    .unwrap();
    let zero1 = |_: &[f64], _: f64| vec![0.0];
    let tr = simulate(&exp, &zero1, &[1.0], &SimOptions::new(1.0)).unwrap();
    let rk4 = (tr.final_state().unwrap()[0] - E).abs();

    outcome(
        station <= 1e-6 && drift <= 1e-6 && rk4 <= 1e-8,
        format!("equilibrium deviation {station:.2e}, energy drift {drift:.2e}, RK4 error {rk4:.2e}"),
    )
}

fn refinement_invariants() -> Outcome {
    let sys = SystemModel::builtin("mecanum").unwrap();
    let spec = parse_spec(PHI1, 2).unwrap();
    let sched = assign_intervals(&spec, &IntervalPolicy::default()).unwrap();
    let grid = SampleGrid::build(&sys.state_box, 15.0, 0.6).unwrap();
    let mut r = rng(9);
    let (mut bad, mut removed) = (0usize, 0usize);
    for k in 0..50 {
        let m_b = r.gen_range(0.1..5.0);
        let barrier = CertNet::barrier(2, &random_arch(&mut r, 2, k % 2 == 0), r.gen()).unwrap();
        let mut ds = label_samples(&grid, &spec, &sched);
        let before = ds.clone();
        let rep = refine_in_place(&mut ds, &barrier, m_b);
        if rep.removed() != before.in_safe_count() - ds.in_safe_count() {
            bad += 1;
        }
        for i in 0..ds.len() {
            if !before.is_in_safe(i) && ds.is_in_safe(i) {
                bad += 1;
            } else if before.is_in_safe(i) && !ds.is_in_safe(i) {
                removed += 1;
                let p = ds.point(i).to_vec();
                let b = barrier.value(&p).unwrap();
                let g = barrier.input_jacobian(&p).unwrap().gradient(0);
                let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(b < 0.0 || gn >= m_b) {
                    bad += 1;
                }
            }
        }
    }
    outcome(bad == 0, format!("{bad} violations over {removed} removals"))
}

fn tanh_arch(hidden: Vec<usize>, coupling: Coupling) -> Architecture {
    Architecture {
        hidden,
        activation: Activation::Tanh,
        coupling,
    }
}

struct DeskRun {
    best_total: f64,
    epochs: usize,
    train_secs: f64,
    eta_hat: f64,
    verdict: Verdict,
    margin: f64,
    barrier: CertNet,
    controller: CertNet,
    sys: SystemModel,
    raw: Specification,
}

fn desk_run(
    sys_name: &str,
    spec: &str,
    grid: impl Fn(&SystemModel, f64) -> SampleGrid,
    arch: Architecture,
    cfg: TrainConfig,
) -> DeskRun {
    let sys = SystemModel::builtin(sys_name).unwrap();
    let raw = parse_spec(spec, sys.n).unwrap();
    let policy = IntervalPolicy {
        anchor: Anchor::Midpoint,
        delta: DeltaRule::FractionOfWidth(0.2),
    };
    let guarded = ensure_coverage(&raw, &sys.state_box, &policy).unwrap();
    let sched = assign_intervals(&guarded, &policy).unwrap();
    let grid = grid(&sys, raw.horizon);
    let t0 = Instant::now();
    let out = train(&guarded, &sched, &sys, &grid, &arch, &arch, &cfg, &mut |_| {}).unwrap();
    let train_secs = t0.elapsed().as_secs_f64();
    let cert = certify(&out.barrier, &out.controller, &sys, &out.dataset, cfg.lambda, cfg.alpha).unwrap();
    let best_total = out.best_epoch.map_or(f64::INFINITY, |e| out.history[e - 1].total);
    DeskRun {
        best_total,
        epochs: out.history.len(),
        train_secs,
        eta_hat: cert.eta_hat,
        verdict: cert.verdict,
        margin: cert.margin(),
        barrier: out.barrier,
        controller: out.controller,
        sys,
        raw,
    }
}

fn desk_config(epochs: usize, alpha: f64, budget_secs: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        alpha,
        lr: 3e-3,
        lr_decay: 0.1f64.powf(1.0 / epochs as f64),
        refine_every: 500,
        lambda: 0.01,
        eta: Some(-1e-3),
        seed: 7,
        time_limit_secs: Some(budget_secs),
        ..TrainConfig::default()
    }
}

fn mecanum_end_to_end() -> Outcome {
    let t0 = Instant::now();
    let alpha = 2.5;
    let run = desk_run(
        "mecanum",
        PHI1,
        |sys, h| SampleGrid::build(&sys.state_box, h, 0.1).unwrap(),
        tanh_arch(vec![32, 32], Coupling::Product),
        desk_config(5000, alpha, 900.0),
    );
    let mut pass = run.best_total <= 1e-3 && run.eta_hat <= 0.0;
    let mut sims = Vec::new();
    for x0 in [[-1.0, -1.0], [1.4, -0.3]] {
        let tr = simulate(&run.sys, &run.controller, &x0, &SimOptions::new(run.raw.horizon)).unwrap();
        let rho = if tr.left_domain {
            f64::NEG_INFINITY
        } else {
            run.raw.robustness(&tr).unwrap()
        };
        let u_max = tr.inputs.iter().flatten().map(|u| u.abs()).fold(0.0, f64::max);
        let series = monitor_barrier(&tr, &run.barrier, &run.sys, &run.controller, alpha).unwrap();
        pass &= rho >= 0.0 && u_max <= 0.2 && series.min_b() >= -1e-2 && series.min_decay() >= -1e-2;
        sims.push(format!(
            "x0 {x0:?}: rho {rho:.4}, max |u| {u_max:.3}, min B {:.3e}, min Bdot+aB {:.3e}",
            series.min_b(),
            series.min_decay()
        ));
    }
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs <= 900.0;
    outcome(
        pass,
        format!(
            "{} epochs in {:.0} s, best total loss {:.3e}, eta_hat {:.3e}, verdict {:?} (margin {:.3e}); {}",
            run.epochs,
            run.train_secs,
            run.best_total,
            run.eta_hat,
            run.verdict,
            run.margin,
            sims.join("; ")
        ),
    )
}

fn pendulum_smoke() -> Outcome {
    let t0 = Instant::now();
    let run = desk_run(
        "pendulum",
        PHI2,
        |sys, h| SampleGrid::build_with_time_spacing(&sys.state_box, h, 0.05, 0.5).unwrap(),
        tanh_arch(vec![32, 32], Coupling::Exponential { coeffs: vec![0.1, 0.1] }),
        desk_config(3000, 5.0, 1200.0),
    );
    // The trained closed loop is stiff; dt = 1e-2 shows RK4 artifacts here.
    let opts = SimOptions {
        dt: 1e-3,
        ..SimOptions::new(run.raw.horizon)
    };
    let tr = simulate(&run.sys, &run.controller, &[1.1, 0.01], &opts).unwrap();
    let dev = tr
        .times
        .iter()
        .zip(&tr.states)
        .filter(|(t, _)| (7.0..=9.0).contains(*t))
        .map(|(_, x)| (x[0] - FRAC_PI_3).abs())
        .fold(if tr.left_domain { f64::INFINITY } else { 0.0 }, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        run.best_total <= 1e-2 && dev <= 0.2 && secs <= 1200.0,
        format!(
            "{} epochs in {:.0} s, best total loss {:.3e}, eta_hat {:.3e}, verdict {:?}; max |x1 - pi/3| on [7, 9] {dev:.4}",
            run.epochs, run.train_secs, run.best_total, run.eta_hat, run.verdict
        ),
    )
}

/// Name, check and whether it is a long training run.
type Criterion = (&'static str, fn() -> Outcome, bool);

fn main() {
    let quick = std::env::var("NTVCBF_ACCEPTANCE_QUICK").is_ok_and(|v| v == "1");
    let criteria: [Criterion; 9] = [
        ("robustness oracle equivalence", robustness_oracle, false),
        ("signal semantics", signal_semantics, false),
        ("gradient suite", gradient_suite, false),
        ("certificate arithmetic", certificate_arithmetic, false),
        ("clamp and bound soundness", clamp_and_bounds, false),
        ("desk-scale mecanum end-to-end", mecanum_end_to_end, true),
        ("desk-scale pendulum smoke run", pendulum_smoke, true),
        ("dynamics and integrator checks", dynamics_checks, false),
        ("refinement invariants", refinement_invariants, false),
    ];
    let mut failed = 0;
    for (i, (name, run, long)) in criteria.into_iter().enumerate() {
        if long && quick {
            println!("[SKIP] {} {name}: NTVCBF_ACCEPTANCE_QUICK=1", i + 1);
            continue;
        }
        if !report(i + 1, name, Instant::now(), run()) {
            failed += 1;
        }
    }
    println!("acceptance: {failed} criteria failed");
}
