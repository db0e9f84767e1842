//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, RowDVector};

use aie_core::batch::{self, Execution};
use aie_core::linsys::{
    dc_gain, dc_gain_near_unity, kalman_predict, kalman_update, KalmanState, NoiseSpec,
    StateSpaceModel,
};
use aie_core::pipeline::report::reconstruct_log;
use aie_core::rcie::{AieChannel, AieOptions, Hyperparameters};
use aie_core::sim::{simulate, InputProfile, Scenario, SensorNoise};
use aie_core::sysid::{
    fit_step_response, max_relative_error, monte_carlo, MonteCarloSpec, StepResponseSeries,
};
use aie_core::vehicle::{
    chord_from_enu, heading_model, reconstruct_trajectory, surge_model, surge_params, yaw_params,
    ReconstructionMode, TrajectoryPoint, DEFAULT_SAMPLE_PERIOD,
};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scalar_model(a: f64, b: f64, c: f64) -> StateSpaceModel {
    StateSpaceModel::new(
        DMatrix::from_element(1, 1, a),
        DVector::from_element(1, b),
        RowDVector::from_element(1, c),
        1.0,
    )
    .expect("scalar model")
}

/// Recursive theta against the closed-form minimizer of the accumulated
/// retrospective cost, step by step.
fn rls_vs_batch() -> Outcome {
    const BUDGET: Duration = Duration::from_secs(10);
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        let mut d = Draw::new(1000 + seed);
        let a = d.uniform(-0.95, 0.95);
        let b = d.sign() * d.uniform(0.3, 2.0);
        let c = d.sign() * d.uniform(0.3, 2.0);
        let u_true = d.uniform(-1.0, 1.0);
        let n_e = d.pick(1, 3);
        let hp = Hyperparameters {
            n_e,
            n_f: d.pick(1, 4),
            r_z: d.uniform(0.5, 2.0),
            r_d: d.uniform(1e-3, 10.0),
            r_theta_scale: d.uniform(1e-2, 1.0),
            theta0: Some((0..2 * n_e + 1).map(|_| d.uniform(-0.1, 0.1)).collect()),
        };
        let model = scalar_model(a, b, c);
        let noise = NoiseSpec::isotropic(1, 1e-4, 1e-2).unwrap();
        let mut ch = AieChannel::new(
            "scalar",
            model,
            noise,
            hp.clone(),
            AieOptions::default(),
            KalmanState::with_isotropic_prior(1, 1.0),
        )
        .unwrap();
        let l = hp.theta_len();
        let mut normal = DMatrix::<f64>::identity(l, l) * hp.r_theta_scale;
        let mut rhs = DVector::from_vec(hp.theta0.clone().unwrap()) * hp.r_theta_scale;
        let mut x = 0.0;
        for k in 0..100 {
            let y = c * x + d.uniform(-0.1, 0.1);
            x = a * x + b * u_true;
            let step = match ch.step(Some(y)) {
                Ok(s) => s,
                Err(e) => {
                    failures.push(format!("seed {seed} step {k}: {e}"));
                    break;
                }
            };
            let (pf, p) = (&step.phi_filtered, &step.phi);
            normal += pf.transpose() * pf * hp.r_z + p.transpose() * p * hp.r_d;
            rhs -= pf.transpose() * ((step.innovation - step.u_filtered) * hp.r_z);
            let batch = normal.clone().cholesky().expect("SPD normal matrix").solve(&rhs);
            worst = worst.max((&batch - ch.rcie.theta()).amax());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && worst < 1e-8 && elapsed < BUDGET,
        format!(
            "max |theta_rls - theta_batch| = {worst:.3e} (< 1e-8) over 20 x 100 steps in {:.2} s (< 10 s){}",
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn to_model(k: &TextbookKalman) -> StateSpaceModel {
    StateSpaceModel::new(
        DMatrix::from_fn(3, 3, |i, j| k.a[i][j]),
        DVector::from_row_slice(&k.b),
        RowDVector::from_row_slice(&k.c),
        1.0,
    )
    .unwrap()
}

/// Predict/update against the element-wise textbook filter.
fn kalman_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for inst in 0..50u64 {
        let mut d = Draw::new(5000 + inst);
        let mut oracle = TextbookKalman {
            a: d.mat3(0.7),
            b: d.vec3(1.0),
            c: d.vec3(1.0),
            q: d.spd3(0.3, 1e-3),
            r: d.uniform(1e-3, 1.0),
            x: d.vec3(1.0),
            p: d.spd3(1.0, 1e-2),
        };
        let model = to_model(&oracle);
        let noise = NoiseSpec::new(DMatrix::from_fn(3, 3, |i, j| oracle.q[i][j]), oracle.r).unwrap();
        let mut st = KalmanState::new(
            DVector::from_row_slice(&oracle.x),
            DMatrix::from_fn(3, 3, |i, j| oracle.p[i][j]),
        )
        .unwrap();
        for _ in 0..10 {
            let u = d.uniform(-1.0, 1.0);
            let y = d.uniform(-2.0, 2.0);
            oracle.predict(u);
            st = kalman_predict(&st, &model, &noise, u);
            let mut dev = 0.0f64;
            for i in 0..3 {
                dev = dev.max((st.x_hat[i] - oracle.x[i]).abs());
                for j in 0..3 {
                    dev = dev.max((st.p[(i, j)] - oracle.p[i][j]).abs());
                }
            }
            let innov = oracle.update(y);
            st = kalman_update(&st, &model, &noise, y).unwrap();
            dev = dev.max((st.innovation - innov).abs());
            for i in 0..3 {
                dev = dev.max((st.x_hat[i] - oracle.x[i]).abs());
                for j in 0..3 {
                    dev = dev.max((st.p[(i, j)] - oracle.p[i][j]).abs());
                }
            }
            worst = worst.max(dev);
        }
    }
    outcome(
        worst < 1e-12,
        format!("max deviation from textbook filter = {worst:.3e} (< 1e-12) over 50 instances x 10 steps"),
    )
}

fn max_theta_step_after(report: &aie_core::pipeline::RunReport, k0: usize) -> (f64, f64) {
    report
        .rows
        .iter()
        .filter(|r| r.k >= k0)
        .fold((0.0f64, 0.0f64), |(s, h), r| {
            (s.max(r.surge.theta_step), h.max(r.heading.theta_step))
        })
}

fn theta_convergence() -> Outcome {
    let (_, _, clean) = simulate_and_estimate(&scenario_config(false), 0);
    let (surge, heading) = max_theta_step_after(&clean, 150);
    let (_, _, noisy) = simulate_and_estimate(&scenario_config(true), 0);
    let (ns, nh) = max_theta_step_after(&noisy, 150);
    outcome(
        surge < 1e-3 && heading < 1e-3,
        format!(
            "noiseless: max ||dtheta|| for k >= 150 surge {surge:.3e}, heading {heading:.3e} (< 1e-3); \
             with default sensor noise (informational) surge {ns:.3e}, heading {nh:.3e}"
        ),
    )
}

fn aie_beats_baseline() -> Outcome {
    const BUDGET: Duration = Duration::from_secs(30);
    let start = Instant::now();
    let config = scenario_config(true);
    let seeds: Vec<u64> = (0..10).collect();
    let ratios = batch::map(&seeds, Execution::Parallel, |&s| {
        let (_, _, r) = simulate_and_estimate(&config, s);
        (
            r.summary.surge.rmse_aie / r.summary.surge.rmse_kf,
            r.summary.heading.rmse_aie / r.summary.heading.rmse_kf,
        )
    });
    let elapsed = start.elapsed();
    let worst_s = ratios.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst_h = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    outcome(
        worst_s <= 0.7 && worst_h <= 0.7 && elapsed < BUDGET,
        format!(
            "worst AIE/baseline RMSE ratio over 10 seeds: surge {worst_s:.3}, heading {worst_h:.3} (<= 0.7); {:.2} s (< 30 s)",
            elapsed.as_secs_f64()
        ),
    )
}

/// Noiseless scalar plants with a constant input and a lightly regularized
/// estimator.
fn input_recovery() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for inst in 0..50u64 {
        let mut d = Draw::new(9000 + inst);
        let a = d.uniform(0.3, 0.95);
        let b = d.sign() * d.uniform(0.5, 2.0);
        let c = d.sign() * d.uniform(0.5, 2.0);
        let u_true = d.sign() * d.uniform(0.1, 2.0);
        let hp = Hyperparameters {
            n_e: 1,
            n_f: 1,
            r_z: 1.0,
            r_d: 1e-3,
            r_theta_scale: 1.0,
            theta0: None,
        };
        let mut ch = AieChannel::new(
            "scalar",
            scalar_model(a, b, c),
            NoiseSpec::isotropic(1, 0.0, 1e-6).unwrap(),
            hp,
            AieOptions::default(),
            KalmanState::with_isotropic_prior(1, 1.0),
        )
        .unwrap();
        let mut x = 0.0;
        let mut inst_worst = 0.0f64;
        for k in 0..600 {
            let y = c * x;
            x = a * x + b * u_true;
            match ch.step(Some(y)) {
                Ok(s) if k >= 300 => {
                    inst_worst = inst_worst.max((s.u_hat - u_true).abs() / u_true.abs())
                }
                Ok(_) => {}
                Err(e) => {
                    failures.push(format!("instance {inst}: {e}"));
                    break;
                }
            }
        }
        worst = worst.max(inst_worst);
    }
    outcome(
        failures.is_empty() && worst < 0.1,
        format!(
            "max |u_hat - u*| / |u*| for k >= 300 = {worst:.3e} (< 0.1) over 50 noiseless scalar plants{}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn dc_gain_consistency() -> Outcome {
    let t = DEFAULT_SAMPLE_PERIOD;
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, model, published) in [
        ("surge", surge_model(t).unwrap(), 4.68),
        ("heading", heading_model(t).unwrap(), 0.125),
    ] {
        let settled = dc_gain(&model).unwrap();
        let near = dc_gain_near_unity(&model).unwrap();
        let rel = ((settled - near) / near).abs();
        pass &= rel < 1e-6;
        parts.push(format!(
            "{name}: settling {settled:.6}, z = 1 + 1e-8 {near:.6}, rel diff {rel:.2e} (< 1e-6); published {published} (informational, {:+.1}%)",
            100.0 * (settled - published) / published
        ));
    }
    outcome(pass, parts.join("; "))
}

fn sysid_round_trip() -> Outcome {
    let grid = |horizon: f64, n: usize| -> Vec<f64> {
        (0..n).map(|i| horizon * i as f64 / (n - 1) as f64).collect()
    };
    let sp = surge_params();
    let yp = yaw_params();
    let s = StepResponseSeries::synthetic(&sp, 1.0, grid(6.0 * sp.time_constant(), 100)).unwrap();
    let fs = fit_step_response(&s, Some(sp.inertia)).unwrap();
    let y = StepResponseSeries::synthetic(&yp, 1.0, grid(6.0 * yp.time_constant(), 100)).unwrap();
    let fy = fit_step_response(&y, None).unwrap();
    let clean_err = [
        (fs.params.drag - sp.drag).abs(),
        (fy.params.inertia - yp.inertia).abs(),
        (fy.params.drag - yp.drag).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let mut counts = Vec::new();
    for (truth, fixed) in [(sp, Some(sp.inertia)), (yp, None)] {
        let spec = MonteCarloSpec {
            truth,
            input_level: 1.0,
            samples: 200,
            time_constants: 5.0,
            noise_fraction: 0.05,
            fixed_inertia: fixed,
        };
        let fits = monte_carlo(&spec, 100, 2024, Execution::Parallel).unwrap();
        counts.push(
            fits.iter()
                .filter(|f| f.converged && max_relative_error(&f.params, &truth) <= 0.05)
                .count(),
        );
    }
    outcome(
        fs.converged && fy.converged && clean_err < 1e-6 && counts.iter().all(|&c| c >= 95),
        format!(
            "noiseless fits: surge d = {:.9}, yaw I = {:.9}, c = {:.9}, max error {clean_err:.2e} (< 1e-6); \
             5% noise within 5%: surge {}/100, yaw {}/100 (>= 95)",
            fs.params.drag, fy.params.inertia, fy.params.drag, counts[0], counts[1]
        ),
    )
}

fn geometry_suite() -> Outcome {
    // Chord vs arc on random circular arcs.
    let mut d = Draw::new(77);
    let mut arc_ok = true;
    let mut worst_ratio = 0.0f64;
    for _ in 0..1000 {
        let radius = d.uniform(1.0, 500.0);
        let psi0 = d.uniform(-std::f64::consts::PI, std::f64::consts::PI);
        let dth = d.uniform(-0.2, 0.2);
        // Turning by dth along a circle of the given radius.
        let s = radius * dth.abs();
        let chord = 2.0 * radius * (dth.abs() / 2.0).sin();
        let mid = psi0 + dth / 2.0;
        let m = chord_from_enu(chord * mid.cos(), chord * mid.sin(), psi0, psi0 + dth);
        let rel = (s - m.delta_s) / s;
        let bound = dth * dth / 24.0;
        arc_ok &= rel <= bound + 4.0 * f64::EPSILON && rel >= -4.0 * f64::EPSILON;
        if bound > 0.0 {
            worst_ratio = worst_ratio.max(rel / bound);
        }
    }

    // Cumulative-mode closure on a simulated circle of exactly 200 steps.
    let t = DEFAULT_SAMPLE_PERIOD;
    let omega = std::f64::consts::TAU / (200.0 * t);
    let yaw_input = omega * yaw_params().drag / yaw_params().input_scale;
    let mut sc = Scenario::new(
        InputProfile::constant(0.6),
        InputProfile::constant(yaw_input),
        200.0 * t,
    )
    .in_steady_state(0.6, yaw_input);
    sc.noise = SensorNoise::none();
    sc.origin_lat = 47.0;
    sc.origin_lon = 8.0;
    sc.initial_heading = 30.0;
    let run = simulate(&sc, 0).unwrap();
    let log = sensor_log(&run);
    let path = reconstruct_log(&log, ReconstructionMode::Cumulative).unwrap();
    let length: f64 = path
        .windows(2)
        .map(|w| (w[1].1.x_north - w[0].1.x_north).hypot(w[1].1.y_east - w[0].1.y_east))
        .sum();
    let end = path.last().unwrap().1;
    let closure = end.x_north.hypot(end.y_east) / length;

    // Literal mode on a straight line: X += dS sin(dth/2), Y += dS cos(dth/2).
    let mut sc = Scenario::new(InputProfile::constant(0.6), InputProfile::zero(), 50.0 * t);
    sc.noise = SensorNoise::none();
    let run = simulate(&sc, 0).unwrap();
    let incs: Vec<(f64, f64)> = run
        .records
        .windows(2)
        .map(|w| {
            let m = aie_core::vehicle::chord_measurement(&w[0], &w[1], &run.origin).unwrap();
            (m.delta_s, m.delta_theta)
        })
        .collect();
    let start = TrajectoryPoint {
        x_north: 0.0,
        y_east: 0.0,
        step: 0,
    };
    let literal = reconstruct_trajectory(&incs, start, 0.0, ReconstructionMode::Literal);
    let (mut x, mut y) = (0.0f64, 0.0f64);
    let mut literal_exact = literal.len() == incs.len() + 1;
    for (i, &(ds, dth)) in incs.iter().enumerate() {
        x += ds * (dth / 2.0).sin();
        y += ds * (dth / 2.0).cos();
        literal_exact &= literal[i + 1].x_north == x && literal[i + 1].y_east == y;
    }
    let straight = incs.iter().all(|&(_, dth)| dth == 0.0);

    outcome(
        arc_ok && closure < 0.01 && literal_exact && straight,
        format!(
            "chord/arc error within dth^2/24 on 1000 arcs: {arc_ok} (worst error/bound {worst_ratio:.4}); \
             circle closure {:.3e} of path length {length:.1} m (< 1%); literal straight line exact: {}",
            closure,
            literal_exact && straight
        ),
    )
}

fn pipeline_determinism() -> Outcome {
    const BUDGET: Duration = Duration::from_secs(60);
    let bin = env!("CARGO_BIN_EXE_aie");
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!(
            "seed = 17\n[simulator]\nhorizon = {}\n",
            1999.0 * DEFAULT_SAMPLE_PERIOD
        ),
    )
    .unwrap();
    let run = |args: &[&str]| {
        Command::new(bin)
            .arg("--config")
            .arg(&config)
            .args(args)
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    };
    let mut ok = true;
    let mut elapsed = Duration::ZERO;
    for tag in ["a", "b"] {
        let out = dir.path().join(tag);
        let out_s = out.to_str().unwrap();
        let sensor = format!("{out_s}/sensor.csv");
        let truth = format!("{out_s}/truth.csv");
        let start = Instant::now();
        ok &= run(&["simulate", "--output-dir", out_s]);
        ok &= run(&[
            "estimate", "--input", &sensor, "--truth", &truth, "--output-dir", out_s,
        ]);
        elapsed = elapsed.max(start.elapsed());
    }
    let same = |name: &str| {
        let a = fs::read(dir.path().join("a").join(name));
        let b = fs::read(dir.path().join("b").join(name));
        matches!((a, b), (Ok(a), Ok(b)) if a == b)
    };
    let identical = ["sensor.csv", "truth.csv", "report.csv", "trajectory.csv", "summary.toml"]
        .iter()
        .all(|f| same(f));
    let rows = fs::read_to_string(dir.path().join("a/report.csv"))
        .map(|t| t.lines().count() - 1)
        .unwrap_or(0);
    outcome(
        ok && identical && elapsed < BUDGET && rows <= 2000 && rows > 0,
        format!(
            "two simulate+estimate invocations byte-identical: {identical}; {rows} steps; \
             slowest round trip {:.2} s (< 60 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("RLS matches batch minimizer", rls_vs_batch),
        ("Kalman oracle", kalman_oracle),
        ("theta convergence", theta_convergence),
        ("AIE beats mis-informed baseline", aie_beats_baseline),
        ("input recovery", input_recovery),
        ("DC-gain consistency", dc_gain_consistency),
        ("system identification round trip", sysid_round_trip),
        ("geometry suite", geometry_suite),
        ("pipeline determinism", pipeline_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let r = check();
        println!(
            "{} criterion {}: {name} — {}",
            if r.pass { "PASS" } else { "FAIL" },
            i + 1,
            r.detail
        );
        failed += usize::from(!r.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
