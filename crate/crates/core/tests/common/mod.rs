//! Independent oracles and scenario builders shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aie_core::pipeline::io::{truth_rows, SensorLog, TruthRow};
use aie_core::pipeline::{run_estimate, RunConfig, RunReport};
use aie_core::sim::{simulate, InputProfile, SimRun};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

/// Textbook Kalman filter written out element by element on fixed arrays.
pub struct TextbookKalman {
    pub a: Mat3,
    pub b: Vec3,
    pub c: Vec3,
    pub q: Mat3,
    pub r: f64,
    pub x: Vec3,
    pub p: Mat3,
}

impl TextbookKalman {
    pub fn predict(&mut self, u: f64) {
        let mut x = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                x[i] += self.a[i][j] * self.x[j];
            }
            x[i] += self.b[i] * u;
        }
        let mut ap = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    ap[i][j] += self.a[i][k] * self.p[k][j];
                }
            }
        }
        let mut p = self.q;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    p[i][j] += ap[i][k] * self.a[j][k];
                }
            }
        }
        self.x = x;
        self.p = p;
    }

    /// Returns the innovation `y - C x_prior`.
    pub fn update(&mut self, y: f64) -> f64 {
        let mut pc = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                pc[i] += self.p[i][j] * self.c[j];
            }
        }
        let s = self.c[0] * pc[0] + self.c[1] * pc[1] + self.c[2] * pc[2] + self.r;
        let k = [pc[0] / s, pc[1] / s, pc[2] / s];
        let innov = y - (self.c[0] * self.x[0] + self.c[1] * self.x[1] + self.c[2] * self.x[2]);
        for i in 0..3 {
            self.x[i] += k[i] * innov;
        }
        // P = P - K S K^T, the short form of the covariance update.
        for i in 0..3 {
            for j in 0..3 {
                self.p[i][j] -= k[i] * s * k[j];
            }
        }
        innov
    }
}

/// Seeded draws for the random oracle instances.
pub struct Draw(ChaCha8Rng);

impl Draw {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.random_range(lo..hi)
    }

    pub fn pick(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        self.0.random_range(lo..=hi_inclusive)
    }

    pub fn sign(&mut self) -> f64 {
        if self.0.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn mat3(&mut self, scale: f64) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for row in &mut m {
            for v in row.iter_mut() {
                *v = self.uniform(-scale, scale);
            }
        }
        m
    }

    pub fn vec3(&mut self, scale: f64) -> Vec3 {
        [
            self.uniform(-scale, scale),
            self.uniform(-scale, scale),
            self.uniform(-scale, scale),
        ]
    }

    /// `L L^T + eps I` with a random `L`.
    pub fn spd3(&mut self, scale: f64, eps: f64) -> Mat3 {
        let l = self.mat3(scale);
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    m[i][j] += l[i][k] * l[j][k];
                }
            }
            m[i][i] += eps;
        }
        m
    }
}

/// Surge/yaw scenario used by the estimation checks: hidden constant inputs
/// 0.6 (surge) and 0.5 (yaw), 1000 steps.
pub const HIDDEN_SURGE_INPUT: f64 = 0.6;
pub const HIDDEN_YAW_INPUT: f64 = 0.5;
pub const SCENARIO_STEPS: usize = 1000;

pub fn scenario_config(noisy: bool) -> RunConfig {
    let mut c = RunConfig::default();
    c.simulator.surge = InputProfile::constant(HIDDEN_SURGE_INPUT);
    c.simulator.yaw = InputProfile::constant(HIDDEN_YAW_INPUT);
    c.simulator.horizon = SCENARIO_STEPS as f64 * c.sample_period;
    if !noisy {
        c.simulator.gps_sigma = 0.0;
        c.simulator.compass_sigma = 0.0;
    }
    c
}

pub fn sensor_log(run: &SimRun) -> SensorLog {
    SensorLog {
        path: Path::new("simulated").to_path_buf(),
        lines: (2..run.records.len() as u64 + 2).collect(),
        records: run.records.clone(),
    }
}

/// Simulates `config` with `seed` and estimates against the simulator truth.
pub fn simulate_and_estimate(config: &RunConfig, seed: u64) -> (SimRun, Vec<TruthRow>, RunReport) {
    let run = simulate(&config.scenario(), seed).expect("simulation");
    let truth = truth_rows(&run);
    let report = run_estimate(config, &sensor_log(&run), Some(&truth)).expect("estimation");
    (run, truth, report)
}
