//! Synthetic ground truth: integrates the surge/yaw dynamics under hidden
//! input profiles and samples noisy GPS/compass records.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::SecondOrderParams;
use crate::vehicle::{
    from_local_enu, surge_params, wrap_heading_deg, yaw_params, Enu, SensorRecord,
    DEFAULT_SAMPLE_PERIOD,
};

pub const DEFAULT_SUBSTEPS: usize = 20;
pub const DEFAULT_GPS_SIGMA: f64 = 1.5;
pub const DEFAULT_COMPASS_SIGMA: f64 = 2.0;

/// Hidden actuator input as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InputProfile {
    /// `amplitude` from `onset` on, zero before.
    Step {
        amplitude: f64,
        #[serde(default)]
        onset: f64,
    },
    /// `slope * (t - onset)` from `onset`, clamped to `±limit`.
    Ramp {
        slope: f64,
        #[serde(default)]
        onset: f64,
        limit: f64,
    },
    /// `offset + amplitude * sin(2π t / period + phase)`.
    Sinusoid {
        amplitude: f64,
        period: f64,
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `levels[i]` on `[times[i], times[i+1])`; zero before `times[0]`.
    PiecewiseConstant { times: Vec<f64>, levels: Vec<f64> },
}

impl InputProfile {
    pub fn zero() -> Self {
        InputProfile::Step {
            amplitude: 0.0,
            onset: 0.0,
        }
    }

    pub fn constant(value: f64) -> Self {
        InputProfile::Step {
            amplitude: value,
            onset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("input profile: {m}")));
        match self {
            InputProfile::Step { amplitude, onset } => {
                if !amplitude.is_finite() || !onset.is_finite() {
                    return bad("step parameters must be finite");
                }
            }
            InputProfile::Ramp {
                slope,
                onset,
                limit,
            } => {
                if !slope.is_finite() || !onset.is_finite() || !(limit.is_finite() && *limit >= 0.0) {
                    return bad("ramp needs finite slope/onset and a finite limit >= 0");
                }
            }
            InputProfile::Sinusoid {
                amplitude,
                period,
                offset,
                phase,
            } => {
                if ![amplitude, offset, phase].iter().all(|v| v.is_finite()) {
                    return bad("sinusoid parameters must be finite");
                }
                if !(period.is_finite() && *period > 0.0) {
                    return bad("sinusoid period must be > 0");
                }
            }
            InputProfile::PiecewiseConstant { times, levels } => {
                if times.is_empty() || times.len() != levels.len() {
                    return bad("piecewise-constant needs equally many (>= 1) times and levels");
                }
                if !times.windows(2).all(|w| w[0] < w[1]) {
                    return bad("piecewise-constant switch times must increase");
                }
                if !times.iter().chain(levels).all(|v| v.is_finite()) {
                    return bad("piecewise-constant values must be finite");
                }
            }
        }
        Ok(())
    }

    /// Times where the profile jumps or has a kink.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            InputProfile::Step { onset, .. } => vec![*onset],
            InputProfile::Ramp {
                slope,
                onset,
                limit,
            } => {
                let mut b = vec![*onset];
                if *slope != 0.0 {
                    b.push(onset + limit / slope.abs());
                }
                b
            }
            InputProfile::Sinusoid { .. } => Vec::new(),
            InputProfile::PiecewiseConstant { times, .. } => times.clone(),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            InputProfile::Step { amplitude, onset } => {
                if t >= *onset {
                    *amplitude
                } else {
                    0.0
                }
            }
            InputProfile::Ramp {
                slope,
                onset,
                limit,
            } => {
                if t < *onset {
                    0.0
                } else {
                    (slope * (t - onset)).clamp(-limit, *limit)
                }
            }
            InputProfile::Sinusoid {
                amplitude,
                period,
                offset,
                phase,
            } => offset + amplitude * (std::f64::consts::TAU * t / period + phase).sin(),
            InputProfile::PiecewiseConstant { times, levels } => {
                match times.iter().rposition(|&s| s <= t) {
                    Some(i) => levels[i],
                    None => 0.0,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorNoise {
    /// Horizontal GPS noise per axis (m).
    #[serde(default = "default_gps_sigma")]
    pub gps_sigma: f64,
    /// Compass noise (deg).
    #[serde(default = "default_compass_sigma")]
    pub compass_sigma: f64,
}

fn default_gps_sigma() -> f64 {
    DEFAULT_GPS_SIGMA
}

fn default_compass_sigma() -> f64 {
    DEFAULT_COMPASS_SIGMA
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            gps_sigma: DEFAULT_GPS_SIGMA,
            compass_sigma: DEFAULT_COMPASS_SIGMA,
        }
    }
}

impl SensorNoise {
    pub fn none() -> Self {
        Self {
            gps_sigma: 0.0,
            compass_sigma: 0.0,
        }
    }
}

/// Everything [`simulate`] needs besides the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub surge: InputProfile,
    pub yaw: InputProfile,
    pub horizon: f64,
    pub sample_period: f64,
    pub noise: SensorNoise,
    pub surge_params: SecondOrderParams,
    pub yaw_params: SecondOrderParams,
    pub substeps: usize,
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Compass heading at t = 0 (deg).
    pub initial_heading: f64,
    pub initial_speed: f64,
    pub initial_yaw_rate: f64,
}

impl Scenario {
    pub fn new(surge: InputProfile, yaw: InputProfile, horizon: f64) -> Self {
        Self {
            surge,
            yaw,
            horizon,
            sample_period: DEFAULT_SAMPLE_PERIOD,
            noise: SensorNoise::default(),
            surge_params: surge_params(),
            yaw_params: yaw_params(),
            substeps: DEFAULT_SUBSTEPS,
            origin_lat: 0.0,
            origin_lon: 0.0,
            initial_heading: 0.0,
            initial_speed: 0.0,
            initial_yaw_rate: 0.0,
        }
    }

    /// Starts already at the steady speed and yaw rate of constant inputs.
    pub fn in_steady_state(mut self, surge_input: f64, yaw_input: f64) -> Self {
        self.initial_speed = self.surge_params.steady_velocity(surge_input);
        self.initial_yaw_rate = self.yaw_params.steady_velocity(yaw_input);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_period.is_finite() && self.sample_period > 0.0) {
            return Err(Error::Validation("sample period must be > 0".into()));
        }
        if !(self.horizon.is_finite() && self.horizon > self.sample_period) {
            return Err(Error::Validation("horizon must exceed the sample period".into()));
        }
        if self.substeps == 0 {
            return Err(Error::Validation("substeps must be >= 1".into()));
        }
        let n = &self.noise;
        if !(n.gps_sigma >= 0.0 && n.gps_sigma.is_finite())
            || !(n.compass_sigma >= 0.0 && n.compass_sigma.is_finite())
        {
            return Err(Error::Validation("noise sigmas must be finite and >= 0".into()));
        }
        let finite = [
            self.origin_lat,
            self.origin_lon,
            self.initial_heading,
            self.initial_speed,
            self.initial_yaw_rate,
        ];
        if !finite.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("initial conditions must be finite".into()));
        }
        self.surge.validate()?;
        self.yaw.validate()?;
        self.surge_params
            .validate()
            .and(self.yaw_params.validate())
            .map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn record_count(&self) -> usize {
        (self.horizon / self.sample_period + 1e-9).floor() as usize + 1
    }
}

/// Vehicle state on the integration grid. `heading` is the unwrapped compass
/// angle in radians (clockwise from north).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyState {
    pub north: f64,
    pub east: f64,
    pub heading: f64,
    pub speed: f64,
    pub yaw_rate: f64,
}

/// Noise-free truth at one sample instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub state: BodyState,
    pub surge_input: f64,
    pub yaw_input: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub origin: SensorRecord,
    pub fine_states: Vec<BodyState>,
    pub truth: Vec<TruthSample>,
    pub records: Vec<SensorRecord>,
    /// Timestamps of fixes removed by [`degrade`].
    pub gaps: Vec<f64>,
    pub seed: u64,
    pub noise: SensorNoise,
    pub sample_period: f64,
}

fn derivative(
    s: &BodyState,
    u: f64,
    r: f64,
    surge: &SecondOrderParams,
    yaw: &SecondOrderParams,
) -> BodyState {
    BodyState {
        north: s.speed * s.heading.cos(),
        east: s.speed * s.heading.sin(),
        heading: s.yaw_rate,
        speed: (surge.input_scale * u - surge.drag * s.speed) / surge.inertia,
        yaw_rate: (yaw.input_scale * r - yaw.drag * s.yaw_rate) / yaw.inertia,
    }
}

fn axpy(s: &BodyState, h: f64, d: &BodyState) -> BodyState {
    BodyState {
        north: s.north + h * d.north,
        east: s.east + h * d.east,
        heading: s.heading + h * d.heading,
        speed: s.speed + h * d.speed,
        yaw_rate: s.yaw_rate + h * d.yaw_rate,
    }
}

// Inputs are evaluated at the left limit of `end` so that a jump exactly at
// the end of the interval does not leak into it.
fn rk4_step(s: &BodyState, t: f64, h: f64, sc: &Scenario) -> BodyState {
    let end = t + h;
    let f = |st: &BodyState, tt: f64| {
        let tt = if tt >= end { end.next_down() } else { tt };
        derivative(
            st,
            sc.surge.eval(tt),
            sc.yaw.eval(tt),
            &sc.surge_params,
            &sc.yaw_params,
        )
    };
    let k1 = f(s, t);
    let k2 = f(&axpy(s, 0.5 * h, &k1), t + 0.5 * h);
    let k3 = f(&axpy(s, 0.5 * h, &k2), t + 0.5 * h);
    let k4 = f(&axpy(s, h, &k3), end);
    BodyState {
        north: s.north + h / 6.0 * (k1.north + 2.0 * k2.north + 2.0 * k3.north + k4.north),
        east: s.east + h / 6.0 * (k1.east + 2.0 * k2.east + 2.0 * k3.east + k4.east),
        heading: s.heading
            + h / 6.0 * (k1.heading + 2.0 * k2.heading + 2.0 * k3.heading + k4.heading),
        speed: s.speed + h / 6.0 * (k1.speed + 2.0 * k2.speed + 2.0 * k3.speed + k4.speed),
        yaw_rate: s.yaw_rate
            + h / 6.0 * (k1.yaw_rate + 2.0 * k2.yaw_rate + 2.0 * k3.yaw_rate + k4.yaw_rate),
    }
}

/// One substep `[t0, t1]`, split at any input breakpoints inside it.
fn advance(s: &BodyState, t0: f64, t1: f64, breaks: &[f64], sc: &Scenario) -> BodyState {
    let mut state = *s;
    let mut t = t0;
    for &b in breaks.iter().filter(|&&b| b > t0 && b < t1) {
        state = rk4_step(&state, t, b - t, sc);
        t = b;
    }
    rk4_step(&state, t, t1 - t, sc)
}

/// Integrates the scenario and samples one record per sample period.
pub fn simulate(scenario: &Scenario, seed: u64) -> Result<SimRun> {
    scenario.validate()?;
    let origin = SensorRecord::new(
        0.0,
        scenario.origin_lat,
        scenario.origin_lon,
        scenario.initial_heading,
    )?;
    let n_records = scenario.record_count();
    let t_s = scenario.sample_period;
    let h = t_s / scenario.substeps as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gps = Normal::new(0.0, scenario.noise.gps_sigma)
        .map_err(|e| Error::Validation(e.to_string()))?;
    let compass = Normal::new(0.0, scenario.noise.compass_sigma)
        .map_err(|e| Error::Validation(e.to_string()))?;

    let mut breaks = scenario.surge.breakpoints();
    breaks.extend(scenario.yaw.breakpoints());
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut state = BodyState {
        heading: scenario.initial_heading.to_radians(),
        speed: scenario.initial_speed,
        yaw_rate: scenario.initial_yaw_rate,
        ..BodyState::default()
    };
    let mut fine_states = Vec::with_capacity((n_records - 1) * scenario.substeps + 1);
    let mut truth = Vec::with_capacity(n_records);
    let mut records = Vec::with_capacity(n_records);
    fine_states.push(state);

    for k in 0..n_records {
        let t = k as f64 * t_s;
        if k > 0 {
            let t0 = (k - 1) as f64 * t_s;
            for j in 0..scenario.substeps {
                let a = t0 + j as f64 * h;
                let b = if j + 1 == scenario.substeps { t } else { a + h };
                state = advance(&state, a, b, &breaks, scenario);
                fine_states.push(state);
            }
        }
        truth.push(TruthSample {
            t,
            state,
            surge_input: scenario.surge.eval(t),
            yaw_input: scenario.yaw.eval(t),
        });
        let noisy = Enu {
            north: state.north + gps.sample(&mut rng),
            east: state.east + gps.sample(&mut rng),
        };
        let heading = wrap_heading_deg(state.heading.to_degrees() + compass.sample(&mut rng));
        let (lat, lon) = from_local_enu(noisy, &origin)?;
        records.push(SensorRecord::new(t, lat, lon, heading)?);
    }

    Ok(SimRun {
        origin,
        fine_states,
        truth,
        records,
        gaps: Vec::new(),
        seed,
        noise: scenario.noise,
        sample_period: t_s,
    })
}

/// Drops GPS fixes independently with probability `dropout_prob`.
pub fn degrade(run: &SimRun, dropout_prob: f64, seed: u64) -> Result<SimRun> {
    if !(0.0..1.0).contains(&dropout_prob) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability {dropout_prob} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = run.clone();
    out.records.clear();
    for rec in &run.records {
        if rng.random::<f64>() < dropout_prob {
            out.gaps.push(rec.timestamp);
        } else {
            out.records.push(*rec);
        }
    }
    if out.records.len() < 3 {
        return Err(Error::DegenerateRun {
            retained: out.records.len(),
        });
    }
    Ok(out)
}
