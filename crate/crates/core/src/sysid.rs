//! Least-squares identification of first-order velocity dynamics from step
//! responses.
//!
//! The fitted model is `v(t) = (u s / d) (1 - exp(-(d/m) t))`, with `t`
//! measured from the step onset. Parameters are fitted in log space so they
//! stay positive, by Gauss–Newton with a backtracking line search.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::batch::{self, Execution};
use crate::error::{Error, Result};
use crate::linsys::SecondOrderParams;

pub const DEFAULT_MAX_ITERATIONS: usize = 200;

/// Measured velocity after a step of size `input_level` applied at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResponseSeries {
    times: Vec<f64>,
    values: Vec<f64>,
    input_level: f64,
}

impl StepResponseSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, input_level: f64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 3 {
            return Err(Error::InvalidArgument(
                "a step response needs at least 3 samples".into(),
            ));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("times must be strictly increasing".into()));
        }
        if !times.iter().chain(&values).all(|v| v.is_finite()) || !input_level.is_finite() {
            return Err(Error::InvalidArgument("series contains non-finite values".into()));
        }
        if times[0] < 0.0 {
            return Err(Error::InvalidArgument("samples precede the step onset".into()));
        }
        Ok(Self {
            times,
            values,
            input_level,
        })
    }

    /// Builds a series from logged rows: the onset is the first row whose
    /// input level is nonzero, earlier rows are dropped and time is shifted
    /// so the onset is `t = 0`.
    pub fn from_rows(times: &[f64], values: &[f64], levels: &[f64]) -> Result<Self> {
        if times.len() != values.len() || times.len() != levels.len() {
            return Err(Error::Dimension("columns differ in length".into()));
        }
        let onset = levels.iter().position(|&l| l != 0.0).ok_or_else(|| {
            Error::DegenerateData("input level is never switched on".into())
        })?;
        let level = levels[onset];
        if levels[onset..].iter().any(|&l| l != level) {
            return Err(Error::InvalidArgument(
                "input level must stay constant after the onset".into(),
            ));
        }
        let t0 = times[onset];
        Self::new(
            times[onset..].iter().map(|t| t - t0).collect(),
            values[onset..].to_vec(),
            level,
        )
    }

    /// Samples the analytic response of `params` at `times` (noise-free).
    pub fn synthetic(params: &SecondOrderParams, input_level: f64, times: Vec<f64>) -> Result<Self> {
        let values = times
            .iter()
            .map(|&t| params.step_velocity(input_level, t))
            .collect();
        Self::new(times, values, input_level)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn input_level(&self) -> f64 {
        self.input_level
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub params: SecondOrderParams,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Known inertia; only drag (and possibly input scale) is fitted.
    pub fixed_inertia: Option<f64>,
    /// Fit the input scale too. Requires `fixed_inertia`, since otherwise
    /// only the ratios `s/d` and `d/m` are identifiable.
    pub free_input_scale: bool,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fixed_inertia: None,
            free_input_scale: false,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

/// Residual sum of squares of `params` against the series.
pub fn residual_sum_of_squares(series: &StepResponseSeries, params: &SecondOrderParams) -> f64 {
    series
        .times
        .iter()
        .zip(&series.values)
        .map(|(&t, &v)| (v - params.step_velocity(series.input_level, t)).powi(2))
        .sum()
}

pub fn fit_step_response(
    series: &StepResponseSeries,
    fixed_inertia: Option<f64>,
) -> Result<FitResult> {
    fit_step_response_with(
        series,
        &FitOptions {
            fixed_inertia,
            ..FitOptions::default()
        },
    )
}

// Log-space parameter vector [ln m, ln d, ln s] with a mask of free entries.
struct Problem<'a> {
    series: &'a StepResponseSeries,
    free: Vec<usize>,
}

impl Problem<'_> {
    fn params(&self, logp: &[f64; 3]) -> SecondOrderParams {
        SecondOrderParams {
            inertia: logp[0].exp(),
            drag: logp[1].exp(),
            input_scale: logp[2].exp(),
        }
    }

    fn cost(&self, logp: &[f64; 3]) -> f64 {
        residual_sum_of_squares(self.series, &self.params(logp))
    }

    fn residuals_and_jacobian(&self, logp: &[f64; 3]) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.params(logp);
        let u = self.series.input_level;
        let gain = p.steady_velocity(u);
        let rate = p.decay_rate();
        let n = self.series.len();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, self.free.len());
        for (i, (&t, &y)) in self.series.times.iter().zip(&self.series.values).enumerate() {
            let e = (-rate * t).exp();
            let v = gain * (1.0 - e);
            r[i] = y - v;
            // Partial derivatives of v with respect to ln m, ln d, ln s.
            let dv = [
                -gain * e * t * rate,
                -v + gain * e * t * rate,
                v,
            ];
            for (col, &idx) in self.free.iter().enumerate() {
                j[(i, col)] = dv[idx];
            }
        }
        (r, j)
    }
}

/// Starting point from a log-linear fit of `v_inf - v` on the tail-estimated
/// steady state.
fn initial_guess(series: &StepResponseSeries) -> Result<(f64, f64)> {
    let v = &series.values;
    let n = v.len();
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let scale = lo.abs().max(hi.abs());
    if series.input_level == 0.0 || !(hi - lo > 1e-12 * scale.max(1e-300)) {
        return Err(Error::DegenerateData("step response is flat".into()));
    }
    let tail = (n / 10).max(1);
    let v_inf = v[n - tail..].iter().sum::<f64>() / tail as f64;
    if !(v_inf / series.input_level > 0.0) {
        return Err(Error::DegenerateData(
            "steady response does not follow the sign of the input".into(),
        ));
    }
    let (mut sx, mut sy, mut sxx, mut sxy, mut m) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&t, &y) in series.times.iter().zip(v) {
        let gap = (v_inf - y) / v_inf;
        if gap > 0.05 {
            let ly = gap.ln();
            sx += t;
            sy += ly;
            sxx += t * t;
            sxy += t * ly;
            m += 1.0;
        }
    }
    let span = series.times[n - 1] - series.times[0];
    let slope = if m >= 2.0 {
        (m * sxy - sx * sy) / (m * sxx - sx * sx)
    } else {
        f64::NAN
    };
    let rate = if slope.is_finite() && slope < 0.0 {
        -slope
    } else {
        3.0 / span.max(f64::MIN_POSITIVE)
    };
    Ok((v_inf, rate))
}

pub fn fit_step_response_with(series: &StepResponseSeries, opts: &FitOptions) -> Result<FitResult> {
    if let Some(m) = opts.fixed_inertia {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "fixed inertia must be positive, got {m}"
            )));
        }
    } else if opts.free_input_scale {
        return Err(Error::InvalidArgument(
            "input scale can only be fitted when the inertia is known".into(),
        ));
    }

    let (v_inf, rate) = initial_guess(series)?;
    let u = series.input_level;
    let mut logp = match opts.fixed_inertia {
        Some(m) if opts.free_input_scale => {
            let d = rate * m;
            [m.ln(), d.ln(), (v_inf * d / u).ln()]
        }
        Some(m) => [m.ln(), (u / v_inf).ln(), 0.0],
        None => {
            let d = u / v_inf;
            [(d / rate).ln(), d.ln(), 0.0]
        }
    };
    let free = match (opts.fixed_inertia, opts.free_input_scale) {
        (None, _) => vec![0, 1],
        (Some(_), false) => vec![1],
        (Some(_), true) => vec![1, 2],
    };
    let problem = Problem { series, free };

    let mut cost = problem.cost(&logp);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (r, j) = problem.residuals_and_jacobian(&logp);
        let Ok(step) = j.clone().svd(true, true).solve(&r, 1e-14) else {
            break;
        };
        let step_size = step.amax();
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = logp;
            for (col, &idx) in problem.free.iter().enumerate() {
                trial[idx] += alpha * step[col];
            }
            let c = problem.cost(&trial);
            if c.is_finite() && c <= cost {
                logp = trial;
                cost = c;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if step_size * alpha < 1e-12 || (!accepted && step_size < 1e-7) {
            converged = true;
            break;
        }
        if !accepted {
            break;
        }
    }

    let params = problem.params(&logp);
    let residual_rms = (cost / series.len() as f64).sqrt();
    Ok(FitResult {
        params,
        residual_rms,
        iterations,
        converged: converged && residual_rms.is_finite() && params.validate().is_ok(),
    })
}

/// Monte Carlo setup: noisy synthetic step responses of known parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloSpec {
    pub truth: SecondOrderParams,
    pub input_level: f64,
    pub samples: usize,
    /// Span of the series in time constants.
    pub time_constants: f64,
    /// Noise standard deviation as a fraction of the steady-state response.
    pub noise_fraction: f64,
    pub fixed_inertia: Option<f64>,
}

impl MonteCarloSpec {
    pub fn times(&self) -> Vec<f64> {
        let horizon = self.time_constants * self.truth.time_constant();
        let n = self.samples.max(2);
        (0..n).map(|i| horizon * i as f64 / (n - 1) as f64).collect()
    }

    /// Noisy series for one trial; trial `i` uses stream `i` of the seed.
    pub fn trial_series(&self, seed: u64, trial: u64) -> Result<StepResponseSeries> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        let sigma = self.noise_fraction * self.truth.steady_velocity(self.input_level).abs();
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let clean = StepResponseSeries::synthetic(&self.truth, self.input_level, self.times())?;
        let values = clean.values.iter().map(|v| v + noise.sample(&mut rng)).collect();
        StepResponseSeries::new(clean.times, values, self.input_level)
    }
}

/// Fits `trials` independent noisy series; results are in trial order.
pub fn monte_carlo(
    spec: &MonteCarloSpec,
    trials: u64,
    seed: u64,
    exec: Execution,
) -> Result<Vec<FitResult>> {
    let ids: Vec<u64> = (0..trials).collect();
    batch::try_map(&ids, exec, |&i| {
        let series = spec.trial_series(seed, i)?;
        fit_step_response(&series, spec.fixed_inertia)
    })
}

/// Largest relative parameter error of a fit against the truth.
pub fn max_relative_error(fit: &SecondOrderParams, truth: &SecondOrderParams) -> f64 {
    [
        (fit.inertia - truth.inertia) / truth.inertia,
        (fit.drag - truth.drag) / truth.drag,
        (fit.input_scale - truth.input_scale) / truth.input_scale,
    ]
    .iter()
    .fold(0.0, |m, e| m.max(e.abs()))
}
