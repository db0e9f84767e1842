//! Retrospective-cost input estimation coupled to a Kalman filter.
//!
//! The unknown input is modelled as the output of an adaptive subsystem
//!
//! ```text
//! u_hat[k] = sum_{i=1..n_e} M_i u_hat[k-i] + sum_{i=0..n_e} N_i z[k-i] = phi[k] . theta
//! ```
//!
//! driven by the Kalman innovations `z`. The coefficient vector `theta` is the
//! running minimizer of the regularized retrospective cost
//!
//! ```text
//! J_k(t) = (t - theta0)' R_theta (t - theta0)
//!        + sum_{i<=k} R_z (z[i] - u_f[i] + phi_f[i] . t)^2 + R_d (phi[i] . t)^2
//! ```
//!
//! where `phi_f` and `u_f` are the regressor and input filtered through the
//! Markov-like coefficients `H_i(k) = C Abar[k-1] ... Abar[k-i+1] B`,
//! `Abar[j] = A (I + K[j] C)`. The minimizer is tracked exactly by a two-row
//! recursive least-squares update.
//!
//! Innovation and gain enter those formulas in the *predicted minus measured*
//! convention (`z = C x_prior - y`, `x_post = x_prior + K z`, so `K` is the
//! negated textbook gain). [`InnovationSign`] selects how the Kalman filter's
//! textbook quantities are mapped into that convention.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix2, RowDVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::{kalman_predict, kalman_update, symmetrize, KalmanState, NoiseSpec, StateSpaceModel};

/// Condition number above which the 2x2 RLS inversion is rejected.
pub const MAX_UPDATE_CONDITION: f64 = 1e14;
/// Default bound on `|u_hat|` before a run is declared divergent.
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e6;

/// Tuning of one input-estimation channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    /// Subsystem order.
    pub n_e: usize,
    /// Filter window length.
    pub n_f: usize,
    pub r_z: f64,
    pub r_d: f64,
    /// `R_theta = r_theta_scale * I`.
    pub r_theta_scale: f64,
    /// Initial coefficients, zero when absent. Length must be `2 n_e + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
}

impl Hyperparameters {
    /// Surge tuning: `n_e = 4`, `n_f = 8`, `R_z = 1`, `R_d = 50`, `R_theta = 10^-0.01 I_9`.
    pub fn surge() -> Self {
        Self {
            n_e: 4,
            n_f: 8,
            r_z: 1.0,
            r_d: 50.0,
            r_theta_scale: 10f64.powf(-0.01),
            theta0: None,
        }
    }

    /// Heading tuning: `n_e = 3`, `n_f = 4`, `R_z = 1`, `R_d = 0.1`, `R_theta = 10^-2 I_7`.
    pub fn heading() -> Self {
        Self {
            n_e: 3,
            n_f: 4,
            r_z: 1.0,
            r_d: 0.1,
            r_theta_scale: 1e-2,
            theta0: None,
        }
    }

    /// Number of coefficients, `2 n_e + 1`.
    pub fn theta_len(&self) -> usize {
        2 * self.n_e + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_e < 1 {
            return Err(Error::Validation("n_e must be at least 1".into()));
        }
        if self.n_f < 1 {
            return Err(Error::Validation("n_f must be at least 1".into()));
        }
        for (name, v) in [
            ("r_z", self.r_z),
            ("r_d", self.r_d),
            ("r_theta_scale", self.r_theta_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(theta0) = &self.theta0 {
            if theta0.len() != self.theta_len() {
                return Err(Error::Validation(format!(
                    "theta0 has {} entries but 2*n_e + 1 = {}",
                    theta0.len(),
                    self.theta_len()
                )));
            }
            if theta0.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("theta0 must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn initial_theta(&self) -> DVector<f64> {
        match &self.theta0 {
            Some(t) => DVector::from_column_slice(t),
            None => DVector::zeros(self.theta_len()),
        }
    }
}

/// Mapping from the Kalman filter's textbook innovation/gain to the
/// retrospective convention used by the input subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnovationSign {
    /// `z = C x_prior - y` and `K = -P C'/S`: `Abar = A (I - K_textbook C)`.
    #[default]
    PredictedMinusMeasured,
    /// Feed `z = y - C x_prior` and `K = P C'/S` unchanged: `Abar = A (I + K_textbook C)`.
    MeasuredMinusPredicted,
}

impl InnovationSign {
    pub fn factor(self) -> f64 {
        match self {
            InnovationSign::PredictedMinusMeasured => -1.0,
            InnovationSign::MeasuredMinusPredicted => 1.0,
        }
    }
}

/// Coefficients, RLS covariance and bounded signal histories of one channel.
///
/// Histories are stored most recent first; entries older than the start of
/// the run read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RcieState {
    theta: DVector<f64>,
    p: DMatrix<f64>,
    n_e: usize,
    n_f: usize,
    inputs: VecDeque<f64>,
    innovations: VecDeque<f64>,
    regressors: VecDeque<RowDVector<f64>>,
    gains: VecDeque<DVector<f64>>,
    filter_cache: Vec<f64>,
    step: usize,
}

impl RcieState {
    /// Fresh state with `theta = theta0` and `P0 = R_theta^{-1}`.
    pub fn new(hp: &Hyperparameters) -> Result<Self> {
        hp.validate()?;
        let l = hp.theta_len();
        Ok(Self {
            theta: hp.initial_theta(),
            p: DMatrix::identity(l, l) / hp.r_theta_scale,
            n_e: hp.n_e,
            n_f: hp.n_f,
            inputs: VecDeque::with_capacity(hp.n_e.max(hp.n_f) + 1),
            innovations: VecDeque::with_capacity(hp.n_e + hp.n_f + 1),
            regressors: VecDeque::with_capacity(hp.n_f + 1),
            gains: VecDeque::with_capacity(hp.n_f + 1),
            filter_cache: vec![0.0; hp.n_f],
            step: 0,
        })
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// `u_hat[k-1]`, zero before the first step.
    pub fn last_input(&self) -> f64 {
        self.inputs.front().copied().unwrap_or(0.0)
    }

    /// `u_hat[k-i]` for `i >= 1`.
    pub fn past_input(&self, i: usize) -> f64 {
        i.checked_sub(1)
            .and_then(|j| self.inputs.get(j))
            .copied()
            .unwrap_or(0.0)
    }

    /// `z[k-i]` for `i >= 1`.
    pub fn past_innovation(&self, i: usize) -> f64 {
        i.checked_sub(1)
            .and_then(|j| self.innovations.get(j))
            .copied()
            .unwrap_or(0.0)
    }

    /// Gains `K[k-1], K[k-2], ...` in the retrospective convention.
    pub fn gains(&self) -> impl ExactSizeIterator<Item = &DVector<f64>> {
        self.gains.iter()
    }

    /// `H_1(k) ... H_{n_f}(k)` from the most recent step.
    pub fn filter_cache(&self) -> &[f64] {
        &self.filter_cache
    }

    pub fn history_lens(&self) -> (usize, usize, usize, usize) {
        (
            self.inputs.len(),
            self.innovations.len(),
            self.regressors.len(),
            self.gains.len(),
        )
    }

    fn push_history(&mut self, u_hat: f64, z: f64, phi: RowDVector<f64>, gain: DVector<f64>) {
        push_bounded(&mut self.inputs, u_hat, self.n_e.max(self.n_f));
        push_bounded(&mut self.innovations, z, self.n_e + self.n_f);
        push_bounded(&mut self.regressors, phi, self.n_f);
        push_bounded(&mut self.gains, gain, self.n_f);
        self.step += 1;
    }
}

fn push_bounded<T>(buf: &mut VecDeque<T>, value: T, cap: usize) {
    buf.push_front(value);
    buf.truncate(cap);
}

/// `phi[k] = [u_hat[k-1] .. u_hat[k-n_e], z[k] .. z[k-n_e]]`.
pub fn build_regressor(state: &RcieState, z_k: f64) -> RowDVector<f64> {
    let n_e = state.n_e;
    RowDVector::from_fn(2 * n_e + 1, |_, j| {
        if j < n_e {
            state.past_input(j + 1)
        } else if j == n_e {
            z_k
        } else {
            state.past_innovation(j - n_e)
        }
    })
}

/// `H_1(k) ... H_{n_f}(k)`.
///
/// `gains[j]` is `K[k-1-j]`; `H_1 = C B` for `k >= 1`,
/// `H_i = C Abar[k-1] ... Abar[k-i+1] B` for `k >= i >= 2` and zero for `i > k`,
/// with `Abar[j] = A (I + K[j] C)`.
pub fn filter_coefficients(
    model: &StateSpaceModel,
    gains: &[DVector<f64>],
    k: usize,
    n_f: usize,
) -> Vec<f64> {
    let n = model.state_dim();
    let mut h = vec![0.0; n_f];
    let mut row = model.c().clone();
    for (i, slot) in h.iter_mut().enumerate().take(n_f.min(k)) {
        if i > 0 {
            let gain = gains.get(i - 1).cloned().unwrap_or_else(|| DVector::zeros(n));
            let a_bar = model.a() * (DMatrix::identity(n, n) + gain * model.c());
            row *= a_bar;
        }
        *slot = row.dot(&model.b().transpose());
    }
    h
}

/// `(phi_f[k], u_f[k]) = sum_i H_i(k) (phi[k-i], u_hat[k-i])`.
pub fn filtered_signals(state: &RcieState, h: &[f64]) -> (RowDVector<f64>, f64) {
    let mut phi_f = RowDVector::zeros(2 * state.n_e + 1);
    let mut u_f = 0.0;
    for (i, &hi) in h.iter().enumerate() {
        if let Some(phi) = state.regressors.get(i) {
            phi_f += phi * hi;
        }
        u_f += hi * state.past_input(i + 1);
    }
    (phi_f, u_f)
}

/// Stacked quantities of one RLS step.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsWorkset {
    /// `[phi_f; phi]`, 2 x l_theta.
    pub phi_tilde: DMatrix<f64>,
    /// `[z - u_f; 0]`.
    pub z_tilde: Vector2<f64>,
    /// `diag(R_z, R_d)`.
    pub r_tilde: Matrix2<f64>,
    /// `(R_tilde^{-1} + phi_tilde P phi_tilde')^{-1}`, filled by [`rls_update`].
    pub gamma: Matrix2<f64>,
}

impl RlsWorkset {
    pub fn new(
        phi_filtered: &RowDVector<f64>,
        phi: &RowDVector<f64>,
        z: f64,
        u_filtered: f64,
        r_z: f64,
        r_d: f64,
    ) -> Self {
        let l = phi.len();
        let mut phi_tilde = DMatrix::zeros(2, l);
        phi_tilde.row_mut(0).copy_from(phi_filtered);
        phi_tilde.row_mut(1).copy_from(phi);
        Self {
            phi_tilde,
            z_tilde: Vector2::new(z - u_filtered, 0.0),
            r_tilde: Matrix2::new(r_z, 0.0, 0.0, r_d),
            gamma: Matrix2::zeros(),
        }
    }
}

/// One RLS step: moves `theta` and `P` to the minimizer of `J_k`.
pub fn rls_update(state: &mut RcieState, ws: &mut RlsWorkset) -> Result<()> {
    let p_phi_t = &state.p * ws.phi_tilde.transpose();
    let info = &ws.phi_tilde * &p_phi_t;
    let m = Matrix2::new(
        1.0 / ws.r_tilde[(0, 0)] + info[(0, 0)],
        info[(0, 1)],
        info[(1, 0)],
        1.0 / ws.r_tilde[(1, 1)] + info[(1, 1)],
    );
    let m = 0.5 * (m + m.transpose());
    let cond = symmetric_condition_2x2(&m);
    if !(cond.is_finite() && cond <= MAX_UPDATE_CONDITION) {
        return Err(Error::IllConditionedUpdate(cond));
    }
    ws.gamma = m
        .try_inverse()
        .ok_or(Error::IllConditionedUpdate(f64::INFINITY))?;
    let gamma = DMatrix::from_iterator(2, 2, ws.gamma.iter().copied());
    let gain = &p_phi_t * gamma;
    let residual = DVector::from_iterator(
        2,
        (ws.z_tilde + to_vec2(&(&ws.phi_tilde * &state.theta))).iter().copied(),
    );
    state.theta -= &gain * residual;
    state.p -= &gain * p_phi_t.transpose();
    symmetrize(&mut state.p);
    Ok(())
}

fn to_vec2(v: &DVector<f64>) -> Vector2<f64> {
    Vector2::new(v[0], v[1])
}

fn symmetric_condition_2x2(m: &Matrix2<f64>) -> f64 {
    let half_trace = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let radius = (0.25 * (m[(0, 0)] - m[(1, 1)]).powi(2) + m[(0, 1)].powi(2)).sqrt();
    let hi = (half_trace + radius).abs();
    let lo = (half_trace - radius).abs();
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `u_hat = phi . theta`.
pub fn estimate_input(theta: &DVector<f64>, phi: &RowDVector<f64>) -> f64 {
    phi.dot(&theta.transpose())
}

/// Run-level switches of the estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AieOptions {
    pub innovation_sign: InnovationSign,
    pub divergence_bound: f64,
}

impl Default for AieOptions {
    fn default() -> Self {
        Self {
            innovation_sign: InnovationSign::default(),
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
        }
    }
}

/// Everything produced by one estimator step.
#[derive(Debug, Clone, PartialEq)]
pub struct AieStep {
    pub u_hat: f64,
    /// Innovation in the retrospective convention.
    pub innovation: f64,
    /// `||theta[k+1] - theta[k]||`.
    pub theta_change: f64,
    /// `C x_post` (or `C x_prior` on a coasting step).
    pub output_estimate: f64,
    pub phi: RowDVector<f64>,
    pub phi_filtered: RowDVector<f64>,
    pub u_filtered: f64,
    /// False when the step had no measurement.
    pub measured: bool,
}

/// One full estimator step at measurement `y[k]`.
///
/// Order: predict with `u_hat[k-1]`, innovation, regressor, filter
/// coefficients and filtered signals, RLS update to `theta[k+1]`,
/// `u_hat[k] = phi[k] . theta[k+1]`, Kalman update.
pub fn aie_step(
    rcie: &mut RcieState,
    kalman: &mut KalmanState,
    model: &StateSpaceModel,
    noise: &NoiseSpec,
    y: f64,
    hp: &Hyperparameters,
    opts: &AieOptions,
) -> Result<AieStep> {
    let sign = opts.innovation_sign.factor();
    let k = rcie.step;
    let prior = kalman_predict(kalman, model, noise, rcie.last_input());
    let z = sign * (y - model.output(&prior.x_hat));

    let phi = build_regressor(rcie, z);
    let gains: Vec<DVector<f64>> = rcie.gains.iter().cloned().collect();
    let h = filter_coefficients(model, &gains, k, hp.n_f);
    let (phi_filtered, u_filtered) = filtered_signals(rcie, &h);
    rcie.filter_cache = h;

    let theta_before = rcie.theta.clone();
    let mut ws = RlsWorkset::new(&phi_filtered, &phi, z, u_filtered, hp.r_z, hp.r_d);
    rls_update(rcie, &mut ws)?;
    let theta_change = (&rcie.theta - theta_before).norm();

    let u_hat = estimate_input(&rcie.theta, &phi);
    if !(u_hat.is_finite() && u_hat.abs() <= opts.divergence_bound) {
        return Err(Error::Divergence {
            channel: String::new(),
            step: k,
            value: u_hat.abs(),
        });
    }

    let posterior = kalman_update(&prior, model, noise, y)?;
    let output_estimate = model.output(&posterior.x_hat);
    rcie.push_history(u_hat, z, phi.clone(), &posterior.gain * sign);
    *kalman = posterior;

    Ok(AieStep {
        u_hat,
        innovation: z,
        theta_change,
        output_estimate,
        phi,
        phi_filtered,
        u_filtered,
        measured: true,
    })
}

/// Step without a measurement: propagate with the held input, leave `theta` alone.
pub fn aie_coast(
    rcie: &mut RcieState,
    kalman: &mut KalmanState,
    model: &StateSpaceModel,
    noise: &NoiseSpec,
) -> AieStep {
    let n = model.state_dim();
    let u_hat = rcie.last_input();
    *kalman = kalman_predict(kalman, model, noise, u_hat);
    let phi = build_regressor(rcie, 0.0);
    rcie.push_history(u_hat, 0.0, phi.clone(), DVector::zeros(n));
    AieStep {
        u_hat,
        innovation: 0.0,
        theta_change: 0.0,
        output_estimate: model.output(&kalman.x_hat),
        phi_filtered: RowDVector::zeros(phi.len()),
        phi,
        u_filtered: 0.0,
        measured: false,
    }
}

/// A named estimation channel: model, noise, tuning and both filter states.
#[derive(Debug, Clone)]
pub struct AieChannel {
    pub name: String,
    pub model: StateSpaceModel,
    pub noise: NoiseSpec,
    pub hp: Hyperparameters,
    pub opts: AieOptions,
    pub rcie: RcieState,
    pub kalman: KalmanState,
}

impl AieChannel {
    pub fn new(
        name: impl Into<String>,
        model: StateSpaceModel,
        noise: NoiseSpec,
        hp: Hyperparameters,
        opts: AieOptions,
        kalman: KalmanState,
    ) -> Result<Self> {
        let rcie = RcieState::new(&hp)?;
        if noise.process_cov().nrows() != model.state_dim() || kalman.x_hat.len() != model.state_dim() {
            return Err(Error::Dimension("noise/prior do not match the model state".into()));
        }
        Ok(Self {
            name: name.into(),
            model,
            noise,
            hp,
            opts,
            rcie,
            kalman,
        })
    }

    pub fn step(&mut self, y: Option<f64>) -> Result<AieStep> {
        match y {
            Some(y) => aie_step(
                &mut self.rcie,
                &mut self.kalman,
                &self.model,
                &self.noise,
                y,
                &self.hp,
                &self.opts,
            )
            .map_err(|e| match e {
                Error::Divergence { step, value, .. } => Error::Divergence {
                    channel: self.name.clone(),
                    step,
                    value,
                },
                other => other,
            }),
            None => Ok(aie_coast(&mut self.rcie, &mut self.kalman, &self.model, &self.noise)),
        }
    }
}

/// Kalman filter driven by a fixed, assumed input.
#[derive(Debug, Clone)]
pub struct FixedInputKalman {
    pub model: StateSpaceModel,
    pub noise: NoiseSpec,
    pub input: f64,
    pub state: KalmanState,
}

impl FixedInputKalman {
    /// Returns the output estimate after the step.
    pub fn step(&mut self, y: Option<f64>) -> Result<f64> {
        let prior = kalman_predict(&self.state, &self.model, &self.noise, self.input);
        self.state = match y {
            Some(y) => kalman_update(&prior, &self.model, &self.noise, y)?,
            None => prior,
        };
        Ok(self.model.output(&self.state.x_hat))
    }
}
