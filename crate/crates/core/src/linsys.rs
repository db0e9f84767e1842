//! Discrete-time linear state-space machinery.
//!
//! Single-input single-output models `x[k+1] = A x[k] + B u[k]`, `y[k] = C x[k]`,
//! exact zero-order-hold discretization of the second-order vehicle models
//! `inertia * q'' + drag * q' = input_scale * u`, one-step delay augmentation,
//! DC gain evaluation and a linear Kalman filter (Joseph-form update).

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

/// Relative change below which a step response counts as settled.
const SETTLE_RELATIVE_CHANGE: f64 = 1e-9;
/// Consecutive calm steps required before a step response counts as settled.
const SETTLE_WINDOW: usize = 100;
/// Hard cap on step-response iterations.
const SETTLE_MAX_STEPS: usize = 1_000_000;
/// Offset from `z = 1` used when evaluating the transfer function near DC.
pub const DC_EVALUATION_OFFSET: f64 = 1e-8;

/// Physical parameters of `inertia * q'' + drag * q' = input_scale * u`.
///
/// For surge, `inertia` is the mass (kg) and `drag` is in N·s/m; for yaw,
/// `inertia` is the moment of inertia (kg·m²) and `drag` is in N·m·s/rad.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SecondOrderParams {
    pub inertia: f64,
    pub drag: f64,
    pub input_scale: f64,
}

impl SecondOrderParams {
    pub fn new(inertia: f64, drag: f64, input_scale: f64) -> Result<Self> {
        let params = Self {
            inertia,
            drag,
            input_scale,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("inertia", self.inertia),
            ("drag", self.drag),
            ("input_scale", self.input_scale),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        let tau = self.time_constant();
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "time constant inertia/drag must be finite and positive, got {tau}"
            )));
        }
        Ok(())
    }

    /// Velocity decay rate `drag / inertia` (1/s).
    pub fn decay_rate(&self) -> f64 {
        self.drag / self.inertia
    }

    /// Input-to-acceleration gain `input_scale / inertia`.
    pub fn input_gain(&self) -> f64 {
        self.input_scale / self.inertia
    }

    pub fn time_constant(&self) -> f64 {
        self.inertia / self.drag
    }

    /// Steady-state velocity for a constant input `u`.
    pub fn steady_velocity(&self, u: f64) -> f64 {
        u * self.input_scale / self.drag
    }

    /// Analytic velocity step response from rest, `t` measured from the step onset.
    pub fn step_velocity(&self, u: f64, t: f64) -> f64 {
        self.steady_velocity(u) * (-(-self.decay_rate() * t).exp_m1())
    }

    /// Analytic position step response from rest.
    pub fn step_position(&self, u: f64, t: f64) -> f64 {
        let a = self.decay_rate();
        self.steady_velocity(u) * (t + (-a * t).exp_m1() / a)
    }
}

/// Discrete-time SISO linear model with its sample period.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: RowDVector<f64>,
    sample_period: f64,
}

impl StateSpaceModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: RowDVector<f64>,
        sample_period: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.len() != n {
            return Err(Error::Dimension(format!("B must be {n}x1, got {}x1", b.len())));
        }
        if c.len() != n {
            return Err(Error::Dimension(format!("C must be 1x{n}, got 1x{}", c.len())));
        }
        if !(sample_period.is_finite() && sample_period > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "model matrices must be finite".to_string(),
            ));
        }
        Ok(Self {
            a,
            b,
            c,
            sample_period,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &RowDVector<f64> {
        &self.c
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Replaces the output row.
    pub fn with_output(mut self, c: RowDVector<f64>) -> Result<Self> {
        if c.len() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "C must be 1x{}, got 1x{}",
                self.state_dim(),
                c.len()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("C must be finite".to_string()));
        }
        self.c = c;
        Ok(self)
    }

    /// One noiseless state transition.
    pub fn propagate(&self, x: &DVector<f64>, u: f64) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    pub fn output(&self, x: &DVector<f64>) -> f64 {
        self.c.dot(&x.transpose())
    }

    /// Simulates from `x0` and returns the outputs `y[0..inputs.len()]`, where
    /// `y[k] = C x[k]` and `x[k+1] = A x[k] + B inputs[k]`.
    pub fn simulate(&self, x0: &DVector<f64>, inputs: &[f64]) -> Vec<f64> {
        let mut x = x0.clone();
        inputs
            .iter()
            .map(|&u| {
                let y = self.output(&x);
                x = self.propagate(&x, u);
                y
            })
            .collect()
    }
}

/// Exact ZOH discretization of `inertia * q'' + drag * q' = input_scale * u`
/// with state `(position, velocity)` and output `C = [1 0]`.
pub fn zoh_discretize(params: &SecondOrderParams, sample_period: f64) -> Result<StateSpaceModel> {
    params.validate()?;
    if !(sample_period.is_finite() && sample_period > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sample period must be positive, got {sample_period}"
        )));
    }
    let a = params.decay_rate();
    let g = params.input_gain();
    let t = sample_period;
    // 1 - e^{-aT}, computed without cancellation for small aT
    let decay_complement = -(-a * t).exp_m1();
    let decay = (-a * t).exp();
    let velocity_from_input = g / a * decay_complement;
    let position_from_velocity = decay_complement / a;
    // (g/a) * (T - (1 - e^{-aT})/a), expanded for small aT to keep precision
    let position_from_input = if a * t < 1e-4 {
        let x = a * t;
        g * t * t * (0.5 - x / 6.0 + x * x / 24.0)
    } else {
        g / a * (t - decay_complement / a)
    };

    let a_mat = DMatrix::from_row_slice(2, 2, &[1.0, position_from_velocity, 0.0, decay]);
    let b = DVector::from_column_slice(&[position_from_input, velocity_from_input]);
    let c = RowDVector::from_row_slice(&[1.0, 0.0]);
    StateSpaceModel::new(a_mat, b, c, sample_period)
}

/// Appends a state holding the previous step's first state (position).
///
/// The new `A` row copies state 1, the new `B` entry is zero and the output
/// row gets a trailing zero; callers usually replace `C` afterwards.
pub fn augment_with_delay(model: &StateSpaceModel) -> Result<StateSpaceModel> {
    let n = model.state_dim();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    a.view_mut((0, 0), (n, n)).copy_from(model.a());
    a[(n, 0)] = 1.0;
    let mut b = DVector::zeros(n + 1);
    b.rows_mut(0, n).copy_from(model.b());
    let mut c = RowDVector::zeros(n + 1);
    c.columns_mut(0, n).copy_from(model.c());
    StateSpaceModel::new(a, b, c, model.sample_period())
}

/// Evaluates the transfer function `C (zI - A)^{-1} B` at a real point `z`.
pub fn transfer_at(model: &StateSpaceModel, z: f64) -> Result<f64> {
    let n = model.state_dim();
    let m = DMatrix::identity(n, n) * z - model.a();
    let x = m.lu().solve(model.b()).ok_or_else(|| {
        Error::InvalidArgument(format!("zI - A is singular at z = {z}"))
    })?;
    Ok(model.c().dot(&x.transpose()))
}

/// DC gain via `z = 1 + 1e-8` evaluation of the transfer function.
pub fn dc_gain_near_unity(model: &StateSpaceModel) -> Result<f64> {
    transfer_at(model, 1.0 + DC_EVALUATION_OFFSET)
}

/// DC gain as the settled value of the unit-step response.
///
/// Settled means the relative change of the output stays below `1e-9` for
/// 100 consecutive steps. Works for models whose integrator pole is cancelled
/// by the output row (incremental outputs).
pub fn dc_gain(model: &StateSpaceModel) -> Result<f64> {
    let n = model.state_dim();
    let mut x = DVector::zeros(n);
    let mut next = DVector::zeros(n);
    let mut previous = 0.0;
    let mut calm = 0;
    for _ in 0..SETTLE_MAX_STEPS {
        next.gemv(1.0, model.a(), &x, 0.0);
        next += model.b();
        std::mem::swap(&mut x, &mut next);
        let y = model.output(&x);
        if !y.is_finite() {
            break;
        }
        if (y - previous).abs() <= SETTLE_RELATIVE_CHANGE * y.abs() {
            calm += 1;
            if calm >= SETTLE_WINDOW {
                return Ok(y);
            }
        } else {
            calm = 0;
        }
        previous = y;
    }
    Err(Error::NonConvergentGain {
        steps: SETTLE_MAX_STEPS,
    })
}

/// Process and measurement noise of a Kalman channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    process_cov: DMatrix<f64>,
    measurement_var: f64,
}

impl NoiseSpec {
    pub fn new(process_cov: DMatrix<f64>, measurement_var: f64) -> Result<Self> {
        let n = process_cov.nrows();
        if n == 0 || process_cov.ncols() != n {
            return Err(Error::Dimension("Q must be square and non-empty".to_string()));
        }
        if process_cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("Q must be finite".to_string()));
        }
        let scale = process_cov.amax().max(1.0);
        if (&process_cov - process_cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidArgument("Q must be symmetric".to_string()));
        }
        let min_eig = process_cov
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .min();
        if min_eig < -1e-12 {
            return Err(Error::InvalidArgument(format!(
                "Q must be positive semidefinite, min eigenvalue {min_eig:e}"
            )));
        }
        if !(measurement_var.is_finite() && measurement_var > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "measurement variance must be positive, got {measurement_var}"
            )));
        }
        Ok(Self {
            process_cov,
            measurement_var,
        })
    }

    /// `Q = process_var * I_n`.
    pub fn isotropic(n: usize, process_var: f64, measurement_var: f64) -> Result<Self> {
        Self::new(DMatrix::identity(n, n) * process_var, measurement_var)
    }

    pub fn process_cov(&self) -> &DMatrix<f64> {
        &self.process_cov
    }

    pub fn measurement_var(&self) -> f64 {
        self.measurement_var
    }
}

/// Kalman filter state for one channel.
///
/// After [`kalman_predict`] `x_hat` and `p` hold the prior; after
/// [`kalman_update`] they hold the posterior and `gain`/`innovation` hold the
/// values used in that update.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub gain: DVector<f64>,
    pub innovation: f64,
    pub step: usize,
}

impl KalmanState {
    pub fn new(x_hat: DVector<f64>, p: DMatrix<f64>) -> Result<Self> {
        let n = x_hat.len();
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::Dimension(format!("P0 must be {n}x{n}")));
        }
        Ok(Self {
            x_hat,
            p,
            gain: DVector::zeros(n),
            innovation: 0.0,
            step: 0,
        })
    }

    /// `x_hat = 0`, `P = initial_cov * I`.
    pub fn with_isotropic_prior(n: usize, initial_cov: f64) -> Self {
        Self {
            x_hat: DVector::zeros(n),
            p: DMatrix::identity(n, n) * initial_cov,
            gain: DVector::zeros(n),
            innovation: 0.0,
            step: 0,
        }
    }
}

/// Predict step: `x = A x + B u`, `P = A P A^T + Q`.
pub fn kalman_predict(
    state: &KalmanState,
    model: &StateSpaceModel,
    noise: &NoiseSpec,
    u: f64,
) -> KalmanState {
    let x_hat = model.propagate(&state.x_hat, u);
    let p = model.a() * &state.p * model.a().transpose() + noise.process_cov();
    KalmanState {
        x_hat,
        p,
        gain: state.gain.clone(),
        innovation: state.innovation,
        step: state.step,
    }
}

/// Update step with Joseph-form covariance.
pub fn kalman_update(
    state: &KalmanState,
    model: &StateSpaceModel,
    noise: &NoiseSpec,
    y: f64,
) -> Result<KalmanState> {
    let c = model.c();
    let innovation = y - model.output(&state.x_hat);
    let p_ct = &state.p * c.transpose();
    let s = c.dot(&p_ct.transpose()) + noise.measurement_var();
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::DegenerateInnovationCovariance(s));
    }
    let gain = p_ct / s;
    let x_hat = &state.x_hat + &gain * innovation;
    let n = state.x_hat.len();
    let i_kc = DMatrix::identity(n, n) - &gain * c;
    let mut p = &i_kc * &state.p * i_kc.transpose()
        + &gain * gain.transpose() * noise.measurement_var();
    symmetrize(&mut p);
    Ok(KalmanState {
        x_hat,
        p,
        gain,
        innovation,
        step: state.step + 1,
    })
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}
