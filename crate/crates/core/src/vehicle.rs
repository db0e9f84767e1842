//! Surge and heading channel models, GPS/compass measurement geometry and
//! trajectory reconstruction.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::{augment_with_delay, zoh_discretize, SecondOrderParams, StateSpaceModel};

/// Sample period of the vehicle logs (s).
pub const DEFAULT_SAMPLE_PERIOD: f64 = 0.546;
/// Mean Earth radius used by the local projection (m).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
/// Largest latitude offset from the origin accepted by [`to_local_enu`] (deg).
pub const MAX_PROJECTION_OFFSET_DEG: f64 = 1.0;

pub const SURGE_OUTPUT_SCALE: f64 = 1.4162;
pub const HEADING_OUTPUT_SCALE: f64 = 0.200474;

/// Identified surge mass (kg) and drag (N·s/m).
pub const SURGE_MASS: f64 = 0.469;
pub const SURGE_DRAG: f64 = 0.311;
/// Identified yaw inertia (kg·m²) and drag (N·m·s/rad).
pub const YAW_INERTIA: f64 = 4.896;
pub const YAW_DRAG: f64 = 9.087;

pub fn surge_params() -> SecondOrderParams {
    SecondOrderParams {
        inertia: SURGE_MASS,
        drag: SURGE_DRAG,
        input_scale: 1.0,
    }
}

pub fn yaw_params() -> SecondOrderParams {
    SecondOrderParams {
        inertia: YAW_INERTIA,
        drag: YAW_DRAG,
        input_scale: 1.0,
    }
}

fn incremental_output(scale: f64) -> RowDVector<f64> {
    RowDVector::from_row_slice(&[scale, 0.0, -scale])
}

fn literal_model(
    rate: f64,
    velocity_gain: f64,
    b_position: f64,
    output_scale: f64,
    sample_period: f64,
) -> Result<StateSpaceModel> {
    let decay = (-rate * sample_period).exp();
    let coupling = velocity_gain * (1.0 - decay);
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[1.0, coupling, 0.0, 0.0, decay, 0.0, 1.0, 0.0, 0.0],
    );
    let b = DVector::from_column_slice(&[b_position, coupling, 0.0]);
    StateSpaceModel::new(a, b, incremental_output(output_scale), sample_period)
}

/// Augmented surge model: path length, speed, previous path length; output is
/// the scaled path-length increment `1.4162 (x1 - x3)`.
pub fn surge_model(sample_period: f64) -> Result<StateSpaceModel> {
    check_period(sample_period)?;
    let decay = (-0.66397 * sample_period).exp();
    literal_model(
        0.66397,
        1.50625,
        1.50625 * sample_period + 2.26879 * decay,
        SURGE_OUTPUT_SCALE,
        sample_period,
    )
}

/// Augmented heading model: heading, yaw rate, previous heading; output is the
/// scaled heading increment `0.200474 (z1 - z3)`.
pub fn heading_model(sample_period: f64) -> Result<StateSpaceModel> {
    check_period(sample_period)?;
    let decay = (-1.82249 * sample_period).exp();
    literal_model(
        1.82249,
        0.5487,
        0.5487 + 0.301072 * decay,
        HEADING_OUTPUT_SCALE,
        sample_period,
    )
}

/// Incremental-output model rebuilt from physical parameters by exact ZOH
/// discretization, delay augmentation and `C = [1 0 -1]`.
pub fn incremental_model(params: &SecondOrderParams, sample_period: f64) -> Result<StateSpaceModel> {
    augment_with_delay(&zoh_discretize(params, sample_period)?)?.with_output(incremental_output(1.0))
}

fn check_period(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sample period must be positive, got {t}")))
    }
}

/// Smallest signed angle difference, in `(-pi, pi]`.
pub fn wrap_angle(rad: f64) -> f64 {
    let r = (rad + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// Heading in `[0, 360)` degrees.
pub fn wrap_heading_deg(deg: f64) -> f64 {
    let h = deg.rem_euclid(360.0);
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

/// Longitude in `(-180, 180]` degrees.
pub fn wrap_longitude_deg(deg: f64) -> f64 {
    // In-range values pass through untouched so no precision is lost.
    if deg > -180.0 && deg <= 180.0 {
        return deg;
    }
    let l = (deg + 180.0).rem_euclid(360.0) - 180.0;
    if l <= -180.0 {
        l + 360.0
    } else {
        l
    }
}

/// One timestamped GPS fix with compass heading (degrees clockwise from north).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorRecord {
    pub timestamp: f64,
    pub latitude: f64,
    pub longitude: f64,
    pub heading: f64,
}

impl SensorRecord {
    /// Validates latitude and wraps longitude and heading into range.
    pub fn new(timestamp: f64, latitude: f64, longitude: f64, heading: f64) -> Result<Self> {
        if !timestamp.is_finite() || !longitude.is_finite() || !heading.is_finite() {
            return Err(Error::InvalidArgument("sensor record must be finite".into()));
        }
        if !(latitude.abs() <= 90.0) {
            return Err(Error::InvalidArgument(format!(
                "latitude {latitude} outside [-90, 90]"
            )));
        }
        Ok(Self {
            timestamp,
            latitude,
            longitude: wrap_longitude_deg(longitude),
            heading: wrap_heading_deg(heading),
        })
    }

    pub fn heading_rad(&self) -> f64 {
        self.heading.to_radians()
    }
}

/// Local east/north offset in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Enu {
    pub east: f64,
    pub north: f64,
}

/// Equirectangular projection about `origin`.
pub fn to_local_enu(record: &SensorRecord, origin: &SensorRecord) -> Result<Enu> {
    let dlat = record.latitude - origin.latitude;
    if !(dlat.abs() < MAX_PROJECTION_OFFSET_DEG) {
        return Err(Error::OutOfProjection { offset_deg: dlat });
    }
    let dlon = wrap_longitude_deg(record.longitude - origin.longitude);
    Ok(Enu {
        north: EARTH_RADIUS_M * dlat.to_radians(),
        east: EARTH_RADIUS_M * origin.latitude.to_radians().cos() * dlon.to_radians(),
    })
}

/// Inverse of [`to_local_enu`]: `(latitude, longitude)` in degrees.
pub fn from_local_enu(enu: Enu, origin: &SensorRecord) -> Result<(f64, f64)> {
    let dlat = (enu.north / EARTH_RADIUS_M).to_degrees();
    if !(dlat.abs() < MAX_PROJECTION_OFFSET_DEG) {
        return Err(Error::OutOfProjection { offset_deg: dlat });
    }
    let dlon = (enu.east / (EARTH_RADIUS_M * origin.latitude.to_radians().cos())).to_degrees();
    Ok((origin.latitude + dlat, wrap_longitude_deg(origin.longitude + dlon)))
}

/// Chord length, heading increment and body-frame displacement between two fixes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementalMeasurement {
    pub delta_s: f64,
    pub delta_theta: f64,
    pub body_dx: f64,
    pub body_dy: f64,
}

/// Displacement between `prev` and `curr`, projected onto the body frame of
/// `curr` (x forward along the heading, y to starboard).
pub fn chord_measurement(
    prev: &SensorRecord,
    curr: &SensorRecord,
    origin: &SensorRecord,
) -> Result<IncrementalMeasurement> {
    let a = to_local_enu(prev, origin)?;
    let b = to_local_enu(curr, origin)?;
    Ok(chord_from_enu(
        b.north - a.north,
        b.east - a.east,
        prev.heading_rad(),
        curr.heading_rad(),
    ))
}

/// [`chord_measurement`] from an ENU displacement and two headings (rad).
pub fn chord_from_enu(d_north: f64, d_east: f64, prev_heading: f64, curr_heading: f64) -> IncrementalMeasurement {
    let (s, c) = curr_heading.sin_cos();
    let body_dx = d_north * c + d_east * s;
    let body_dy = -d_north * s + d_east * c;
    IncrementalMeasurement {
        delta_s: body_dx.hypot(body_dy),
        delta_theta: wrap_angle(curr_heading - prev_heading),
        body_dx,
        body_dy,
    }
}

/// Reconstructed planar position; `x_north` north-south, `y_east` east-west.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub x_north: f64,
    pub y_east: f64,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconstructionMode {
    /// `X += dS sin(dtheta/2)`, `Y += dS cos(dtheta/2)`.
    Literal,
    /// Same, with `dtheta/2` replaced by `theta_k + dtheta/2`.
    #[default]
    Cumulative,
}

/// Dead-reckons a path from `(delta_s, delta_theta)` increments.
///
/// The angle is measured from the `y_east` axis toward `x_north`, so a compass
/// heading `psi` (clockwise from north) corresponds to `pi/2 - psi` and a
/// compass increment to its negation; see [`compass_to_path_angle`].
/// Returns `increments.len() + 1` points starting at `start`.
pub fn reconstruct_trajectory(
    increments: &[(f64, f64)],
    start: TrajectoryPoint,
    initial_heading: f64,
    mode: ReconstructionMode,
) -> Vec<TrajectoryPoint> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    out.push(start);
    let mut p = start;
    let mut theta = initial_heading;
    for &(ds, dtheta) in increments {
        let angle = match mode {
            ReconstructionMode::Literal => dtheta / 2.0,
            ReconstructionMode::Cumulative => theta + dtheta / 2.0,
        };
        theta += dtheta;
        p = TrajectoryPoint {
            x_north: p.x_north + ds * angle.sin(),
            y_east: p.y_east + ds * angle.cos(),
            step: p.step + 1,
        };
        out.push(p);
    }
    out
}

/// Compass heading (rad, clockwise from north) to the reconstruction angle.
pub fn compass_to_path_angle(heading: f64) -> f64 {
    PI / 2.0 - heading
}
