//! Per-step reports, run summaries and report comparison.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ChannelConfig, RunConfig};
use super::io::{format_table, parse_table, Row, SensorLog, TruthRow};
use crate::batch::{self, Execution};
use crate::error::{Error, Result};
use crate::linsys::{dc_gain, StateSpaceModel};
use crate::rcie::{AieChannel, FixedInputKalman};
use crate::vehicle::{
    chord_measurement, compass_to_path_angle, heading_model, reconstruct_trajectory,
    surge_model, to_local_enu, ReconstructionMode, SensorRecord, TrajectoryPoint,
};

/// `theta` is considered settled once every later step moves it by less than this.
pub const THETA_CONVERGENCE_TOL: f64 = 1e-3;

pub const REPORT_HEADER: [&str; 14] = [
    "k",
    "t",
    "ds_meas",
    "ds_ref",
    "ds_aie",
    "ds_kf",
    "u_hat_surge",
    "theta_step_surge",
    "dtheta_meas",
    "dtheta_ref",
    "dtheta_aie",
    "dtheta_kf",
    "u_hat_heading",
    "theta_step_heading",
];

pub const TRAJECTORY_HEADER: [&str; 8] = [
    "k",
    "t",
    "x_north_aie",
    "y_east_aie",
    "x_north_kf",
    "y_east_kf",
    "x_north_ref",
    "y_east_ref",
];

/// Per-step values of one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRow {
    pub measured: Option<f64>,
    pub reference: Option<f64>,
    pub aie: f64,
    pub kf: f64,
    pub u_hat: f64,
    pub theta_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub k: usize,
    pub t: f64,
    pub surge: ChannelRow,
    pub heading: ChannelRow,
}

impl ReportRow {
    fn fields(&self) -> Vec<Option<f64>> {
        let ch = |c: &ChannelRow| {
            [
                c.measured,
                c.reference,
                Some(c.aie),
                Some(c.kf),
                Some(c.u_hat),
                Some(c.theta_step),
            ]
        };
        let mut f = vec![Some(self.k as f64), Some(self.t)];
        f.extend(ch(&self.surge));
        f.extend(ch(&self.heading));
        f
    }

    fn from_row(row: &Row, path: &Path) -> Result<Self> {
        let f = &row.fields;
        let need = |i: usize| {
            f[i].ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: row.line,
                message: format!("{} is missing", REPORT_HEADER[i]),
            })
        };
        let ch = |o: usize| -> Result<ChannelRow> {
            Ok(ChannelRow {
                measured: f[o],
                reference: f[o + 1],
                aie: need(o + 2)?,
                kf: need(o + 3)?,
                u_hat: need(o + 4)?,
                theta_step: need(o + 5)?,
            })
        };
        let k = need(0)?;
        if k < 0.0 || k.fract() != 0.0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: row.line,
                message: "k must be a non-negative integer".into(),
            });
        }
        Ok(Self {
            k: k as usize,
            t: need(1)?,
            surge: ch(2)?,
            heading: ch(8)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    pub t: f64,
    pub aie: TrajectoryPoint,
    pub kf: TrajectoryPoint,
    pub reference: Option<(f64, f64)>,
}

/// Summary metrics of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSummary {
    pub rmse_aie: f64,
    pub rmse_kf: f64,
    /// RMSE of the raw measurement against the reference (0 when the
    /// reference is the measurement itself).
    pub rmse_measured: f64,
    /// First step after which `theta` always moves less than
    /// [`THETA_CONVERGENCE_TOL`]; -1 if it never settles.
    pub theta_convergence_step: i64,
    pub u_hat_final: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    Truth,
    Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub config_hash: String,
    pub steps: usize,
    pub reference: ReferenceKind,
    pub dc_gain_surge: f64,
    pub dc_gain_heading: f64,
    pub endpoint_error_m: f64,
    pub endpoint_error_kf_m: f64,
    pub surge: ChannelSummary,
    pub heading: ChannelSummary,
}

impl Summary {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("summary is always serializable")
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e
                .span()
                .map_or(0, |s| text[..s.start].matches('\n').count() as u64 + 1),
            message: e.message().to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
    pub trajectory: Vec<TrajectoryRow>,
    pub summary: Summary,
}

impl RunReport {
    pub fn report_csv(&self) -> String {
        format_table(&REPORT_HEADER, self.rows.iter().map(ReportRow::fields))
    }

    pub fn trajectory_csv(&self) -> String {
        format_table(
            &TRAJECTORY_HEADER,
            self.trajectory.iter().map(|r| {
                vec![
                    Some(r.k as f64),
                    Some(r.t),
                    Some(r.aie.x_north),
                    Some(r.aie.y_east),
                    Some(r.kf.x_north),
                    Some(r.kf.y_east),
                    r.reference.map(|p| p.0),
                    r.reference.map(|p| p.1),
                ]
            }),
        )
    }
}

pub fn parse_report_rows(text: &str, path: &Path) -> Result<Vec<ReportRow>> {
    parse_table(text, &REPORT_HEADER, path)?
        .iter()
        .map(|r| ReportRow::from_row(r, path))
        .collect()
}

/// Sensor log placed on the sample grid: `fixes[k]` is the record at step
/// `k` (relative to the first record) or `None` for a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub fixes: Vec<Option<SensorRecord>>,
}

/// Tolerated timestamp jitter as a fraction of the sample period.
const GRID_JITTER: f64 = 0.25;

pub fn place_on_grid(log: &SensorLog, sample_period: f64) -> Result<Grid> {
    let start = log.records[0].timestamp;
    let mut fixes: Vec<Option<SensorRecord>> = Vec::new();
    for (rec, &line) in log.records.iter().zip(&log.lines) {
        let pos = (rec.timestamp - start) / sample_period;
        let k = pos.round();
        if (pos - k).abs() > GRID_JITTER {
            return Err(Error::Parse {
                path: log.path.clone(),
                line,
                message: format!(
                    "timestamp {} is off the {} s sample grid",
                    rec.timestamp, sample_period
                ),
            });
        }
        let k = k as usize;
        if k < fixes.len() {
            return Err(Error::Parse {
                path: log.path.clone(),
                line,
                message: "two records fall on the same sample".into(),
            });
        }
        fixes.resize(k, None);
        fixes.push(Some(*rec));
    }
    if fixes.len() < 2 {
        return Err(Error::Parse {
            path: log.path.clone(),
            line: log.lines[0],
            message: "need at least two records".into(),
        });
    }
    Ok(Grid { start, fixes })
}

// Truth samples aligned with the grid; `None` past the end of the truth file.
fn align_truth(grid: &Grid, truth: &[TruthRow], sample_period: f64) -> Result<Vec<Option<TruthRow>>> {
    let Some(first) = truth.first() else {
        return Err(Error::Validation("truth file has no rows".into()));
    };
    let offset = ((grid.start - first.t) / sample_period).round();
    if offset < 0.0 || ((grid.start - first.t) / sample_period - offset).abs() > GRID_JITTER {
        return Err(Error::Validation(
            "sensor log does not line up with the truth file".into(),
        ));
    }
    let offset = offset as usize;
    Ok((0..grid.fixes.len())
        .map(|k| truth.get(offset + k).copied())
        .collect())
}

struct ChannelRun {
    aie: Vec<f64>,
    kf: Vec<f64>,
    u_hat: Vec<f64>,
    theta_step: Vec<f64>,
}

fn run_channel(
    name: &str,
    model: StateSpaceModel,
    cfg: &ChannelConfig,
    config: &RunConfig,
    measurements: &[Option<f64>],
) -> Result<ChannelRun> {
    let n = model.state_dim();
    let noise = cfg.noise(n)?;
    let mut aie = AieChannel::new(
        name,
        model.clone(),
        noise.clone(),
        cfg.hyperparameters(),
        config.aie_options(),
        cfg.prior(n),
    )?;
    let mut kf = FixedInputKalman {
        model,
        noise,
        input: config.baseline_input,
        state: cfg.prior(n),
    };
    let mut out = ChannelRun {
        aie: Vec::with_capacity(measurements.len()),
        kf: Vec::with_capacity(measurements.len()),
        u_hat: Vec::with_capacity(measurements.len()),
        theta_step: Vec::with_capacity(measurements.len()),
    };
    for &y in measurements {
        let step = aie.step(y)?;
        out.aie.push(step.output_estimate);
        out.kf.push(kf.step(y)?);
        out.u_hat.push(step.u_hat);
        out.theta_step.push(step.theta_change);
    }
    Ok(out)
}

fn rmse(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in pairs {
        sum += (a - b).powi(2);
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        (sum / n as f64).sqrt()
    }
}

pub fn theta_convergence_step(rows: &[ReportRow], theta_step: impl Fn(&ReportRow) -> f64) -> i64 {
    let mut settled_from = None;
    for r in rows.iter().rev() {
        if theta_step(r) < THETA_CONVERGENCE_TOL {
            settled_from = Some(r.k);
        } else {
            break;
        }
    }
    settled_from.map_or(-1, |k| k as i64)
}

fn channel_summary(rows: &[ReportRow], pick: impl Fn(&ReportRow) -> &ChannelRow) -> ChannelSummary {
    let with_ref = || {
        rows.iter()
            .map(&pick)
            .filter_map(|c| c.reference.map(|r| (c, r)))
    };
    ChannelSummary {
        rmse_aie: rmse(with_ref().map(|(c, r)| (c.aie, r))),
        rmse_kf: rmse(with_ref().map(|(c, r)| (c.kf, r))),
        rmse_measured: rmse(with_ref().filter_map(|(c, r)| c.measured.map(|m| (m, r)))),
        theta_convergence_step: theta_convergence_step(rows, |r| pick(r).theta_step),
        u_hat_final: rows.last().map_or(0.0, |r| pick(r).u_hat),
    }
}

/// Runs both estimators on both channels over a sensor log.
///
/// With `truth`, reference values are the true increments and positions;
/// without it the measurements themselves are the reference.
pub fn run_estimate(
    config: &RunConfig,
    log: &SensorLog,
    truth: Option<&[TruthRow]>,
) -> Result<RunReport> {
    config.validate()?;
    let t_s = config.sample_period;
    let grid = place_on_grid(log, t_s)?;
    let origin = grid.fixes[0].expect("grid starts with a fix");
    let truth = truth.map(|t| align_truth(&grid, t, t_s)).transpose()?;
    let steps = grid.fixes.len() - 1;

    let mut ds_meas = vec![None; steps];
    let mut dth_meas = vec![None; steps];
    for k in 1..=steps {
        if let (Some(a), Some(b)) = (&grid.fixes[k - 1], &grid.fixes[k]) {
            let m = chord_measurement(a, b, &origin)?;
            ds_meas[k - 1] = Some(m.delta_s);
            dth_meas[k - 1] = Some(m.delta_theta);
        }
    }
    let reference = |k: usize| -> (Option<f64>, Option<f64>) {
        match &truth {
            Some(tr) => match (tr[k - 1], tr[k]) {
                (Some(a), Some(b)) => (
                    Some((b.x_north - a.x_north).hypot(b.y_east - a.y_east)),
                    Some(b.heading - a.heading),
                ),
                _ => (None, None),
            },
            None => (ds_meas[k - 1], dth_meas[k - 1]),
        }
    };

    let (surge, heading) = batch::join(
        Execution::default(),
        || run_channel("surge", surge_model(t_s)?, &config.surge, config, &ds_meas),
        || {
            run_channel(
                "heading",
                heading_model(t_s)?,
                &config.heading,
                config,
                &dth_meas,
            )
        },
    );
    let (surge, heading) = (surge?, heading?);

    let rows: Vec<ReportRow> = (1..=steps)
        .map(|k| {
            let (ds_ref, dth_ref) = reference(k);
            let i = k - 1;
            ReportRow {
                k,
                t: grid.start + k as f64 * t_s,
                surge: ChannelRow {
                    measured: ds_meas[i],
                    reference: ds_ref,
                    aie: surge.aie[i],
                    kf: surge.kf[i],
                    u_hat: surge.u_hat[i],
                    theta_step: surge.theta_step[i],
                },
                heading: ChannelRow {
                    measured: dth_meas[i],
                    reference: dth_ref,
                    aie: heading.aie[i],
                    kf: heading.kf[i],
                    u_hat: heading.u_hat[i],
                    theta_step: heading.theta_step[i],
                },
            }
        })
        .collect();

    // Dead reckoning from the first fix; compass increments flip sign in the
    // reconstruction angle.
    let start = TrajectoryPoint {
        x_north: 0.0,
        y_east: 0.0,
        step: 0,
    };
    let angle0 = compass_to_path_angle(origin.heading_rad());
    let mode = config.reconstruction;
    let aie_inc: Vec<(f64, f64)> = rows.iter().map(|r| (r.surge.aie, -r.heading.aie)).collect();
    let kf_inc: Vec<(f64, f64)> = rows.iter().map(|r| (r.surge.kf, -r.heading.kf)).collect();
    let aie_path = reconstruct_trajectory(&aie_inc, start, angle0, mode);
    let kf_path = reconstruct_trajectory(&kf_inc, start, angle0, mode);
    let ref_path: Vec<Option<(f64, f64)>> = match &truth {
        Some(tr) => {
            let base = tr[0].expect("truth covers the first fix");
            tr.iter()
                .map(|s| s.map(|s| (s.x_north - base.x_north, s.y_east - base.y_east)))
                .collect()
        }
        None => grid
            .fixes
            .iter()
            .map(|f| {
                f.map(|f| to_local_enu(&f, &origin).map(|e| (e.north, e.east)))
                    .transpose()
            })
            .collect::<Result<_>>()?,
    };
    let trajectory: Vec<TrajectoryRow> = (0..=steps)
        .map(|k| TrajectoryRow {
            k,
            t: grid.start + k as f64 * t_s,
            aie: aie_path[k],
            kf: kf_path[k],
            reference: ref_path[k],
        })
        .collect();
    let endpoint = |p: &TrajectoryPoint| match ref_path[steps] {
        Some((n, e)) => (p.x_north - n).hypot(p.y_east - e),
        None => f64::NAN,
    };

    let summary = Summary {
        config_hash: config.hash(),
        steps,
        reference: if truth.is_some() {
            ReferenceKind::Truth
        } else {
            ReferenceKind::Measurement
        },
        dc_gain_surge: dc_gain(&surge_model(t_s)?)?,
        dc_gain_heading: dc_gain(&heading_model(t_s)?)?,
        endpoint_error_m: endpoint(&aie_path[steps]),
        endpoint_error_kf_m: endpoint(&kf_path[steps]),
        surge: channel_summary(&rows, |r| &r.surge),
        heading: channel_summary(&rows, |r| &r.heading),
    };
    Ok(RunReport {
        rows,
        trajectory,
        summary,
    })
}

/// Dead-reckons the measured increments of a log. Consecutive fixes are
/// used even across gaps.
pub fn reconstruct_log(log: &SensorLog, mode: ReconstructionMode) -> Result<Vec<(f64, TrajectoryPoint)>> {
    let origin = log.records[0];
    let mut inc = Vec::with_capacity(log.records.len());
    for w in log.records.windows(2) {
        let m = chord_measurement(&w[0], &w[1], &origin)?;
        inc.push((m.delta_s, -m.delta_theta));
    }
    let start = TrajectoryPoint {
        x_north: 0.0,
        y_east: 0.0,
        step: 0,
    };
    let path = reconstruct_trajectory(&inc, start, compass_to_path_angle(origin.heading_rad()), mode);
    Ok(log.records.iter().map(|r| r.timestamp).zip(path).collect())
}

pub fn format_reconstruction(points: &[(f64, TrajectoryPoint)]) -> String {
    format_table(
        &["k", "t", "x_north", "y_east"],
        points.iter().map(|(t, p)| {
            vec![
                Some(p.step as f64),
                Some(*t),
                Some(p.x_north),
                Some(p.y_east),
            ]
        }),
    )
}

/// A report as read back from disk for comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredReport {
    pub rows: Vec<ReportRow>,
    pub summary: Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Winner {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub a: f64,
    pub b: f64,
    /// `b / a`.
    pub ratio: f64,
    pub winner: Winner,
}

impl MetricComparison {
    fn lower_is_better(a: f64, b: f64) -> Self {
        let winner = if a == b || (a.is_nan() && b.is_nan()) {
            Winner::Tie
        } else if b < a || a.is_nan() {
            Winner::B
        } else {
            Winner::A
        };
        let ratio = if a == b { 1.0 } else { b / a };
        Self {
            a,
            b,
            ratio,
            winner,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelComparison {
    /// AIE/baseline RMSE ratio of each report.
    pub aie_over_kf_a: f64,
    pub aie_over_kf_b: f64,
    pub rmse_aie: MetricComparison,
    pub rmse_kf: MetricComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub steps: usize,
    pub same_config: bool,
    pub surge: ChannelComparison,
    pub heading: ChannelComparison,
    pub endpoint_error_m: MetricComparison,
    #[serde(skip)]
    pub deltas: Vec<Vec<Option<f64>>>,
}

pub const COMPARISON_HEADER: [&str; 8] = [
    "k",
    "t",
    "d_ds_aie",
    "d_ds_kf",
    "d_u_hat_surge",
    "d_dtheta_aie",
    "d_dtheta_kf",
    "d_u_hat_heading",
];

impl Comparison {
    /// True when run B is strictly better on at least one metric.
    pub fn b_wins_any(&self) -> bool {
        [
            self.surge.rmse_aie,
            self.surge.rmse_kf,
            self.heading.rmse_aie,
            self.heading.rmse_kf,
            self.endpoint_error_m,
        ]
        .iter()
        .any(|m| m.winner == Winner::B)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("comparison is always serializable")
    }

    pub fn deltas_csv(&self) -> String {
        format_table(&COMPARISON_HEADER, self.deltas.iter().cloned())
    }
}

fn compare_channel(a: &ChannelSummary, b: &ChannelSummary) -> ChannelComparison {
    ChannelComparison {
        aie_over_kf_a: a.rmse_aie / a.rmse_kf,
        aie_over_kf_b: b.rmse_aie / b.rmse_kf,
        rmse_aie: MetricComparison::lower_is_better(a.rmse_aie, b.rmse_aie),
        rmse_kf: MetricComparison::lower_is_better(a.rmse_kf, b.rmse_kf),
    }
}

/// Per-step deltas (B − A) and per-metric winners of two reports on the
/// same step grid.
pub fn run_compare(a: &StoredReport, b: &StoredReport) -> Result<Comparison> {
    if a.rows.len() != b.rows.len() {
        return Err(Error::IncompatibleReports(format!(
            "{} vs {} steps",
            a.rows.len(),
            b.rows.len()
        )));
    }
    let mut deltas = Vec::with_capacity(a.rows.len());
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        if ra.k != rb.k || (ra.t - rb.t).abs() > 1e-9 * ra.t.abs().max(1.0) {
            return Err(Error::IncompatibleReports(format!(
                "step grids differ at k = {} (t = {} vs {})",
                ra.k, ra.t, rb.t
            )));
        }
        deltas.push(vec![
            Some(ra.k as f64),
            Some(ra.t),
            Some(rb.surge.aie - ra.surge.aie),
            Some(rb.surge.kf - ra.surge.kf),
            Some(rb.surge.u_hat - ra.surge.u_hat),
            Some(rb.heading.aie - ra.heading.aie),
            Some(rb.heading.kf - ra.heading.kf),
            Some(rb.heading.u_hat - ra.heading.u_hat),
        ]);
    }
    Ok(Comparison {
        steps: a.rows.len(),
        same_config: a.summary.config_hash == b.summary.config_hash,
        surge: compare_channel(&a.summary.surge, &b.summary.surge),
        heading: compare_channel(&a.summary.heading, &b.summary.heading),
        endpoint_error_m: MetricComparison::lower_is_better(
            a.summary.endpoint_error_m,
            b.summary.endpoint_error_m,
        ),
        deltas,
    })
}
