//! Time integration of the constructed fields with per-step diagnostics.
//!
//! Stop events (leaving the maximal-rank set, exceeding `r_max`) are checked
//! on accepted steps only. There is no dense output.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fieldforge::{norm, FieldError, SystemSpec};

pub const DEFAULT_R_MAX: f64 = 1e6;
pub const DEFAULT_MAX_STEPS: usize = 1_000_000;
const MAX_REJECTIONS: usize = 60;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("initial point is outside the maximal-rank set (margin {margin:e})")]
    OutsideMrk { margin: f64 },
    #[error("non-finite field value at the initial point")]
    NonFinite,
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error("empty trajectory")]
    Empty,
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Rk4Fixed { dt: f64 },
    Rkf45Adaptive { abs_tol: f64, rel_tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub t_end: f64,
    pub r_max: f64,
    /// Record every `stride`-th accepted step; the first and last are always kept.
    pub stride: usize,
    pub max_steps: usize,
}

impl IntegratorConfig {
    pub fn rk4(dt: f64, t_end: f64) -> Self {
        IntegratorConfig {
            method: Method::Rk4Fixed { dt },
            t_end,
            r_max: DEFAULT_R_MAX,
            stride: 1,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn rkf45(tol: f64, t_end: f64) -> Self {
        IntegratorConfig {
            method: Method::Rkf45Adaptive {
                abs_tol: tol,
                rel_tol: tol,
            },
            t_end,
            r_max: DEFAULT_R_MAX,
            stride: 1,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn with_t_end(self, t_end: f64) -> Self {
        IntegratorConfig { t_end, ..self }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::Config(m.to_string()));
        match self.method {
            Method::Rk4Fixed { dt } if !(dt.is_finite() && dt > 0.0) => return bad("dt must be > 0"),
            Method::Rkf45Adaptive { abs_tol, rel_tol }
                if !(abs_tol.is_finite() && rel_tol.is_finite() && abs_tol > 0.0 && rel_tol >= 0.0) =>
            {
                return bad("tolerances must be positive")
            }
            _ => {}
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return bad("t_end must be > 0");
        }
        if !(self.r_max > 0.0) {
            return bad("R_max must be > 0");
        }
        if self.stride == 0 {
            return bad("stride must be >= 1");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be >= 1");
        }
        Ok(())
    }
}

/// Which field to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldKind {
    /// `X + X₀^λ` (just `X₀^λ` without a base field).
    #[default]
    Perturbed,
    /// `X₀^λ` alone.
    Stabilizer,
    /// The unperturbed base field `X` (zero when absent).
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ReachedTEnd,
    LeftMrk,
    Diverged,
    StepFailure,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::ReachedTEnd => "reached_t_end",
            StopReason::LeftMrk => "left_mrk",
            StopReason::Diverged => "diverged",
            StopReason::StepFailure => "step_failure",
        }
    }
}

/// Recorded state and diagnostics at an accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    /// `F_{p′}(x)`.
    pub f: f64,
    pub d: Vec<f64>,
    pub i: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub stop_reason: StopReason,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl Trajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.samples.iter().map(|s| s.x.as_slice())
    }

    pub fn first(&self) -> Option<&Sample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn completed(&self) -> bool {
        self.stop_reason == StopReason::ReachedTEnd
    }

    /// `max_t max_j |I_j(x(t)) − I_j(x₀)| / (1 + |I_j(x₀)|)`.
    pub fn conserved_drift(&self) -> f64 {
        let Some(first) = self.first() else { return 0.0 };
        relative_drift(self.samples.iter().map(|s| &s.i), &first.i, 0..first.i.len())
    }

    /// Same drift measure for `D_i` with `i` in `range` (0-based).
    pub fn dissipated_drift(&self, range: std::ops::Range<usize>) -> f64 {
        let Some(first) = self.first() else { return 0.0 };
        relative_drift(self.samples.iter().map(|s| &s.d), &first.d, range)
    }

    /// `max |F(x(t)) − e^{−2λt} F(x₀)| / max(F(x₀), 1e−300)`.
    pub fn decay_residual(&self, lambda: f64) -> Result<f64, FlowError> {
        decay_residual(self, lambda)
    }

    /// Ordinary least-squares slope of `ln F` against `t`, using samples with
    /// `F > 1e−280`. `None` with fewer than two usable samples.
    pub fn log_decay_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .samples
            .iter()
            .filter(|s| s.f > 1e-280)
            .map(|s| (s.t, s.f.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let m = pts.len() as f64;
        let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let ym = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let Some(first) = self.first() else {
            writeln!(w, "t,F,margin")?;
            return writeln!(w, "# format=1 stop_reason={}", self.stop_reason.as_str());
        };
        let mut header = vec!["t".to_string()];
        header.extend((1..=first.x.len()).map(|i| format!("x{i}")));
        header.push("F".into());
        header.extend((1..=first.d.len()).map(|i| format!("D{i}")));
        header.extend((1..=first.i.len()).map(|i| format!("I{i}")));
        header.push("margin".into());
        writeln!(w, "{}", header.join(","))?;
        for s in &self.samples {
            let mut row = vec![fmt_num(s.t)];
            row.extend(s.x.iter().map(|&v| fmt_num(v)));
            row.push(fmt_num(s.f));
            row.extend(s.d.iter().map(|&v| fmt_num(v)));
            row.extend(s.i.iter().map(|&v| fmt_num(v)));
            row.push(fmt_num(s.margin));
            writeln!(w, "{}", row.join(","))?;
        }
        writeln!(w, "# format=1 stop_reason={}", self.stop_reason.as_str())
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

fn relative_drift<'a>(
    rows: impl Iterator<Item = &'a Vec<f64>>,
    start: &[f64],
    range: std::ops::Range<usize>,
) -> f64 {
    rows.flat_map(|row| {
        range
            .clone()
            .map(move |j| (row[j] - start[j]).abs() / (1.0 + start[j].abs()))
    })
    .fold(0.0, f64::max)
}

pub fn decay_residual(traj: &Trajectory, lambda: f64) -> Result<f64, FlowError> {
    let first = traj.first().ok_or(FlowError::Empty)?;
    let f0 = first.f;
    let t0 = first.t;
    let scale = f0.max(1e-300);
    Ok(traj
        .samples
        .iter()
        .map(|s| (s.f - (-2.0 * lambda * (s.t - t0)).exp() * f0).abs() / scale)
        .fold(0.0, f64::max))
}

enum StageError {
    Rank,
    Other,
}

fn field(spec: &SystemSpec, kind: FieldKind, x: &[f64]) -> Result<Vec<f64>, StageError> {
    let v = match kind {
        FieldKind::Perturbed => spec.x_lambda(x),
        FieldKind::Stabilizer => spec.x0_lambda(x),
        FieldKind::Base => spec
            .base_at(x)
            .map(|b| b.unwrap_or_else(|| vec![0.0; x.len()]))
            .map_err(FieldError::from),
    };
    match v {
        Ok(v) if v.iter().all(|c| c.is_finite()) => Ok(v),
        Ok(_) => Err(StageError::Other),
        Err(FieldError::RankDeficient { .. }) => Err(StageError::Rank),
        Err(_) => Err(StageError::Other),
    }
}

fn sample(spec: &SystemSpec, t: f64, x: Vec<f64>) -> Option<Sample> {
    let d = spec.d_values(&x).ok()?;
    let i = spec.i_values(&x).ok()?;
    let f = spec.f_value(&x).ok()?;
    let margin = spec.mrk_check(&x).margin;
    Some(Sample {
        t,
        x,
        f,
        d,
        i,
        margin,
    })
}

fn axpy(x: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = x.to_vec();
    for (c, k) in terms {
        for (o, ki) in out.iter_mut().zip(k.iter()) {
            *o += h * c * ki;
        }
    }
    out
}

fn rk4_step(
    spec: &SystemSpec,
    kind: FieldKind,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>, StageError> {
    let k1 = field(spec, kind, x)?;
    let k2 = field(spec, kind, &axpy(x, h, &[(0.5, &k1)]))?;
    let k3 = field(spec, kind, &axpy(x, h, &[(0.5, &k2)]))?;
    let k4 = field(spec, kind, &axpy(x, h, &[(1.0, &k3)]))?;
    Ok(axpy(
        x,
        h,
        &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
    ))
}

/// One Fehlberg 4(5) step; returns the fifth-order solution and the error estimate.
fn rkf45_step(
    spec: &SystemSpec,
    kind: FieldKind,
    x: &[f64],
    h: f64,
) -> Result<(Vec<f64>, Vec<f64>), StageError> {
    let k1 = field(spec, kind, x)?;
    let k2 = field(spec, kind, &axpy(x, h, &[(0.25, &k1)]))?;
    let k3 = field(spec, kind, &axpy(x, h, &[(3.0 / 32.0, &k1), (9.0 / 32.0, &k2)]))?;
    let k4 = field(
        spec,
        kind,
        &axpy(
            x,
            h,
            &[
                (1932.0 / 2197.0, &k1),
                (-7200.0 / 2197.0, &k2),
                (7296.0 / 2197.0, &k3),
            ],
        ),
    )?;
    let k5 = field(
        spec,
        kind,
        &axpy(
            x,
            h,
            &[
                (439.0 / 216.0, &k1),
                (-8.0, &k2),
                (3680.0 / 513.0, &k3),
                (-845.0 / 4104.0, &k4),
            ],
        ),
    )?;
    let k6 = field(
        spec,
        kind,
        &axpy(
            x,
            h,
            &[
                (-8.0 / 27.0, &k1),
                (2.0, &k2),
                (-3544.0 / 2565.0, &k3),
                (1859.0 / 4104.0, &k4),
                (-11.0 / 40.0, &k5),
            ],
        ),
    )?;
    let fifth = axpy(
        x,
        h,
        &[
            (16.0 / 135.0, &k1),
            (6656.0 / 12825.0, &k3),
            (28561.0 / 56430.0, &k4),
            (-9.0 / 50.0, &k5),
            (2.0 / 55.0, &k6),
        ],
    );
    // b5 − b4
    let e = [
        16.0 / 135.0 - 25.0 / 216.0,
        6656.0 / 12825.0 - 1408.0 / 2565.0,
        28561.0 / 56430.0 - 2197.0 / 4104.0,
        -9.0 / 50.0 + 1.0 / 5.0,
        2.0 / 55.0,
    ];
    let err = axpy(
        &vec![0.0; x.len()],
        h,
        &[(e[0], &k1), (e[1], &k3), (e[2], &k4), (e[3], &k5), (e[4], &k6)],
    );
    Ok((fifth, err))
}

/// Integrate `dx/dt = field(x)` from `x0` over `[0, t_end]`.
pub fn integrate(
    spec: &SystemSpec,
    kind: FieldKind,
    x0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory, FlowError> {
    cfg.validate()?;
    let rank = spec.mrk_check(x0);
    if !rank.in_mrk {
        return Err(FlowError::OutsideMrk {
            margin: rank.margin,
        });
    }
    match field(spec, kind, x0) {
        Ok(_) => {}
        Err(StageError::Rank) => {
            return Err(FlowError::OutsideMrk {
                margin: rank.margin,
            })
        }
        Err(StageError::Other) => return Err(FlowError::NonFinite),
    }
    let first = sample(spec, 0.0, x0.to_vec()).ok_or(FlowError::NonFinite)?;

    let mut traj = Trajectory {
        samples: vec![first],
        stop_reason: StopReason::ReachedTEnd,
        accepted_steps: 0,
        rejected_steps: 0,
    };
    let mut t = 0.0;
    let mut x = x0.to_vec();
    let mut h = match cfg.method {
        Method::Rk4Fixed { dt } => dt,
        Method::Rkf45Adaptive { .. } => (cfg.t_end * 1e-3).min(1e-2),
    };
    let mut rejections = 0usize;

    loop {
        if t >= cfg.t_end {
            break;
        }
        if traj.accepted_steps >= cfg.max_steps {
            traj.stop_reason = StopReason::StepFailure;
            break;
        }
        let remaining = cfg.t_end - t;
        let (step, landing) = if h >= remaining * (1.0 - 1e-12) {
            (remaining, true)
        } else {
            (h, false)
        };

        let next = match cfg.method {
            Method::Rk4Fixed { .. } => match rk4_step(spec, kind, &x, step) {
                Ok(v) => v,
                Err(e) => {
                    traj.stop_reason = match e {
                        StageError::Rank => StopReason::LeftMrk,
                        StageError::Other => StopReason::StepFailure,
                    };
                    break;
                }
            },
            Method::Rkf45Adaptive { abs_tol, rel_tol } => {
                let attempt = rkf45_step(spec, kind, &x, step);
                let (cand, err) = match attempt {
                    Ok(pair) => pair,
                    Err(e) => {
                        traj.rejected_steps += 1;
                        rejections += 1;
                        h = step * 0.25;
                        if rejections > MAX_REJECTIONS || h <= 1e-14 * t.abs().max(1.0) {
                            traj.stop_reason = if matches!(e, StageError::Rank) {
                                StopReason::LeftMrk
                            } else {
                                StopReason::StepFailure
                            };
                            break;
                        }
                        continue;
                    }
                };
                let ratio = cand
                    .iter()
                    .zip(&x)
                    .zip(&err)
                    .map(|((c, xi), e)| e.abs() / (abs_tol + rel_tol * c.abs().max(xi.abs())))
                    .fold(0.0, f64::max);
                let finite = cand.iter().all(|c| c.is_finite()) && ratio.is_finite();
                let factor = if !finite {
                    0.25
                } else if ratio == 0.0 {
                    5.0
                } else {
                    (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
                };
                if !finite || ratio > 1.0 {
                    traj.rejected_steps += 1;
                    rejections += 1;
                    h = step * factor.min(0.9);
                    if rejections > MAX_REJECTIONS || h <= 1e-14 * t.abs().max(1.0) {
                        traj.stop_reason = StopReason::StepFailure;
                        break;
                    }
                    continue;
                }
                rejections = 0;
                h = step * factor;
                cand
            }
        };

        t = if landing { cfg.t_end } else { t + step };
        traj.accepted_steps += 1;
        x = next;

        if !x.iter().all(|c| c.is_finite()) {
            traj.stop_reason = StopReason::Diverged;
            break;
        }
        let Some(s) = sample(spec, t, x.clone()) else {
            traj.stop_reason = StopReason::StepFailure;
            break;
        };
        let diverged = norm(&x) > cfg.r_max;
        let left = s.margin <= spec.rank_tol();
        let done = landing || diverged || left;
        if done || traj.accepted_steps % cfg.stride == 0 {
            traj.samples.push(s);
        }
        if diverged {
            traj.stop_reason = StopReason::Diverged;
            break;
        }
        if left {
            traj.stop_reason = StopReason::LeftMrk;
            break;
        }
    }
    Ok(traj)
}

/// Integrate from several initial points in parallel; output order matches input.
pub fn integrate_many(
    spec: &SystemSpec,
    kind: FieldKind,
    starts: &[Vec<f64>],
    cfg: &IntegratorConfig,
) -> Vec<Result<Trajectory, FlowError>> {
    starts
        .par_iter()
        .map(|x0| integrate(spec, kind, x0, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear() -> SystemSpec {
        SystemSpec::builder(&["x", "y"])
            .dissipated(&["x", "y"])
            .targets(&[0.0, 0.0])
            .lambda(1.0)
            .build()
            .unwrap()
    }

    fn circle(lambda: f64) -> SystemSpec {
        SystemSpec::builder(&["x", "y"])
            .dissipated(&["x^2 + y^2"])
            .targets(&[1.0])
            .lambda(lambda)
            .build()
            .unwrap()
    }

    #[test]
    fn linear_decay_matches_closed_form() {
        let tr = integrate(&linear(), FieldKind::Perturbed, &[1.0, 0.0], &IntegratorConfig::rkf45(1e-10, 1.0))
            .unwrap();
        assert!(tr.completed());
        let last = tr.last().unwrap();
        assert_eq!(last.t, 1.0);
        assert!((last.x[0] - (-1.0f64).exp()).abs() < 1e-7);
        assert!(last.x[1].abs() < 1e-15);
    }

    #[test]
    fn rotation_returns_after_full_period() {
        let s = SystemSpec::builder(&["x", "y"])
            .dissipated(&["x^2 + y^2"])
            .targets(&[1.0])
            .base_field(&["-y", "x"])
            .lambda(0.0)
            .build()
            .unwrap();
        let tp = 2.0 * std::f64::consts::PI;
        let tr = integrate(&s, FieldKind::Perturbed, &[1.0, 0.0], &IntegratorConfig::rkf45(1e-10, tp)).unwrap();
        let last = tr.last().unwrap();
        assert!((last.x[0] - 1.0).abs() < 1e-8 && last.x[1].abs() < 1e-8, "{last:?}");
        let off = integrate(&s, FieldKind::Perturbed, &[2.0, 0.0], &IntegratorConfig::rkf45(1e-10, tp)).unwrap();
        assert!(off.decay_residual(0.0).unwrap() < 1e-8);
    }

    #[test]
    fn halts_before_gradient_vanishes() {
        let s = SystemSpec::builder(&["x"])
            .dissipated(&["x^2"])
            .targets(&[0.0])
            .lambda(1.0)
            .build()
            .unwrap();
        let tr = integrate(&s, FieldKind::Perturbed, &[0.5], &IntegratorConfig::rkf45(1e-10, 100.0)).unwrap();
        assert_eq!(tr.stop_reason, StopReason::LeftMrk);
        let last = tr.last().unwrap();
        assert!(last.x[0] > 0.0 && last.t < 100.0);
        assert!(last.margin < 1e-7);
    }

    #[test]
    fn decay_residual_examples() {
        let tr = integrate(&circle(1.0), FieldKind::Perturbed, &[2.0, 0.0], &IntegratorConfig::rkf45(1e-10, 10.0))
            .unwrap();
        assert!(tr.decay_residual(1.0).unwrap() <= 1e-6);
        let on = integrate(&circle(1.0), FieldKind::Perturbed, &[0.6, 0.8], &IntegratorConfig::rkf45(1e-10, 1.0))
            .unwrap();
        assert!(on.decay_residual(1.0).unwrap() < 1e-12);
        let empty = Trajectory {
            samples: vec![],
            stop_reason: StopReason::StepFailure,
            accepted_steps: 0,
            rejected_steps: 0,
        };
        assert_eq!(decay_residual(&empty, 1.0), Err(FlowError::Empty));
    }

    #[test]
    fn rk4_is_fourth_order() {
        let s = linear();
        let reference = (-1.0f64).exp();
        let err = |dt: f64| {
            let tr = integrate(&s, FieldKind::Perturbed, &[1.0, 0.0], &IntegratorConfig::rk4(dt, 1.0)).unwrap();
            (tr.last().unwrap().x[0] - reference).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
    }

    #[test]
    fn divergence_is_reported() {
        let s = SystemSpec::builder(&["x", "y"])
            .dissipated(&["y"])
            .targets(&[0.0])
            .base_field(&["x^2", "0"])
            .lambda(1.0)
            .build()
            .unwrap();
        let tr = integrate(&s, FieldKind::Perturbed, &[1.0, 0.5], &IntegratorConfig::rkf45(1e-8, 5.0)).unwrap();
        assert_eq!(tr.stop_reason, StopReason::Diverged);
    }

    #[test]
    fn rejects_start_outside_mrk() {
        assert!(matches!(
            integrate(&circle(1.0), FieldKind::Perturbed, &[0.0, 0.0], &IntegratorConfig::rkf45(1e-8, 1.0)),
            Err(FlowError::OutsideMrk { .. })
        ));
        assert!(matches!(
            integrate(&circle(1.0), FieldKind::Perturbed, &[1.0, 0.0], &IntegratorConfig::rkf45(1e-8, -1.0)),
            Err(FlowError::Config(_))
        ));
    }

    #[test]
    fn stride_keeps_endpoints() {
        let mut cfg = IntegratorConfig::rk4(0.01, 1.0);
        cfg.stride = 7;
        let tr = integrate(&linear(), FieldKind::Perturbed, &[1.0, 1.0], &cfg).unwrap();
        assert_eq!(tr.first().unwrap().t, 0.0);
        assert_eq!(tr.last().unwrap().t, 1.0);
        assert!(tr.samples.len() < 20);
        assert!(tr.times().collect::<Vec<_>>().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn csv_layout() {
        let s = SystemSpec::builder(&["x", "y", "z"])
            .dissipated(&["x"])
            .targets(&[0.0])
            .conserved(&["z"])
            .lambda(1.0)
            .build()
            .unwrap();
        let tr = integrate(&s, FieldKind::Perturbed, &[1.0, 0.0, 2.0], &IntegratorConfig::rk4(0.5, 1.0)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,x2,x3,F,D1,I1,margin");
        assert_eq!(lines[1], "0.0,1.0,0.0,2.0,1.0,1.0,2.0,1.0");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4], "# format=1 stop_reason=reached_t_end");
    }
}
