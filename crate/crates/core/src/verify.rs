//! Numerical pass/fail checks for the behavior the constructed fields promise.
//!
//! Every check produces a [`CheckRecord`] holding one or more [`Part`]s, each
//! with its measured value, threshold and comparison. All random sampling is
//! driven by a ChaCha generator seeded from [`VerifyConfig::seed`]; each
//! check uses its own stream so results do not depend on execution order.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::exprlang::{dual_gradient, Function};
use crate::fieldforge::{dot, norm, SystemSpec};
use crate::flow::{integrate, integrate_many, FieldKind, IntegratorConfig, StopReason};

pub const REPORT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerifyError {
    #[error("invalid setup: {0}")]
    InvalidSetup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = "<")]
    Below,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = ">")]
    Above,
}

impl Relation {
    fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Relation::AtMost => value <= threshold,
            Relation::Below => value < threshold,
            Relation::AtLeast => value >= threshold,
            Relation::Above => value > threshold,
        }
    }
}

/// One measured quantity compared against its threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Part {
    pub name: String,
    pub residual: f64,
    pub threshold: f64,
    pub relation: Relation,
    pub pass: bool,
}

impl Part {
    pub fn new(name: &str, residual: f64, relation: Relation, threshold: f64) -> Self {
        Part {
            name: name.to_string(),
            residual,
            threshold,
            relation,
            pass: relation.holds(residual, threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub check: String,
    pub clause: String,
    /// Residual and threshold of the part closest to (or furthest past) its limit.
    pub residual: f64,
    pub threshold: f64,
    pub pass: bool,
    pub seed: u64,
    pub samples: usize,
    pub trajectories: usize,
    pub not_applicable: usize,
    pub parts: Vec<Part>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckRecord {
    fn new(check: &str, clause: &str, seed: u64) -> Self {
        CheckRecord {
            check: check.to_string(),
            clause: clause.to_string(),
            residual: 0.0,
            threshold: 0.0,
            pass: true,
            seed,
            samples: 0,
            trajectories: 0,
            not_applicable: 0,
            parts: Vec::new(),
            detail: None,
        }
    }

    fn with_parts(mut self, parts: Vec<Part>) -> Self {
        self.pass = parts.iter().all(|p| p.pass);
        // Headline: the first failing part, else the tightest passing one.
        let headline = parts.iter().find(|p| !p.pass).or_else(|| {
            parts.iter().max_by(|a, b| closeness(a).total_cmp(&closeness(b)))
        });
        if let Some(h) = headline {
            self.residual = h.residual;
            self.threshold = h.threshold;
        }
        self.parts = parts;
        self
    }

    fn detail(mut self, text: impl Into<String>) -> Self {
        self.detail = Some(text.into());
        self
    }

    pub fn part(&self, name: &str) -> Option<&Part> {
        self.parts.iter().find(|p| p.name == name)
    }
}

fn closeness(p: &Part) -> f64 {
    let (v, t) = (p.residual.abs(), p.threshold.abs());
    match p.relation {
        Relation::AtMost | Relation::Below => v / t.max(f64::MIN_POSITIVE),
        Relation::AtLeast | Relation::Above => t / v.max(f64::MIN_POSITIVE),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub format: u32,
    pub seed: u64,
    pub pass: bool,
    pub checks: Vec<CheckRecord>,
}

impl VerificationReport {
    pub fn new(seed: u64, checks: Vec<CheckRecord>) -> Self {
        VerificationReport {
            format: REPORT_FORMAT,
            seed,
            pass: checks.iter().all(|c| c.pass),
            checks,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.check == name)
    }
}

/// Axis-aligned box random points are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    /// Origin when `None`.
    pub center: Option<Vec<f64>>,
    pub half_width: f64,
}

impl Default for SampleBox {
    fn default() -> Self {
        SampleBox {
            center: None,
            half_width: 2.0,
        }
    }
}

/// Thresholds and sampling parameters; defaults are the documented ones.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    pub samples: usize,
    pub sampling: SampleBox,
    /// Sampled points must have a rank margin of at least this.
    pub min_margin: f64,
    pub fd_step: f64,
    pub fd_tol: f64,
    pub dual_tol: f64,
    pub conservation_tol: f64,
    pub constraint_tol: f64,
    pub equilibrium_tol: f64,
    pub off_level_min_f: f64,
    pub agreement_tol: f64,
    pub decay_tol: f64,
    pub slope_rel_tol: f64,
    /// Allowed `|slope|` when `λ = 0`.
    pub slope_zero_tol: f64,
    pub terminal_slack: f64,
    pub drift_tol: f64,
    pub invariance_tol: f64,
    pub invariance_t_end: f64,
    pub invariance_starts: usize,
    pub lyapunov_tol: f64,
    pub convergence_tol: f64,
    pub stability_trajectories: usize,
    /// Trajectory settings for attraction checks.
    pub integrator: IntegratorConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            samples: 200,
            sampling: SampleBox::default(),
            min_margin: 1e-3,
            fd_step: 1e-6,
            fd_tol: 1e-5,
            dual_tol: 1e-12,
            conservation_tol: 1e-8,
            constraint_tol: 1e-9,
            equilibrium_tol: 1e-10,
            off_level_min_f: 1e-4,
            agreement_tol: 1e-12,
            decay_tol: 1e-6,
            slope_rel_tol: 0.01,
            slope_zero_tol: 1e-6,
            terminal_slack: 1e-3,
            drift_tol: 1e-7,
            invariance_tol: 1e-7,
            invariance_t_end: 20.0,
            invariance_starts: 5,
            lyapunov_tol: 1e-8,
            convergence_tol: 1e-4,
            stability_trajectories: 20,
            integrator: IntegratorConfig::rkf45(1e-10, 10.0),
        }
    }
}

impl VerifyConfig {
    /// Independent generator for the check with the given stream id.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

// ---------------------------------------------------------------------------
// Sampling

fn box_point(rng: &mut ChaCha8Rng, n: usize, sampling: &SampleBox) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let c = sampling.center.as_ref().and_then(|c| c.get(i)).copied().unwrap_or(0.0);
            c + rng.gen_range(-sampling.half_width..=sampling.half_width)
        })
        .collect()
}

fn usable(spec: &SystemSpec, x: &[f64], min_margin: f64) -> bool {
    let r = spec.mrk_check(x);
    r.in_mrk
        && r.margin >= min_margin
        && spec.x_lambda(x).is_ok_and(|v| v.iter().all(|c| c.is_finite()))
        && spec.f_value(x).is_ok()
        && spec.i_values(x).is_ok()
}

/// Up to `count` uniform box points that lie in the maximal-rank set.
pub fn sample_in_mrk(
    spec: &SystemSpec,
    rng: &mut ChaCha8Rng,
    count: usize,
    cfg: &VerifyConfig,
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < count * 200 + 1000 {
        attempts += 1;
        let x = box_point(rng, spec.dim(), &cfg.sampling);
        if usable(spec, &x, cfg.min_margin) {
            out.push(x);
        }
    }
    out
}

/// Minimum-norm Gauss–Newton projection of `x` onto `{f_i = c_i}`.
pub fn project_onto(funcs: &[&Function], targets: &[f64], x: &[f64]) -> Option<Vec<f64>> {
    let mut x = x.to_vec();
    let n = x.len();
    for _ in 0..60 {
        let r: Vec<f64> = funcs
            .iter()
            .zip(targets)
            .map(|(f, c)| f.eval(&x).map(|v| v - c))
            .collect::<Result<_, _>>()
            .ok()?;
        let done = r
            .iter()
            .zip(targets)
            .all(|(ri, c)| ri.abs() <= 4.0 * f64::EPSILON * (1.0 + c.abs()));
        if done {
            return Some(x);
        }
        let rows: Vec<Vec<f64>> = funcs.iter().map(|f| f.gradient(&x)).collect::<Result<_, _>>().ok()?;
        let j = DMatrix::from_fn(rows.len(), n, |a, b| rows[a][b]);
        let g = &j * j.transpose();
        let c = g.lu().solve(&nalgebra::DVector::from_vec(r))?;
        let dx = j.transpose() * c;
        for (xi, d) in x.iter_mut().zip(dx.iter()) {
            *xi -= d;
        }
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    // Accept a last iterate that stalled at roundoff level.
    let worst = funcs
        .iter()
        .zip(targets)
        .map(|(f, c)| f.eval(&x).map(|v| (v - c).abs() / (1.0 + c.abs())))
        .collect::<Result<Vec<_>, _>>()
        .ok()?
        .into_iter()
        .fold(0.0, f64::max);
    (worst <= 1e-13).then_some(x)
}

/// Points on `{D_i = d_i, i ≤ p′}` inside the maximal-rank set.
pub fn sample_on_level_set(
    spec: &SystemSpec,
    rng: &mut ChaCha8Rng,
    count: usize,
    cfg: &VerifyConfig,
) -> Vec<Vec<f64>> {
    let pp = spec.p_prime();
    let funcs: Vec<&Function> = spec.dissipated()[..pp].iter().collect();
    let targets = &spec.targets()[..pp];
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < count * 200 + 1000 {
        attempts += 1;
        let x = box_point(rng, spec.dim(), &cfg.sampling);
        if let Some(y) = project_onto(&funcs, targets, &x) {
            if usable(spec, &y, cfg.min_margin) {
                out.push(y);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Pointwise measurements

/// Rates the stabilized field is meant to realize: the override when present,
/// otherwise `−λ(D_i − d_i)` for `i ≤ p′` and zero beyond.
pub fn intended_rates(spec: &SystemSpec, x: &[f64]) -> Option<Vec<f64>> {
    if let Some(h) = spec.h_override() {
        return h.iter().map(|f| f.eval(x).ok()).collect();
    }
    let dev = spec.deviations(x).ok()?;
    Some(
        dev.iter()
            .enumerate()
            .map(|(i, r)| if i < spec.p_prime() { -spec.lambda() * r } else { 0.0 })
            .collect(),
    )
}

/// Scaled residuals of `⟨∇D_i, X_λ⟩ = h_i` and `⟨∇I_j, X_λ⟩ = 0` at `x`,
/// ordered D then I. Scale is `max(1, ‖∇f‖‖X_λ‖, |h|)`.
pub fn constraint_residuals(spec: &SystemSpec, x: &[f64]) -> Option<Vec<f64>> {
    let v = spec.x_lambda(x).ok()?;
    let grads = spec.grads_at(x).ok()?;
    let h = intended_rates(spec, x)?;
    let vn = norm(&v);
    Some(
        grads
            .iter()
            .enumerate()
            .map(|(a, g)| {
                let target = h.get(a).copied().unwrap_or(0.0);
                let scale = 1f64.max(norm(g) * vn).max(target.abs());
                (dot(g, &v) - target).abs() / scale
            })
            .collect(),
    )
}

fn all_functions(spec: &SystemSpec) -> Vec<(String, &Function)> {
    let mut out: Vec<(String, &Function)> = Vec::new();
    out.extend(spec.dissipated().iter().enumerate().map(|(i, f)| (format!("D{}", i + 1), f)));
    out.extend(spec.conserved().iter().enumerate().map(|(i, f)| (format!("I{}", i + 1), f)));
    if let Some(b) = spec.base_field() {
        out.extend(b.iter().enumerate().map(|(i, f)| (format!("X{}", i + 1), f)));
    }
    if let Some(h) = spec.h_override() {
        out.extend(h.iter().enumerate().map(|(i, f)| (format!("h{}", i + 1), f)));
    }
    out
}

/// Central finite-difference gradient with step `step`.
pub fn fd_gradient(f: &Function, x: &[f64], step: f64) -> Option<Vec<f64>> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + step;
            let up = f.eval(&y).ok()?;
            y[i] = x[i] - step;
            let down = f.eval(&y).ok()?;
            y[i] = x[i];
            Some((up - down) / (2.0 * step))
        })
        .collect()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Checks

pub fn check_gradient_consistency(
    spec: &SystemSpec,
    points: &[Vec<f64>],
    cfg: &VerifyConfig,
) -> CheckRecord {
    let mut fd_worst = 0.0f64;
    let mut dual_worst = 0.0f64;
    let mut evaluated = 0;
    let funcs = all_functions(spec);
    for x in points {
        for (_, f) in &funcs {
            let (Ok(sym), Some(fd), Ok(dual)) = (
                f.gradient(x),
                fd_gradient(f, x, cfg.fd_step),
                dual_gradient(f.expr(), x),
            ) else {
                continue;
            };
            evaluated += 1;
            let scale = norm(&sym).max(1.0);
            fd_worst = fd_worst.max(diff_norm(&sym, &fd) / scale);
            dual_worst = dual_worst.max(diff_norm(&sym, &dual) / scale);
        }
    }
    let mut rec = CheckRecord::new("gradient_consistency", "gradient-routes-agree", cfg.seed)
        .with_parts(vec![
            Part::new("finite_difference", fd_worst, Relation::AtMost, cfg.fd_tol),
            Part::new("dual_number", dual_worst, Relation::AtMost, cfg.dual_tol),
        ]);
    rec.samples = evaluated;
    rec
}

pub fn check_base_conservation(
    spec: &SystemSpec,
    points: &[Vec<f64>],
    cfg: &VerifyConfig,
) -> CheckRecord {
    let rec = CheckRecord::new("base_conservation", "base-field-first-integrals", cfg.seed);
    if spec.base_field().is_none() {
        return rec.detail("no base field; vacuous pass");
    }
    let mut worst = 0.0f64;
    let mut worst_fn = String::new();
    let mut count = 0;
    for x in points {
        let Ok(Some(v)) = spec.base_at(x) else { continue };
        count += 1;
        for (name, f) in spec
            .dissipated()
            .iter()
            .enumerate()
            .map(|(i, f)| (format!("D{}", i + 1), f))
            .chain(spec.conserved().iter().enumerate().map(|(i, f)| (format!("I{}", i + 1), f)))
        {
            let Ok(g) = f.gradient(x) else { continue };
            let r = dot(&g, &v).abs() / 1f64.max(norm(&g) * norm(&v));
            if r > worst {
                worst = r;
                worst_fn = name;
            }
        }
    }
    let mut rec = rec.with_parts(vec![Part::new(
        "lie_derivative",
        worst,
        Relation::AtMost,
        cfg.conservation_tol,
    )]);
    rec.samples = count;
    if !rec.pass {
        rec = rec.detail(format!("base field does not conserve {worst_fn}"));
    }
    rec
}

pub fn check_lie_constraints(
    spec: &SystemSpec,
    points: &[Vec<f64>],
    cfg: &VerifyConfig,
) -> CheckRecord {
    let p = spec.p();
    let pp = spec.p_prime();
    let (mut dissipated, mut frozen, mut conserved) = (0.0f64, 0.0f64, 0.0f64);
    let mut count = 0;
    for x in points {
        let Some(r) = constraint_residuals(spec, x) else { continue };
        count += 1;
        for (a, v) in r.into_iter().enumerate() {
            let slot = if a < pp {
                &mut dissipated
            } else if a < p {
                &mut frozen
            } else {
                &mut conserved
            };
            *slot = slot.max(v);
        }
    }
    let tol = cfg.constraint_tol;
    let mut parts = vec![Part::new("dissipated_rates", dissipated, Relation::AtMost, tol)];
    if pp < p {
        parts.push(Part::new("frozen_dissipated", frozen, Relation::AtMost, tol));
    }
    if spec.k() > 0 {
        parts.push(Part::new("conserved", conserved, Relation::AtMost, tol));
    }
    let mut rec = CheckRecord::new("lie_constraints", "prescribed-lie-derivatives", cfg.seed)
        .with_parts(parts);
    rec.samples = count;
    rec
}

/// Gradient-matrix σ_max at `x`.
fn sigma_max(spec: &SystemSpec, x: &[f64]) -> Option<f64> {
    spec.mrk_check(x).singular_values.first().copied()
}

pub fn check_equilibria(
    spec: &SystemSpec,
    on_level: &[Vec<f64>],
    off_level: &[Vec<f64>],
    cfg: &VerifyConfig,
) -> CheckRecord {
    let rec = CheckRecord::new("equilibria", "equilibria-are-level-set", cfg.seed);
    if spec.h_override().is_some() {
        let mut rec = rec.detail("custom rates; equilibrium characterization not applicable");
        rec.not_applicable = on_level.len() + off_level.len();
        return rec;
    }
    let lambda = spec.lambda();
    let mut on_worst = 0.0f64;
    let mut on_count = 0;
    for x in on_level {
        let Ok(v) = spec.x0_lambda(x) else { continue };
        on_count += 1;
        on_worst = on_worst.max(norm(&v));
    }
    let mut parts = vec![Part::new(
        "stabilizer_on_level_set",
        on_worst,
        Relation::AtMost,
        cfg.equilibrium_tol,
    )];

    let mut off_count = 0;
    let mut skipped = 0;
    if lambda > 0.0 {
        // ‖X₀‖² = hᵀG⁻¹h ≥ ‖h‖²/σ_max², with ‖h‖ = λ√F.
        let mut min_ratio = f64::INFINITY;
        let mut min_bound = f64::INFINITY;
        let mut min_perturbed = f64::INFINITY;
        for x in off_level {
            let (Ok(f), Ok(v), Some(smax)) = (spec.f_value(x), spec.x0_lambda(x), sigma_max(spec, x))
            else {
                continue;
            };
            if f <= cfg.off_level_min_f {
                skipped += 1;
                continue;
            }
            off_count += 1;
            let bound = lambda * f.sqrt() / smax;
            min_bound = min_bound.min(bound);
            min_ratio = min_ratio.min(norm(&v) / bound);
            if spec.base_field().is_some() {
                if let Ok(xl) = spec.x_lambda(x) {
                    min_perturbed = min_perturbed.min(norm(&xl));
                }
            }
        }
        if off_count > 0 {
            parts.push(Part::new(
                "stabilizer_norm_over_bound",
                min_ratio,
                Relation::AtLeast,
                1.0 - 1e-9,
            ));
            parts.push(Part::new("lower_bound", min_bound, Relation::Above, 1e-8));
            if spec.base_field().is_some() {
                parts.push(Part::new("perturbed_off_level_set", min_perturbed, Relation::Above, 0.0));
            }
        }
    }
    let mut rec = rec.with_parts(parts);
    rec.samples = on_count + off_count;
    rec.not_applicable = skipped;
    if lambda == 0.0 {
        rec = rec.detail("lambda = 0: off-level-set part skipped");
    }
    rec
}

/// On the level set the perturbation vanishes, so `X_λ = X` there and orbits
/// of `X` inside it are orbits of `X_λ`.
pub fn check_field_agreement(
    spec: &SystemSpec,
    on_level: &[Vec<f64>],
    cfg: &VerifyConfig,
) -> CheckRecord {
    let mut worst = 0.0f64;
    let mut count = 0;
    for x in on_level {
        let (Ok(xl), Ok(base)) = (spec.x_lambda(x), spec.base_at(x)) else { continue };
        let base = base.unwrap_or_else(|| vec![0.0; x.len()]);
        count += 1;
        worst = worst.max(diff_norm(&xl, &base));
    }
    let mut rec = CheckRecord::new("field_agreement_on_level_set", "orbits-on-level-set-preserved", cfg.seed)
        .with_parts(vec![Part::new("max_difference", worst, Relation::AtMost, cfg.agreement_tol)]);
    rec.samples = count;
    rec
}

pub fn check_level_set_invariance(
    spec: &SystemSpec,
    starts: &[Vec<f64>],
    cfg: &VerifyConfig,
) -> CheckRecord {
    let run = cfg.integrator.with_t_end(cfg.invariance_t_end);
    let pp = spec.p_prime();
    let mut worst = 0.0f64;
    let mut applicable = 0;
    let mut na = 0;
    for tr in integrate_many(spec, FieldKind::Perturbed, starts, &run) {
        let Ok(tr) = tr else {
            na += 1;
            continue;
        };
        if !tr.completed() {
            na += 1;
            continue;
        }
        applicable += 1;
        for s in &tr.samples {
            for (v, t) in s.d.iter().zip(spec.targets()).take(pp) {
                worst = worst.max((v - t).abs());
            }
        }
    }
    let mut rec = CheckRecord::new("level_set_invariance", "level-set-invariant", cfg.seed)
        .with_parts(vec![Part::new("max_deviation", worst, Relation::AtMost, cfg.invariance_tol)]);
    rec.trajectories = applicable;
    rec.not_applicable = na;
    rec
}

pub fn check_decay_and_attraction(
    spec: &SystemSpec,
    starts: &[Vec<f64>],
    cfg: &VerifyConfig,
) -> CheckRecord {
    let lambda = spec.lambda();
    let run = &cfg.integrator;
    let t_end = run.t_end;
    let p = spec.p();
    let pp = spec.p_prime();

    let mut decay = 0.0f64;
    let mut slope_err = 0.0f64;
    let mut slopes = 0;
    let mut terminal = 0.0f64;
    let mut i_drift = 0.0f64;
    let mut d_drift = 0.0f64;
    let mut applicable = 0;
    let mut na = 0;
    let mut unbounded = 0;

    for tr in integrate_many(spec, FieldKind::Perturbed, starts, run) {
        let tr = match tr {
            Ok(tr) => tr,
            Err(_) => {
                na += 1;
                continue;
            }
        };
        if !tr.completed() {
            na += 1;
            if tr.stop_reason == StopReason::Diverged && spec.proper_i() {
                unbounded += 1;
            }
            continue;
        }
        applicable += 1;
        let f0 = tr.first().map(|s| s.f).unwrap_or(0.0);
        let f_end = tr.last().map(|s| s.f).unwrap_or(0.0);
        decay = decay.max(tr.decay_residual(lambda).unwrap_or(f64::INFINITY));
        if f0 > 1e-280 {
            if let Some(s) = tr.log_decay_slope() {
                slopes += 1;
                let err = if lambda > 0.0 {
                    (s + 2.0 * lambda).abs() / (2.0 * lambda)
                } else {
                    s.abs()
                };
                slope_err = slope_err.max(err);
            }
            if lambda > 0.0 {
                let limit = (-lambda * t_end).exp() * f0.sqrt() * (1.0 + cfg.terminal_slack);
                terminal = terminal.max(f_end.sqrt() / limit);
            }
        }
        i_drift = i_drift.max(tr.conserved_drift());
        d_drift = d_drift.max(tr.dissipated_drift(pp..p));
    }

    let mut parts = vec![Part::new("decay_residual", decay, Relation::AtMost, cfg.decay_tol)];
    if slopes > 0 {
        let tol = if lambda > 0.0 { cfg.slope_rel_tol } else { cfg.slope_zero_tol };
        parts.push(Part::new("log_slope", slope_err, Relation::AtMost, tol));
    }
    if lambda > 0.0 && applicable > 0 {
        parts.push(Part::new("terminal_ratio", terminal, Relation::AtMost, 1.0));
    }
    if spec.k() > 0 {
        parts.push(Part::new("conserved_drift", i_drift, Relation::AtMost, cfg.drift_tol));
    }
    if pp < p {
        parts.push(Part::new("frozen_dissipated_drift", d_drift, Relation::AtMost, cfg.drift_tol));
    }
    if spec.proper_i() {
        parts.push(Part::new("unbounded_with_proper_I", unbounded as f64, Relation::AtMost, 0.0));
    }
    let mut rec = CheckRecord::new("decay_and_attraction", "exponential-decay-and-attraction", cfg.seed)
        .with_parts(parts);
    rec.trajectories = applicable;
    rec.not_applicable = na;
    if lambda == 0.0 {
        rec = rec.detail("lambda = 0: attraction not expected, conservation only");
    }
    rec
}

fn ball_point(rng: &mut ChaCha8Rng, center: &[f64], radius: f64) -> Vec<f64> {
    let n = center.len();
    loop {
        let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let len = norm(&dir);
        if len == 0.0 || len > 1.0 {
            continue;
        }
        let r = radius * rng.gen::<f64>().powf(1.0 / n as f64);
        return center.iter().zip(&dir).map(|(c, d)| c + r * d / len).collect();
    }
}

pub fn check_isolated_stability(
    spec: &SystemSpec,
    x_e: &[f64],
    radius: f64,
    samples: usize,
    cfg: &VerifyConfig,
) -> Result<CheckRecord, VerifyError> {
    let lambda = spec.lambda();
    if x_e.len() != spec.dim() {
        return Err(VerifyError::InvalidSetup("equilibrium has the wrong dimension".into()));
    }
    if !(lambda > 0.0) {
        return Err(VerifyError::InvalidSetup("stability needs lambda > 0".into()));
    }
    if !(radius > 0.0) {
        return Err(VerifyError::InvalidSetup("radius must be > 0".into()));
    }
    let f_e = spec
        .f_value(x_e)
        .map_err(|e| VerifyError::InvalidSetup(e.to_string()))?;
    if f_e > 1e-12 {
        return Err(VerifyError::InvalidSetup(format!(
            "point is not on the level set (F = {f_e:e})"
        )));
    }
    if !spec.mrk_check(x_e).in_mrk {
        return Err(VerifyError::InvalidSetup("point is outside the maximal-rank set".into()));
    }

    let leaf_funcs: Vec<&Function> = spec.conserved().iter().collect();
    let leaf = spec
        .i_values(x_e)
        .map_err(|e| VerifyError::InvalidSetup(e.to_string()))?;
    let mut rng = cfg.rng(6);
    let mut points = Vec::with_capacity(samples);
    let mut attempts = 0;
    while points.len() < samples && attempts < samples * 200 + 1000 {
        attempts += 1;
        let mut x = ball_point(&mut rng, x_e, radius);
        if !leaf_funcs.is_empty() {
            match project_onto(&leaf_funcs, &leaf, &x) {
                Some(y) => x = y,
                None => continue,
            }
        }
        if diff_norm(&x, x_e) == 0.0 || !spec.mrk_check(&x).in_mrk || spec.x_lambda(&x).is_err() {
            continue;
        }
        points.push(x);
    }

    let mut min_f = f64::INFINITY;
    let mut max_rate = f64::NEG_INFINITY;
    let mut worst_identity = 0.0f64;
    for x in &points {
        let (Ok(f), Ok(gf), Ok(v)) = (spec.f_value(x), spec.f_gradient(x), spec.x_lambda(x)) else {
            continue;
        };
        min_f = min_f.min(f);
        let lie = dot(&gf, &v);
        max_rate = max_rate.max(lie);
        let scale = (norm(&gf) * norm(&v)).max(2.0 * lambda * f).max(f64::MIN_POSITIVE);
        worst_identity = worst_identity.max((lie + 2.0 * lambda * f).abs() / scale);
    }

    let starts: Vec<Vec<f64>> = points.iter().take(cfg.stability_trajectories).cloned().collect();
    let run = cfg.integrator.with_t_end(20.0 / lambda);
    let mut worst_dist = 0.0f64;
    let mut failed = 0;
    for tr in integrate_many(spec, FieldKind::Perturbed, &starts, &run) {
        match tr {
            Ok(tr) if tr.completed() => {
                let last = tr.last().expect("non-empty");
                worst_dist = worst_dist.max(diff_norm(&last.x, x_e));
            }
            _ => failed += 1,
        }
    }

    let mut rec = CheckRecord::new("isolated_stability", "strict-lyapunov-function", cfg.seed).with_parts(vec![
        Part::new("f_at_equilibrium", f_e, Relation::AtMost, 1e-12),
        Part::new("min_f_in_ball", min_f, Relation::Above, 0.0),
        Part::new("max_lie_derivative", max_rate, Relation::Below, 0.0),
        Part::new("lie_identity", worst_identity, Relation::AtMost, cfg.lyapunov_tol),
        Part::new("final_distance", worst_dist, Relation::AtMost, cfg.convergence_tol),
        Part::new("incomplete_trajectories", failed as f64, Relation::AtMost, 0.0),
    ]);
    rec.samples = points.len();
    rec.trajectories = starts.len();
    Ok(rec)
}

/// Stability probe around a user-supplied isolated point.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityProbe {
    pub point: Vec<f64>,
    pub radius: f64,
    pub samples: usize,
}

/// Run every applicable check and merge them in a fixed order.
pub fn run_suite(
    spec: &SystemSpec,
    starts: &[Vec<f64>],
    probe: Option<&StabilityProbe>,
    cfg: &VerifyConfig,
) -> VerificationReport {
    let n = cfg.samples;
    let jobs: Vec<Box<dyn Fn() -> CheckRecord + Send + Sync + '_>> = vec![
        Box::new(move || {
            let mut pts = sample_in_mrk(spec, &mut cfg.rng(0), n, cfg);
            pts.extend(starts.iter().cloned());
            check_gradient_consistency(spec, &pts, cfg)
        }),
        Box::new(move || {
            let mut pts = sample_in_mrk(spec, &mut cfg.rng(1), n, cfg);
            pts.extend(starts.iter().filter(|x| spec.mrk_check(x).in_mrk).cloned());
            check_base_conservation(spec, &pts, cfg)
        }),
        Box::new(move || check_lie_constraints(spec, &sample_in_mrk(spec, &mut cfg.rng(2), n, cfg), cfg)),
        Box::new(move || {
            let on = sample_on_level_set(spec, &mut cfg.rng(3), n, cfg);
            let off = sample_in_mrk(spec, &mut cfg.rng(3), n, cfg);
            check_equilibria(spec, &on, &off, cfg)
        }),
        Box::new(move || {
            let on = sample_on_level_set(spec, &mut cfg.rng(4), n, cfg);
            check_field_agreement(spec, &on, cfg)
        }),
        Box::new(move || {
            let on = sample_on_level_set(spec, &mut cfg.rng(5), cfg.invariance_starts, cfg);
            check_level_set_invariance(spec, &on, cfg)
        }),
        Box::new(move || check_decay_and_attraction(spec, starts, cfg)),
    ];
    let mut checks: Vec<CheckRecord> = jobs.par_iter().map(|job| job()).collect();
    if let Some(p) = probe {
        checks.push(
            check_isolated_stability(spec, &p.point, p.radius, p.samples, cfg).unwrap_or_else(|e| {
                let mut rec = CheckRecord::new("isolated_stability", "strict-lyapunov-function", cfg.seed)
                    .with_parts(vec![Part::new("valid_setup", 0.0, Relation::Above, 0.0)]);
                rec.detail = Some(e.to_string());
                rec
            }),
        );
    }
    VerificationReport::new(cfg.seed, checks)
}

/// Fitted `ln F` slope for a trajectory from `x0` (NaN when undefined).
pub fn fitted_slope(spec: &SystemSpec, x0: &[f64], run: &IntegratorConfig) -> Option<f64> {
    let tr = integrate(spec, FieldKind::Perturbed, x0, run).ok()?;
    tr.completed().then(|| tr.log_decay_slope()).flatten()
}
