//! Pointwise evaluation of the constructed vector fields.
//!
//! Given dissipated functions `D = (D₁..D_p)` with targets `d`, conserved
//! functions `I = (I₁..I_k)` and prescribed rates `h₁..h_p`, the particular
//! solution of
//!
//! ```text
//! ⟨∇D_i, X₀⟩ = h_i,   ⟨∇I_j, X₀⟩ = 0
//! ```
//!
//! is evaluated with exterior algebra as
//!
//! ```text
//! X₀ = ‖W‖⁻² Σ_i (−1)^(n−i) h_i ⋆[ ⋀_{j≠i} ∇D_j ∧ ⋀_l ∇I_l ∧ ⋆W ],   W = ⋀∇D ∧ ⋀∇I
//! ```
//!
//! The stabilizing rates are `h_i = −λ(D_i − d_i)` for the first `p′`
//! components and zero for the rest, so `F = Σ_{i≤p′}(D_i − d_i)²` obeys
//! `⟨∇F, X₀⟩ = −2λF`. [`SystemSpec::gram_oracle`] solves the same constraints
//! through the Gram matrix and serves as an independent check.

use nalgebra::{DMatrix, DVector};

use crate::exprlang::{DomainError, Function, ParseError};
use crate::exterior::{ExteriorError, KVector, MAX_DIM};

pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("cannot parse {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: ParseError,
    },
    #[error("length mismatch {0}")]
    LengthMismatch(&'static str),
    #[error("need 0 < k+p <= n, got k={k}, p={p}, n={n}")]
    Counts { n: usize, p: usize, k: usize },
    #[error("p_prime must lie in 1..={p}, got {p_prime}")]
    PPrime { p_prime: usize, p: usize },
    #[error("lambda must be finite and >= 0, got {0}")]
    Lambda(f64),
    #[error("rank_tol must be finite and > 0, got {0}")]
    RankTol(f64),
    #[error("target values must be finite")]
    Target,
    #[error("duplicate or empty variable name `{0}`")]
    VarName(String),
    #[error("dimension {0} exceeds the supported maximum {MAX_DIM}")]
    TooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error("point outside the maximal-rank set (margin {margin:e})")]
    RankDeficient { margin: f64 },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("singular Gram matrix")]
    SingularGram,
    #[error("expected {expected} values, got {found}")]
    Length { expected: usize, found: usize },
    #[error(transparent)]
    Exterior(#[from] ExteriorError),
}

/// How the default rates are formed. `PrintedFirstComponent` reproduces the
/// literal `(D − d_i)` reading with `D := D₁` for every `i`; it exists to prove
/// the verification suite rejects it.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateVariant {
    #[default]
    Standard,
    PrintedFirstComponent,
}

/// Singular-value summary of the `(k+p) × n` gradient matrix at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub in_mrk: bool,
    /// Descending.
    pub singular_values: Vec<f64>,
    /// `σ_min / max(σ_max, 1)`.
    pub margin: f64,
}

/// Full problem description. Immutable after [`SpecBuilder::build`].
#[derive(Debug, Clone)]
pub struct SystemSpec {
    vars: Vec<String>,
    dissipated: Vec<Function>,
    targets: Vec<f64>,
    conserved: Vec<Function>,
    base_field: Option<Vec<Function>>,
    lambda: f64,
    p_prime: usize,
    h_override: Option<Vec<Function>>,
    rank_tol: f64,
    proper_i: bool,
    variant: RateVariant,
}

#[derive(Debug, Clone, Default)]
pub struct SpecBuilder {
    vars: Vec<String>,
    dissipated: Vec<String>,
    targets: Vec<f64>,
    conserved: Vec<String>,
    base_field: Option<Vec<String>>,
    lambda: f64,
    p_prime: Option<usize>,
    h_override: Option<Vec<String>>,
    rank_tol: Option<f64>,
    proper_i: bool,
    variant: RateVariant,
}

impl SpecBuilder {
    pub fn dissipated<S: AsRef<str>>(mut self, exprs: &[S]) -> Self {
        self.dissipated = exprs.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn targets(mut self, d: &[f64]) -> Self {
        self.targets = d.to_vec();
        self
    }

    pub fn conserved<S: AsRef<str>>(mut self, exprs: &[S]) -> Self {
        self.conserved = exprs.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn base_field<S: AsRef<str>>(mut self, exprs: &[S]) -> Self {
        self.base_field = Some(exprs.iter().map(|s| s.as_ref().to_string()).collect());
        self
    }

    pub fn lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn p_prime(mut self, p_prime: usize) -> Self {
        self.p_prime = Some(p_prime);
        self
    }

    pub fn h_override<S: AsRef<str>>(mut self, exprs: &[S]) -> Self {
        self.h_override = Some(exprs.iter().map(|s| s.as_ref().to_string()).collect());
        self
    }

    pub fn rank_tol(mut self, tol: f64) -> Self {
        self.rank_tol = Some(tol);
        self
    }

    pub fn proper_i(mut self, flag: bool) -> Self {
        self.proper_i = flag;
        self
    }

    #[doc(hidden)]
    pub fn rate_variant(mut self, variant: RateVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn build(self) -> Result<SystemSpec, SpecError> {
        let n = self.vars.len();
        if n > MAX_DIM {
            return Err(SpecError::TooLarge(n));
        }
        for (i, v) in self.vars.iter().enumerate() {
            if v.is_empty() || self.vars[..i].contains(v) {
                return Err(SpecError::VarName(v.clone()));
            }
        }
        let p = self.dissipated.len();
        let k = self.conserved.len();
        if p == 0 || k + p > n {
            return Err(SpecError::Counts { n, p, k });
        }
        if self.targets.len() != p {
            return Err(SpecError::LengthMismatch("d vs D"));
        }
        if self.targets.iter().any(|t| !t.is_finite()) {
            return Err(SpecError::Target);
        }
        let p_prime = self.p_prime.unwrap_or(p);
        if p_prime == 0 || p_prime > p {
            return Err(SpecError::PPrime { p_prime, p });
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(SpecError::Lambda(self.lambda));
        }
        let rank_tol = self.rank_tol.unwrap_or(DEFAULT_RANK_TOL);
        if !(rank_tol.is_finite() && rank_tol > 0.0) {
            return Err(SpecError::RankTol(rank_tol));
        }
        if matches!(&self.base_field, Some(b) if b.len() != n) {
            return Err(SpecError::LengthMismatch("base_field vs n"));
        }
        if matches!(&self.h_override, Some(h) if h.len() != p) {
            return Err(SpecError::LengthMismatch("h_override vs D"));
        }

        let vars = self.vars;
        let compile = |label: &str, list: &[String]| -> Result<Vec<Function>, SpecError> {
            list.iter()
                .enumerate()
                .map(|(i, text)| {
                    Function::parse(text, &vars).map_err(|source| SpecError::Parse {
                        what: format!("{label}[{i}] `{text}`"),
                        source,
                    })
                })
                .collect()
        };
        let dissipated = compile("D", &self.dissipated)?;
        let conserved = compile("I", &self.conserved)?;
        let base_field = self
            .base_field
            .as_deref()
            .map(|b| compile("base_field", b))
            .transpose()?;
        let h_override = self
            .h_override
            .as_deref()
            .map(|h| compile("h_override", h))
            .transpose()?;

        Ok(SystemSpec {
            vars,
            dissipated,
            targets: self.targets,
            conserved,
            base_field,
            lambda: self.lambda,
            p_prime,
            h_override,
            rank_tol,
            proper_i: self.proper_i,
            variant: self.variant,
        })
    }
}

impl SystemSpec {
    pub fn builder<S: AsRef<str>>(vars: &[S]) -> SpecBuilder {
        SpecBuilder {
            vars: vars.iter().map(|s| s.as_ref().to_string()).collect(),
            ..SpecBuilder::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    /// Number of dissipated functions `p`.
    pub fn p(&self) -> usize {
        self.dissipated.len()
    }

    /// Number of conserved functions `k`.
    pub fn k(&self) -> usize {
        self.conserved.len()
    }

    pub fn p_prime(&self) -> usize {
        self.p_prime
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn dissipated(&self) -> &[Function] {
        &self.dissipated
    }

    pub fn conserved(&self) -> &[Function] {
        &self.conserved
    }

    pub fn base_field(&self) -> Option<&[Function]> {
        self.base_field.as_deref()
    }

    pub fn h_override(&self) -> Option<&[Function]> {
        self.h_override.as_deref()
    }

    pub fn proper_i(&self) -> bool {
        self.proper_i
    }

    pub fn rate_variant(&self) -> RateVariant {
        self.variant
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, SpecError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(SpecError::Lambda(lambda));
        }
        Ok(SystemSpec {
            lambda,
            ..self.clone()
        })
    }

    pub fn with_targets(&self, d: &[f64]) -> Result<Self, SpecError> {
        if d.len() != self.p() {
            return Err(SpecError::LengthMismatch("d vs D"));
        }
        Ok(SystemSpec {
            targets: d.to_vec(),
            ..self.clone()
        })
    }

    #[doc(hidden)]
    pub fn with_rate_variant(&self, variant: RateVariant) -> Self {
        SystemSpec {
            variant,
            ..self.clone()
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<(), FieldError> {
        if x.len() != self.dim() {
            return Err(FieldError::Length {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `(D₁(x)..D_p(x))`.
    pub fn d_values(&self, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        self.dissipated.iter().map(|f| f.eval(x)).collect()
    }

    pub fn i_values(&self, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        self.conserved.iter().map(|f| f.eval(x)).collect()
    }

    /// `D_i(x) − d_i` for every `i`.
    pub fn deviations(&self, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        Ok(self
            .d_values(x)?
            .into_iter()
            .zip(&self.targets)
            .map(|(v, t)| v - t)
            .collect())
    }

    /// `F_{p′}(x) = Σ_{i≤p′} (D_i(x) − d_i)²`.
    pub fn f_value(&self, x: &[f64]) -> Result<f64, DomainError> {
        Ok(self.deviations(x)?[..self.p_prime]
            .iter()
            .map(|r| r * r)
            .sum())
    }

    /// `∇F_{p′}(x) = 2 Σ_{i≤p′} (D_i − d_i) ∇D_i`.
    pub fn f_gradient(&self, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        let dev = self.deviations(x)?;
        let mut g = vec![0.0; self.dim()];
        for (f, r) in self.dissipated.iter().zip(&dev).take(self.p_prime) {
            for (gi, di) in g.iter_mut().zip(f.gradient(x)?) {
                *gi += 2.0 * r * di;
            }
        }
        Ok(g)
    }

    /// Base vector field `X(x)`, or `None` when the spec has none.
    pub fn base_at(&self, x: &[f64]) -> Result<Option<Vec<f64>>, DomainError> {
        self.base_field
            .as_ref()
            .map(|b| b.iter().map(|f| f.eval(x)).collect())
            .transpose()
    }

    /// `(∇D₁..∇D_p, ∇I₁..∇I_k)` at `x`.
    pub fn grads_at(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, FieldError> {
        self.check_point(x)?;
        self.dissipated
            .iter()
            .chain(&self.conserved)
            .map(|f| f.gradient(x).map_err(FieldError::from))
            .collect()
    }

    pub fn rank_of(&self, grads: &[Vec<f64>]) -> RankReport {
        let m = grads.len();
        let n = self.dim();
        let mat = DMatrix::from_fn(m, n, |r, c| grads[r][c]);
        let mut sv: Vec<f64> = mat.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let max = sv.first().copied().unwrap_or(0.0);
        let min = sv.last().copied().unwrap_or(0.0);
        let margin = if min.is_finite() && max.is_finite() {
            min / max.max(1.0)
        } else {
            0.0
        };
        RankReport {
            in_mrk: margin > self.rank_tol,
            singular_values: sv,
            margin,
        }
    }

    /// Rank test at `x`. Points where a gradient cannot be evaluated report
    /// `in_mrk = false` with zero margin.
    pub fn mrk_check(&self, x: &[f64]) -> RankReport {
        match self.grads_at(x) {
            Ok(g) => self.rank_of(&g),
            Err(_) => RankReport {
                in_mrk: false,
                singular_values: Vec::new(),
                margin: 0.0,
            },
        }
    }

    fn independent_grads(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, FieldError> {
        let grads = self.grads_at(x)?;
        let rank = self.rank_of(&grads);
        if !rank.in_mrk {
            return Err(FieldError::RankDeficient {
                margin: rank.margin,
            });
        }
        Ok(grads)
    }

    /// Particular solution with arbitrary rates `h` (length `p`).
    pub fn x0_general(&self, h: &[f64], x: &[f64]) -> Result<Vec<f64>, FieldError> {
        if h.len() != self.p() {
            return Err(FieldError::Length {
                expected: self.p(),
                found: h.len(),
            });
        }
        let grads = self.independent_grads(x)?;
        Ok(self.hodge_solution(&grads, h)?)
    }

    fn hodge_solution(&self, grads: &[Vec<f64>], h: &[f64]) -> Result<Vec<f64>, ExteriorError> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        if h.iter().all(|&r| r == 0.0) {
            return Ok(out);
        }
        let w = KVector::from_vectors(n, grads)?;
        let inv_norm_sq = 1.0 / w.norm_sq();
        let star_w = w.hodge();
        let mut others = Vec::with_capacity(grads.len() - 1);
        for (i, &rate) in h.iter().enumerate() {
            if rate == 0.0 {
                continue;
            }
            others.clear();
            others.extend(
                grads
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, g)| g.clone()),
            );
            let theta = KVector::from_vectors(n, &others)?
                .wedge(&star_w)?
                .hodge()
                .to_vector()
                .expect("grade n-1 star is a vector");
            // (−1)^(n−i) with the 1-based index i+1.
            let sign = if (n - i - 1) % 2 == 0 { 1.0 } else { -1.0 };
            let coef = sign * rate * inv_norm_sq;
            for (o, t) in out.iter_mut().zip(theta) {
                *o += coef * t;
            }
        }
        Ok(out)
    }

    /// Rates used by [`x0_lambda`](Self::x0_lambda) at `x`.
    pub fn rates_at(&self, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        if let Some(h) = &self.h_override {
            return h.iter().map(|f| f.eval(x)).collect();
        }
        let dev = self.deviations(x)?;
        let d = self.d_values(x)?;
        Ok((0..self.p())
            .map(|i| {
                if i >= self.p_prime || self.lambda == 0.0 {
                    return 0.0;
                }
                let r = match self.variant {
                    RateVariant::Standard => dev[i],
                    RateVariant::PrintedFirstComponent => d[0] - self.targets[i],
                };
                -self.lambda * r
            })
            .collect())
    }

    /// Stabilizing perturbation `X₀^{λ;p′}(x)`.
    pub fn x0_lambda(&self, x: &[f64]) -> Result<Vec<f64>, FieldError> {
        let grads = self.independent_grads(x)?;
        let h = self.rates_at(x)?;
        Ok(self.hodge_solution(&grads, &h)?)
    }

    /// `X(x) + X₀^λ(x)`; equals `X₀^λ(x)` when there is no base field.
    pub fn x_lambda(&self, x: &[f64]) -> Result<Vec<f64>, FieldError> {
        let mut v = self.x0_lambda(x)?;
        if let Some(base) = self.base_at(x)? {
            for (vi, bi) in v.iter_mut().zip(base) {
                *vi += bi;
            }
        }
        Ok(v)
    }

    /// Independent route: solve `G c = (h, 0)` with `G = W Wᵀ` and return `Wᵀ c`.
    pub fn gram_oracle(&self, h: &[f64], x: &[f64]) -> Result<Vec<f64>, FieldError> {
        if h.len() != self.p() {
            return Err(FieldError::Length {
                expected: self.p(),
                found: h.len(),
            });
        }
        let grads = self.grads_at(x)?;
        let m = grads.len();
        let n = self.dim();
        let w = DMatrix::from_fn(m, n, |r, c| grads[r][c]);
        let gram = &w * w.transpose();
        let sv = gram.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if !(smin > self.rank_tol * self.rank_tol * smax.max(1.0)) {
            return Err(FieldError::SingularGram);
        }
        let rhs = DVector::from_fn(m, |a, _| if a < h.len() { h[a] } else { 0.0 });
        let c = gram.lu().solve(&rhs).ok_or(FieldError::SingularGram)?;
        let v = w.transpose() * c;
        Ok(v.iter().copied().collect())
    }

    /// Orthonormal basis of the orthogonal complement of the gradients at `x`.
    pub fn homogeneous_basis_at(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, FieldError> {
        let grads = self.independent_grads(x)?;
        let n = self.dim();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
        for g in &grads {
            if let Some(q) = orthonormalize(g.clone(), &basis) {
                basis.push(q);
            }
        }
        let span = basis.len();
        let mut free: Vec<Vec<f64>> = Vec::with_capacity(n - span);
        let mut unused: Vec<usize> = (0..n).collect();
        while span + free.len() < n {
            // Pick the coordinate axis with the largest residual for stability.
            let (pos, residual) = unused
                .iter()
                .enumerate()
                .map(|(pos, &j)| {
                    let mut e = vec![0.0; n];
                    e[j] = 1.0;
                    let r = project_out(project_out(e, &basis), &basis);
                    (pos, r)
                })
                .max_by(|a, b| norm(&a.1).total_cmp(&norm(&b.1)))
                .expect("an unused axis remains");
            unused.remove(pos);
            let len = norm(&residual);
            let q: Vec<f64> = residual.iter().map(|c| c / len).collect();
            basis.push(q.clone());
            free.push(q);
        }
        Ok(free)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn project_out(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Vec<f64> {
    for q in basis {
        let c = dot(&v, q);
        for (vi, qi) in v.iter_mut().zip(q) {
            *vi -= c * qi;
        }
    }
    v
}

fn orthonormalize(v: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let r = project_out(project_out(v, basis), basis);
    let len = norm(&r);
    (len > 0.0).then(|| r.iter().map(|c| c / len).collect())
}
