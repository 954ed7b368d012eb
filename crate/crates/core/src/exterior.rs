//! Exterior algebra of Euclidean ℝⁿ with the standard orientation `e₁∧…∧eₙ`.
//!
//! A [`KVector`] stores a homogeneous grade-`r` element as a sparse map from
//! strictly increasing index tuples to coefficients. Tuples are encoded as
//! bitmasks ([`Blade`]) but iterate in lexicographic tuple order.
//!
//! After every operation, coefficients with `|c| < prune_rel · max|c|` are
//! dropped. The default is [`DEFAULT_PRUNE_REL`]; the `*_with` variants take
//! an explicit threshold (`0.0` disables pruning).

use std::cmp::Ordering;
use std::collections::BTreeMap;

/// Largest supported ambient dimension (bitmask width).
pub const MAX_DIM: usize = 32;

pub const DEFAULT_PRUNE_REL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExteriorError {
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("grade mismatch: {0} vs {1}")]
    Grade(usize, usize),
    #[error("invalid basis tuple {0:?} for dimension {1}")]
    BadTuple(Vec<usize>, usize),
    #[error("dimension {0} exceeds the supported maximum {MAX_DIM}")]
    TooLarge(usize),
}

/// Basis blade `e_{i₁}∧…∧e_{i_r}` with `i₁ < … < i_r`, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Blade(u32);

impl Blade {
    pub const SCALAR: Blade = Blade(0);

    pub fn from_indices(idx: &[usize], n: usize) -> Result<Self, ExteriorError> {
        let valid = idx.iter().all(|&i| i < n) && idx.windows(2).all(|w| w[0] < w[1]);
        if !valid || n > MAX_DIM {
            return Err(ExteriorError::BadTuple(idx.to_vec(), n));
        }
        Ok(Blade(idx.iter().fold(0u32, |m, &i| m | (1 << i))))
    }

    pub fn grade(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn indices(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(i)
        })
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.indices().collect()
    }

    fn complement(self, n: usize) -> Blade {
        Blade(!self.0 & full_mask(n))
    }

    /// Sign of `e_self ∧ e_other` relative to the sorted blade; 0 if they overlap.
    fn wedge_sign(self, other: Blade) -> f64 {
        if self.0 & other.0 != 0 {
            return 0.0;
        }
        // Count inversions: pairs (i in self, j in other) with i > j.
        let inversions: u32 = other
            .indices()
            .map(|j| (self.0 >> (j + 1)).count_ones())
            .sum();
        if inversions % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

fn full_mask(n: usize) -> u32 {
    if n >= 32 {
        u32::MAX
    } else {
        (1u32 << n) - 1
    }
}

impl Ord for Blade {
    fn cmp(&self, other: &Self) -> Ordering {
        self.indices().cmp(other.indices())
    }
}

impl PartialOrd for Blade {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Homogeneous element of grade `grade` in Λ(ℝⁿ).
#[derive(Debug, Clone, PartialEq)]
pub struct KVector {
    n: usize,
    grade: usize,
    coeffs: BTreeMap<Blade, f64>,
}

impl KVector {
    pub fn zero(n: usize, grade: usize) -> Self {
        KVector {
            n,
            grade: grade.min(n),
            coeffs: BTreeMap::new(),
        }
    }

    pub fn scalar(n: usize, value: f64) -> Self {
        let mut coeffs = BTreeMap::new();
        if value != 0.0 {
            coeffs.insert(Blade::SCALAR, value);
        }
        KVector { n, grade: 0, coeffs }
    }

    /// Grade-1 element from Cartesian components.
    pub fn vector(components: &[f64]) -> Self {
        let n = components.len();
        let coeffs = components
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, &c)| (Blade(1 << i), c))
            .collect();
        KVector { n, grade: 1, coeffs }
    }

    /// `coeff · e_{idx}` with `idx` strictly increasing.
    pub fn basis(n: usize, idx: &[usize], coeff: f64) -> Result<Self, ExteriorError> {
        let blade = Blade::from_indices(idx, n)?;
        let mut coeffs = BTreeMap::new();
        if coeff != 0.0 {
            coeffs.insert(blade, coeff);
        }
        Ok(KVector {
            n,
            grade: idx.len(),
            coeffs,
        })
    }

    /// Build from `(tuple, coefficient)` pairs; repeated tuples accumulate.
    pub fn from_terms(
        n: usize,
        grade: usize,
        terms: impl IntoIterator<Item = (Vec<usize>, f64)>,
    ) -> Result<Self, ExteriorError> {
        let mut out = KVector::zero(n, grade);
        for (idx, c) in terms {
            if idx.len() != grade {
                return Err(ExteriorError::Grade(idx.len(), grade));
            }
            *out.coeffs.entry(Blade::from_indices(&idx, n)?).or_insert(0.0) += c;
        }
        out.coeffs.retain(|_, c| *c != 0.0);
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn grade(&self) -> usize {
        self.grade
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeff(&self, idx: &[usize]) -> f64 {
        Blade::from_indices(idx, self.n)
            .ok()
            .and_then(|b| self.coeffs.get(&b).copied())
            .unwrap_or(0.0)
    }

    /// Nonzero terms in lexicographic tuple order.
    pub fn terms(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.coeffs.iter().map(|(b, &c)| (b.to_vec(), c))
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Components of a grade-1 element.
    pub fn to_vector(&self) -> Option<Vec<f64>> {
        if self.grade != 1 {
            return None;
        }
        let mut v = vec![0.0; self.n];
        for (b, &c) in &self.coeffs {
            v[b.0.trailing_zeros() as usize] = c;
        }
        Some(v)
    }

    /// Value of a grade-0 element.
    pub fn to_scalar(&self) -> Option<f64> {
        (self.grade == 0).then(|| self.coeffs.get(&Blade::SCALAR).copied().unwrap_or(0.0))
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.values_mut().for_each(|c| *c *= s);
        out.coeffs.retain(|_, c| *c != 0.0);
        out
    }

    pub fn add(&self, other: &KVector) -> Result<Self, ExteriorError> {
        self.same_shape(other)?;
        let mut out = self.clone();
        for (b, &c) in &other.coeffs {
            *out.coeffs.entry(*b).or_insert(0.0) += c;
        }
        out.prune(DEFAULT_PRUNE_REL);
        Ok(out)
    }

    fn same_shape(&self, other: &KVector) -> Result<(), ExteriorError> {
        if self.n != other.n {
            return Err(ExteriorError::Dimension(self.n, other.n));
        }
        if self.grade != other.grade {
            return Err(ExteriorError::Grade(self.grade, other.grade));
        }
        Ok(())
    }

    fn max_abs(&self) -> f64 {
        self.coeffs.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    fn prune(&mut self, rel: f64) {
        let cutoff = rel * self.max_abs();
        self.coeffs.retain(|_, c| *c != 0.0 && c.abs() >= cutoff);
    }

    /// Return a copy with coefficients below `rel · max|c|` removed.
    pub fn pruned(&self, rel: f64) -> Self {
        let mut out = self.clone();
        out.prune(rel);
        out
    }

    pub fn wedge(&self, other: &KVector) -> Result<Self, ExteriorError> {
        self.wedge_with(other, DEFAULT_PRUNE_REL)
    }

    /// Exterior product. When the grades sum past `n` the result is the zero
    /// element of grade `n`.
    pub fn wedge_with(&self, other: &KVector, prune_rel: f64) -> Result<Self, ExteriorError> {
        if self.n != other.n {
            return Err(ExteriorError::Dimension(self.n, other.n));
        }
        let grade = self.grade + other.grade;
        let mut out = KVector::zero(self.n, grade);
        if grade > self.n {
            return Ok(out);
        }
        for (ba, &ca) in &self.coeffs {
            for (bb, &cb) in &other.coeffs {
                let s = ba.wedge_sign(*bb);
                if s != 0.0 {
                    *out.coeffs.entry(Blade(ba.0 | bb.0)).or_insert(0.0) += s * ca * cb;
                }
            }
        }
        out.prune(prune_rel);
        Ok(out)
    }

    pub fn hodge(&self) -> Self {
        self.hodge_with(DEFAULT_PRUNE_REL)
    }

    /// Hodge star: `⋆e_I = sign(I, Iᶜ) e_{Iᶜ}`, grade `n − r`.
    pub fn hodge_with(&self, prune_rel: f64) -> Self {
        let mut out = KVector::zero(self.n, self.n - self.grade);
        for (b, &c) in &self.coeffs {
            let comp = b.complement(self.n);
            out.coeffs.insert(comp, b.wedge_sign(comp) * c);
        }
        out.prune(prune_rel);
        out
    }

    /// Grade-r inner product induced by the orthonormal basis.
    pub fn inner(&self, other: &KVector) -> Result<f64, ExteriorError> {
        self.same_shape(other)?;
        Ok(self
            .coeffs
            .iter()
            .filter_map(|(b, &c)| other.coeffs.get(b).map(|&d| c * d))
            .sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.values().map(|c| c * c).sum()
    }

    pub fn from_vectors(n: usize, vs: &[Vec<f64>]) -> Result<Self, ExteriorError> {
        Self::from_vectors_with(n, vs, DEFAULT_PRUNE_REL)
    }

    /// `v₁ ∧ … ∧ v_p`, folded left; the empty product is the scalar 1.
    pub fn from_vectors_with(
        n: usize,
        vs: &[Vec<f64>],
        prune_rel: f64,
    ) -> Result<Self, ExteriorError> {
        if n > MAX_DIM {
            return Err(ExteriorError::TooLarge(n));
        }
        let mut acc = KVector::scalar(n, 1.0);
        for v in vs {
            if v.len() != n {
                return Err(ExteriorError::Dimension(n, v.len()));
            }
            acc = acc.wedge_with(&KVector::vector(v), prune_rel)?;
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(n: usize, idx: &[usize]) -> KVector {
        KVector::basis(n, idx, 1.0).unwrap()
    }

    #[test]
    fn wedge_examples() {
        assert_eq!(e(3, &[0]).wedge(&e(3, &[1])).unwrap(), e(3, &[0, 1]));
        assert_eq!(
            e(3, &[1]).wedge(&e(3, &[0])).unwrap(),
            KVector::basis(3, &[0, 1], -1.0).unwrap()
        );
        let v = KVector::vector(&[1.0, 1.0, 0.0]);
        assert!(v.wedge(&v).unwrap().is_zero());
    }

    #[test]
    fn wedge_past_top_grade_is_zero() {
        let a = e(2, &[0, 1]);
        let w = a.wedge(&e(2, &[0])).unwrap();
        assert!(w.is_zero());
        assert_eq!(w.grade(), 2);
        assert!(matches!(
            e(2, &[0]).wedge(&e(3, &[0])),
            Err(ExteriorError::Dimension(2, 3))
        ));
    }

    #[test]
    fn hodge_examples() {
        assert_eq!(e(3, &[0]).hodge(), e(3, &[1, 2]));
        assert_eq!(e(3, &[0, 1]).hodge(), e(3, &[2]));
        assert_eq!(e(3, &[1]).hodge(), KVector::basis(3, &[0, 2], -1.0).unwrap());
        assert_eq!(e(2, &[0]).hodge().hodge(), KVector::basis(2, &[0], -1.0).unwrap());
        assert_eq!(KVector::scalar(3, 2.0).hodge(), KVector::basis(3, &[0, 1, 2], 2.0).unwrap());
    }

    #[test]
    fn inner_examples() {
        assert_eq!(e(3, &[0, 1]).inner(&e(3, &[0, 1])), Ok(1.0));
        assert_eq!(e(3, &[0, 1]).inner(&e(3, &[0, 2])), Ok(0.0));
        let a = KVector::basis(3, &[0], 2.0).unwrap();
        let b = KVector::basis(3, &[0], 3.0).unwrap();
        assert_eq!(a.inner(&b), Ok(6.0));
        assert_eq!(e(3, &[0]).inner(&e(3, &[0, 1])), Err(ExteriorError::Grade(1, 2)));
    }

    #[test]
    fn norm_examples() {
        let w = KVector::from_vectors(3, &[vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(w.norm_sq(), 1.0);
        assert_eq!(KVector::zero(3, 2).norm_sq(), 0.0);
        let s = 0.5f64.sqrt();
        let w = KVector::from_vectors(2, &[vec![s, s], vec![-s, s]]).unwrap();
        assert!((w.norm_sq() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn from_vectors_examples() {
        let empty = KVector::from_vectors(4, &[]).unwrap();
        assert_eq!(empty.to_scalar(), Some(1.0));
        assert_eq!(
            KVector::from_vectors(2, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            e(2, &[0, 1])
        );
        let dep = KVector::from_vectors(3, &[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]).unwrap();
        assert!(dep.is_zero());
        assert!(KVector::from_vectors(3, &[vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn terms_are_lexicographic() {
        let k = KVector::from_terms(
            4,
            2,
            [(vec![2, 3], 1.0), (vec![0, 3], 2.0), (vec![1, 2], 3.0), (vec![0, 1], 4.0)],
        )
        .unwrap();
        let order: Vec<Vec<usize>> = k.terms().map(|(t, _)| t).collect();
        assert_eq!(order, vec![vec![0, 1], vec![0, 3], vec![1, 2], vec![2, 3]]);
        assert!(KVector::basis(3, &[1, 0], 1.0).is_err());
        assert!(KVector::basis(3, &[3], 1.0).is_err());
    }

    #[test]
    fn pruning_threshold() {
        let k = KVector::vector(&[1.0, 1e-16, 0.5]);
        let p = k.pruned(DEFAULT_PRUNE_REL);
        assert_eq!(p.len(), 2);
        assert_eq!(k.pruned(0.0).len(), 3);
    }
}
