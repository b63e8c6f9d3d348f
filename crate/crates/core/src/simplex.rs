//! Probability-simplex primitives.

use std::ops::Index;

use crate::error::{MygaError, Result};
use crate::TOL;

/// One advice per real expert, each a distribution over the same `K` arms.
pub type AdviceSet = Vec<Distribution>;

/// A point on the probability simplex over `K` arms.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

/// True iff every entry is non-negative and the entries sum to 1 within [`TOL`].
pub fn validate(probs: &[f64]) -> bool {
    !probs.is_empty()
        && probs.iter().all(|&x| x >= 0.0 && x.is_finite())
        && (probs.iter().sum::<f64>() - 1.0).abs() <= TOL
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if validate(&probs) {
            Ok(Distribution(probs))
        } else {
            Err(MygaError::SimplexViolation {
                sum: probs.iter().sum(),
                min: probs.iter().copied().fold(f64::INFINITY, f64::min),
            })
        }
    }

    pub fn uniform(k: usize) -> Self {
        Distribution(vec![1.0 / k as f64; k])
    }

    /// Point mass on `arm`.
    pub fn point(k: usize, arm: usize) -> Self {
        let mut v = vec![0.0; k];
        v[arm] = 1.0;
        Distribution(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Inner product with a loss (or any) vector.
    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

impl Index<usize> for Distribution {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl AsRef<[f64]> for Distribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `forward[pos]` is the original arm sitting at sorted position `pos`;
/// `inverse[arm]` is the sorted position of an original arm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArmPermutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl ArmPermutation {
    pub fn identity(k: usize) -> Self {
        let forward: Vec<usize> = (0..k).collect();
        ArmPermutation {
            inverse: forward.clone(),
            forward,
        }
    }

    pub fn from_forward(forward: Vec<usize>) -> Result<Self> {
        let mut inverse = vec![usize::MAX; forward.len()];
        for (pos, &arm) in forward.iter().enumerate() {
            if arm >= forward.len() || inverse[arm] != usize::MAX {
                return Err(MygaError::InvalidParameter(format!(
                    "not a permutation: {forward:?}"
                )));
            }
            inverse[arm] = pos;
        }
        Ok(ArmPermutation { forward, inverse })
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn to_original(&self, sorted_pos: usize) -> usize {
        self.forward[sorted_pos]
    }

    pub fn to_sorted(&self, arm: usize) -> usize {
        self.inverse[arm]
    }

    /// Reorders a vector given in original arm order into sorted order.
    pub fn permute<T: Copy>(&self, original: &[T]) -> Vec<T> {
        self.forward.iter().map(|&arm| original[arm]).collect()
    }

    /// Maps a vector in sorted order back to original arm order.
    pub fn unpermute<T: Copy>(&self, sorted: &[T]) -> Vec<T> {
        self.inverse.iter().map(|&pos| sorted[pos]).collect()
    }
}

/// `Σ_e w(e)·ξ^e / Σ_e w(e)`.
///
/// Weights must be non-negative with a positive total. Individual weights may
/// be exactly zero, which happens when an exponential weight underflows.
pub fn weighted_average(advices: &[Distribution], weights: &[f64]) -> Result<Distribution> {
    if advices.len() != weights.len() {
        return Err(MygaError::DimensionMismatch {
            expected: advices.len(),
            found: weights.len(),
        });
    }
    let Some(first) = advices.first() else {
        return Err(MygaError::InvalidParameter("empty advice set".into()));
    };
    let k = first.len();
    if let Some(bad) = advices.iter().find(|a| a.len() != k) {
        return Err(MygaError::DimensionMismatch {
            expected: k,
            found: bad.len(),
        });
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(MygaError::InvalidParameter(
            "expert weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(MygaError::InvalidParameter("expert weights sum to zero".into()));
    }

    let mut mix = vec![0.0; k];
    for (advice, &w) in advices.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (m, &x) in mix.iter_mut().zip(advice.as_slice()) {
            *m += w * x;
        }
    }
    for m in &mut mix {
        *m /= total;
    }
    // Renormalize here and nowhere downstream.
    let sum: f64 = mix.iter().sum();
    for m in &mut mix {
        *m /= sum;
    }
    Distribution::new(mix)
}

/// Sorts into non-increasing order. Ties keep the lower original arm first.
pub fn descending_sort(zeta: &Distribution) -> (Distribution, ArmPermutation) {
    let mut forward: Vec<usize> = (0..zeta.len()).collect();
    // sort_by is stable
    forward.sort_by(|&a, &b| zeta[b].total_cmp(&zeta[a]));
    let sorted = forward.iter().map(|&a| zeta[a]).collect();
    let perm = ArmPermutation::from_forward(forward).expect("sort yields a permutation");
    (Distribution(sorted), perm)
}

/// Smallest `k` (a count, `1..=K`) such that the first `k` sorted entries hold
/// at least half of the mass. Exact comparison, no slack.
pub fn pivot_index(zeta_sorted: &Distribution) -> usize {
    let mut acc = 0.0;
    for (i, &x) in zeta_sorted.as_slice().iter().enumerate() {
        acc += x;
        if acc >= 0.5 {
            return i + 1;
        }
    }
    zeta_sorted.len()
}
