//! Fixed point of the self-referential mixture
//!
//! ```text
//! q = W(1)·ζ + Σ_{s∈S} W(s)·T_s^k(q)
//! ```
//!
//! where `T_s^k` is the truncation operator. [`solve_q`] searches over
//! truncation pivots: every threshold `s` starts by zeroing all minority arms
//! and is advanced one arm at a time while the candidate mixture puts more than
//! `s` on the first arm it still zeroes. Minority candidate masses only grow
//! during the search, so no pivot ever overshoots.
//!
//! Each step touches one minority arm and the shared majority scale, so it is
//! O(1); a FIFO of eligible minority arms finds the next step in O(1) too. The
//! search takes at most `K·|S|` steps.

use std::collections::VecDeque;

use crate::error::{MygaError, Result};
use crate::simplex::Distribution;
use crate::TOL;

/// Mixture weights over the aggregated real experts and the threshold experts.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    base: f64,
    thresh: Vec<f64>,
}

impl MixtureWeights {
    /// `base` is the total share of the real experts; `thresh[j]` is the share of
    /// the threshold expert for `S[j]`. Threshold shares may be exactly zero
    /// (underflowed exponential weights) but `base` must be positive.
    pub fn new(base: f64, thresh: Vec<f64>) -> Result<Self> {
        if !(base > 0.0) || !base.is_finite() {
            return Err(MygaError::InvalidParameter(format!(
                "real-expert share must be positive, got {base}"
            )));
        }
        if thresh.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(MygaError::InvalidParameter(
                "threshold shares must be finite and non-negative".into(),
            ));
        }
        let total = base + thresh.iter().sum::<f64>();
        if (total - 1.0).abs() > TOL {
            return Err(MygaError::InvalidParameter(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(MixtureWeights { base, thresh })
    }

    /// Normalizes raw non-negative weights.
    pub fn from_raw(base: f64, thresh: &[f64]) -> Result<Self> {
        let total = base + thresh.iter().sum::<f64>();
        if !(total > 0.0) || !total.is_finite() {
            return Err(MygaError::InvalidParameter(format!(
                "raw mixture weights have total {total}"
            )));
        }
        Self::new(base / total, thresh.iter().map(|w| w / total).collect())
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn thresh(&self) -> &[f64] {
        &self.thresh
    }
}

/// Output of [`solve_q`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub q: Distribution,
    pub iterations: usize,
    k: usize,
    /// Per minority arm (offset from `k`), how many thresholds have moved past it.
    passed: Vec<usize>,
}

impl Solution {
    /// Terminal pivot of threshold `j`: the first arm its truncation zeroes, in
    /// `k..=K` (0-based; `K` means nothing is zeroed).
    pub fn pivot(&self, j: usize) -> usize {
        self.k + self.passed.partition_point(|&c| c > j)
    }
}

/// State handed to a [`solve_q_observed`] observer after every pivot step.
#[derive(Debug)]
pub struct IterationView<'a> {
    pub iteration: usize,
    /// The minority arm whose pivot count just advanced (offset from `k`).
    pub advanced: usize,
    /// Candidate masses of the minority arms `k..K`.
    pub minority: &'a [f64],
}

pub fn solve_q(
    zeta_sorted: &Distribution,
    k: usize,
    weights: &MixtureWeights,
    thresholds: &[f64],
) -> Result<Solution> {
    solve_q_observed(zeta_sorted, k, weights, thresholds, |_| {})
}

pub fn solve_q_observed<F>(
    zeta_sorted: &Distribution,
    k: usize,
    weights: &MixtureWeights,
    thresholds: &[f64],
    mut observer: F,
) -> Result<Solution>
where
    F: FnMut(&IterationView<'_>),
{
    let n = zeta_sorted.len();
    check_inputs(zeta_sorted, k, weights, thresholds)?;

    let minority_count = n - k;
    let ns = thresholds.len();
    if ns == 0 || minority_count == 0 {
        return Ok(Solution {
            q: zeta_sorted.clone(),
            iterations: 0,
            k,
            passed: vec![0; minority_count],
        });
    }

    let zeta = zeta_sorted.as_slice();
    let w_base = weights.base();
    let w = weights.thresh();
    // pending[j] = Σ_{j' >= j} w[j'], the share of thresholds that still zero an arm
    // once j of them have moved past it.
    let mut pending = vec![0.0; ns + 1];
    for j in (0..ns).rev() {
        pending[j] = pending[j + 1] + w[j];
    }

    let mut passed = vec![0usize; minority_count];
    let mut qm: Vec<f64> = (0..minority_count)
        .map(|i| w_base * zeta[k + i] / (w_base + pending[0]))
        .collect();

    let eligible = |i: usize, passed: &[usize], qm: &[f64]| {
        let c = passed[i];
        c < ns && (i == 0 || passed[i - 1] > c) && qm[i] > thresholds[c]
    };

    let mut queue = VecDeque::with_capacity(minority_count);
    let mut queued = vec![false; minority_count];
    if eligible(0, &passed, &qm) {
        queue.push_back(0);
        queued[0] = true;
    }

    let mut iterations = 0usize;
    while let Some(i) = queue.pop_front() {
        queued[i] = false;
        if !eligible(i, &passed, &qm) {
            continue;
        }
        passed[i] += 1;
        qm[i] = w_base * zeta[k + i] / (w_base + pending[passed[i]]);
        iterations += 1;
        observer(&IterationView {
            iteration: iterations,
            advanced: i,
            minority: &qm,
        });

        for next in [i, i + 1] {
            if next < minority_count && !queued[next] && eligible(next, &passed, &qm) {
                queue.push_back(next);
                queued[next] = true;
            }
        }
    }

    let minority_mass: f64 = qm.iter().sum();
    let zeta_maj: f64 = zeta[..k].iter().sum();
    let scale = (1.0 - minority_mass) / zeta_maj;
    let mut q = Vec::with_capacity(n);
    q.extend(zeta[..k].iter().map(|&z| z * scale));
    q.extend_from_slice(&qm);

    let q = Distribution::new(q)?;
    let r = residual(&q, zeta_sorted, k, weights, thresholds);
    if !(r <= TOL) {
        return Err(MygaError::ResidualExceeded { residual: r });
    }
    Ok(Solution {
        q,
        iterations,
        k,
        passed,
    })
}

fn check_inputs(
    zeta_sorted: &Distribution,
    k: usize,
    weights: &MixtureWeights,
    thresholds: &[f64],
) -> Result<()> {
    let n = zeta_sorted.len();
    if k == 0 || k > n {
        return Err(MygaError::InvalidParameter(format!("pivot {k} outside 1..={n}")));
    }
    if zeta_sorted.as_slice().windows(2).any(|p| p[0] < p[1]) {
        return Err(MygaError::InvalidParameter(
            "base distribution must be sorted in non-increasing order".into(),
        ));
    }
    if weights.thresh().len() != thresholds.len() {
        return Err(MygaError::DimensionMismatch {
            expected: thresholds.len(),
            found: weights.thresh().len(),
        });
    }
    if thresholds.iter().any(|&s| !(s > 0.0 && s <= 0.5)) {
        return Err(MygaError::InvalidParameter(
            "thresholds must lie in (0, 1/2]".into(),
        ));
    }
    if thresholds.windows(2).any(|p| p[0] >= p[1]) {
        return Err(MygaError::InvalidParameter(
            "thresholds must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Max-norm distance between `q` and `W(1)·ζ + Σ_s W(s)·T_s^k(q)`.
///
/// Runs in `O(K log K + |S|)` for sorted thresholds; unsorted input is sorted
/// first. Returns infinity when `q` has no majority mass.
pub fn residual(
    q: &Distribution,
    zeta_sorted: &Distribution,
    k: usize,
    weights: &MixtureWeights,
    thresholds: &[f64],
) -> f64 {
    let n = q.len();
    if zeta_sorted.len() != n || k == 0 || k > n || weights.thresh().len() != thresholds.len() {
        return f64::INFINITY;
    }
    let mut pairs: Vec<(f64, f64)> = thresholds
        .iter()
        .copied()
        .zip(weights.thresh().iter().copied())
        .collect();
    if pairs.windows(2).any(|p| p[0].0 > p[1].0) {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let q = q.as_slice();
    let zeta = zeta_sorted.as_slice();
    let q_maj: f64 = q[..k].iter().sum();
    if !(q_maj > 0.0) {
        return f64::INFINITY;
    }

    // below[j] = Σ_{j' < j} W(s_j')
    let mut below = Vec::with_capacity(pairs.len() + 1);
    below.push(0.0);
    for &(_, w) in &pairs {
        below.push(below.last().unwrap() + w);
    }
    let aux_total = *below.last().unwrap();

    // Σ_s W(s)·D(s), where D(s) is the minority mass at or below s.
    let mut minority: Vec<f64> = q[k..].to_vec();
    minority.sort_by(f64::total_cmp);
    let mut weighted_moved = 0.0;
    let mut moved = 0.0;
    let mut idx = 0;
    for &(s, w) in &pairs {
        while idx < minority.len() && minority[idx] <= s {
            moved += minority[idx];
            idx += 1;
        }
        weighted_moved += w * moved;
    }

    let mut worst = 0.0f64;
    for i in 0..n {
        let rhs = if i < k {
            weights.base() * zeta[i] + q[i] * (aux_total + weighted_moved / q_maj)
        } else {
            let kept = pairs.partition_point(|&(s, _)| s < q[i]);
            weights.base() * zeta[i] + q[i] * below[kept]
        };
        worst = worst.max((q[i] - rhs).abs());
    }
    worst
}

/// Fixed point of the two-arm map `F(x) = W(1)·b + Σ_s W(s)·x·1{x > s}` on
/// `[0, 1/2]`, by enumerating its linear pieces. Returns the smallest
/// consistent candidate.
pub fn two_arm_oracle(xi2_base: f64, weights: &MixtureWeights, thresholds: &[f64]) -> Result<f64> {
    if !(0.0..=0.5).contains(&xi2_base) {
        return Err(MygaError::InvalidParameter(format!(
            "arm-2 mass {xi2_base} outside [0, 1/2]"
        )));
    }
    if weights.thresh().len() != thresholds.len() {
        return Err(MygaError::DimensionMismatch {
            expected: thresholds.len(),
            found: weights.thresh().len(),
        });
    }
    let mut pairs: Vec<(f64, f64)> = thresholds
        .iter()
        .copied()
        .zip(weights.thresh().iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let map = |x: f64| {
        weights.base() * xi2_base
            + pairs
                .iter()
                .filter(|&&(s, _)| x > s)
                .map(|&(_, w)| w * x)
                .sum::<f64>()
    };

    // Piece j: exactly the j smallest thresholds lie strictly below x.
    let mut active = 0.0;
    for j in 0..=pairs.len() {
        if j > 0 {
            active += pairs[j - 1].1;
        }
        let x = weights.base() * xi2_base / (1.0 - active);
        let above_lower = j == 0 || x > pairs[j - 1].0;
        let below_upper = j == pairs.len() || x <= pairs[j].0;
        if above_lower && below_upper && (x - map(x)).abs() <= 1e-12 {
            return Ok(x);
        }
    }
    Err(MygaError::NoConsistentPiece)
}
