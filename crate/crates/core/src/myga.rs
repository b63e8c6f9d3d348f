//! The full online policy: exponential weights over the real experts and one
//! threshold expert per lattice point in `(gamma, 1/2]`.
//!
//! Each round:
//!
//! 1. mix the real advices with their weights into `ζ`, sort it descending and
//!    take the pivot `k` (majority arms `0..k`);
//! 2. solve for the fixed-point mixture `q` over real and threshold experts;
//! 3. play from `p = T_gamma^k(q)`;
//! 4. feed the importance-weighted loss of the played arm back into every
//!    expert, threshold experts included (their advice is `T_s^k(q)`).
//!
//! Threshold experts are round-local: their advice is defined in the sorted
//! coordinates of the current round, and only their identity `s` persists.

use std::sync::Arc;

use crate::error::{MygaError, Result};
use crate::fixed_point::{solve_q, MixtureWeights};
use crate::simplex::{descending_sort, pivot_index, weighted_average, ArmPermutation, Distribution};
use crate::truncation::{truncate, TruncationParams};

/// Learning rate and exploration threshold for a known loss bound `l_star`,
/// with `gamma` on the default lattice `1/(2T)`.
///
/// `eta = min{1/K, sqrt(ln(|E|·T) / (K·max(l_star, 1)))}` and `gamma` is the
/// smallest lattice point at or above `2·eta`, capped at 1/2.
pub fn schedule_parameters(arms: usize, num_experts: usize, horizon: u64, l_star: f64) -> (f64, f64) {
    schedule_parameters_on_grid(arms, num_experts, horizon, l_star, 2 * horizon)
}

pub fn schedule_parameters_on_grid(
    arms: usize,
    num_experts: usize,
    horizon: u64,
    l_star: f64,
    grid_denominator: u64,
) -> (f64, f64) {
    let log_term = (num_experts as f64 * horizon as f64).ln();
    let eta = (1.0 / arms as f64).min((log_term / (arms as f64 * l_star.max(1.0))).sqrt());
    let units = lattice_ceil(2.0 * eta, grid_denominator)
        .min(grid_denominator / 2)
        .max(1);
    (eta, units as f64 / grid_denominator as f64)
}

/// Smallest `j` with `j / den >= x`, robust to `x` already sitting on the lattice.
fn lattice_ceil(x: f64, den: u64) -> u64 {
    let scaled = x * den as f64;
    let nearest = scaled.round();
    if (scaled - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as u64
    } else {
        scaled.ceil() as u64
    }
}

fn lattice_units(x: f64, den: u64) -> Option<u64> {
    let scaled = x * den as f64;
    let nearest = scaled.round();
    ((scaled - nearest).abs() <= 1e-9 * nearest.max(1.0)).then_some(nearest as u64)
}

/// Lattice points `j / grid_denominator` in `(gamma, 1/2]`, increasing.
pub fn build_threshold_grid(gamma: f64, grid_denominator: u64) -> Vec<f64> {
    let first = match lattice_units(gamma, grid_denominator) {
        Some(u) => u + 1,
        None => (gamma * grid_denominator as f64).floor() as u64 + 1,
    };
    let last = grid_denominator / 2;
    (first..=last)
        .map(|j| j as f64 / grid_denominator as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MygaConfig {
    pub arms: usize,
    pub num_experts: usize,
    pub horizon: u64,
    pub eta: f64,
    pub gamma: f64,
    pub grid_denominator: u64,
}

impl MygaConfig {
    pub fn new(
        arms: usize,
        num_experts: usize,
        horizon: u64,
        eta: f64,
        gamma: f64,
        grid_denominator: u64,
    ) -> Result<Self> {
        if arms < 2 {
            return Err(MygaError::InvalidParameter("need at least 2 arms".into()));
        }
        if num_experts == 0 || horizon == 0 || grid_denominator == 0 {
            return Err(MygaError::InvalidParameter(
                "experts, horizon and grid denominator must be positive".into(),
            ));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(MygaError::InvalidParameter(format!(
                "learning rate {eta} must be positive"
            )));
        }
        if !(gamma > 0.0 && gamma <= 0.5) {
            return Err(MygaError::InvalidParameter(format!(
                "gamma {gamma} outside (0, 1/2]"
            )));
        }
        if lattice_units(gamma, grid_denominator).is_none() {
            return Err(MygaError::InvalidParameter(format!(
                "gamma {gamma} is not a multiple of 1/{grid_denominator}"
            )));
        }
        Ok(MygaConfig {
            arms,
            num_experts,
            horizon,
            eta,
            gamma,
            grid_denominator,
        })
    }

    /// Parameters from [`schedule_parameters`] on the default `1/(2T)` grid.
    pub fn scheduled(arms: usize, num_experts: usize, horizon: u64, l_star: f64) -> Result<Self> {
        let (eta, gamma) = schedule_parameters(arms, num_experts, horizon, l_star);
        Self::new(arms, num_experts, horizon, eta, gamma, 2 * horizon)
    }
}

/// Cumulative estimated losses of every expert. Weights are
/// `exp(-eta·loss)`, evaluated relative to the smallest loss.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    pub real: Vec<f64>,
    pub thresh: Vec<f64>,
    /// Number of completed rounds.
    pub round: u64,
}

impl WeightState {
    pub fn new(num_experts: usize, num_thresholds: usize) -> Self {
        WeightState {
            real: vec![0.0; num_experts],
            thresh: vec![0.0; num_thresholds],
            round: 0,
        }
    }

    /// Unnormalized weights `(real, thresh)`, shifted so the best expert has
    /// weight 1. The shift cancels on normalization.
    pub fn shifted_weights(&self, eta: f64) -> (Vec<f64>, Vec<f64>) {
        let shift = self
            .real
            .iter()
            .chain(&self.thresh)
            .copied()
            .fold(f64::INFINITY, f64::min);
        let w = |l: &f64| (-eta * (l - shift)).exp();
        (
            self.real.iter().map(w).collect(),
            self.thresh.iter().map(w).collect(),
        )
    }

    /// Normalized weights over real experts followed by threshold experts.
    pub fn normalized_weights(&self, eta: f64) -> Vec<f64> {
        let (r, t) = self.shifted_weights(eta);
        let total: f64 = r.iter().chain(&t).sum();
        r.iter().chain(&t).map(|w| w / total).collect()
    }
}

/// Everything computed in one round, for the weight update and the auditor.
/// Vectors named `*_sorted` or living in sorted coordinates follow `perm`.
#[derive(Debug, Clone)]
pub struct RoundTrace {
    /// 1-based round index.
    pub t: u64,
    pub zeta_sorted: Distribution,
    pub perm: ArmPermutation,
    pub k: usize,
    /// Fixed-point mixture, sorted coordinates.
    pub q: Distribution,
    /// Played distribution, sorted coordinates.
    pub p: Distribution,
    pub p_original: Distribution,
    pub residual: f64,
    pub solver_iterations: usize,
    pub thresholds: Arc<[f64]>,
    pub gamma: f64,
    pub played: Option<Play>,
}

/// What happened after sampling.
#[derive(Debug, Clone)]
pub struct Play {
    pub a_sorted: usize,
    pub a_original: usize,
    pub observed_loss: f64,
    /// Importance-weighted loss estimate, sorted coordinates.
    pub est: Vec<f64>,
    pub real_advice_at_played: Vec<f64>,
    pub aux_advice_at_played: Vec<f64>,
}

/// `loss / p(a)` at the played arm, zero elsewhere.
pub fn loss_estimator(p_sorted: &Distribution, a_sorted: usize, observed_loss: f64) -> Result<Vec<f64>> {
    if a_sorted >= p_sorted.len() {
        return Err(MygaError::DimensionMismatch {
            expected: p_sorted.len(),
            found: a_sorted,
        });
    }
    let pa = p_sorted[a_sorted];
    if !(pa > 0.0) {
        return Err(MygaError::ZeroProbabilityArm { arm: a_sorted });
    }
    let mut est = vec![0.0; p_sorted.len()];
    if observed_loss != 0.0 {
        est[a_sorted] = observed_loss / pa;
    }
    Ok(est)
}

/// Inverse-CDF draw from `p` with one uniform `u` in `[0, 1)`. Arms with zero
/// probability are never returned.
pub fn sample_arm(p: &Distribution, u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &x) in p.as_slice().iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the total mass
    p.as_slice().iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Advice of the threshold expert `s` at sorted arm `a`, for every `s` in
/// `thresholds` (increasing), computed in one sweep.
pub fn threshold_advice_at(q: &Distribution, k: usize, a_sorted: usize, thresholds: &[f64]) -> Vec<f64> {
    let qa = q[a_sorted];
    if a_sorted >= k {
        return thresholds
            .iter()
            .map(|&s| if qa > s { qa } else { 0.0 })
            .collect();
    }
    let q_maj: f64 = q.as_slice()[..k].iter().sum();
    let mut minority: Vec<f64> = q.as_slice()[k..].to_vec();
    minority.sort_by(f64::total_cmp);
    let mut moved = 0.0;
    let mut idx = 0;
    thresholds
        .iter()
        .map(|&s| {
            while idx < minority.len() && minority[idx] <= s {
                moved += minority[idx];
                idx += 1;
            }
            qa / q_maj * (q_maj + moved)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MygaPolicy {
    cfg: MygaConfig,
    thresholds: Arc<[f64]>,
    state: WeightState,
    corrupt_mixture: bool,
}

impl MygaPolicy {
    pub fn new(cfg: MygaConfig) -> Self {
        let thresholds: Arc<[f64]> = build_threshold_grid(cfg.gamma, cfg.grid_denominator).into();
        let state = WeightState::new(cfg.num_experts, thresholds.len());
        MygaPolicy {
            cfg,
            thresholds,
            state,
            corrupt_mixture: false,
        }
    }

    /// Test hook: replaces the solved mixture with the uniform distribution,
    /// which breaks the fixed-point relation the auditor relies on.
    #[doc(hidden)]
    pub fn with_corrupted_mixture(mut self) -> Self {
        self.corrupt_mixture = true;
        self
    }

    pub fn config(&self) -> &MygaConfig {
        &self.cfg
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn state(&self) -> &WeightState {
        &self.state
    }

    pub fn advise(&self, advices: &[Distribution]) -> Result<RoundTrace> {
        if advices.len() != self.cfg.num_experts {
            return Err(MygaError::DimensionMismatch {
                expected: self.cfg.num_experts,
                found: advices.len(),
            });
        }
        if let Some(bad) = advices.iter().find(|a| a.len() != self.cfg.arms) {
            return Err(MygaError::DimensionMismatch {
                expected: self.cfg.arms,
                found: bad.len(),
            });
        }

        let (real_w, thresh_w) = self.state.shifted_weights(self.cfg.eta);
        let zeta = weighted_average(advices, &real_w)?;
        let (zeta_sorted, perm) = descending_sort(&zeta);
        let k = pivot_index(&zeta_sorted);

        let mixture = MixtureWeights::from_raw(real_w.iter().sum(), &thresh_w)?;
        let solution = solve_q(&zeta_sorted, k, &mixture, &self.thresholds)?;
        let (q, residual) = if self.corrupt_mixture {
            let q = Distribution::uniform(self.cfg.arms);
            let r = crate::fixed_point::residual(&q, &zeta_sorted, k, &mixture, &self.thresholds);
            (q, r)
        } else {
            let r = crate::fixed_point::residual(&solution.q, &zeta_sorted, k, &mixture, &self.thresholds);
            (solution.q, r)
        };

        let p = if k == self.cfg.arms {
            q.clone()
        } else {
            truncate(&q, TruncationParams::new(k, self.cfg.gamma)?)?
        };
        let p_original = Distribution::new(perm.unpermute(p.as_slice()))?;

        Ok(RoundTrace {
            t: self.state.round + 1,
            zeta_sorted,
            perm,
            k,
            q,
            p,
            p_original,
            residual,
            solver_iterations: solution.iterations,
            thresholds: self.thresholds.clone(),
            gamma: self.cfg.gamma,
            played: None,
        })
    }

    /// Records the play in `trace` and applies the exponential-weights update.
    pub fn update(
        &mut self,
        trace: &mut RoundTrace,
        advices: &[Distribution],
        a_original: usize,
        observed_loss: f64,
    ) -> Result<()> {
        if trace.t != self.state.round + 1 {
            return Err(MygaError::RoundMismatch {
                expected: self.state.round + 1,
                found: trace.t,
            });
        }
        if advices.len() != self.state.real.len() {
            return Err(MygaError::DimensionMismatch {
                expected: self.state.real.len(),
                found: advices.len(),
            });
        }
        if !(0.0..=1.0).contains(&observed_loss) {
            return Err(MygaError::InvalidParameter(format!(
                "observed loss {observed_loss} outside [0, 1]"
            )));
        }
        if a_original >= self.cfg.arms {
            return Err(MygaError::DimensionMismatch {
                expected: self.cfg.arms,
                found: a_original,
            });
        }
        let a_sorted = trace.perm.to_sorted(a_original);
        let est = loss_estimator(&trace.p, a_sorted, observed_loss)?;
        let v = est[a_sorted];

        let real_advice: Vec<f64> = advices.iter().map(|adv| adv[a_original]).collect();
        let aux_advice = threshold_advice_at(&trace.q, trace.k, a_sorted, &self.thresholds);
        if v != 0.0 {
            for (cum, x) in self.state.real.iter_mut().zip(&real_advice) {
                *cum += x * v;
            }
            for (cum, x) in self.state.thresh.iter_mut().zip(&aux_advice) {
                *cum += x * v;
            }
        }
        self.state.round += 1;

        trace.played = Some(Play {
            a_sorted,
            a_original,
            observed_loss,
            est,
            real_advice_at_played: real_advice,
            aux_advice_at_played: aux_advice,
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let (eta, gamma) = schedule_parameters(2, 2, 100, 10.0);
        assert_eq!(eta, 0.5);
        assert_eq!(gamma, 0.5);

        let (eta, gamma) = schedule_parameters(4, 16, 10_000, 10_000.0);
        assert!((eta - 0.017308183826022852).abs() < 1e-15);
        assert!((gamma - 0.03465).abs() < 1e-15);

        let (eta, _) = schedule_parameters(2, 4, 10_000, 0.0);
        assert_eq!(eta, 0.5);
    }

    #[test]
    fn grid_examples() {
        assert_eq!(build_threshold_grid(0.4, 20), vec![0.45, 0.5]);
        assert!(build_threshold_grid(0.5, 20).is_empty());
        assert_eq!(build_threshold_grid(0.25, 4), vec![0.5]);
        let g = build_threshold_grid(0.1, 2000);
        assert_eq!(g.len(), 800);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g[0] > 0.1 && *g.last().unwrap() == 0.5);
    }

    #[test]
    fn config_rejects_off_lattice_gamma() {
        assert!(MygaConfig::new(2, 1, 10, 0.1, 0.33, 20).is_err());
        assert!(MygaConfig::new(2, 1, 10, 0.1, 0.35, 20).is_ok());
        assert!(MygaConfig::new(1, 1, 10, 0.1, 0.35, 20).is_err());
        assert!(MygaConfig::new(2, 1, 10, 0.0, 0.35, 20).is_err());
        assert!(MygaConfig::new(2, 1, 10, 0.1, 0.6, 20).is_err());
    }

    #[test]
    fn estimator_examples() {
        let est = loss_estimator(&d(&[0.5, 0.5]), 0, 0.6).unwrap();
        assert!((est[0] - 1.2).abs() < 1e-15 && est[1] == 0.0);
        assert_eq!(loss_estimator(&d(&[0.5, 0.5]), 1, 0.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(loss_estimator(&d(&[1.0, 0.0]), 0, 1.0).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            loss_estimator(&d(&[1.0, 0.0]), 1, 1.0),
            Err(MygaError::ZeroProbabilityArm { arm: 1 })
        ));
    }

    #[test]
    fn sampling_skips_zero_mass() {
        let p = d(&[0.0, 0.25, 0.0, 0.75]);
        assert_eq!(sample_arm(&p, 0.0), 1);
        assert_eq!(sample_arm(&p, 0.2499), 1);
        assert_eq!(sample_arm(&p, 0.25), 3);
        assert_eq!(sample_arm(&p, 0.999_999_999_999), 3);
        let gap = Distribution::new(vec![0.5, 0.5 - 1e-10, 0.0]).unwrap();
        assert_eq!(sample_arm(&gap, 1.0 - 1e-11), 1);
    }

    #[test]
    fn point_mass_advice_plays_it() {
        let cfg = MygaConfig::new(2, 1, 10, 0.1, 0.05, 20).unwrap();
        let policy = MygaPolicy::new(cfg);
        let trace = policy.advise(&[d(&[1.0, 0.0])]).unwrap();
        assert_eq!(trace.k, 1);
        assert_eq!(trace.q.as_slice(), &[1.0, 0.0]);
        assert_eq!(trace.p_original.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn majority_only_round_plays_q() {
        let cfg = MygaConfig::new(3, 1, 10, 0.1, 0.05, 20).unwrap();
        let policy = MygaPolicy::new(cfg);
        let trace = policy.advise(&[d(&[0.3, 0.4, 0.3])]).unwrap();
        // 0.4 + 0.3 reaches one half only at the second arm, so k = 2 < K here
        assert_eq!(trace.k, 2);
        let trace = policy.advise(&[Distribution::uniform(3)]).unwrap();
        assert_eq!(trace.k, 2);
        let cfg = MygaConfig::new(2, 1, 10, 0.1, 0.05, 20).unwrap();
        let policy = MygaPolicy::new(cfg);
        let trace = policy.advise(&[d(&[0.5, 0.5])]).unwrap();
        assert_eq!(trace.k, 1);
        assert_eq!(
            trace.p,
            truncate(&trace.q, TruncationParams::new(1, 0.05).unwrap()).unwrap()
        );
    }

    #[test]
    fn two_experts_round_one_matches_oracle() {
        use crate::fixed_point::two_arm_oracle;
        let cfg = MygaConfig::new(2, 2, 10, 0.1, 0.05, 20).unwrap();
        let policy = MygaPolicy::new(cfg);
        let advices = [d(&[1.0, 0.0]), d(&[0.4, 0.6])];
        let trace = policy.advise(&advices).unwrap();
        assert!((trace.zeta_sorted[0] - 0.7).abs() < 1e-15);
        assert_eq!(trace.perm, ArmPermutation::identity(2));
        let n = policy.thresholds().len();
        let total = 2.0 + n as f64;
        let w = MixtureWeights::new(2.0 / total, vec![1.0 / total; n]).unwrap();
        let x = two_arm_oracle(trace.zeta_sorted[1], &w, policy.thresholds()).unwrap();
        assert!((trace.q[1] - x).abs() < 1e-12);
    }

    #[test]
    fn update_examples() {
        // zero loss leaves the state unchanged
        let cfg = MygaConfig::new(2, 1, 10, 0.1, 0.05, 20).unwrap();
        let mut policy = MygaPolicy::new(cfg);
        let adv = [d(&[1.0, 0.0])];
        let mut trace = policy.advise(&adv).unwrap();
        let before = policy.state().clone();
        policy.update(&mut trace, &adv, 0, 0.0).unwrap();
        assert_eq!(policy.state().real, before.real);
        assert_eq!(policy.state().thresh, before.thresh);
        assert_eq!(policy.state().round, 1);

        // stale trace
        assert!(matches!(
            policy.update(&mut trace, &adv, 0, 0.5),
            Err(MygaError::RoundMismatch { .. })
        ));
    }

    #[test]
    fn point_mass_expert_gains_estimate() {
        let cfg = MygaConfig::new(4, 4, 10, 0.1, 0.1, 20).unwrap();
        let mut policy = MygaPolicy::new(cfg);
        let adv: Vec<_> = (0..4).map(|a| Distribution::point(4, a)).collect();
        let mut trace = policy.advise(&adv).unwrap();
        assert_eq!(trace.k, 2);
        // minority mass (1/3)·0.25 sits below gamma, so play is split over two arms
        assert!((trace.p_original[0] - 0.5).abs() < 1e-15);
        policy.update(&mut trace, &adv, 0, 1.0).unwrap();
        assert!((policy.state().real[0] - 2.0).abs() < 1e-15);
        assert_eq!(&policy.state().real[1..], &[0.0, 0.0, 0.0]);
        let play = trace.played.as_ref().unwrap();
        assert_eq!(play.est.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn threshold_advice_two_arm_instance() {
        let q = d(&[0.95, 0.05]);
        assert_eq!(threshold_advice_at(&q, 1, 1, &[0.15]), vec![0.0]);
        let at_major = threshold_advice_at(&q, 1, 0, &[0.15]);
        assert!((at_major[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_advice_matches_truncation() {
        let q = d(&[0.2, 0.1, 0.2, 0.1, 0.1, 0.1, 0.05, 0.05, 0.04, 0.03, 0.03]);
        let grid = build_threshold_grid(0.01, 200);
        for a in 0..q.len() {
            let fast = threshold_advice_at(&q, 3, a, &grid);
            for (j, &s) in grid.iter().enumerate() {
                let full = truncate(&q, TruncationParams::new(3, s).unwrap()).unwrap();
                assert!((fast[j] - full[a]).abs() < 1e-12, "arm {a} s {s}");
            }
        }
    }

    #[test]
    fn shift_leaves_normalized_weights_unchanged() {
        let state = WeightState {
            real: vec![0.3, 1.7, 2.2],
            thresh: vec![0.9, 0.4],
            round: 0,
        };
        let eta = 0.7;
        let raw: Vec<f64> = state
            .real
            .iter()
            .chain(&state.thresh)
            .map(|l| (-eta * l).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        for (a, b) in state.normalized_weights(eta).iter().zip(&raw) {
            assert!((a - b / total).abs() < 1e-15);
        }
    }
}
