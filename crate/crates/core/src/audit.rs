//! Runtime checks of the per-round inequalities that hold whenever `q` solves
//! the fixed-point mixture, plus regret bookkeeping.
//!
//! Losses are accounted in expectation over the played distribution
//! (`⟨p_t, ℓ_t⟩`), so every inequality here is deterministic per round.

use std::fmt;

use crate::error::{MygaError, Result};
use crate::myga::RoundTrace;
use crate::simplex::{ArmPermutation, Distribution};

/// Which per-round property failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Check {
    /// A threshold expert's majority block is `ζ` rescaled to the mass the
    /// expert leaves on the majority arms.
    ThresholdProportional,
    /// Minority arms: `q ≤ ζ`. Majority arms: `q ≥ ζ ≥ 1/(2K)`.
    MixtureVsBase,
    /// `(1 − 2Kγ)·p ≤ q` everywhere, and `p ≥ q` on the support of `p`.
    PlayVsMixture,
    /// Majority-arm truncated loss is at most `2K` times the expected loss.
    MajorityLoss,
}

impl Check {
    pub fn as_str(&self) -> &'static str {
        match self {
            Check::ThresholdProportional => "threshold_proportional",
            Check::MixtureVsBase => "mixture_vs_base",
            Check::PlayVsMixture => "play_vs_mixture",
            Check::MajorityLoss => "majority_loss",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub check: Check,
    /// Sorted-coordinate arm, when the check is per arm.
    pub arm: Option<usize>,
    pub threshold: Option<f64>,
    /// How far the inequality is from holding (negative).
    pub margin: f64,
}

/// All per-round checks on a trace. `zeta_sorted` is passed separately so a
/// test can audit a trace against a different base distribution.
pub fn check_round(
    trace: &RoundTrace,
    zeta_sorted: &Distribution,
    gamma: f64,
    arms: usize,
    tol: f64,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let k = trace.k;
    let q = trace.q.as_slice();
    let p = trace.p.as_slice();
    let zeta = zeta_sorted.as_slice();
    if q.len() != arms || p.len() != arms || zeta.len() != arms || k == 0 || k > arms {
        out.push(Violation {
            check: Check::MixtureVsBase,
            arm: None,
            threshold: None,
            margin: f64::NEG_INFINITY,
        });
        return out;
    }

    // threshold experts: ξ^s(i)·Σ_{j<k} ζ(j) = ζ(i)·(1 − Σ_{j≥k} ξ^s(j))
    let zeta_maj: f64 = zeta[..k].iter().sum();
    let q_maj: f64 = q[..k].iter().sum();
    let mut minority: Vec<f64> = q[k..].to_vec();
    minority.sort_by(f64::total_cmp);
    let minority_total: f64 = minority.iter().sum();
    let mut moved = 0.0;
    let mut idx = 0;
    for &s in trace.thresholds.iter() {
        while idx < minority.len() && minority[idx] <= s {
            moved += minority[idx];
            idx += 1;
        }
        let kept_minority = minority_total - moved;
        for i in 0..k {
            let advice = q[i] * (1.0 + moved / q_maj);
            let gap = (advice * zeta_maj - zeta[i] * (1.0 - kept_minority)).abs();
            if gap > tol {
                out.push(Violation {
                    check: Check::ThresholdProportional,
                    arm: Some(i),
                    threshold: Some(s),
                    margin: -gap,
                });
            }
        }
    }

    let floor = 1.0 / (2.0 * arms as f64);
    for i in 0..arms {
        let margin = if i < k {
            (q[i] - zeta[i]).min(zeta[i] - floor)
        } else {
            zeta[i] - q[i]
        };
        if margin < -tol {
            out.push(Violation {
                check: Check::MixtureVsBase,
                arm: Some(i),
                threshold: None,
                margin,
            });
        }
    }

    let shrink = 1.0 - 2.0 * arms as f64 * gamma;
    for i in 0..arms {
        let mut margin = q[i] - shrink * p[i];
        if p[i] != 0.0 {
            margin = margin.min(p[i] - q[i]);
        }
        if margin < -tol {
            out.push(Violation {
                check: Check::PlayVsMixture,
                arm: Some(i),
                threshold: None,
                margin,
            });
        }
    }
    out
}

/// Per-round loss contributions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoundLoss {
    /// `⟨p, ℓ⟩`.
    pub expected: f64,
    /// `Σ_{i<k} ℓ̄(i)`, sorted coordinates.
    pub majority: f64,
    /// `Σ_{i≥k} ℓ̄(i)`.
    pub minority: f64,
}

/// Per-round majority-loss inequality `Σ_{i<k} ℓ̄(i) ≤ 2K·⟨p, ℓ⟩`.
pub fn check_majority_round(round: &RoundLoss, arms: usize, tol: f64) -> Option<Violation> {
    let margin = 2.0 * arms as f64 * round.expected - round.majority;
    (margin < -tol).then_some(Violation {
        check: Check::MajorityLoss,
        arm: None,
        threshold: None,
        margin,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegretReport {
    pub rounds: u64,
    /// Player's cumulative expected loss `L_T`.
    pub player_loss: f64,
    pub per_expert_loss: Vec<f64>,
    /// `M`: cumulative truncated loss on majority arms.
    pub majority_loss: f64,
    /// `m`: cumulative truncated loss on minority arms.
    pub minority_loss: f64,
}

impl RegretReport {
    pub fn new(num_experts: usize) -> Self {
        RegretReport {
            per_expert_loss: vec![0.0; num_experts],
            ..Default::default()
        }
    }

    /// Loss of the best real expert, `L*`.
    pub fn best_expert_loss(&self) -> f64 {
        self.per_expert_loss.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `R_T = L_T − L*`.
    pub fn regret(&self) -> f64 {
        self.player_loss - self.best_expert_loss()
    }

    /// Adds one round. `p_sorted` and `k` are in the sorted coordinates given
    /// by `perm`; `losses` and `advices` are in original arm order.
    pub fn accumulate(
        &mut self,
        k: usize,
        perm: &ArmPermutation,
        p_sorted: &Distribution,
        advices: &[Distribution],
        losses: &[f64],
    ) -> Result<RoundLoss> {
        let arms = p_sorted.len();
        if losses.len() != arms || perm.forward().len() != arms {
            return Err(MygaError::DimensionMismatch {
                expected: arms,
                found: losses.len(),
            });
        }
        if advices.len() != self.per_expert_loss.len() {
            return Err(MygaError::DimensionMismatch {
                expected: self.per_expert_loss.len(),
                found: advices.len(),
            });
        }
        let mut round = RoundLoss::default();
        for pos in 0..arms {
            let loss = losses[perm.to_original(pos)];
            round.expected += p_sorted[pos] * loss;
            if p_sorted[pos] > 0.0 {
                if pos < k {
                    round.majority += loss;
                } else {
                    round.minority += loss;
                }
            }
        }
        for (acc, adv) in self.per_expert_loss.iter_mut().zip(advices) {
            if adv.len() != arms {
                return Err(MygaError::DimensionMismatch {
                    expected: arms,
                    found: adv.len(),
                });
            }
            *acc += adv.dot(losses);
        }
        self.rounds += 1;
        self.player_loss += round.expected;
        self.majority_loss += round.majority;
        self.minority_loss += round.minority;
        Ok(round)
    }

    /// Convenience wrapper taking the policy's trace.
    pub fn accumulate_trace(
        &mut self,
        trace: &RoundTrace,
        advices: &[Distribution],
        losses: &[f64],
    ) -> Result<RoundLoss> {
        self.accumulate(trace.k, &trace.perm, &trace.p, advices, losses)
    }
}

/// Cumulative `M ≤ 2K·L_T`; returns `(holds, 2K·L_T − M)`.
pub fn check_majority_bound(report: &RegretReport, arms: usize, tol: f64) -> (bool, f64) {
    let margin = 2.0 * arms as f64 * report.player_loss - report.majority_loss;
    (margin >= -tol, margin)
}

/// `sqrt(K·ln(|E|T)·L*) + K·ln(|E|T)`.
pub fn bound_value(arms: usize, num_experts: usize, horizon: u64, l_star_bound: f64) -> f64 {
    let log_term = (num_experts as f64 * horizon as f64).ln();
    let k = arms as f64;
    (k * log_term * l_star_bound.max(0.0)).sqrt() + k * log_term
}

/// `R_T ≤ c·bound_value`.
pub fn evaluate_theorem_bound(
    report: &RegretReport,
    arms: usize,
    num_experts: usize,
    horizon: u64,
    l_star_bound: f64,
    c: f64,
) -> bool {
    report.regret() <= c * bound_value(arms, num_experts, horizon, l_star_bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::myga::{MygaConfig, MygaPolicy};

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    fn sample_trace() -> RoundTrace {
        let cfg = MygaConfig::new(3, 3, 100, 0.1, 0.05, 200).unwrap();
        let policy = MygaPolicy::new(cfg);
        let adv = [d(&[0.7, 0.2, 0.1]), d(&[0.1, 0.8, 0.1]), d(&[0.5, 0.1, 0.4])];
        policy.advise(&adv).unwrap()
    }

    #[test]
    fn clean_trace_passes() {
        let trace = sample_trace();
        assert!(check_round(&trace, &trace.zeta_sorted, trace.gamma, 3, 1e-9).is_empty());
    }

    #[test]
    fn corrupted_majority_mass_flags_one_base_violation() {
        let mut trace = sample_trace();
        let mut q = trace.q.as_slice().to_vec();
        let moved = q[0] - 0.1;
        q[0] = 0.1; // below 1/(2K)
        q[2] += moved;
        trace.q = Distribution::new(q).unwrap();
        let v = check_round(&trace, &trace.zeta_sorted, trace.gamma, 3, 1e-9);
        let base: Vec<_> = v
            .iter()
            .filter(|x| x.check == Check::MixtureVsBase && x.arm == Some(0))
            .collect();
        assert_eq!(base.len(), 1);
    }

    #[test]
    fn corrupted_play_flags_play_violation() {
        let mut trace = sample_trace();
        // move mass off a supported arm of p so p(i) < q(i) there
        let q = trace.q.as_slice().to_vec();
        let mut p = q.clone();
        p[0] -= 0.05;
        p[1] += 0.05;
        trace.p = Distribution::new(p).unwrap();
        let v = check_round(&trace, &trace.zeta_sorted, trace.gamma, 3, 1e-9);
        assert_eq!(v.iter().filter(|x| x.check == Check::PlayVsMixture).count(), 1);
    }

    #[test]
    fn accumulate_examples() {
        let mut r = RegretReport::new(1);
        let id = ArmPermutation::identity(2);
        let adv = [d(&[0.0, 1.0])];
        r.accumulate(1, &id, &d(&[1.0, 0.0]), &adv, &[0.0, 0.0]).unwrap();
        assert_eq!(
            (r.player_loss, r.majority_loss, r.minority_loss, r.rounds),
            (0.0, 0.0, 0.0, 1)
        );

        let round = r.accumulate(1, &id, &d(&[1.0, 0.0]), &adv, &[0.3, 0.9]).unwrap();
        assert_eq!(
            round,
            RoundLoss {
                expected: 0.3,
                majority: 0.3,
                minority: 0.0
            }
        );
        assert_eq!(r.per_expert_loss, vec![0.9]);
        assert!((r.regret() - (0.3 - 0.9)).abs() < 1e-15);

        let mut r = RegretReport::new(1);
        let full = Distribution::uniform(4);
        let round = r
            .accumulate(
                2,
                &ArmPermutation::identity(4),
                &full,
                std::slice::from_ref(&full),
                &[1.0; 4],
            )
            .unwrap();
        assert_eq!(round.majority + round.minority, 4.0);
        assert!(r
            .accumulate(
                2,
                &ArmPermutation::identity(4),
                &full,
                std::slice::from_ref(&full),
                &[1.0; 3]
            )
            .is_err());
    }

    #[test]
    fn majority_bound_examples() {
        let r = RegretReport::new(2);
        assert_eq!(check_majority_bound(&r, 2, 1e-9), (true, 0.0));
        let bad = RoundLoss {
            expected: 0.01,
            majority: 1.0,
            minority: 0.0,
        };
        let v = check_majority_round(&bad, 2, 1e-9).unwrap();
        assert!(v.margin < 0.0);
        let good = RoundLoss {
            expected: 0.5,
            majority: 1.0,
            minority: 0.0,
        };
        assert!(check_majority_round(&good, 2, 1e-9).is_none());
    }

    #[test]
    fn theorem_bound_examples() {
        let mut r = RegretReport::new(1);
        r.player_loss = 3.0;
        r.per_expert_loss = vec![0.0];
        let b = bound_value(2, 4, 100, 0.0);
        assert!((b - 2.0 * 400f64.ln()).abs() < 1e-12);
        assert!(evaluate_theorem_bound(&r, 2, 4, 100, 0.0, 1.0));
        r.player_loss = 100.0;
        assert!(!evaluate_theorem_bound(&r, 2, 4, 100, 0.0, 1.0));
        r.per_expert_loss = vec![200.0];
        assert!(evaluate_theorem_bound(&r, 2, 4, 100, 0.0, 0.0));
    }
}
