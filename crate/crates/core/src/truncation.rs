//! The truncation operator `T_s^k`.
//!
//! With arms `0..k` taken as the majority, every minority arm whose mass is at
//! most `s` is zeroed and the removed mass is handed to the majority arms in
//! proportion to their current mass. Minority arms above `s` are untouched.
//!
//! Thresholds are compared exactly (`q(i) <= s`), since the threshold grid is a
//! lattice and rounding arguments depend on exact membership. A threshold of
//! `s = 0` is accepted and acts as the identity.

use crate::error::{MygaError, Result};
use crate::simplex::Distribution;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationParams {
    /// Number of majority arms, `1..=K`.
    pub k: usize,
    /// Threshold in `[0, 1/2]`.
    pub s: f64,
}

impl TruncationParams {
    pub fn new(k: usize, s: f64) -> Result<Self> {
        if k == 0 {
            return Err(MygaError::InvalidParameter(
                "majority cutoff k must be >= 1".into(),
            ));
        }
        if !(0.0..=0.5).contains(&s) {
            return Err(MygaError::InvalidParameter(format!(
                "threshold {s} outside [0, 1/2]"
            )));
        }
        Ok(TruncationParams { k, s })
    }

    fn check(&self, num_arms: usize) -> Result<()> {
        if self.k > num_arms {
            return Err(MygaError::InvalidParameter(format!(
                "majority cutoff {} exceeds {} arms",
                self.k, num_arms
            )));
        }
        Ok(())
    }
}

/// `D = Σ_{i >= k, q(i) <= s} q(i)`, the mass removed from the minority arms.
pub fn truncated_mass(q: &Distribution, params: TruncationParams) -> f64 {
    let k = params.k.min(q.len());
    q.as_slice()[k..].iter().filter(|&&x| x <= params.s).sum()
}

pub fn truncate(q: &Distribution, params: TruncationParams) -> Result<Distribution> {
    params.check(q.len())?;
    let k = params.k;
    let q_maj: f64 = q.as_slice()[..k].iter().sum();
    if !(q_maj > 0.0) {
        return Err(MygaError::ZeroMajorityMass);
    }
    let moved = truncated_mass(q, params);
    let scale = 1.0 + moved / q_maj;

    let out: Vec<f64> = q
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if i < k {
                x * scale
            } else if x <= params.s {
                0.0
            } else {
                x
            }
        })
        .collect();
    // No silent renormalization: drift here is a bug.
    Distribution::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const Q: [f64; 11] = [0.2, 0.1, 0.2, 0.1, 0.1, 0.1, 0.05, 0.05, 0.04, 0.03, 0.03];

    fn q() -> Distribution {
        Distribution::new(Q.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn worked_example_rows() {
        let p = |s| TruncationParams::new(3, s).unwrap();
        assert_eq!(truncate(&q(), p(0.02)).unwrap().as_slice(), &Q);
        let t = truncate(&q(), p(0.03)).unwrap();
        assert!(close(
            t.as_slice(),
            &[0.224, 0.112, 0.224, 0.1, 0.1, 0.1, 0.05, 0.05, 0.04, 0.0, 0.0],
            1e-12
        ));
        let t = truncate(&q(), p(0.1)).unwrap();
        assert!(close(
            t.as_slice(),
            &[0.4, 0.2, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            1e-12
        ));
    }

    #[test]
    fn two_arm_example() {
        let q = Distribution::new(vec![0.6, 0.4]).unwrap();
        let t = truncate(&q, TruncationParams::new(1, 0.5).unwrap()).unwrap();
        assert!(close(t.as_slice(), &[1.0, 0.0], 1e-15));
    }

    #[test]
    fn truncated_mass_examples() {
        let p = TruncationParams::new(3, 0.03).unwrap();
        assert!((truncated_mass(&q(), p) - 0.06).abs() < 1e-15);
        assert_eq!(truncated_mass(&q(), TruncationParams::new(3, 0.01).unwrap()), 0.0);
        assert_eq!(truncated_mass(&q(), TruncationParams::new(11, 0.5).unwrap()), 0.0);
    }

    #[test]
    fn zero_threshold_is_identity() {
        let q = Distribution::new(vec![0.5, 0.3, 0.2, 0.0]).unwrap();
        let t = truncate(&q, TruncationParams::new(1, 0.0).unwrap()).unwrap();
        assert_eq!(t, q);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(TruncationParams::new(0, 0.1).is_err());
        assert!(TruncationParams::new(1, 0.6).is_err());
        assert!(TruncationParams::new(1, -0.1).is_err());
        let p = TruncationParams::new(3, 0.1).unwrap();
        assert!(truncate(&Distribution::uniform(2), p).is_err());
        let no_majority = Distribution::new(vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            truncate(&no_majority, TruncationParams::new(1, 0.5).unwrap()),
            Err(MygaError::ZeroMajorityMass)
        ));
    }

    fn arb_case() -> impl Strategy<Value = (Distribution, usize, f64, f64)> {
        prop::collection::vec(0.0f64..1.0, 2..12)
            .prop_filter_map("zero mass", |v| {
                let s: f64 = v.iter().sum();
                (s > 1e-3).then(|| Distribution::new(v.iter().map(|x| x / s).collect()).unwrap())
            })
            .prop_flat_map(|q| {
                let n = q.len();
                (Just(q), 1..=n, 0.0f64..=0.5, 0.0f64..=0.5)
            })
            .prop_filter("majority mass", |(q, k, _, _)| {
                q.as_slice()[..*k].iter().sum::<f64>() > 1e-6
            })
    }

    proptest! {
        #[test]
        fn truncation_properties((q, k, s1, s2) in arb_case()) {
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let t_lo = truncate(&q, TruncationParams { k, s: lo }).unwrap();
            let t_hi = truncate(&q, TruncationParams { k, s: hi }).unwrap();
            let out = t_lo.as_slice();

            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-9);

            // implicit formula on the majority block
            let q_maj: f64 = q.as_slice()[..k].iter().sum();
            let out_maj: f64 = out[..k].iter().sum();
            for i in 0..k {
                prop_assert!((out[i] * q_maj - q[i] * out_maj).abs() <= 1e-9);
                prop_assert!(out[i] >= q[i]);
            }
            for i in k..q.len() {
                prop_assert!(out[i] == 0.0 || out[i] == q[i]);
                if out[i] == 0.0 && q[i] > 0.0 {
                    prop_assert_eq!(t_hi[i], 0.0);
                }
            }
            if q.as_slice()[k..].iter().all(|&x| x > lo) {
                prop_assert_eq!(out, q.as_slice());
            }
        }

        #[test]
        fn sorted_minority_stays_sorted((q, k, s, _) in arb_case()) {
            let mut v = q.as_slice().to_vec();
            v[k..].sort_by(|a, b| b.total_cmp(a));
            let q = Distribution::new(v).unwrap();
            let t = truncate(&q, TruncationParams { k, s }).unwrap();
            prop_assert!(t.as_slice()[k..].windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
