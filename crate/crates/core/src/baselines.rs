//! Exp4 over the real experts only, plain or with naive thresholding: arms at
//! or below `gamma` in the mixture are dropped and the rest renormalized.

use crate::error::{MygaError, Result};
use crate::simplex::{weighted_average, Distribution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exp4Variant {
    Plain,
    Thresholded { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp4 {
    pub cum_est_loss: Vec<f64>,
    pub eta: f64,
    pub variant: Exp4Variant,
}

impl Exp4 {
    pub fn new(num_experts: usize, eta: f64, variant: Exp4Variant) -> Result<Self> {
        if num_experts == 0 {
            return Err(MygaError::InvalidParameter("need at least one expert".into()));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(MygaError::InvalidParameter(format!(
                "learning rate {eta} must be positive"
            )));
        }
        if let Exp4Variant::Thresholded { gamma } = variant {
            if !(0.0..=1.0).contains(&gamma) {
                return Err(MygaError::InvalidParameter(format!(
                    "gamma {gamma} outside [0, 1]"
                )));
            }
        }
        Ok(Exp4 {
            cum_est_loss: vec![0.0; num_experts],
            eta,
            variant,
        })
    }

    /// Exponential weights shifted so the best expert has weight 1.
    pub fn weights(&self) -> Vec<f64> {
        let best = self.cum_est_loss.iter().copied().fold(f64::INFINITY, f64::min);
        self.cum_est_loss
            .iter()
            .map(|l| (-self.eta * (l - best)).exp())
            .collect()
    }

    /// Returns `(mixture, played distribution)`, both in original arm order.
    pub fn advise(&self, advices: &[Distribution]) -> Result<(Distribution, Distribution)> {
        let mix = weighted_average(advices, &self.weights())?;
        let p = match self.variant {
            Exp4Variant::Plain => mix.clone(),
            Exp4Variant::Thresholded { gamma } => threshold_renormalize(&mix, gamma),
        };
        Ok((mix, p))
    }

    pub fn update(
        &mut self,
        advices: &[Distribution],
        p: &Distribution,
        a: usize,
        observed_loss: f64,
    ) -> Result<()> {
        if advices.len() != self.cum_est_loss.len() {
            return Err(MygaError::DimensionMismatch {
                expected: self.cum_est_loss.len(),
                found: advices.len(),
            });
        }
        if a >= p.len() {
            return Err(MygaError::DimensionMismatch {
                expected: p.len(),
                found: a,
            });
        }
        if !(p[a] > 0.0) {
            return Err(MygaError::ZeroProbabilityArm { arm: a });
        }
        let v = observed_loss / p[a];
        if v != 0.0 {
            for (cum, adv) in self.cum_est_loss.iter_mut().zip(advices) {
                *cum += adv[a] * v;
            }
        }
        Ok(())
    }
}

/// Zeroes every arm with mass at most `gamma` and renormalizes the survivors.
/// Falls back to `mix` when nothing survives.
pub fn threshold_renormalize(mix: &Distribution, gamma: f64) -> Distribution {
    if mix.as_slice().iter().all(|&x| x > gamma) {
        return mix.clone();
    }
    let kept: f64 = mix.as_slice().iter().filter(|&&x| x > gamma).sum();
    if !(kept > 0.0) {
        return mix.clone();
    }
    let out = mix
        .as_slice()
        .iter()
        .map(|&x| if x > gamma { x / kept } else { 0.0 })
        .collect();
    Distribution::new(out).expect("renormalized survivors form a distribution")
}
