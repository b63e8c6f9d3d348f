//! Seeded advice/loss generators and the plain-text replay format.
//!
//! Every environment is oblivious: round `t` is a pure function of
//! `(seed, t)`, drawn from its own ChaCha stream.
//!
//! Replay files are line oriented:
//!
//! ```text
//! K num_experts T
//! <K losses>              # round 1
//! <K probabilities>       # expert 1
//! ...                     # num_experts advice lines
//! <K losses>              # round 2
//! ...
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MygaError, Result};
use crate::simplex::{validate, Distribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    /// Expert 0 always points at an arm with zero loss.
    ZeroLossExpert,
    /// Bernoulli losses: the best arm has mean `mu`, every other arm
    /// `min(1, mu + delta)`. Experts are point masses on fixed loss ranks.
    StochasticGap,
    /// Minority mass placed on lattice points `j/(2T)` (with tiny jitter) and
    /// losses alternating between the majority and the minority arm.
    AdversarialMinority,
    Replay,
}

impl EnvKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvKind::ZeroLossExpert => "zero_loss_expert",
            EnvKind::StochasticGap => "stochastic_gap",
            EnvKind::AdversarialMinority => "adversarial_minority",
            EnvKind::Replay => "replay",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = MygaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_loss_expert" => Ok(EnvKind::ZeroLossExpert),
            "stochastic_gap" => Ok(EnvKind::StochasticGap),
            "adversarial_minority" => Ok(EnvKind::AdversarialMinority),
            "replay" => Ok(EnvKind::Replay),
            other => Err(MygaError::InvalidParameter(format!(
                "unknown environment {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundData {
    pub advices: Vec<Distribution>,
    /// Loss of every arm, in `[0, 1]`.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub arms: usize,
    pub num_experts: usize,
    pub rounds: Vec<RoundData>,
}

impl Replay {
    pub fn horizon(&self) -> u64 {
        self.rounds.len() as u64
    }
}

#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub arms: usize,
    pub num_experts: usize,
    pub horizon: u64,
    /// Best arm's mean loss (`stochastic_gap`).
    pub mu: f64,
    /// Gap to the other arms (`stochastic_gap`).
    pub delta: f64,
    pub seed: u64,
    replay: Option<Arc<Replay>>,
}

impl EnvSpec {
    pub fn new(
        kind: EnvKind,
        arms: usize,
        num_experts: usize,
        horizon: u64,
        mu: f64,
        delta: f64,
        seed: u64,
    ) -> Result<Self> {
        if kind == EnvKind::Replay {
            return Err(MygaError::InvalidParameter(
                "replay environments are built with EnvSpec::from_replay".into(),
            ));
        }
        if arms < 2 || num_experts == 0 {
            return Err(MygaError::InvalidParameter(
                "need at least 2 arms and 1 expert".into(),
            ));
        }
        if !(0.0..=1.0).contains(&mu) {
            return Err(MygaError::InvalidParameter(format!("mu {mu} outside [0, 1]")));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(MygaError::InvalidParameter(format!(
                "delta {delta} outside (0, 1]"
            )));
        }
        Ok(EnvSpec {
            kind,
            arms,
            num_experts,
            horizon,
            mu,
            delta,
            seed,
            replay: None,
        })
    }

    pub fn from_replay(replay: Replay, seed: u64) -> Self {
        EnvSpec {
            kind: EnvKind::Replay,
            arms: replay.arms,
            num_experts: replay.num_experts,
            horizon: replay.horizon(),
            mu: 0.0,
            delta: 1.0,
            seed,
            replay: Some(Arc::new(replay)),
        }
    }

    /// Same environment under a different seed. Replays ignore the seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        EnvSpec { seed, ..self.clone() }
    }

    /// Round `t` (1-based).
    pub fn generate(&self, t: u64) -> Result<RoundData> {
        if t == 0 || t > self.horizon {
            return Err(MygaError::RoundOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        if let Some(replay) = &self.replay {
            return Ok(replay.rounds[(t - 1) as usize].clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(t);
        Ok(match self.kind {
            EnvKind::ZeroLossExpert => self.zero_loss_expert(&mut rng),
            EnvKind::StochasticGap => self.stochastic_gap(&mut rng),
            EnvKind::AdversarialMinority => self.adversarial_minority(&mut rng, t),
            EnvKind::Replay => unreachable!("replay handled above"),
        })
    }

    /// All `T` rounds, for writing a replay file.
    pub fn to_replay(&self) -> Result<Replay> {
        let rounds = (1..=self.horizon)
            .map(|t| self.generate(t))
            .collect::<Result<_>>()?;
        Ok(Replay {
            arms: self.arms,
            num_experts: self.num_experts,
            rounds,
        })
    }

    fn zero_loss_expert(&self, rng: &mut ChaCha8Rng) -> RoundData {
        let k = self.arms;
        let safe = rng.random_range(0..k);
        let losses = (0..k)
            .map(|i| if i == safe { 0.0 } else { rng.random::<f64>() })
            .collect();
        let mut advices = Vec::with_capacity(self.num_experts);
        advices.push(Distribution::point(k, safe));
        for _ in 1..self.num_experts {
            if rng.random_bool(0.5) {
                advices.push(Distribution::point(k, rng.random_range(0..k)));
            } else {
                advices.push(random_distribution(rng, k));
            }
        }
        RoundData { advices, losses }
    }

    fn stochastic_gap(&self, rng: &mut ChaCha8Rng) -> RoundData {
        let k = self.arms;
        // ranked[r] is the arm with the r-th smallest mean this round
        let mut ranked: Vec<usize> = (0..k).collect();
        ranked.shuffle(rng);
        let worse = (self.mu + self.delta).min(1.0);
        let mut losses = vec![0.0; k];
        for (rank, &arm) in ranked.iter().enumerate() {
            let mean = if rank == 0 { self.mu } else { worse };
            losses[arm] = if rng.random::<f64>() < mean { 1.0 } else { 0.0 };
        }
        let advices = (0..self.num_experts)
            .map(|e| Distribution::point(k, ranked[e % k]))
            .collect();
        RoundData { advices, losses }
    }

    fn adversarial_minority(&self, rng: &mut ChaCha8Rng, t: u64) -> RoundData {
        let k = self.arms;
        let grid = 2 * self.horizon;
        let major = rng.random_range(0..k);
        let minor = (major + rng.random_range(1..k)) % k;
        let base = rng.random_range(1..=(grid / 4).max(1));

        let mut losses: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let (hit, spared) = if t.is_multiple_of(2) {
            (major, minor)
        } else {
            (minor, major)
        };
        losses[hit] = 1.0;
        losses[spared] = 0.0;

        let mut advices = Vec::with_capacity(self.num_experts);
        for e in 0..self.num_experts {
            let j = (base + (e % 3) as u64).saturating_sub(1).max(1);
            let jitter = [-1e-12, 0.0, 1e-12][rng.random_range(0..3)];
            let rho = (j as f64 / grid as f64 + jitter).clamp(0.0, 0.45);
            let spread = if k > 2 { 0.02 * rng.random::<f64>() } else { 0.0 };
            let mut v = vec![spread / (k as f64 - 2.0).max(1.0); k];
            v[major] = 1.0 - rho - spread;
            v[minor] = rho;
            if k == 2 {
                v[major] = 1.0 - rho;
            }
            let sum: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= sum);
            advices.push(Distribution::new(v).expect("normalized advice"));
        }
        RoundData { advices, losses }
    }
}

fn random_distribution(rng: &mut ChaCha8Rng, k: usize) -> Distribution {
    let raw: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let sum: f64 = raw.iter().sum();
    if sum > 0.0 {
        Distribution::new(raw.iter().map(|x| x / sum).collect()).expect("normalized draw")
    } else {
        Distribution::uniform(k)
    }
}

pub fn write_replay<W: Write>(mut out: W, replay: &Replay) -> Result<()> {
    writeln!(out, "{} {} {}", replay.arms, replay.num_experts, replay.horizon())?;
    let line = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    for round in &replay.rounds {
        writeln!(out, "{}", line(&round.losses))?;
        for advice in &round.advices {
            writeln!(out, "{}", line(advice.as_slice()))?;
        }
    }
    Ok(())
}

pub fn save_replay(path: impl AsRef<Path>, replay: &Replay) -> Result<()> {
    let mut buf = Vec::new();
    write_replay(&mut buf, replay)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_replay(path: impl AsRef<Path>) -> Result<Replay> {
    parse_replay(&fs::read_to_string(path)?)
}

pub fn parse_replay(text: &str) -> Result<Replay> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let err = |line: usize, message: String| MygaError::Replay { line, message };

    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let dims: Vec<u64> = header
        .split_whitespace()
        .map(|tok| tok.parse::<u64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(1, format!("bad header: {e}")))?;
    let [arms, num_experts, horizon] = dims[..] else {
        return Err(err(1, "header must be `K num_experts T`".into()));
    };
    let (arms, num_experts) = (arms as usize, num_experts as usize);
    if arms < 2 || num_experts == 0 {
        return Err(err(1, "need at least 2 arms and 1 expert".into()));
    }

    let mut row = |what: &str, round: u64| -> Result<(usize, Vec<f64>)> {
        let (no, l) = lines.next().ok_or_else(|| {
            err(
                text.lines().count() + 1,
                format!("round {round} incomplete: missing {what}"),
            )
        })?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(no, format!("round {round}: bad number in {what}: {e}")))?;
        if vals.len() != arms {
            return Err(err(
                no,
                format!(
                    "round {round}: {what} has {} entries, expected {arms}",
                    vals.len()
                ),
            ));
        }
        Ok((no, vals))
    };

    let mut rounds = Vec::with_capacity(horizon as usize);
    for t in 1..=horizon {
        let (no, losses) = row("loss line", t)?;
        if losses.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(err(no, format!("round {t}: loss outside [0, 1]")));
        }
        let mut advices = Vec::with_capacity(num_experts);
        for e in 1..=num_experts {
            let (no, probs) = row(&format!("advice of expert {e}"), t)?;
            if !validate(&probs) {
                return Err(err(
                    no,
                    format!(
                        "round {t}: advice of expert {e} is not a distribution (sum {})",
                        probs.iter().sum::<f64>()
                    ),
                ));
            }
            advices.push(Distribution::new(probs)?);
        }
        rounds.push(RoundData { advices, losses });
    }
    if let Some((no, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(err(no, format!("trailing data after {horizon} rounds: {l:?}")));
    }
    Ok(Replay {
        arms,
        num_experts,
        rounds,
    })
}
