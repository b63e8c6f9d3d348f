//! Experiment harness: runs a policy against an environment for a list of
//! seeds and writes per-round and summary CSV reports.

// negated float comparisons reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Parser;
use myga_core::audit::{
    bound_value, check_majority_bound, check_majority_round, check_round, Check, RegretReport, Violation,
};
use myga_core::baselines::{Exp4, Exp4Variant};
use myga_core::environments::{load_replay, save_replay, EnvKind, EnvSpec};
use myga_core::myga::{sample_arm, schedule_parameters_on_grid, MygaConfig, MygaPolicy};
use myga_core::simplex::{descending_sort, pivot_index};
use myga_core::{MygaError, TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const ROUND_HEADER: &str =
    "seed,t,k_t,a,realized_loss,expected_loss,cum_LT,cum_Lstar,cum_regret,cum_M,cum_m,residual,violations";
pub const SUMMARY_HEADER: &str = "seed,R_T,L_star,M,m,bound_value,bound_pass";
pub const VIOLATION_HEADER: &str = "seed,t,check,arm,threshold,margin";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] MygaError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Myga,
    Exp4,
    Exp4Threshold,
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "myga" => Ok(PolicyKind::Myga),
            "exp4" => Ok(PolicyKind::Exp4),
            "exp4_threshold" => Ok(PolicyKind::Exp4Threshold),
            other => Err(format!("unknown policy {other:?} (myga, exp4, exp4_threshold)")),
        }
    }
}

/// Command-line flags. Every flag may also be given as `key=value` in the
/// file passed to `--config`; flags win.
#[derive(Debug, Clone, Default, Parser)]
#[command(name = "myga", version, about = "Run bandit-with-expert-advice experiments")]
pub struct Args {
    /// key=value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// myga, exp4 or exp4_threshold
    #[arg(long)]
    pub policy: Option<String>,
    /// zero_loss_expert, stochastic_gap, adversarial_minority or replay
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub arms: Option<usize>,
    #[arg(long)]
    pub experts: Option<usize>,
    #[arg(long)]
    pub horizon: Option<u64>,
    /// Comma-separated seeds
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub grid_denominator: Option<u64>,
    /// Known bound on the best expert's loss; defaults to the horizon
    #[arg(long)]
    pub lstar: Option<f64>,
    #[arg(long)]
    pub audit: bool,
    /// Per-round CSV path; summary and violations go next to it
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Best arm's mean loss for stochastic_gap
    #[arg(long)]
    pub mu: Option<f64>,
    /// Loss gap for stochastic_gap
    #[arg(long)]
    pub delta: Option<f64>,
    /// Replay file for env=replay
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Constant c in the summary check R_T <= c * bound_value
    #[arg(long)]
    pub bound_constant: Option<f64>,
    /// Write the environment of the first seed as a replay file and exit
    #[arg(long)]
    pub emit_replay: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub policy: PolicyKind,
    pub env: EnvSpec,
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
    pub l_star_bound: f64,
    pub seeds: Vec<u64>,
    pub grid_denominator: Option<u64>,
    pub audit: bool,
    pub output_path: PathBuf,
    pub bound_constant: f64,
    pub inject_fault: bool,
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped;
/// dashes in keys are read as underscores.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
        out.insert(key.trim().replace('-', "_"), value.trim().to_string());
    }
    Ok(out)
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds = s
        .split(',')
        .map(|x| {
            x.trim()
                .parse::<u64>()
                .map_err(|e| config_err(format!("seed {x:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(config_err("at least one seed is required"));
    }
    Ok(seeds)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| config_err(format!("{key}={value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(config_err(format!("{key}={value:?}: expected a boolean"))),
    }
}

impl Args {
    /// Overlays the config file (if any) under the flags.
    fn merged(&self) -> Result<Args> {
        let Some(path) = &self.config else {
            return Ok(self.clone());
        };
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        let mut base = Args::default();
        for (key, value) in parse_config_text(&text)? {
            let v = value.as_str();
            match key.as_str() {
                "policy" => base.policy = Some(value),
                "env" => base.env = Some(value),
                "arms" => base.arms = Some(parse_value(&key, v)?),
                "experts" => base.experts = Some(parse_value(&key, v)?),
                "horizon" => base.horizon = Some(parse_value(&key, v)?),
                "seed" | "seeds" => base.seed = Some(value),
                "eta" => base.eta = Some(parse_value(&key, v)?),
                "gamma" => base.gamma = Some(parse_value(&key, v)?),
                "grid_denominator" => base.grid_denominator = Some(parse_value(&key, v)?),
                "lstar" => base.lstar = Some(parse_value(&key, v)?),
                "audit" => base.audit = parse_bool(&key, v)?,
                "out" => base.out = Some(value.into()),
                "mu" => base.mu = Some(parse_value(&key, v)?),
                "delta" => base.delta = Some(parse_value(&key, v)?),
                "replay" => base.replay = Some(value.into()),
                "bound_constant" => base.bound_constant = Some(parse_value(&key, v)?),
                other => return Err(config_err(format!("unknown key {other:?}"))),
            }
        }
        Ok(Args {
            config: None,
            policy: self.policy.clone().or(base.policy),
            env: self.env.clone().or(base.env),
            arms: self.arms.or(base.arms),
            experts: self.experts.or(base.experts),
            horizon: self.horizon.or(base.horizon),
            seed: self.seed.clone().or(base.seed),
            eta: self.eta.or(base.eta),
            gamma: self.gamma.or(base.gamma),
            grid_denominator: self.grid_denominator.or(base.grid_denominator),
            lstar: self.lstar.or(base.lstar),
            audit: self.audit || base.audit,
            out: self.out.clone().or(base.out),
            mu: self.mu.or(base.mu),
            delta: self.delta.or(base.delta),
            replay: self.replay.clone().or(base.replay),
            bound_constant: self.bound_constant.or(base.bound_constant),
            emit_replay: self.emit_replay.clone(),
            inject_fault: self.inject_fault,
        })
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let a = self.merged()?;
        let policy: PolicyKind = a
            .policy
            .as_deref()
            .unwrap_or("myga")
            .parse()
            .map_err(config_err)?;
        let kind: EnvKind = a
            .env
            .as_deref()
            .unwrap_or("stochastic_gap")
            .parse()
            .map_err(|e: MygaError| config_err(e.to_string()))?;
        let seeds = parse_seeds(a.seed.as_deref().unwrap_or("0"))?;

        let env = if kind == EnvKind::Replay {
            let path = a.replay.ok_or_else(|| config_err("env=replay needs --replay"))?;
            let replay = load_replay(&path)?;
            for (name, given, found) in [
                ("arms", a.arms, replay.arms),
                ("experts", a.experts, replay.num_experts),
                ("horizon", a.horizon.map(|h| h as usize), replay.rounds.len()),
            ] {
                if given.is_some_and(|g| g != found) {
                    return Err(config_err(format!(
                        "{name}={} does not match the replay file ({found})",
                        given.unwrap()
                    )));
                }
            }
            EnvSpec::from_replay(replay, seeds[0])
        } else {
            EnvSpec::new(
                kind,
                a.arms.unwrap_or(2),
                a.experts.unwrap_or(4),
                a.horizon.unwrap_or(1000),
                a.mu.unwrap_or(0.1),
                a.delta.unwrap_or(0.5),
                seeds[0],
            )?
        };

        let l_star_bound = a.lstar.unwrap_or(env.horizon as f64);
        if !(l_star_bound >= 0.0) || !l_star_bound.is_finite() {
            return Err(config_err(format!(
                "lstar {l_star_bound} must be a non-negative number"
            )));
        }
        let bound_constant = a.bound_constant.unwrap_or(10.0);
        if !(bound_constant > 0.0) {
            return Err(config_err("bound_constant must be positive"));
        }
        if a.grid_denominator == Some(0) {
            return Err(config_err("grid_denominator must be positive"));
        }
        Ok(ExperimentConfig {
            policy,
            env,
            eta: a.eta,
            gamma: a.gamma,
            l_star_bound,
            seeds,
            grid_denominator: a.grid_denominator,
            audit: a.audit,
            output_path: a.out.unwrap_or_else(|| PathBuf::from("run.csv")),
            bound_constant,
            inject_fault: a.inject_fault,
        })
    }
}

impl ExperimentConfig {
    /// Learning rate, threshold and grid denominator after applying overrides
    /// to the schedule.
    pub fn parameters(&self) -> (f64, f64, u64) {
        let t = self.env.horizon.max(1);
        let den = self.grid_denominator.unwrap_or(2 * t);
        let (eta, gamma) =
            schedule_parameters_on_grid(self.env.arms, self.env.num_experts, t, self.l_star_bound, den);
        (self.eta.unwrap_or(eta), self.gamma.unwrap_or(gamma), den)
    }
}

pub fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.csv")
}

pub fn violations_path(out: &Path) -> PathBuf {
    out.with_extension("violations.csv")
}

#[derive(Debug, Clone, Default)]
pub struct SeedOutput {
    pub seed: u64,
    pub rows: String,
    pub summary: String,
    pub violations: String,
    pub violation_count: usize,
    pub report: RegretReport,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seeds: Vec<SeedOutput>,
    pub violation_count: usize,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.violation_count > 0 {
            2
        } else {
            0
        }
    }
}

enum Player {
    Myga(MygaPolicy),
    Exp4(Exp4),
}

fn push_violation(out: &mut String, seed: u64, t: Option<u64>, v: &Violation) {
    let opt = |x: Option<String>| x.unwrap_or_default();
    let _ = writeln!(
        out,
        "{seed},{},{},{},{},{}",
        opt(t.map(|t| t.to_string())),
        v.check.as_str(),
        opt(v.arm.map(|a| (a + 1).to_string())),
        opt(v.threshold.map(|s| s.to_string())),
        v.margin
    );
}

/// One replica: `T` rounds of advise, sample, observe, update.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput> {
    let env = cfg.env.with_seed(seed);
    let (arms, experts, horizon) = (env.arms, env.num_experts, env.horizon);
    let mut out = SeedOutput {
        seed,
        report: RegretReport::new(experts),
        ..Default::default()
    };
    let (eta, gamma, den) = cfg.parameters();

    if horizon > 0 {
        let mut player = match cfg.policy {
            PolicyKind::Myga => {
                let policy = MygaPolicy::new(MygaConfig::new(arms, experts, horizon, eta, gamma, den)?);
                Player::Myga(if cfg.inject_fault {
                    policy.with_corrupted_mixture()
                } else {
                    policy
                })
            }
            PolicyKind::Exp4 => Player::Exp4(Exp4::new(experts, eta, Exp4Variant::Plain)?),
            PolicyKind::Exp4Threshold => {
                Player::Exp4(Exp4::new(experts, eta, Exp4Variant::Thresholded { gamma })?)
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);

        for t in 1..=horizon {
            let round = env.generate(t)?;
            let mut found: Vec<Violation> = Vec::new();
            let (a, k, rl, residual) = match &mut player {
                Player::Myga(policy) => {
                    let mut trace = policy.advise(&round.advices)?;
                    if cfg.audit {
                        found.extend(check_round(&trace, &trace.zeta_sorted, gamma, arms, TOL));
                    }
                    let a = sample_arm(&trace.p_original, rng.random());
                    policy.update(&mut trace, &round.advices, a, round.losses[a])?;
                    let rl = out
                        .report
                        .accumulate_trace(&trace, &round.advices, &round.losses)?;
                    if cfg.audit {
                        found.extend(check_majority_round(&rl, arms, TOL));
                    }
                    (a, trace.k, rl, trace.residual.to_string())
                }
                Player::Exp4(exp4) => {
                    let (mix, p) = exp4.advise(&round.advices)?;
                    let a = sample_arm(&p, rng.random());
                    exp4.update(&round.advices, &p, a, round.losses[a])?;
                    let (sorted, perm) = descending_sort(&mix);
                    let k = pivot_index(&sorted);
                    let p_sorted = myga_core::Distribution::new(perm.permute(p.as_slice()))?;
                    let rl = out
                        .report
                        .accumulate(k, &perm, &p_sorted, &round.advices, &round.losses)?;
                    (a, k, rl, String::new())
                }
            };
            for v in &found {
                push_violation(&mut out.violations, seed, Some(t), v);
            }
            out.violation_count += found.len();
            let r = &out.report;
            let best = r.best_expert_loss();
            let _ = writeln!(
                out.rows,
                "{seed},{t},{k},{},{},{},{},{best},{},{},{},{residual},{}",
                a + 1,
                round.losses[a],
                rl.expected,
                r.player_loss,
                r.player_loss - best,
                r.majority_loss,
                r.minority_loss,
                found.len()
            );
        }
    }

    if cfg.audit && cfg.policy == PolicyKind::Myga {
        let (holds, margin) = check_majority_bound(&out.report, arms, TOL);
        if !holds {
            let v = Violation {
                check: Check::MajorityLoss,
                arm: None,
                threshold: None,
                margin,
            };
            push_violation(&mut out.violations, seed, None, &v);
            out.violation_count += 1;
        }
    }

    let r = &out.report;
    let (regret, best) = if horizon > 0 {
        (r.regret(), r.best_expert_loss())
    } else {
        (0.0, 0.0)
    };
    let bound = bound_value(arms, experts, horizon.max(1), cfg.l_star_bound);
    let _ = writeln!(
        out.summary,
        "{seed},{regret},{best},{},{},{bound},{}",
        r.majority_loss,
        r.minority_loss,
        regret <= cfg.bound_constant * bound
    );
    Ok(out)
}

/// Runs every seed (in parallel) and returns outputs in ascending seed order.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let outputs = seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    let violation_count = outputs.iter().map(|o| o.violation_count).sum();
    Ok(RunOutcome {
        seeds: outputs,
        violation_count,
    })
}

fn write_file(path: &Path, header: &str, bodies: impl Iterator<Item = String>) -> Result<()> {
    let mut text = String::with_capacity(1 << 16);
    text.push_str(header);
    text.push('\n');
    for body in bodies {
        text.push_str(&body);
    }
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn emit_csv(outcome: &RunOutcome, out: &Path, audit: bool) -> Result<()> {
    write_file(out, ROUND_HEADER, outcome.seeds.iter().map(|s| s.rows.clone()))?;
    write_file(
        &summary_path(out),
        SUMMARY_HEADER,
        outcome.seeds.iter().map(|s| s.summary.clone()),
    )?;
    if audit {
        write_file(
            &violations_path(out),
            VIOLATION_HEADER,
            outcome.seeds.iter().map(|s| s.violations.clone()),
        )?;
    }
    Ok(())
}

/// Full command: resolve config, run, write outputs. Returns the exit code.
pub fn run(args: &Args) -> Result<i32> {
    let cfg = args.resolve()?;
    if let Some(path) = &args.emit_replay {
        save_replay(path, &cfg.env.to_replay()?)?;
        return Ok(0);
    }
    let outcome = execute(&cfg)?;
    emit_csv(&outcome, &cfg.output_path, cfg.audit)?;
    Ok(outcome.exit_code())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> Args {
        let mut argv = vec!["myga"];
        argv.extend_from_slice(extra);
        Args::try_parse_from(argv).unwrap()
    }

    #[test]
    fn config_text_parsing() {
        let map = parse_config_text("# c\npolicy = exp4\n\ngrid-denominator=40\n").unwrap();
        assert_eq!(map["policy"], "exp4");
        assert_eq!(map["grid_denominator"], "40");
        assert!(parse_config_text("no equals").is_err());
    }

    #[test]
    fn seeds_parse() {
        assert_eq!(parse_seeds("3, 1,2").unwrap(), vec![3, 1, 2]);
        assert!(parse_seeds("1,x").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        fs::write(&path, "arms=3\nexperts=5\nhorizon=7\npolicy=exp4\naudit=true\n").unwrap();
        let cfg = args(&["--config", path.to_str().unwrap(), "--arms", "4"])
            .resolve()
            .unwrap();
        assert_eq!(cfg.env.arms, 4);
        assert_eq!(cfg.env.num_experts, 5);
        assert_eq!(cfg.env.horizon, 7);
        assert_eq!(cfg.policy, PolicyKind::Exp4);
        assert!(cfg.audit);
        assert_eq!(cfg.l_star_bound, 7.0);

        fs::write(&path, "colour=blue\n").unwrap();
        assert!(args(&["--config", path.to_str().unwrap()]).resolve().is_err());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(args(&["--policy", "ucb"]).resolve().is_err());
        assert!(args(&["--env", "mars"]).resolve().is_err());
        assert!(args(&["--arms", "1"]).resolve().is_err());
        assert!(args(&["--lstar=-1"]).resolve().is_err());
        assert!(args(&["--env", "replay"]).resolve().is_err());
    }

    #[test]
    fn off_lattice_gamma_is_an_error() {
        let cfg = args(&["--horizon", "10", "--gamma", "0.123"]).resolve().unwrap();
        assert!(run_seed(&cfg, 0).is_err());
    }

    #[test]
    fn rows_per_round_and_summary() {
        for policy in ["myga", "exp4", "exp4_threshold"] {
            let cfg = args(&["--policy", policy, "--horizon", "3", "--arms", "3", "--audit"])
                .resolve()
                .unwrap();
            let out = run_seed(&cfg, 4).unwrap();
            assert_eq!(out.rows.lines().count(), 3);
            assert_eq!(out.summary.lines().count(), 1);
            assert_eq!(out.violation_count, 0);
            for line in out.rows.lines() {
                assert_eq!(line.split(',').count(), ROUND_HEADER.split(',').count());
                assert!(line.ends_with(",0"));
            }
        }
    }

    #[test]
    fn zero_rounds() {
        let cfg = args(&["--horizon", "0"]).resolve().unwrap();
        let out = run_seed(&cfg, 0).unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(out.summary.lines().count(), 1);
    }

    #[test]
    fn corrupted_mixture_is_flagged() {
        let cfg = args(&[
            "--horizon",
            "50",
            "--arms",
            "3",
            "--audit",
            "--inject-fault",
            "--env",
            "adversarial_minority",
        ])
        .resolve()
        .unwrap();
        let outcome = execute(&cfg).unwrap();
        assert!(outcome.violation_count > 0);
        assert_eq!(outcome.exit_code(), 2);
    }

    #[test]
    fn seeds_sorted_in_output() {
        let cfg = args(&["--horizon", "2", "--seed", "5,1,3"]).resolve().unwrap();
        let outcome = execute(&cfg).unwrap();
        let order: Vec<u64> = outcome.seeds.iter().map(|s| s.seed).collect();
        assert_eq!(order, vec![1, 3, 5]);
    }

    #[test]
    fn output_paths() {
        assert_eq!(
            summary_path(Path::new("a/run.csv")),
            PathBuf::from("a/run.summary.csv")
        );
        assert_eq!(
            violations_path(Path::new("run")),
            PathBuf::from("run.violations.csv")
        );
    }
}
