use std::fs;
use std::io::Write;
use std::path::Path;

use crate::envs::{Env, EnvSpec};
use crate::error::{Error, Result};
use crate::reweight::weight_rollout;
use crate::rng::seeded;
use crate::sac::SacState;

use super::checkpoint::load_checkpoint;
use super::metrics::{format_sig9, quantile};
use super::trainer::episode_seed;

pub const WEIGHTS_HEADER: &str = "lambda_e,depth,weight_median,n_samples";
pub const DEFAULT_LAMBDAS: [f64; 6] = [0.1, 1.0, 3.0, 10.0, 30.0, 100.0];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation; 0 for a single episode.
    pub std: f64,
}

impl EvalReport {
    fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self { returns, mean, std }
    }
}

/// Runs the mean-action policy for `episodes` full episodes.
pub fn evaluate_policy(sac: &SacState, spec: &EnvSpec, episodes: usize, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config("episodes must be at least 1".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes as u64 {
        // offset keeps evaluation resets apart from training resets with the same seed
        let mut env = Env::new(spec.clone(), episode_seed(seed ^ 0x5EED_E7A1, ep));
        let mut total = 0.0;
        loop {
            let a = spec.clip_action(&sac.mean_action(env.observation()));
            let (r, done) = env.step(&a)?;
            total += r;
            if done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(EvalReport::from_returns(returns))
}

pub fn run_eval(checkpoint: &Path, episodes: usize, seed: u64) -> Result<EvalReport> {
    let t = load_checkpoint(checkpoint)?;
    evaluate_policy(&t.sac, &t.spec, episodes, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub lambda_e: f64,
    /// 1-based rollout depth.
    pub depth: usize,
    pub weight_median: f64,
    pub n_samples: usize,
}

#[derive(Clone, Debug)]
pub struct ProbeOptions {
    pub lambdas: Vec<f64>,
    /// Rollout length; defaults to the run's horizon plus one.
    pub depths: Option<usize>,
    pub rollouts: usize,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            depths: None,
            rollouts: 256,
            seed: 0,
        }
    }
}

/// Median predicted weight per (explore scale, depth) on fresh model rollouts
/// from a reweighted checkpoint.
pub fn run_weight_probe(checkpoint: &Path, opts: &ProbeOptions) -> Result<Vec<ProbeRow>> {
    let mut t = load_checkpoint(checkpoint)?;
    let (wnet, norm) = match (t.wnet.clone(), t.normalizer.clone()) {
        (Some(w), Some(n)) => (w, n),
        _ => {
            return Err(Error::Checkpoint {
                path: checkpoint.to_path_buf(),
                reason: "checkpoint has no weight net (trained without reweighting)".into(),
            })
        }
    };
    if !t.ensemble.trained || t.buffer.is_empty() {
        return Err(Error::Checkpoint {
            path: checkpoint.to_path_buf(),
            reason: "checkpoint has no trained dynamics model".into(),
        });
    }
    if opts.rollouts == 0 || opts.lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Config("probe needs rollouts ≥ 1 and positive lambdas".into()));
    }
    let depth = opts.depths.unwrap_or(t.config.horizon + 1);
    t.rng = seeded(opts.seed);
    let mut rows = Vec::with_capacity(depth * opts.lambdas.len());
    for &lambda in &opts.lambdas {
        let rollouts = t.explore_rollouts(opts.rollouts, depth, lambda)?;
        let mut by_depth = vec![Vec::with_capacity(rollouts.len()); depth];
        for r in &rollouts {
            for (d, w) in weight_rollout(&wnet, &norm, r)?.into_iter().enumerate() {
                by_depth[d].push(w);
            }
        }
        for (d, mut ws) in by_depth.into_iter().enumerate() {
            ws.sort_by(f64::total_cmp);
            rows.push(ProbeRow {
                lambda_e: lambda,
                depth: d + 1,
                weight_median: quantile(&ws, 0.5),
                n_samples: ws.len(),
            });
        }
    }
    Ok(rows)
}

pub fn write_weights_csv(path: &Path, rows: &[ProbeRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    writeln!(f, "{WEIGHTS_HEADER}")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{}",
            format_sig9(r.lambda_e),
            r.depth,
            format_sig9(r.weight_median),
            r.n_samples
        )?;
    }
    Ok(())
}

/// Parses `0.1,1,3` into scales.
pub fn parse_lambdas(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| Error::Config(format!("bad lambda {p:?}")))
        })
        .collect()
}
