//! Checkpoint directories.
//!
//! `manifest.json` holds the format version, the config, scalars, RNG
//! positions, optimizer hyperparameters and a segment table. Every segment is a
//! raw little-endian `f64` file next to the manifest. A copy of the run's
//! `metrics.csv` is kept alongside so a resumed run can continue appending.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::Affine;
use crate::envs::{Env, EnvState};
use crate::error::{Error, Result};
use crate::nn::AdamState;
use crate::replay::{ReplayBuffer, Transition};
use crate::reweight::FeatureNormalizer;
use crate::rng::RngState;

use super::trainer::{EpisodeAccumulator, Trainer};
use super::Config;

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub name: String,
    pub file: String,
    pub len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: Config,
    timestep: usize,
    episode: u64,
    log_alpha: f64,
    ensemble_trained: bool,
    last_holdout_nll: Option<f64>,
    accumulator: EpisodeAccumulator,
    rng: RngState,
    env_rng: RngState,
    env_step_index: usize,
    replay_len: usize,
    optimizers: BTreeMap<String, AdamState>,
    normalizer: Option<NormalizerMeta>,
    segments: Vec<SegmentEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NormalizerMeta {
    batches: u64,
    rate: f64,
    floor: f64,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

struct Writer {
    dir: PathBuf,
    segments: Vec<SegmentEntry>,
    optimizers: BTreeMap<String, AdamState>,
}

impl Writer {
    fn put(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let file = format!("{name}.f64");
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(self.dir.join(&file), bytes)?;
        self.segments.push(SegmentEntry {
            name: name.to_string(),
            file,
            len: values.len(),
        });
        Ok(())
    }

    fn put_adam(&mut self, name: &str, opt: &AdamState) -> Result<()> {
        self.put(&format!("{name}.m"), &opt.first_moment)?;
        self.put(&format!("{name}.v"), &opt.second_moment)?;
        self.optimizers.insert(name.to_string(), opt.clone());
        Ok(())
    }
}

struct Reader<'a> {
    dir: &'a Path,
    table: BTreeMap<&'a str, &'a SegmentEntry>,
    optimizers: &'a BTreeMap<String, AdamState>,
}

impl Reader<'_> {
    fn get(&self, name: &str) -> Result<Vec<f64>> {
        let e = self
            .table
            .get(name)
            .ok_or_else(|| corrupt(self.dir, format!("missing segment {name}")))?;
        let bytes = fs::read(self.dir.join(&e.file))?;
        if bytes.len() != e.len * 8 {
            return Err(corrupt(self.dir, format!("segment {name} has {} bytes, expected {}", bytes.len(), e.len * 8)));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn get_len(&self, name: &str, len: usize) -> Result<Vec<f64>> {
        let v = self.get(name)?;
        if v.len() != len {
            return Err(corrupt(self.dir, format!("segment {name} has length {}, expected {len}", v.len())));
        }
        Ok(v)
    }

    fn get_adam(&self, name: &str, len: usize) -> Result<AdamState> {
        let mut opt = self
            .optimizers
            .get(name)
            .cloned()
            .ok_or_else(|| corrupt(self.dir, format!("missing optimizer {name}")))?;
        opt.first_moment = self.get_len(&format!("{name}.m"), len)?;
        opt.second_moment = self.get_len(&format!("{name}.v"), len)?;
        Ok(opt)
    }
}

fn replay_row_len(t: &Transition) -> usize {
    2 * t.s.len() + t.a.len() + 3
}

/// Writes `trainer` into `dir`, replacing any previous checkpoint there.
pub fn save_checkpoint(trainer: &Trainer, dir: &Path, metrics: Option<&Path>) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    let mut w = Writer {
        dir: dir.to_path_buf(),
        segments: Vec::new(),
        optimizers: BTreeMap::new(),
    };
    let sac = &trainer.sac;
    w.put("sac.actor", sac.actor.values())?;
    w.put("sac.critics", sac.critics.values())?;
    w.put("sac.targets", sac.targets.values())?;
    w.put_adam("sac.actor_opt", &sac.actor_opt)?;
    w.put_adam("sac.critic_opt", &sac.critic_opt)?;
    w.put_adam("sac.alpha_opt", &sac.alpha_opt)?;
    let ens = &trainer.ensemble;
    for (b, m) in ens.models.iter().enumerate() {
        w.put(&format!("ensemble.model{b}.params"), m.params.values())?;
        w.put_adam(&format!("ensemble.model{b}.opt"), &m.optimizer)?;
    }
    w.put("ensemble.input_norm.mean", &ens.input_norm.mean)?;
    w.put("ensemble.input_norm.std", &ens.input_norm.std)?;
    w.put("ensemble.output_norm.mean", &ens.output_norm.mean)?;
    w.put("ensemble.output_norm.std", &ens.output_norm.std)?;
    if let Some(wn) = &trainer.wnet {
        w.put("wnet.params", wn.params.values())?;
        w.put_adam("wnet.opt", &wn.optimizer)?;
    }
    if let Some(n) = &trainer.normalizer {
        w.put("normalizer.mean", &n.mean)?;
        w.put("normalizer.second_moment", &n.second_moment)?;
    }
    let mut replay = Vec::new();
    for t in trainer.buffer.iter() {
        replay.extend_from_slice(&t.s);
        replay.extend_from_slice(&t.a);
        replay.push(t.r);
        replay.extend_from_slice(&t.s_next);
        replay.push(t.episode_id as f64);
        replay.push(t.step_in_episode as f64);
    }
    w.put("replay", &replay)?;
    w.put("env.physics", &trainer.env.state.physics)?;
    w.put("env.observation", &trainer.env.state.observation)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: trainer.config.clone(),
        timestep: trainer.timestep,
        episode: trainer.episode,
        log_alpha: sac.log_alpha,
        ensemble_trained: ens.trained,
        last_holdout_nll: trainer.last_holdout_nll,
        accumulator: trainer.acc.clone(),
        rng: RngState::capture(&trainer.rng),
        env_rng: RngState::capture(&trainer.env.state.rng),
        env_step_index: trainer.env.state.step_index,
        replay_len: trainer.buffer.len(),
        optimizers: w.optimizers.clone(),
        normalizer: trainer.normalizer.as_ref().map(|n| NormalizerMeta {
            batches: n.batches,
            rate: n.rate,
            floor: n.floor,
        }),
        segments: w.segments.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| corrupt(dir, e.to_string()))?;
    fs::write(dir.join(MANIFEST), text)?;
    if let Some(m) = metrics {
        if m.exists() {
            fs::copy(m, dir.join("metrics.csv"))?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Trainer> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| corrupt(dir, format!("cannot read manifest: {e}")))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| corrupt(dir, e.to_string()))?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(corrupt(dir, format!("format version {v} is not supported (expected {FORMAT_VERSION})"))),
        None => return Err(corrupt(dir, "manifest has no format_version")),
    }
    let m: Manifest = serde_json::from_value(raw).map_err(|e| corrupt(dir, e.to_string()))?;
    let r = Reader {
        dir,
        table: m.segments.iter().map(|s| (s.name.as_str(), s)).collect(),
        optimizers: &m.optimizers,
    };
    // rebuilding from the config gives every shape; values are then overwritten
    let mut t = Trainer::new(m.config.clone())?;
    let sac = &mut t.sac;
    let (na, nc) = (sac.actor.len(), sac.critics.len());
    sac.actor.values_mut().copy_from_slice(&r.get_len("sac.actor", na)?);
    sac.critics.values_mut().copy_from_slice(&r.get_len("sac.critics", nc)?);
    sac.targets.values_mut().copy_from_slice(&r.get_len("sac.targets", nc)?);
    sac.actor_opt = r.get_adam("sac.actor_opt", na)?;
    sac.critic_opt = r.get_adam("sac.critic_opt", nc)?;
    sac.alpha_opt = r.get_adam("sac.alpha_opt", 1)?;
    sac.log_alpha = m.log_alpha;
    let ens = &mut t.ensemble;
    let (sd, ad) = (ens.state_dim, ens.action_dim);
    for (b, model) in ens.models.iter_mut().enumerate() {
        let n = model.params.len();
        model.params.values_mut().copy_from_slice(&r.get_len(&format!("ensemble.model{b}.params"), n)?);
        model.optimizer = r.get_adam(&format!("ensemble.model{b}.opt"), n)?;
    }
    ens.input_norm = Affine {
        mean: r.get_len("ensemble.input_norm.mean", sd + ad)?,
        std: r.get_len("ensemble.input_norm.std", sd + ad)?,
    };
    ens.output_norm = Affine {
        mean: r.get_len("ensemble.output_norm.mean", sd)?,
        std: r.get_len("ensemble.output_norm.std", sd)?,
    };
    ens.trained = m.ensemble_trained;
    if let Some(wn) = t.wnet.as_mut() {
        let n = wn.params.len();
        wn.params.values_mut().copy_from_slice(&r.get_len("wnet.params", n)?);
        wn.optimizer = r.get_adam("wnet.opt", n)?;
    }
    if let Some(norm) = t.normalizer.as_mut() {
        let meta = m.normalizer.as_ref().ok_or_else(|| corrupt(dir, "missing normalizer metadata"))?;
        let d = norm.dim();
        *norm = FeatureNormalizer {
            mean: r.get_len("normalizer.mean", d)?,
            second_moment: r.get_len("normalizer.second_moment", d)?,
            batches: meta.batches,
            rate: meta.rate,
            floor: meta.floor,
        };
    }
    let replay = r.get("replay")?;
    let mut buffer = ReplayBuffer::new(m.config.buffer_capacity);
    let row = replay_row_len(&Transition {
        s: vec![0.0; sd],
        a: vec![0.0; ad],
        r: 0.0,
        s_next: vec![0.0; sd],
        episode_id: 0,
        step_in_episode: 0,
    });
    if replay.len() != row * m.replay_len {
        return Err(corrupt(dir, "replay segment length does not match replay_len"));
    }
    for c in replay.chunks_exact(row) {
        buffer.push(Transition {
            s: c[..sd].to_vec(),
            a: c[sd..sd + ad].to_vec(),
            r: c[sd + ad],
            s_next: c[sd + ad + 1..2 * sd + ad + 1].to_vec(),
            episode_id: c[2 * sd + ad + 1] as u64,
            step_in_episode: c[2 * sd + ad + 2] as usize,
        });
    }
    t.buffer = buffer;
    let physics = r.get("env.physics")?;
    let observation = r.get_len("env.observation", sd)?;
    t.env = Env {
        spec: t.spec.clone(),
        state: EnvState {
            observation,
            physics,
            step_index: m.env_step_index,
            rng: m.env_rng.restore()?,
        },
    };
    t.rng = m.rng.restore()?;
    t.timestep = m.timestep;
    t.episode = m.episode;
    t.acc = m.accumulator;
    t.last_holdout_nll = m.last_holdout_nll;
    Ok(t)
}

/// A resumed run may only change its length and checkpoint cadence.
pub fn check_resume_config(saved: &Config, requested: &Config, dir: &Path) -> Result<()> {
    let mut a = saved.clone();
    let mut b = requested.clone();
    a.total_steps = 0;
    b.total_steps = 0;
    a.checkpoint_every = 0;
    b.checkpoint_every = 0;
    if a != b {
        return Err(corrupt(dir, "config differs from the checkpointed run beyond total_steps/checkpoint_every"));
    }
    Ok(())
}
