//! Acceptance criteria C1–C10, one pass/fail line each.
//!
//! Runs as a plain binary so the lines are printed even when everything
//! passes. Pass criterion ids (`C3 C5`) as arguments to run a subset; the
//! learning criteria share training runs, so C8 implies the C6 runs and C9
//! implies the C7 runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rewpe_sac::dynamics::TransitionSet;
use rewpe_sac::harness::{
    evaluate_policy, load_checkpoint, read_metrics, run_gradcheck, run_training, run_weight_probe, Config,
    MetaFixture, ProbeOptions, ProbeRow, Scope, SuiteReport, Trainer, INSTANCES, META_INSTANCES, META_TOLERANCE,
    NETWORK_TOLERANCE,
};
use rewpe_sac::replay::{ReplayBuffer, Transition};
use rewpe_sac::reweight::{reweighted_policy_value_update, weight_rollout, HEAD_BIAS_INIT};
use rewpe_sac::rng::seeded;

const SEEDS: u64 = 5;
const REQUIRED: usize = 4;
const PENDULUM_STEPS: usize = 30_000;
const PENDULUM_BAR: f64 = -200.0;
const POINTMASS_STEPS: usize = 4_000;
/// One hidden layer at a quarter of the default width.
const WEAK_MODEL_HIDDEN: [usize; 1] = [8];
const PENDULUM_EVAL_EPISODES: usize = 5;
const POINTMASS_EVAL_EPISODES: usize = 20;
const EVAL_SEED: u64 = 10_007;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

// C1, C2 ---------------------------------------------------------------------

fn suite_summary(rep: &SuiteReport) -> String {
    let failed = rep.checks.iter().filter(|c| !c.passed).count();
    format!(
        "{}: {} checks, {failed} failed, worst {:.2e}, control {}",
        rep.scope,
        rep.checks.len(),
        rep.worst(),
        if rep.control_rejected { "rejected" } else { "ACCEPTED" }
    )
}

fn c1_gradient_oracles() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (scope, families) in [
        (Scope::Nn, &["mlp#", "gru#"][..]),
        (Scope::Sac, &["critic#", "actor#"][..]),
        (Scope::Dynamics, &["nll#"][..]),
    ] {
        let rep = run_gradcheck(scope).expect("suite runs");
        let enough = families.iter().all(|f| rep.count(f) >= INSTANCES);
        let tol_ok = rep.checks.iter().all(|c| c.tolerance <= NETWORK_TOLERANCE);
        ok &= rep.passed() && enough && tol_ok;
        parts.push(suite_summary(&rep));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    outcome(ok, format!("{} ({:.1}s)", parts.join("; "), elapsed.as_secs_f64()))
}

fn c2_meta_gradient() -> Outcome {
    let start = Instant::now();
    let rep = run_gradcheck(Scope::Meta).expect("suite runs");
    let elapsed = start.elapsed();
    let ok = rep.passed()
        && rep.count("meta#") >= META_INSTANCES
        && rep.checks.iter().all(|c| c.tolerance <= META_TOLERANCE)
        && elapsed < Duration::from_secs(300);
    outcome(ok, format!("{} ({:.1}s)", suite_summary(&rep), elapsed.as_secs_f64()))
}

// C3 -------------------------------------------------------------------------

fn warm_trainer(env: &str, seed: u64, steps: usize) -> Trainer {
    let cfg = Config {
        env: env.into(),
        seed,
        init_random_steps: steps,
        total_steps: steps + 1,
        ..Config::default()
    };
    let mut t = Trainer::new(cfg).expect("valid config");
    for _ in 0..steps {
        t.step().expect("warm-up step");
    }
    let opts = rewpe_sac::dynamics::FitOptions {
        epochs: t.config.model_train_epochs,
        batch: t.config.model_batch,
        max_steps: t.config.model_max_steps,
    };
    t.ensemble.train(&t.buffer, opts, &mut t.rng).expect("ensemble trains");
    t
}

fn c3_initial_weights() -> Outcome {
    let target = 1.0 / (1.0 + (-HEAD_BIAS_INIT).exp());
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (env, seed) in [("pendulum", 1), ("pointmass", 2), ("cartpole-swingup", 3)] {
        let mut t = warm_trainer(env, seed, 400);
        let depth = t.config.horizon + 1;
        let rollouts = t.explore_rollouts(32, depth, t.config.explore_scale).expect("rollouts");
        let wnet = t.wnet.as_ref().expect("fresh reweighting trainer");
        let norm = t.normalizer.as_ref().expect("normalizer");
        for r in &rollouts {
            for w in weight_rollout(wnet, norm, r).expect("weights") {
                worst = worst.max((w - 0.952574).abs());
                count += 1;
            }
        }
    }
    outcome(
        worst <= 1e-6,
        format!("σ(3) = {target:.7}; {count} weights over depths 1..=6, max |w − 0.952574| = {worst:.2e}"),
    )
}

// C4 -------------------------------------------------------------------------

fn c4_degenerate_weights() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for k in 0..3u64 {
        let mut fx = MetaFixture::new(900 + k).expect("fixture");
        let mut p = fx.problem(&mut seeded(950 + k)).expect("problem");
        let grads = p.set_gradients(&fx.sac);
        let n = p.num_sets();

        let cand = p.virtual_update(&fx.sac, &grads, &vec![0.0; n]).expect("update");
        let frozen_virtual = cand.critics == fx.sac.critics && cand.actor == fx.sac.actor;

        let w = p.weights(&fx.wnet, fx.wnet.params.values());
        let w2: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        let doubled_w = p.virtual_update(&fx.sac, &grads, &w2).expect("update");
        p.inner_lr *= 2.0;
        let doubled_mu = p.virtual_update(&fx.sac, &grads, &w).expect("update");
        let scaling = doubled_w == doubled_mu;

        // reweighted update after a few real updates so Adam has momentum
        let mut sac = fx.sac.clone();
        let mut rng = seeded(970 + k);
        for _ in 0..3 {
            let batch = fx.buffer.sample_batch(16, &mut rng).expect("batch");
            sac.update_real(&batch, &mut rng).expect("real update");
        }
        let (critics, actor) = (sac.critics.clone(), sac.actor.clone());
        let sets: Vec<&TransitionSet> = p.rollouts.iter().flatten().collect();
        reweighted_policy_value_update(&mut sac, &sets, &vec![0.0; sets.len()], &mut rng).expect("update");
        let frozen_update = sac.critics == critics && sac.actor == actor;

        ok &= frozen_virtual && scaling && frozen_update;
        notes.push(format!(
            "cfg{k}: virtual {} scaling {} reweighted {}",
            if frozen_virtual { "frozen" } else { "MOVED" },
            if scaling { "exact" } else { "DIFFERS" },
            if frozen_update { "frozen" } else { "MOVED" },
        ));
    }
    outcome(ok, notes.join("; "))
}

// C5 -------------------------------------------------------------------------

fn c5_bootstrap() -> Outcome {
    const N: usize = 1000;
    let mut buffer = ReplayBuffer::new(N);
    for i in 0..N {
        buffer.push(Transition {
            s: vec![i as f64],
            a: vec![0.0],
            r: 0.0,
            s_next: vec![i as f64],
            episode_id: (i / 100) as u64,
            step_in_episode: i % 100,
        });
    }
    let expected = 1.0 - (1.0 - 1.0 / N as f64).powi(N as i32);
    let mut sizes_ok = true;
    let mut total = 0.0;
    let mut count = 0.0;
    for seed in 0..100 {
        for set in buffer.bootstrap_datasets(5, &mut seeded(seed)).expect("bootstrap") {
            sizes_ok &= set.len() == N;
            let mut seen = vec![false; N];
            set.iter().for_each(|&i| seen[i] = true);
            total += seen.iter().filter(|&&s| s).count() as f64 / N as f64;
            count += 1.0;
        }
    }
    let mean = total / count;
    outcome(
        sizes_ok && (mean - expected).abs() <= 0.03,
        format!(
            "sizes all {N}: {sizes_ok}; unique fraction {mean:.4} vs {expected:.4} (|Δ| = {:.4})",
            (mean - expected).abs()
        ),
    )
}

// Training runs shared by C6–C9 ---------------------------------------------

struct Run {
    dir: PathBuf,
    eval_mean: f64,
    wall: Duration,
}

fn train(root: &Path, tag: &str, cfg: Config) -> Run {
    let dir = root.join(tag);
    let start = Instant::now();
    let t = run_training(cfg, &dir, None).unwrap_or_else(|e| panic!("{tag}: {e}"));
    let wall = start.elapsed();
    let episodes = if t.config.env == "pendulum" {
        PENDULUM_EVAL_EPISODES
    } else {
        POINTMASS_EVAL_EPISODES
    };
    let eval = evaluate_policy(&t.sac, &t.spec, episodes, EVAL_SEED).expect("evaluation");
    println!(
        "    run {tag}: {} steps in {:.0}s, deterministic eval {:.1} ± {:.1}",
        t.timestep,
        wall.as_secs_f64(),
        eval.mean,
        eval.std
    );
    Run {
        dir,
        eval_mean: eval.mean,
        wall,
    }
}

fn pendulum(seed: u64, reweight: bool) -> Config {
    Config {
        env: "pendulum".into(),
        seed,
        total_steps: PENDULUM_STEPS,
        reweight_enabled: reweight,
        ..Config::default()
    }
}

fn pointmass(seed: u64, reweight: bool, weak: bool) -> Config {
    let mut c = Config {
        env: "pointmass".into(),
        seed,
        total_steps: POINTMASS_STEPS,
        reweight_enabled: reweight,
        ..Config::default()
    };
    if weak {
        c.model_hidden = WEAK_MODEL_HIDDEN.to_vec();
    }
    c
}

#[derive(Default)]
struct Runs {
    root: Option<tempfile::TempDir>,
    by_tag: BTreeMap<String, Run>,
}

impl Runs {
    fn get(&mut self, tag: &str, cfg: impl FnOnce() -> Config) -> &Run {
        let root = self
            .root
            .get_or_insert_with(|| tempfile::tempdir().expect("tempdir"))
            .path()
            .to_path_buf();
        self.by_tag.entry(tag.to_string()).or_insert_with(|| train(&root, tag, cfg()))
    }
}

// C6 -------------------------------------------------------------------------

fn c6_learning(runs: &mut Runs) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, reweight) in [("reweighted", true), ("no-reweight", false)] {
        let mut returns = Vec::new();
        let mut slowest: f64 = 0.0;
        for seed in 0..SEEDS {
            let tag = format!("pendulum-{name}-{seed}");
            let r = runs.get(&tag, || pendulum(seed, reweight));
            returns.push(r.eval_mean);
            slowest = slowest.max(r.wall.as_secs_f64());
        }
        let hits = returns.iter().filter(|&&r| r >= PENDULUM_BAR).count();
        ok &= hits >= REQUIRED && slowest <= 1800.0;
        parts.push(format!(
            "{name} {hits}/{SEEDS} ≥ {PENDULUM_BAR} {} (slowest {slowest:.0}s)",
            fmt_list(&returns)
        ));
    }
    outcome(ok, parts.join("; "))
}

// C7 -------------------------------------------------------------------------

/// Mean per-episode real critic loss over the final third of the run.
fn late_critic_loss(dir: &Path, total_steps: usize) -> f64 {
    let rows = read_metrics(&dir.join("metrics.csv")).expect("metrics");
    let cut = total_steps * 2 / 3;
    let late: Vec<f64> = rows
        .iter()
        .filter(|r| r.timestep > cut)
        .filter_map(|r| r.critic_loss_real)
        .collect();
    late.iter().sum::<f64>() / late.len() as f64
}

fn c7_critic_loss(runs: &mut Runs) -> Outcome {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..SEEDS {
        let rw = late_critic_loss(
            &runs.get(&format!("pointmass-weak-rw-{seed}"), || pointmass(seed, true, true)).dir,
            POINTMASS_STEPS,
        );
        let nr = late_critic_loss(
            &runs.get(&format!("pointmass-weak-nr-{seed}"), || pointmass(seed, false, true)).dir,
            POINTMASS_STEPS,
        );
        wins += usize::from(rw < nr);
        pairs.push(format!("{rw:.4}/{nr:.4}"));
    }
    outcome(
        wins >= REQUIRED,
        format!(
            "reweighted lower in {wins}/{SEEDS} seeds (reweighted/unweighted: {})",
            pairs.join(", ")
        ),
    )
}

// C8 -------------------------------------------------------------------------

fn median_at(rows: &[ProbeRow], lambda: f64, depth: usize) -> f64 {
    rows.iter()
        .find(|r| r.lambda_e == lambda && r.depth == depth)
        .map(|r| r.weight_median)
        .expect("probe row")
}

/// Mean over depths of the per-depth median weight at one scale.
fn scale_level(rows: &[ProbeRow], lambda: f64) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| r.lambda_e == lambda).map(|r| r.weight_median).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn c8_weight_trends(runs: &mut Runs) -> Outcome {
    let mut depth_hits = 0;
    let mut scale_hits = 0;
    let mut notes = Vec::new();
    for seed in 0..SEEDS {
        let dir = runs.get(&format!("pendulum-reweighted-{seed}"), || pendulum(seed, true)).dir.clone();
        let ckpt = dir.join("checkpoint");
        let explore = load_checkpoint(&ckpt).expect("checkpoint").config.explore_scale;
        let opts = ProbeOptions {
            seed: 77 + seed,
            ..ProbeOptions::default()
        };
        let rows = run_weight_probe(&ckpt, &opts).expect("probe");
        let depths = rows.iter().map(|r| r.depth).max().expect("rows");
        let medians: Vec<f64> = (1..=depths).map(|d| median_at(&rows, explore, d)).collect();
        let non_increasing = medians.windows(2).filter(|w| w[1] <= w[0]).count();
        let depth_ok = non_increasing >= REQUIRED;
        let (lo, hi) = (scale_level(&rows, 0.1), scale_level(&rows, 100.0));
        let scale_ok = hi < lo;
        depth_hits += usize::from(depth_ok);
        scale_hits += usize::from(scale_ok);
        notes.push(format!(
            "s{seed}: {non_increasing}/{} pairs, λ0.1 {lo:.4} vs λ100 {hi:.4}",
            depths - 1
        ));
    }
    outcome(
        depth_hits >= REQUIRED && scale_hits >= REQUIRED,
        format!(
            "depth trend {depth_hits}/{SEEDS}, scale trend {scale_hits}/{SEEDS} ({})",
            notes.join("; ")
        ),
    )
}

// C9 -------------------------------------------------------------------------

fn c9_robustness(runs: &mut Runs) -> Outcome {
    let mut mean_of = |reweight: bool, weak: bool| -> f64 {
        let name = match (weak, reweight) {
            (true, true) => "weak-rw",
            (true, false) => "weak-nr",
            (false, true) => "full-rw",
            (false, false) => "full-nr",
        };
        let total: f64 = (0..SEEDS)
            .map(|seed| {
                runs.get(&format!("pointmass-{name}-{seed}"), || pointmass(seed, reweight, weak))
                    .eval_mean
            })
            .sum();
        total / SEEDS as f64
    };
    let (rw_full, rw_weak) = (mean_of(true, false), mean_of(true, true));
    let (nr_full, nr_weak) = (mean_of(false, false), mean_of(false, true));
    let degrade = |full: f64, weak: f64| (full - weak) / full.abs();
    let (d_rw, d_nr) = (degrade(rw_full, rw_weak), degrade(nr_full, nr_weak));
    outcome(
        d_nr > d_rw,
        format!(
            "degradation unweighted {d_nr:.3} vs reweighted {d_rw:.3} (mean eval full/weak: unweighted {nr_full:.2}/{nr_weak:.2}, reweighted {rw_full:.2}/{rw_weak:.2})"
        ),
    )
}

// C10 ------------------------------------------------------------------------

fn small(seed: u64) -> Config {
    Config {
        env: "pointmass".into(),
        seed,
        total_steps: 1_000,
        init_random_steps: 300,
        ..Config::default()
    }
}

fn c10_determinism() -> Outcome {
    let root = tempfile::tempdir().expect("tempdir");
    let read = |p: PathBuf| std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    let a = root.path().join("a");
    let b = root.path().join("b");
    run_training(small(21), &a, None).expect("run a");
    run_training(small(21), &b, None).expect("run b");
    let same = read(a.join("metrics.csv")) == read(b.join("metrics.csv"));

    let half = root.path().join("half");
    let resumed = root.path().join("resumed");
    let mut cfg = small(21);
    cfg.total_steps = 500;
    run_training(cfg, &half, None).expect("first half");
    run_training(small(21), &resumed, Some(&half.join("checkpoint"))).expect("resume");
    let resume_same = read(a.join("metrics.csv")) == read(resumed.join("metrics.csv"));
    let rows = read_metrics(&a.join("metrics.csv")).expect("metrics").len();
    outcome(
        same && resume_same,
        format!("rerun byte-identical: {same}; resume at step 500 byte-identical: {resume_same}; {rows} rows"),
    )
}

// ----------------------------------------------------------------------------

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| a.starts_with('C') || a.starts_with('c'))
        .map(|a| a.to_uppercase())
        .collect();
    let wanted = |id: &str| args.is_empty() || args.iter().any(|a| a == id);
    let mut runs = Runs::default();
    let criteria: Vec<(&str, &str, Box<dyn FnOnce(&mut Runs) -> Outcome>)> = vec![
        ("C1", "gradient oracles", Box::new(|_: &mut Runs| c1_gradient_oracles())),
        ("C2", "meta-gradient exactness", Box::new(|_: &mut Runs| c2_meta_gradient())),
        ("C3", "initial weights", Box::new(|_: &mut Runs| c3_initial_weights())),
        ("C4", "degenerate weights", Box::new(|_: &mut Runs| c4_degenerate_weights())),
        ("C5", "bootstrap statistics", Box::new(|_: &mut Runs| c5_bootstrap())),
        ("C6", "pendulum learning", Box::new(c6_learning)),
        ("C7", "critic-loss comparison", Box::new(c7_critic_loss)),
        ("C8", "weight trends", Box::new(c8_weight_trends)),
        ("C9", "robustness to a weak model", Box::new(c9_robustness)),
        ("C10", "determinism", Box::new(|_: &mut Runs| c10_determinism())),
    ];
    let mut lines = Vec::new();
    for (id, name, run) in criteria {
        if !wanted(id) {
            continue;
        }
        let start = Instant::now();
        let o = run(&mut runs);
        let line = format!(
            "{} {id} {name}: {} [{:.0}s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        println!("{line}");
        lines.push((o.passed, line));
    }
    println!("\nacceptance summary");
    for (_, line) in &lines {
        println!("  {line}");
    }
    let failed = lines.iter().filter(|(p, _)| !p).count();
    println!("{} criteria, {failed} failed", lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
