use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rewpe_sac::harness::{
    parse_lambdas, run_eval, run_gradcheck, run_training, run_weight_probe, write_weights_csv, Config, ProbeOptions,
    Scope,
};
use rewpe_sac::{par, Result};

#[derive(Parser)]
#[command(name = "rewpe", version, about = "Model-based SAC with learned reweighting of imaginary transitions")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent, writing metrics.csv and checkpoints under --out.
    Train {
        /// TOML config; defaults are used for missing keys or when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Train on unweighted imaginary data.
        #[arg(long)]
        no_reweight: bool,
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Finite-difference gradient suites.
    Gradcheck {
        #[arg(long, value_parser = parse_scope)]
        scope: Scope,
    },
    /// Deterministic-policy returns of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Median predicted weight per explore scale and rollout depth.
    ProbeWeights {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "0.1,1,3,10,30,100")]
        lambdas: String,
        #[arg(long)]
        out: PathBuf,
        /// Rollout length; defaults to the run's horizon plus one.
        #[arg(long)]
        depths: Option<usize>,
        #[arg(long, default_value_t = 256)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_scope(s: &str) -> std::result::Result<Scope, String> {
    s.parse().map_err(|e: rewpe_sac::Error| e.to_string())
}

fn run(cli: Cli) -> Result<bool> {
    par::set_sequential(cli.sequential);
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            no_reweight,
            steps,
            resume,
        } => {
            let mut cfg = match &config {
                Some(p) => Config::load(p)?,
                None => Config::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = steps {
                cfg.total_steps = n;
            }
            if no_reweight {
                cfg.reweight_enabled = false;
            }
            let t = run_training(cfg, &out, resume.as_deref())?;
            println!("trained {} steps, {} episodes -> {}", t.timestep, t.episode, out.display());
            Ok(true)
        }
        Command::Gradcheck { scope } => {
            let rep = run_gradcheck(scope)?;
            for c in &rep.checks {
                println!(
                    "{:<4} {:<12} rel_err {:.3e} (tol {:.0e})",
                    if c.passed { "ok" } else { "FAIL" },
                    c.name,
                    c.max_rel_err,
                    c.tolerance
                );
            }
            println!(
                "negative control {}",
                if rep.control_rejected { "rejected (ok)" } else { "ACCEPTED (FAIL)" }
            );
            let failed = rep.checks.iter().filter(|c| !c.passed).count();
            println!("{scope}: {} checks, {failed} failed, worst rel_err {:.3e}", rep.checks.len(), rep.worst());
            Ok(rep.passed())
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            let rep = run_eval(&checkpoint, episodes, seed)?;
            println!("episodes {episodes} mean {:.4} std {:.4}", rep.mean, rep.std);
            Ok(true)
        }
        Command::ProbeWeights {
            checkpoint,
            lambdas,
            out,
            depths,
            rollouts,
            seed,
        } => {
            let opts = ProbeOptions {
                lambdas: parse_lambdas(&lambdas)?,
                depths,
                rollouts,
                seed,
            };
            let rows = run_weight_probe(&checkpoint, &opts)?;
            write_weights_csv(&out, &rows)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
