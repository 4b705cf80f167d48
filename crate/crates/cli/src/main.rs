use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use scpo::experiment::{run_experiment, run_reachable, ExperimentConfig, ModeKind};

const SCHEMAS: &str = "\
Output files (comma-delimited, header row, decimal notation):

  log.csv            epoch,loss,loss_after,violation_l1,violation_pos,max_g,alpha,
                     status,step_norm,descent_lhs,l_vector,doublings,backtracks,
                     batch_size,wall_ms
                     (l_vector is ';'-separated; status is one of raw-step-feasible,
                     projected, zero-step, infeasible-fallback, rolled-back,
                     unconstrained)
  curve.csv          regression: x,policy,target,bound
                     double-integrator: policy,trajectory,k,x1,x2,u,stage_cost,total_cost
                     (policy is safe, theta or expert; u and stage_cost are empty
                     on the final state of each trajectory)
  mask_*.csv         x1,x2,flag   (flag 1 = reaches the target without leaving
                     the state box; files mask_safe, mask_theta, mask_expert)
  final_policy.ckpt  binary parameter checkpoint with the echoed config
  checkpoints/       epoch-NNNN.ckpt after NNNN completed epochs
  config.json        fully resolved configuration
";

#[derive(Parser)]
#[command(name = "scpo", version, about = "Safe policy training by weight-space projection", after_help = SCHEMAS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with the mode given in the config.
    Run(RunArgs),
    /// Train with the soft-penalty baseline (regression only).
    Baseline(RunArgs),
    /// Reachable-set masks for the backup, a trained policy and the expert.
    Reachable(ReachArgs),
}

#[derive(Args)]
#[command(after_help = SCHEMAS)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the per-epoch progress line.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
#[command(after_help = SCHEMAS)]
struct ReachArgs {
    #[arg(long)]
    config: PathBuf,
    /// Policy checkpoint, e.g. <run>/final_policy.ckpt.
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn out_dir(config: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_run(args: RunArgs, mode: Option<ModeKind>) -> Result<()> {
    let mut config = load(&args.config, args.seed)?;
    if let Some(m) = mode {
        config.mode = m;
    }
    config.validate()?;
    let dir = out_dir(&config, args.out);
    let quiet = args.quiet;
    let run = run_experiment(&config, &dir, |r| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  loss {:.6}  max_g {:+.3e}  alpha {:.4}  {}",
                r.epoch, r.loss_after, r.max_g, r.alpha, r.status
            );
        }
    })
    .context("training failed")?;
    let worst = run
        .outcome
        .log
        .records
        .iter()
        .map(|r| r.max_g)
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "wrote {} ({} epochs, {:.1}s, worst max_g {:.3e})",
        dir.display(),
        run.outcome.log.records.len(),
        run.elapsed_s,
        worst
    );
    Ok(())
}

fn cmd_reachable(args: ReachArgs) -> Result<()> {
    let config = load(&args.config, args.seed)?;
    if !args.policy.exists() {
        bail!("policy checkpoint {} does not exist", args.policy.display());
    }
    let dir = out_dir(&config, args.out);
    let counts = run_reachable(&config, &args.policy, &dir)?;
    println!("{}", serde_json::to_string(&counts)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => cmd_run(a, None),
        Command::Baseline(a) => cmd_run(a, Some(ModeKind::SoftPenalty)),
        Command::Reachable(a) => cmd_reachable(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
