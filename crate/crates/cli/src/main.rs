//! `squirl`: generate demonstrations, train, evaluate and self-check.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use squirl_core::data::{load_demos, save_demos};
use squirl_core::evaluation::{aggregate_success, eval_tasks, evaluate, generate_demos, mean_std, EvalTask, Split};
use squirl_core::verify::{run_all, VerifyOptions};
use squirl_core::{run, Algo, Checkpoint, DemoSet, Profile, RunConfig};

/// Name of the file present in a training directory until the run completes.
const PARTIAL_MARKER: &str = "PARTIAL";
const CHECKPOINT_FILE: &str = "checkpoint.sqrl";

#[derive(Parser)]
#[command(name = "squirl", version, about = "One-shot meta-imitation with a soft-Q discriminator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one expert demonstration per training task.
    GenDemos {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output demo file.
        #[arg(long, default_value = "demos.txt")]
        out: PathBuf,
    },
    /// Train a learner from a demo file.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        demos: PathBuf,
        /// Output directory for the checkpoint and metrics.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Success rates of one or more checkpoints, one per training seed.
    Eval {
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
        /// Training demos; needed for the seen split.
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long, default_value = "unseen", value_parser = parse_split)]
        split: Split,
        #[arg(long, default_value_t = 500)]
        n_rollouts: usize,
        /// Number of test tasks drawn for the unseen split.
        #[arg(long, default_value_t = 20)]
        n_tasks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Std of Gaussian noise added to observations during evaluation.
        #[arg(long, default_value_t = 0.0)]
        obs_noise: f64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the gradient, equivalence and tabular checks.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value config file; its `profile=` line picks the base profile.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_profile)]
    profile: Option<Profile>,
    #[arg(long, value_parser = parse_algo)]
    algo: Option<Algo>,
    #[arg(long)]
    seed: Option<u64>,
    /// Further key=value overrides, applied last.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    Profile::parse(s).ok_or_else(|| format!("unknown profile `{s}` (desk, paper)"))
}

fn parse_algo(s: &str) -> Result<Algo, String> {
    let names: Vec<_> = Algo::ALL.iter().map(|a| a.name()).collect();
    Algo::parse(s).ok_or_else(|| format!("unknown algo `{s}` ({})", names.join(", ")))
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split `{s}` (seen, unseen)"))
}

impl ConfigArgs {
    /// Profile, then config file, then flags, then overrides.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let cfg = RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?;
                if let Some(p) = self.profile {
                    if p != cfg.profile {
                        bail!("--profile {} conflicts with profile={} in {}", p.name(), cfg.profile.name(), path.display());
                    }
                }
                cfg
            }
            None => RunConfig::for_profile(self.profile.unwrap_or(Profile::Desk)),
        };
        if let Some(algo) = self.algo {
            cfg = cfg.with_algo(algo);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').with_context(|| format!("override `{kv}` is not key=value"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn gen_demos(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let family = cfg.task_family();
    let tasks = family.train_tasks();
    let (demos, success) = generate_demos(&family, &tasks, cfg.seed)?;
    println!("task_id,task_param,steps,success");
    for (spec, ok) in tasks.iter().zip(&success) {
        println!("{},{},{},{}", spec.task_id, spec.task_param, demos.get(spec.task_id)?.len(), ok);
    }
    save_demos(&demos, out).with_context(|| format!("writing {}", out.display()))?;
    let n_ok = success.iter().filter(|&&s| s).count();
    eprintln!("{n_ok}/{} expert demos succeeded; wrote {}", success.len(), out.display());
    Ok(n_ok == success.len())
}

fn train(cfg: &RunConfig, demos_path: &Path, out: &Path) -> Result<()> {
    let demos = load_demos(demos_path).with_context(|| format!("reading demos {}", demos_path.display()))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let marker = out.join(PARTIAL_MARKER);
    fs::write(&marker, format!("training {} with seed {} did not finish\n", cfg.algo.name(), cfg.seed))?;
    let result = run(cfg, &demos)?;
    Checkpoint {
        config: cfg.clone(),
        trained: result.trained,
    }
    .save(&out.join(CHECKPOINT_FILE))?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    fs::write(out.join("metrics.csv"), result.metrics.to_csv())?;
    fs::write(out.join("timing.csv"), result.metrics.timing_csv())?;
    fs::remove_file(&marker)?;
    eprintln!(
        "trained {} for {} epochs with {} robot trials; wrote {}",
        cfg.algo.name(),
        result.metrics.len(),
        result.robot_trials,
        out.display()
    );
    Ok(())
}

struct EvalArgs<'a> {
    demos: Option<&'a Path>,
    split: Split,
    n_rollouts: usize,
    n_tasks: usize,
    seed: u64,
    obs_noise: f64,
}

/// Per-task rows, then an aggregate row. Each success rate is averaged over
/// checkpoints; the std is across checkpoints.
fn eval(checkpoints: &[PathBuf], args: &EvalArgs) -> Result<String> {
    let mut csv = String::from("task_id,task_param,success_mean,success_std,n_checkpoints,n_rollouts\n");
    let loaded = checkpoints
        .iter()
        .map(|p| Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    if args.n_rollouts == 0 {
        return Ok(csv);
    }
    let family = loaded[0].config.task_family();
    if let Some(c) = loaded.iter().find(|c| c.config.task_family() != family) {
        bail!("checkpoints disagree on the task family ({:?} vs {:?})", family.kind, c.config.family);
    }
    let train_demos = match (args.split, args.demos) {
        (_, Some(path)) => load_demos(path).with_context(|| format!("reading demos {}", path.display()))?,
        (Split::Seen, None) => bail!("--demos is required for the seen split"),
        (Split::Unseen, None) => DemoSet::new(family.obs_dim(), family.action_dim()),
    };
    let tasks: Vec<EvalTask> = eval_tasks(&family, args.split, &train_demos, args.n_tasks, args.seed)?;

    let mut per_task = vec![Vec::with_capacity(loaded.len()); tasks.len()];
    let mut overall = Vec::with_capacity(loaded.len());
    for ckpt in &loaded {
        let results = evaluate(&ckpt.config, &ckpt.trained, &tasks, args.n_rollouts, args.seed, args.obs_noise)?;
        for (acc, r) in per_task.iter_mut().zip(&results) {
            acc.push(r.report.success_rate());
        }
        overall.push(aggregate_success(&results));
    }
    let n = loaded.len();
    for (task, rates) in tasks.iter().zip(&per_task) {
        let (m, s) = mean_std(rates);
        writeln!(csv, "{},{},{m:.6},{s:.6},{n},{}", task.spec.task_id, task.spec.task_param, args.n_rollouts)?;
    }
    let (m, s) = mean_std(&overall);
    writeln!(csv, "aggregate,,{m:.6},{s:.6},{n},{}", args.n_rollouts * tasks.len())?;
    Ok(csv)
}

fn oracle_check(seed: u64, inject_sign_flip: bool) -> Result<bool> {
    let results = run_all(VerifyOptions {
        inject_irl_sign_flip: inject_sign_flip,
        seed,
    })?;
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!("{verdict}  {:width$}  {}", r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenDemos { config, out } => config.resolve().and_then(|cfg| gen_demos(&cfg, &out)),
        Command::Train { config, demos, out } => config.resolve().and_then(|cfg| train(&cfg, &demos, &out)).map(|()| true),
        Command::Eval {
            checkpoints,
            demos,
            split,
            n_rollouts,
            n_tasks,
            seed,
            obs_noise,
            out,
        } => {
            let args = EvalArgs {
                demos: demos.as_deref(),
                split,
                n_rollouts,
                n_tasks,
                seed,
                obs_noise,
            };
            eval(&checkpoints, &args).and_then(|csv| {
                match out {
                    Some(path) => fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?,
                    None => print!("{csv}"),
                }
                Ok(true)
            })
        }
        Command::OracleCheck { seed, inject_sign_flip } => oracle_check(seed, inject_sign_flip),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
