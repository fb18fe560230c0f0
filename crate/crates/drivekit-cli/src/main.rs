//! drivekit: generate towns, collect expert data, train the policy,
//! benchmark it closed-loop, and score episode logs.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use drivekit::agent::PolicyAgent;
use drivekit::checkpoint;
use drivekit::config::{preset_tasks, RunConfig};
use drivekit::episode::EpisodeLog;
use drivekit::eval::{
    driving_score, infraction_multiplier, route_completion, run_benchmark, ExpertDriver,
};
use drivekit::pipeline::{collect_dataset, run_single_episode};
use drivekit::policy::PolicyNet;
use drivekit::town::generate_town;
use drivekit::train::{train, TrainReport, ValidationSetup};
use drivekit::verify::run_engine_suite;

#[derive(Parser)]
#[command(name = "drivekit", version, about)]
struct Cli {
    /// JSON run configuration; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (also settable via DRIVEKIT_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel routes/collection (1 = fully serial).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate procedural town maps as JSON files.
    GenTowns(GenTownsArgs),
    /// Roll out the expert and record a training dataset.
    Collect(CollectArgs),
    /// Train the policy on a recorded dataset.
    Train(TrainArgs),
    /// Closed-loop benchmark of a checkpoint (or the expert) on a preset.
    Evaluate(EvaluateArgs),
    /// Single closed-loop rollout with a full episode-log dump.
    RunEpisode(RunEpisodeArgs),
    /// Score an existing episode log.
    ScoreLog(ScoreLogArgs),
    /// Run the autodiff engine verification suite.
    Gradcheck,
}

#[derive(Args)]
struct GenTownsArgs {
    /// Output directory for town_<seed>.json files.
    #[arg(long)]
    out: PathBuf,
    /// Town seeds to generate (defaults to the config's collection seeds).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args)]
struct CollectArgs {
    /// Dataset output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (with manifest.json).
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for checkpoints and the CSV log.
    #[arg(long)]
    out: PathBuf,
    /// Training epochs (overrides config).
    #[arg(long)]
    epochs: Option<u32>,
    /// Skip closed-loop validation between epochs.
    #[arg(long)]
    no_validation: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint to evaluate.
    #[arg(long, conflicts_with = "expert")]
    checkpoint: Option<PathBuf>,
    /// Evaluate the built-in expert instead of a checkpoint.
    #[arg(long)]
    expert: bool,
    /// Route preset: desk-tiny, desk-short or desk-long.
    #[arg(long, default_value = "desk-tiny")]
    preset: String,
    /// Write the benchmark report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dump per-route episode logs into this directory.
    #[arg(long)]
    logs: Option<PathBuf>,
}

#[derive(Args)]
struct RunEpisodeArgs {
    #[arg(long, conflicts_with = "expert")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    expert: bool,
    #[arg(long, default_value = "desk-tiny")]
    preset: String,
    /// Route index within the preset.
    #[arg(long, default_value_t = 0)]
    route_index: usize,
    /// Episode log output path (JSON lines).
    #[arg(long)]
    log: PathBuf,
}

#[derive(Args)]
struct ScoreLogArgs {
    /// Episode log to score.
    #[arg(long)]
    log: PathBuf,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut run = match &cli.config {
        Some(path) => RunConfig::from_file(path).map_err(|e| anyhow!(e))?,
        None => RunConfig::default(),
    };
    if let Ok(env_seed) = std::env::var("DRIVEKIT_SEED") {
        run.seed = env_seed
            .parse()
            .context("DRIVEKIT_SEED must be an unsigned integer")?;
    }
    if let Some(seed) = cli.seed {
        run.seed = seed;
    }
    if let Some(workers) = cli.workers {
        run.workers = workers.max(1);
    }
    run.train.seed = run.seed;
    Ok(run)
}

fn load_policy(path: &PathBuf) -> Result<(PolicyNet, String)> {
    let ckpt = checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    let net = PolicyNet::from_parts(ckpt.store, ckpt.encoder)?;
    Ok((net, ckpt.fingerprint))
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let run = load_config(&cli)?;
    match &cli.command {
        Command::GenTowns(args) => {
            std::fs::create_dir_all(&args.out)?;
            let seeds = args
                .seeds
                .clone()
                .unwrap_or_else(|| run.collect.town_seeds.clone());
            for seed in seeds {
                let town = generate_town(seed, &run.town_gen);
                let path = args.out.join(format!("town_{seed}.json"));
                std::fs::write(&path, town.to_json())?;
                println!(
                    "wrote {} ({} lanes, {} lights)",
                    path.display(),
                    town.lanes.len(),
                    town.lights.len()
                );
            }
            Ok(0)
        }

        Command::Collect(args) => {
            let manifest = collect_dataset(&run, &args.out, run.workers)?;
            let incomplete = manifest.routes.iter().filter(|r| !r.complete).count();
            println!(
                "recorded {} frames over {} routes into {} (fingerprint {})",
                manifest.total_frames,
                manifest.routes.len(),
                args.out.display(),
                manifest.fingerprint
            );
            if incomplete > 0 {
                println!("warning: {incomplete} routes flagged incomplete");
            }
            Ok(0)
        }

        Command::Train(args) => {
            let manifest = drivekit::dataset::DatasetManifest::read(&args.dataset)?;
            let mut cfg = run.train.clone();
            if let Some(e) = args.epochs {
                cfg.epochs = e;
            }
            let mut net = PolicyNet::new(run.encoder.clone(), run.seed)?;
            let validation = if args.no_validation {
                None
            } else {
                Some(ValidationSetup {
                    tasks: preset_tasks(&run, "desk-tiny").map_err(|e| anyhow!(e))?,
                    sim: run.sim.clone(),
                    eval: run.eval.clone(),
                    penalties: run.penalties,
                    controller: run.controller.clone(),
                    weather: run.eval_weather,
                    workers: run.workers,
                    seed: run.seed,
                })
            };
            let report = train(
                &mut net,
                &args.dataset,
                &manifest,
                &cfg,
                validation.as_ref(),
                Some(&args.out),
                &run.fingerprint(),
            )?;
            print_train_report(&report);
            Ok(0)
        }

        Command::Evaluate(args) => {
            let tasks = preset_tasks(&run, &args.preset).map_err(|e| anyhow!(e))?;
            let fingerprint = run.fingerprint();
            let (report, logs) = if args.expert {
                run_benchmark(
                    &tasks,
                    || ExpertDriver {
                        config: run.expert.clone(),
                    },
                    &run.sim,
                    &run.eval,
                    &run.penalties,
                    run.seed,
                    &fingerprint,
                    run.workers,
                )
            } else {
                let path = args
                    .checkpoint
                    .as_ref()
                    .ok_or_else(|| anyhow!("pass --checkpoint <path> or --expert"))?;
                let (net, _) = load_policy(path)?;
                run_benchmark(
                    &tasks,
                    || PolicyAgent::new(&net, run.controller.clone(), run.eval_weather),
                    &run.sim,
                    &run.eval,
                    &run.penalties,
                    run.seed,
                    &fingerprint,
                    run.workers,
                )
            };
            print!("{}", report.format_table());
            if let Some(out) = &args.out {
                std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
                println!("report written to {}", out.display());
            }
            if let Some(dir) = &args.logs {
                std::fs::create_dir_all(dir)?;
                for log in &logs {
                    log.write_file(&dir.join(format!("{}.jsonl", log.header.route_id)))?;
                }
            }
            Ok(0)
        }

        Command::RunEpisode(args) => {
            let tasks = preset_tasks(&run, &args.preset).map_err(|e| anyhow!(e))?;
            let task = tasks
                .get(args.route_index)
                .ok_or_else(|| anyhow!("route index {} out of range", args.route_index))?;
            let (result, log) = if args.expert {
                let mut driver = ExpertDriver {
                    config: run.expert.clone(),
                };
                run_single_episode(&run, task, &mut driver)
            } else {
                let path = args
                    .checkpoint
                    .as_ref()
                    .ok_or_else(|| anyhow!("pass --checkpoint <path> or --expert"))?;
                let (net, _) = load_policy(path)?;
                let mut driver = PolicyAgent::new(&net, run.controller.clone(), run.eval_weather);
                run_single_episode(&run, task, &mut driver)
            };
            log.write_file(&args.log)?;
            println!(
                "route {}: RC {:.2} IM {:.3} DS {:.2} ({:?}); log → {}",
                result.route_id,
                result.rc_percent,
                result.im,
                result.ds,
                result.termination,
                args.log.display()
            );
            Ok(0)
        }

        Command::ScoreLog(args) => {
            let log = EpisodeLog::read_file(&args.log)?;
            let rc = route_completion(&log);
            let events = log.all_infractions();
            let im = infraction_multiplier(&events, &run.penalties);
            let ds = driving_score(&[(rc, im)])?;
            println!("route {}", log.header.route_id);
            println!("RC {rc:.3}");
            println!("IM {im:.3}");
            println!("DS {ds:.1}");
            if let Some(end) = &log.end {
                println!("termination {:?}", end.reason);
            }
            Ok(0)
        }

        Command::Gradcheck => {
            let checks = run_engine_suite();
            let mut failed = 0;
            for c in &checks {
                println!(
                    "[{}] {} — {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                if !c.passed {
                    failed += 1;
                }
            }
            println!("{}/{} checks passed", checks.len() - failed, checks.len());
            if failed > 0 {
                bail!("{failed} gradcheck failures");
            }
            Ok(0)
        }
    }
}

fn print_train_report(report: &TrainReport) {
    for e in &report.epochs {
        match e.val_ds {
            Some(ds) => println!(
                "epoch {:>3}  lr {:.2e}  loss {:.4}  val DS {:.2}",
                e.epoch, e.lr, e.train_loss, ds
            ),
            None => println!(
                "epoch {:>3}  lr {:.2e}  loss {:.4}",
                e.epoch, e.lr, e.train_loss
            ),
        }
    }
    if let (Some(epoch), Some(ds)) = (report.best_epoch, report.best_ds) {
        println!("best checkpoint: epoch {epoch} (DS {ds:.2})");
        if let Some(p) = &report.best_checkpoint {
            println!("saved at {}", p.display());
        }
    }
}
