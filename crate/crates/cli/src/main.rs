use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Args, Parser, Subcommand};
use drs_core::grid::{EnvId, Pos};
use drs_core::harness::{self, Phase, RunConfig};
use drs_core::Error;

#[derive(Parser)]
#[command(name = "drs", version, about = "Learn dense rewards from stage indicators and reuse them")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Learn a reward while training an agent; writes reward and policy checkpoints.
    LearnReward(RunArgs),
    /// Train fresh agents with a frozen reward.
    ReuseReward(RunArgs),
    /// Continue training a saved policy.
    Finetune(RunArgs),
    /// Check greedy optimality of a tabular success/failure reward.
    TabularVerify(RunArgs),
    /// Write expert demonstrations as CSV.
    GenDemos(RunArgs),
    /// Write the per-cell, per-action reward of a navigation map as CSV.
    ExportHeatmap {
        reward_ckpt: PathBuf,
        env_id: String,
        out_path: PathBuf,
        /// Goal cell as `x,y`; defaults to the centre of the top room.
        #[arg(long)]
        goal: Option<String>,
    },
    /// Greedy success rate of a saved policy.
    Eval {
        policy_ckpt: PathBuf,
        env_id: String,
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Run only this seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Launch each seed as a separate process.
    #[arg(long, conflicts_with = "seed")]
    processes: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}

fn run(cmd: Cmd) -> drs_core::Result<()> {
    match cmd {
        Cmd::LearnReward(a) => run_phase(a, Phase::LearnReward),
        Cmd::ReuseReward(a) => run_phase(a, Phase::ReuseReward),
        Cmd::Finetune(a) => run_phase(a, Phase::Finetune),
        Cmd::TabularVerify(a) => run_phase(a, Phase::TabularVerify),
        Cmd::GenDemos(a) => run_phase(a, Phase::GenDemos),
        Cmd::ExportHeatmap {
            reward_ckpt,
            env_id,
            out_path,
            goal,
        } => {
            let env: EnvId = env_id.parse()?;
            let goal = goal.as_deref().map(parse_goal).transpose()?;
            let rows = harness::export_heatmap(&reward_ckpt, env, &out_path, goal)?;
            println!("{rows} cells -> {}", out_path.display());
            Ok(())
        }
        Cmd::Eval {
            policy_ckpt,
            env_id,
            episodes,
            seed,
        } => {
            let rate = harness::eval_checkpoint(&policy_ckpt, env_id.parse()?, episodes, seed)?;
            println!("success_rate {rate}");
            Ok(())
        }
    }
}

fn parse_goal(s: &str) -> drs_core::Result<Pos> {
    let bad = || Error::Config(format!("goal must be x,y, got {s:?}"));
    let (x, y) = s.split_once(',').ok_or_else(bad)?;
    Ok(Pos::new(
        x.trim().parse().map_err(|_| bad())?,
        y.trim().parse().map_err(|_| bad())?,
    ))
}

fn run_phase(args: RunArgs, phase: Phase) -> drs_core::Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if cfg.phase != phase {
        return Err(Error::Config(format!(
            "{} declares phase {:?}, not {phase:?}",
            args.config.display(),
            cfg.phase
        )));
    }
    if let Some(seed) = args.seed {
        if !cfg.seeds.contains(&seed) {
            return Err(Error::Config(format!("seed {seed} is not listed in the config")));
        }
        cfg = cfg.for_seed(seed);
    }
    if args.processes {
        return spawn_seeds(&args.config, &cfg);
    }
    let root = harness::output_root();
    for s in harness::execute(&cfg, &root)? {
        match s.score {
            Some(v) => println!("seed {} -> {} (score {v})", s.seed, s.dir.display()),
            None => println!("seed {} -> {}", s.seed, s.dir.display()),
        }
    }
    Ok(())
}

fn spawn_seeds(config: &Path, cfg: &RunConfig) -> drs_core::Result<()> {
    let exe = std::env::current_exe().map_err(|e| Error::Io {
        path: PathBuf::from("current executable"),
        source: e,
    })?;
    let sub = std::env::args().nth(1).unwrap_or_default();
    let children = cfg
        .seeds
        .iter()
        .map(|seed| {
            Command::new(&exe)
                .arg(&sub)
                .arg(config)
                .arg("--seed")
                .arg(seed.to_string())
                .spawn()
                .map_err(|e| Error::Io {
                    path: exe.clone(),
                    source: e,
                })
        })
        .collect::<drs_core::Result<Vec<_>>>()?;
    let mut worst = 0;
    for mut child in children {
        let code = child
            .wait()
            .map_err(|e| Error::Io {
                path: exe.clone(),
                source: e,
            })?
            .code()
            .unwrap_or(1);
        worst = worst.max(code);
    }
    if worst != 0 {
        std::process::exit(worst);
    }
    Ok(())
}
