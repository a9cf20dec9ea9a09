use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use fedoffload::baselines::{agent_policy, knapsack_optimal, special_case_env_check, train_special_case, SpecialCaseScenario};
use fedoffload::error::{Error, Result};
use fedoffload::simctl::{self, config, Mode};

/// Edge offloading simulator with federated double-DQN agents.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment once.
    Run(#[command(flatten)] Common),
    /// Repeat the experiment for each value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted parameter path, e.g. `agent.epsilon` or `system.p_t`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        /// Seeded repetitions per value.
        #[arg(long, default_value_t = 20)]
        reps: u64,
    },
    /// Run several modes on identical seeds and tabulate them.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated modes: fl, centralized, greedy.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        modes: Vec<Mode>,
    },
    /// Train on the frozen knapsack scenario and report the optimality ratio.
    Oracle(#[command(flatten)] Common),
}

fn load(common: &Common) -> Result<simctl::ExperimentConfig> {
    let mut cfg = config::load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct OracleReport {
    costs: Vec<usize>,
    utilities: Vec<f64>,
    budget: usize,
    optimum: f64,
    optimal_set: Vec<usize>,
    ratios: Vec<f64>,
    mean_ratio: f64,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = load(&common)?;
            let result = simctl::run(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&result.summary)?);
            info!("wrote {}", cfg.out_dir.display());
        }
        Command::Sweep {
            common,
            param,
            values,
            reps,
        } => {
            let text = std::fs::read_to_string(&common.config).map_err(|e| Error::io(&common.config, e))?;
            let doc: toml::Value = toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
            let out = match &common.out {
                Some(o) => o.clone(),
                None => config::config_from_value(doc.clone())?.out_dir,
            };
            let report = simctl::sweep(&doc, &param, &values, reps, common.seed)?;
            simctl::write_sweep(&report, &out)?;
            for p in &report.points {
                println!(
                    "{param} = {:>8}  utility {:.6} +/- {:.6} (n = {})",
                    p.value, p.mean_utility, p.std_utility, p.reps
                );
            }
        }
        Command::Compare { common, modes } => {
            let cfg = load(&common)?;
            let cmp = simctl::compare(&cfg, &modes)?;
            simctl::write_comparison(&cmp, &cfg.out_dir)?;
            for r in &cmp.results {
                println!(
                    "{:<12} utility {:.6}  std {:.6}  drops {:.4}  payment {:.6}",
                    r.mode.as_str(),
                    r.final_window.utility_mean,
                    r.final_window.utility_std,
                    r.final_window.drops_mean,
                    r.final_window.payment_mean
                );
            }
        }
        Command::Oracle(common) => {
            let cfg = load(&common)?;
            let o = &cfg.oracle;
            let scenario = SpecialCaseScenario::from_cycles(&o.cycles, o.budget, &cfg.system)?;
            let (optimum, optimal_set) = knapsack_optimal(&scenario.instance)?;
            let mut ratios = Vec::new();
            for k in 0..o.seeds {
                let agent = train_special_case(&scenario, o.agent.clone(), o.epochs, cfg.seed.wrapping_add(k))?;
                let ratio = special_case_env_check(agent_policy(&agent), &scenario)?;
                println!("seed {:>4}  ratio {ratio:.6}", cfg.seed.wrapping_add(k));
                ratios.push(ratio);
            }
            let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
            println!("mean ratio {mean_ratio:.6} (optimum {optimum:.6}, set {optimal_set:?})");
            write_json(
                &cfg.out_dir.join("oracle.json"),
                &OracleReport {
                    costs: scenario.instance.costs.clone(),
                    utilities: scenario.instance.utilities.clone(),
                    budget: scenario.instance.budget,
                    optimum,
                    optimal_set,
                    ratios,
                    mean_ratio,
                },
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
