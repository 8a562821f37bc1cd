//! `mpbs` command line: run a restoration scenario, sweep block inrush
//! against closing angle, or validate fixture files.
//!
//! Exit codes: 0 success, 2 config error, 3 parse/validation error,
//! 4 solver failure, 5 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mpbs_core::builder::BuildConfig;
use mpbs_core::engine::{BlockPersistence, Engine, EngineConfig, SolverBackend, VredPersistence};
use mpbs_core::error::CoreError;
use mpbs_core::feeder::parse_feeder;
use mpbs_core::inrush::sweep_block;
use mpbs_core::scenario::load_scenario;
use mpbs_core::{report, CoreError as E};

#[derive(Parser)]
#[command(name = "mpbs", version, about = "DER-led black-start restoration simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the receding-horizon restoration loop and write artifacts.
    Run {
        #[arg(long)]
        feeder: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory for log.json and the CSV artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Solver backend: `embedded` or `external:<command>`.
        #[arg(long, default_value = "embedded")]
        solver: String,
        /// Prediction window length in steps.
        #[arg(long, default_value_t = 4)]
        tc: usize,
        /// Mitigation re-solve cap per step.
        #[arg(long, default_value_t = 3)]
        iter_cap: usize,
        /// Seed for multiplicative forecast noise; omitted = perfect foresight.
        #[arg(long)]
        seed: Option<u64>,
        /// Noise fraction on the PV rate when a seed is given.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Evaluate inrush but never mitigate (ablation mode).
        #[arg(long)]
        no_mitigation: bool,
        /// Voltage reduction persistence: `clpu-window` or `step`.
        #[arg(long, default_value = "clpu-window")]
        vred_persist: String,
        /// Switch blocking persistence: `step` or `always`.
        #[arg(long, default_value = "step")]
        block_persist: String,
        /// Apply reduced voltage per flagged lateral instead of the
        /// all-laterals product.
        #[arg(long)]
        per_lateral_vred: bool,
        /// Worst-case angle search resolution in degrees.
        #[arg(long, default_value_t = 1.0)]
        angle_grid: f64,
    },
    /// Sweep a block's aggregate peak inrush against the closing angle.
    Inrush {
        #[arg(long)]
        feeder: PathBuf,
        /// Block id to energize.
        #[arg(long)]
        block: String,
        /// Comma-separated closing angles in degrees, or `grid` for 0..359.
        #[arg(long, default_value = "0,30,60,90")]
        angles: String,
        /// Write the sweep table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a feeder (and optionally a scenario) against every invariant.
    Validate {
        #[arg(long)]
        feeder: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, CoreError> {
    match cli.command {
        Command::Run {
            feeder,
            scenario,
            out,
            solver,
            tc,
            iter_cap,
            seed,
            noise,
            no_mitigation,
            vred_persist,
            block_persist,
            per_lateral_vred,
            angle_grid,
        } => {
            if tc == 0 {
                return Err(E::Config("--tc must be at least 1".into()));
            }
            let graph = parse_feeder(&feeder)?;
            let scen = load_scenario(&scenario, &graph)?;
            let backend = parse_backend(&solver)?;
            let config = EngineConfig {
                t_c: tc,
                iter_cap,
                mitigation_enabled: !no_mitigation,
                angle_grid_deg: angle_grid,
                noise: seed.map(|s| (noise, s)),
                solver: backend,
                vred_persistence: match vred_persist.as_str() {
                    "clpu-window" => VredPersistence::ClpuWindow,
                    "step" => VredPersistence::StepOnly,
                    other => {
                        return Err(E::Config(format!(
                            "--vred-persist {other:?}: expected clpu-window or step"
                        )))
                    }
                },
                block_persistence: match block_persist.as_str() {
                    "step" => BlockPersistence::StepOnly,
                    "always" => BlockPersistence::Always,
                    other => {
                        return Err(E::Config(format!(
                            "--block-persist {other:?}: expected step or always"
                        )))
                    }
                },
                build: BuildConfig {
                    per_lateral_vred,
                    ..Default::default()
                },
                diag_dir: Some(out.clone()),
            };
            let engine = Engine::new(&graph, &scen, config);
            let (log, _) = engine.run()?;
            report::write_all(&log, &graph, &out)?;

            let mut warned = false;
            for step in &log.steps {
                let last = step.iterations.last();
                let flagged = last.map_or(false, |it| {
                    it.mg_reports.iter().any(|r| {
                        r.recloser_flags.iter().any(|x| *x)
                            || r.laterals.iter().any(|l| l.flags.iter().any(|x| *x))
                    })
                });
                if flagged {
                    eprintln!(
                        "warning: step {} executed with protection flags (mitigation {})",
                        step.step,
                        if no_mitigation { "disabled" } else { "exhausted" }
                    );
                    warned = true;
                }
                if step.executed.held {
                    eprintln!("warning: step {} held, no switching executed", step.step);
                    warned = true;
                }
            }
            println!(
                "run complete: {} steps, termination {:?}, artifacts in {}",
                log.steps.len(),
                log.termination,
                out.display()
            );
            let _ = warned;
            Ok(ExitCode::SUCCESS)
        }
        Command::Inrush {
            feeder,
            block,
            angles,
            out,
        } => {
            let graph = parse_feeder(&feeder)?;
            let block_id = graph
                .block_by_name(&block)
                .ok_or_else(|| E::Config(format!("unknown block {block}")))?;
            let angle_list: Vec<f64> = if angles == "grid" {
                (0..360).map(f64::from).collect()
            } else {
                angles
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| E::Config(format!("bad angle {s:?}")))
                    })
                    .collect::<Result<_, _>>()?
            };
            let sweep = sweep_block(&graph, block_id, &angle_list, &graph.transformers, 1.0)?;
            let csv = report::sweep_csv(&sweep, &graph);
            match out {
                Some(path) => std::fs::write(&path, csv)
                    .map_err(|e| E::Io(format!("{}: {e}", path.display())))?,
                None => print!("{csv}"),
            }
            eprintln!("theta_wc = {} deg", sweep.theta_wc_deg);
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { feeder, scenario } => {
            let mut violations = Vec::new();
            let text = std::fs::read_to_string(&feeder)
                .map_err(|e| E::Io(format!("{}: {e}", feeder.display())))?;
            let parsed: Result<mpbs_core::feeder::FeederFile, _> = serde_json_from(&text);
            match parsed {
                Err(e) => violations.push(format!("feeder schema: {e}")),
                Ok(file) => match mpbs_core::feeder::build_graph(file) {
                    Err(e) => violations.push(e.to_string()),
                    Ok(graph) => {
                        if let Some(path) = scenario {
                            if let Err(e) = load_scenario(&path, &graph) {
                                violations.push(e.to_string());
                            }
                        }
                    }
                },
            }
            if violations.is_empty() {
                println!("0 violations");
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &violations {
                    println!("violation: {v}");
                }
                println!("{} violation(s)", violations.len());
                Ok(ExitCode::from(3))
            }
        }
    }
}

fn serde_json_from(text: &str) -> Result<mpbs_core::feeder::FeederFile, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}

fn parse_backend(s: &str) -> Result<SolverBackend, CoreError> {
    if let Ok(v) = std::env::var("MPBS_EXTERNAL_SOLVER") {
        if !v.is_empty() {
            return Ok(SolverBackend::External(v));
        }
    }
    if s == "embedded" {
        Ok(SolverBackend::default())
    } else if let Some(cmd) = s.strip_prefix("external:") {
        Ok(SolverBackend::External(cmd.to_string()))
    } else {
        Err(E::Config(format!(
            "--solver {s:?}: expected embedded or external:<command>"
        )))
    }
}
