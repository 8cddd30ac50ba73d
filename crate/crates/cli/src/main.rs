use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use vptc::sca::{generate_sca_dataset, read_dataset, train_sca, ScaModel, TrainConfig};
use vptc::sdf::{SdfFitConfig, SdfSet};
use vptc::sim::log::TrajectoryLog;
use vptc::sim::metrics::{compute_metrics, save_metrics_csv, write_metrics_csv, Metrics};
use vptc::sim::random::random_scenario;
use vptc::sim::scenario::{ModelPaths, Scenario};
use vptc::sim::{scenario_violations, LoadedModels, Simulation, Violation};
use vptc::RobotModel;
use vptc_teleop::ServeConfig;

const VIOLATION_EXIT: u8 = 2;

#[derive(Parser)]
#[command(
    name = "vptc",
    version,
    about = "Viability-preserving passive torque control simulator"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// RNG seed; for `run` and `batch` it overrides the scenario seed.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample and label states for the self-collision classifier.
    GenData {
        #[arg(long, default_value_t = 100_000)]
        count: usize,
        /// Integration step of the braking rollouts (s).
        #[arg(long, default_value_t = 1e-3)]
        dt_brake: f64,
        /// Take the robot from this scenario instead of the desk arm.
        #[arg(long)]
        robot: Option<PathBuf>,
    },
    /// Train the self-collision classifier.
    TrainSca {
        /// Dataset CSV; defaults to `<out>/sca_dataset.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        robot: Option<PathBuf>,
    },
    /// Fit the per-link distance fields.
    FitSdf {
        #[arg(long, default_value_t = 12)]
        degree: usize,
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long)]
        robot: Option<PathBuf>,
    },
    /// Run one scenario and write its log and metrics.
    Run {
        scenario: PathBuf,
        /// Override a constraint toggle, e.g. `sca=off`.
        #[arg(long = "toggle", value_parser = parse_toggle)]
        toggles: Vec<(String, bool)>,
    },
    /// Run every scenario in a directory, or `--random N` generated ones.
    Batch {
        dir: Option<PathBuf>,
        #[arg(long)]
        random: Option<u64>,
        /// Classifier used by generated scenarios.
        #[arg(long)]
        sca: Option<PathBuf>,
        /// Distance-field directory used by generated scenarios.
        #[arg(long)]
        sdf: Option<PathBuf>,
        #[arg(long = "toggle", value_parser = parse_toggle)]
        toggles: Vec<(String, bool)>,
    },
    /// Compute metrics of a trajectory log; CSV goes to stdout unless `--csv` is given.
    Metrics {
        log: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve a live session over WebSocket.
    Teleop {
        scenario: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value_t = 50.0)]
        snapshot_hz: f64,
    },
}

fn parse_toggle(s: &str) -> Result<(String, bool), String> {
    let (name, value) = s.split_once('=').ok_or("expected NAME=on|off")?;
    let enabled = match value {
        "on" | "true" | "1" => true,
        "off" | "false" | "0" => false,
        _ => return Err(format!("invalid value {value:?}, expected on or off")),
    };
    match name {
        "sca" | "eca" => Ok((name.to_string(), enabled)),
        _ => Err(format!("unknown constraint {name:?}, expected sca or eca")),
    }
}

fn apply_toggles(scenario: &mut Scenario, toggles: &[(String, bool)]) {
    for (name, on) in toggles {
        let c = &mut scenario.constraints;
        if name == "sca" {
            c.sca = *on;
        } else {
            c.eca = *on;
        }
    }
}

fn robot(path: Option<&Path>) -> Result<RobotModel> {
    match path {
        Some(p) => Ok(Scenario::load(p)?.robot_model()?),
        None => Ok(RobotModel::desk()),
    }
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn load_scenario(path: &Path, seed: Option<u64>, toggles: &[(String, bool)]) -> Result<Scenario> {
    let mut s = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    apply_toggles(&mut s, toggles);
    Ok(s)
}

struct Outcome {
    log: TrajectoryLog,
    metrics: Metrics,
    violations: Vec<Violation>,
}

fn simulate(scenario: &Scenario, models: Option<LoadedModels>) -> Result<Outcome> {
    let models = match models {
        Some(m) => m,
        None => LoadedModels::load(scenario, &scenario.robot_model()?)?,
    };
    let mut sim = Simulation::new(scenario.clone(), models)?;
    sim.run()?;
    let (log, metrics) = sim.finish();
    let violations = scenario_violations(scenario, &log)?;
    Ok(Outcome {
        log,
        metrics,
        violations,
    })
}

fn report(name: &str, violations: &[Violation]) {
    for v in violations.iter().take(10) {
        eprintln!("{name}: step {} t={:.3}: {}", v.step, v.t, v.what);
    }
    if violations.len() > 10 {
        eprintln!("{name}: {} more violations", violations.len() - 10);
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn run(cli: Cli) -> Result<ExitCode> {
    let Common { seed, out } = cli.common;
    match cli.command {
        Cmd::GenData {
            count,
            dt_brake,
            robot: r,
        } => {
            let model = robot(r.as_deref())?;
            create_out(&out)?;
            let data = generate_sca_dataset(&model, count, seed.unwrap_or(0), dt_brake)?;
            let path = out.join("sca_dataset.csv");
            vptc::sca::write_dataset(&path, &data)?;
            println!(
                "wrote {} states ({:.1}% viable) to {}",
                data.len(),
                100.0 * vptc::sca::dataset::viable_fraction(&data),
                path.display()
            );
        }
        Cmd::TrainSca {
            data,
            epochs,
            robot: r,
        } => {
            let model = robot(r.as_deref())?;
            let data_path = data.unwrap_or_else(|| out.join("sca_dataset.csv"));
            let data = read_dataset(&data_path)
                .with_context(|| format!("reading {}", data_path.display()))?;
            let mut config = TrainConfig::default();
            if let Some(e) = epochs {
                config.epochs = e;
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            let (sca, rep): (ScaModel, _) = train_sca(&model, &data, &config)?;
            create_out(&out)?;
            let path = out.join("sca.bin");
            sca.save(&path)?;
            let c = rep.validation;
            println!(
                "validation accuracy {:.4} viable recall {:.4} precision {:.4}; threshold {:.3}; wrote {}",
                c.accuracy(),
                c.recall(),
                c.precision(),
                sca.gamma_thr,
                path.display()
            );
        }
        Cmd::FitSdf {
            degree,
            samples,
            robot: r,
        } => {
            let model = robot(r.as_deref())?;
            let config = SdfFitConfig {
                degree,
                sample_count: samples,
                seed: seed.unwrap_or(0),
                ..SdfFitConfig::default()
            };
            let set = SdfSet::fit(&model, &config)?;
            let dir = out.join("sdf");
            set.save_dir(&dir)?;
            for (i, l) in set.links.iter().enumerate() {
                println!("link {i}: rmse {:.3} mm", l.rmse * 1e3);
            }
            println!("wrote {}", dir.display());
        }
        Cmd::Run { scenario, toggles } => {
            let s = load_scenario(&scenario, seed, &toggles)?;
            let outcome = simulate(&s, None)?;
            create_out(&out)?;
            let stem = file_stem(&s.name);
            outcome.log.save(&out.join(format!("{stem}.log")))?;
            save_metrics_csv(
                &out.join(format!("{stem}_metrics.csv")),
                std::slice::from_ref(&outcome.metrics),
            )?;
            let m = &outcome.metrics;
            println!(
                "{}: {} steps, path {:.3} m, min self distance {:.4} m, min clearance {:.4} m, converged {}",
                m.scenario, m.steps, m.path_length, m.min_self_distance, m.min_obstacle_clearance, m.converged
            );
            if !outcome.violations.is_empty() {
                report(&s.name, &outcome.violations);
                return Ok(ExitCode::from(VIOLATION_EXIT));
            }
        }
        Cmd::Batch {
            dir,
            random,
            sca,
            sdf,
            toggles,
        } => {
            let scenarios: Vec<Scenario> = match (dir, random) {
                (Some(_), Some(_)) => bail!("give either a directory or --random, not both"),
                (None, None) => bail!("give a scenario directory or --random N"),
                (Some(dir), None) => {
                    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
                        .with_context(|| format!("reading {}", dir.display()))?
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
                        .collect();
                    paths.sort();
                    if paths.is_empty() {
                        bail!("no scenario files in {}", dir.display());
                    }
                    paths
                        .iter()
                        .map(|p| load_scenario(p, seed, &toggles))
                        .collect::<Result<_>>()?
                }
                (None, Some(n)) => {
                    let cwd = std::env::current_dir()?;
                    let paths = ModelPaths {
                        sca: sca.map(|p| cwd.join(p)),
                        sdf_dir: sdf.map(|p| cwd.join(p)),
                        ..ModelPaths::default()
                    };
                    let base = seed.unwrap_or(0);
                    (0..n)
                        .map(|i| {
                            let mut s = random_scenario(base + i, paths.clone());
                            apply_toggles(&mut s, &toggles);
                            s
                        })
                        .collect()
                }
            };
            let outcomes: Vec<(String, Result<Outcome>)> = scenarios
                .par_iter()
                .map(|s| (s.name.clone(), simulate(s, None)))
                .collect();
            create_out(&out)?;
            let mut rows = Vec::new();
            let mut violated = 0;
            for (name, outcome) in outcomes {
                let outcome = outcome.with_context(|| format!("scenario {name}"))?;
                if !outcome.violations.is_empty() {
                    violated += 1;
                    report(&name, &outcome.violations);
                }
                outcome
                    .log
                    .save(&out.join(format!("{}.log", file_stem(&name))))?;
                rows.push(outcome.metrics);
            }
            save_metrics_csv(&out.join("metrics.csv"), &rows)?;
            println!("{} scenarios, {violated} with violations", rows.len());
            if violated > 0 {
                return Ok(ExitCode::from(VIOLATION_EXIT));
            }
        }
        Cmd::Metrics { log, csv } => {
            let log =
                TrajectoryLog::load(&log).with_context(|| format!("reading {}", log.display()))?;
            let m = compute_metrics(&log);
            match csv {
                Some(path) => save_metrics_csv(&path, &[m])?,
                None => write_metrics_csv(std::io::stdout().lock(), &[m])?,
            }
        }
        Cmd::Teleop {
            scenario,
            port,
            host,
            snapshot_hz,
        } => {
            let s = load_scenario(&scenario, seed, &[])?;
            let sim = Simulation::from_scenario(s)?;
            let config = ServeConfig {
                addr: (host, port).into(),
                snapshot_hz,
            };
            let runtime = tokio::runtime::Runtime::new()?;
            let session = runtime.block_on(vptc_teleop::serve(sim, config))?;
            println!("stopped after {} steps", session.simulation().step_index());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
