use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use chainbsde::app::{self, AppError, Artifact, Experiment, ExperimentConfig, ExperimentEntry, GridParams};
use chainbsde::chain::ChainDocument;
use chainbsde::driver::parse_driver_value;
use chainbsde::geometry::assumption_margin;
use chainbsde::report::VerdictReport;
use chainbsde::solver::TerminalDocument;

#[derive(Parser)]
#[command(name = "chainbsde", version, about = "BSDEs driven by finite-state Markov chains, with a verification harness")]
struct Cli {
    /// Seed for every random stream of the command
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Solver step
    #[arg(long, global = true, default_value_t = 1e-3)]
    step: f64,

    /// Monte Carlo path count
    #[arg(long, global = true, default_value_t = 10_000)]
    paths: usize,

    /// Artifact directory
    #[arg(long, global = true, env = "CHAINBSDE_OUT")]
    out: Option<PathBuf>,

    /// Worker threads (defaults to the available cores)
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment of a config file
    Run { config: PathBuf },
    /// Solve one BSDE; CSV t,u_1..u_N
    Solve {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        driver: PathBuf,
        #[arg(long)]
        terminal: PathBuf,
    },
    /// Run one verification suite
    Verify {
        #[command(subcommand)]
        suite: Suite,
    },
    /// Driver utilities
    Driver {
        #[command(subcommand)]
        action: DriverAction,
    },
    /// Simulate chain paths; CSV path_id,jump_time,new_state
    Simulate {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long, default_value_t = 0)]
        x0: usize,
    },
    /// Summarize the manifests under a directory
    Report { dir: PathBuf },
}

#[derive(Args)]
struct Pair {
    #[arg(long)]
    chain: PathBuf,
    #[arg(long)]
    f1: PathBuf,
    #[arg(long)]
    f2: PathBuf,
    #[arg(long)]
    g1: PathBuf,
    #[arg(long)]
    g2: PathBuf,
}

#[derive(Subcommand)]
enum Suite {
    /// Ψ invariants and the seminorm bound; CSV per (state, segment)
    Geometry {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Driver whose l2 enters the assumption margin
        #[arg(long)]
        driver: Option<PathBuf>,
    },
    /// Bracket consistency of the chain martingale
    Bracket {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long, default_value_t = 0)]
        x0: usize,
    },
    /// Monte Carlo duality against the ODE gap
    Duality {
        #[command(flatten)]
        pair: Pair,
        #[arg(long, default_value_t = 0)]
        x0: usize,
    },
    /// f-expectation property suite
    Fexp {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        driver: PathBuf,
        #[arg(long, default_value_t = 50)]
        cases: usize,
    },
    /// Comparison (or, with --equality, the equality characterization)
    Comparison {
        #[command(flatten)]
        pair: Pair,
        #[arg(long)]
        equality: bool,
    },
    /// Randomized comparison sweep
    Sweep {
        #[arg(long, default_value_t = 200)]
        random: usize,
        #[arg(long, default_value_t = 20)]
        strict: usize,
    },
    /// Forward converse witness at a fixed (y, z)
    Converse {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        f1: PathBuf,
        #[arg(long)]
        f2: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0.0)]
        y: f64,
        /// Comma-separated z vector
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        z: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        x0: usize,
    },
    /// Pointwise order of two drivers on a sampled grid
    Order {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        f1: PathBuf,
        #[arg(long)]
        f2: PathBuf,
    },
}

#[derive(Subcommand)]
enum DriverAction {
    /// Print (l1, l2), normalization and the assumption class against a chain
    Lint {
        #[arg(long)]
        chain: PathBuf,
        driver: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, AppError> {
    let text = fs::read_to_string(path).map_err(|e| AppError::Io { path: path.to_owned(), message: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| AppError::ConfigInvalid(format!("{}: {e}", path.display())))
}

/// In-memory config built from document files on the command line.
#[derive(Default)]
struct Builder {
    chains: BTreeMap<String, ChainDocument>,
    drivers: BTreeMap<String, Value>,
    terminals: BTreeMap<String, TerminalDocument>,
}

impl Builder {
    fn chain(&mut self, p: &Path) -> Result<String, AppError> {
        self.chains.insert("chain".into(), read_json(p)?);
        Ok("chain".into())
    }

    fn driver(&mut self, key: &str, p: &Path) -> Result<String, AppError> {
        self.drivers.insert(key.into(), read_json(p)?);
        Ok(key.into())
    }

    fn terminal(&mut self, key: &str, p: &Path) -> Result<String, AppError> {
        self.terminals.insert(key.into(), read_json(p)?);
        Ok(key.into())
    }

    fn pair(&mut self, p: &Pair) -> Result<[String; 5], AppError> {
        Ok([
            self.chain(&p.chain)?,
            self.driver("f1", &p.f1)?,
            self.driver("f2", &p.f2)?,
            self.terminal("g1", &p.g1)?,
            self.terminal("g2", &p.g2)?,
        ])
    }

    fn finish(self, name: &str, experiment: Experiment, workers: Option<usize>) -> ExperimentConfig {
        ExperimentConfig {
            chains: self.chains,
            drivers: self.drivers,
            terminals: self.terminals,
            experiments: vec![ExperimentEntry { name: name.into(), experiment }],
            output_dir: None,
            workers,
        }
    }
}

/// Executes the single experiment of `cfg`; with `--out` the artifacts and
/// a manifest are written as by `run`.
fn one_shot(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Artifact, AppError> {
    let resolved = cfg.validate()?;
    let started = app::unix_now();
    let clock = Instant::now();
    let artifact = app::execute(cfg, &resolved, &cfg.experiments[0].experiment);
    if let Some(dir) = out {
        let workers = cfg.workers.unwrap_or_else(rayon::current_num_threads);
        match app::persist(cfg, dir, workers, started, vec![(artifact.clone(), clock.elapsed().as_secs_f64())]) {
            Ok(_) | Err(AppError::ExperimentFailed { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(artifact)
}

fn verdict_code(r: &VerdictReport) -> u8 {
    if r.is_pass() {
        0
    } else {
        1
    }
}

fn print_report(r: &VerdictReport) {
    println!("{}", serde_json::to_string_pretty(r).unwrap_or_default());
    eprintln!("{}", r.summary_line());
}

fn dispatch(cli: Cli) -> Result<u8, AppError> {
    let out = cli.out.as_deref();
    let mut b = Builder::default();
    match cli.command {
        Command::Run { config } => {
            let text = fs::read_to_string(&config).map_err(|e| AppError::Io { path: config.clone(), message: e.to_string() })?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if cli.workers.is_some() {
                cfg.workers = cli.workers;
            }
            let result = app::run(&cfg, out);
            let dir = match &result {
                Ok(s) => s.out_dir.clone(),
                Err(AppError::ExperimentFailed { out_dir, .. }) => out_dir.clone(),
                Err(_) => return result.map(|_| 0),
            };
            print!("{}", app::report(&dir)?.table());
            result.map(|_| 0)
        }
        Command::Solve { chain, driver, terminal } => {
            let ex = Experiment::Solve {
                chain: b.chain(&chain)?,
                driver: b.driver("f", &driver)?,
                terminal: b.terminal("g", &terminal)?,
                step: cli.step,
                expect: Vec::new(),
            };
            let art = one_shot(&b.finish("solve", ex, cli.workers), out)?;
            let r = &art.report;
            if r.margins.get("residual_max").is_none() {
                print_report(r);
                return Ok(1);
            }
            let y0: Vec<f64> = r.margins.iter().filter(|(k, _)| k.starts_with("Y0[")).map(|(_, v)| *v).collect();
            let summary = json!({"Y0_per_state": y0, "step": cli.step, "residual_max": r.margins["residual_max"]});
            let summary = serde_json::to_string_pretty(&summary).unwrap_or_default();
            match out {
                Some(dir) => {
                    let p = dir.join("summary.json");
                    fs::write(&p, format!("{summary}\n")).map_err(|e| AppError::Io { path: p, message: e.to_string() })?;
                    println!("{summary}");
                }
                None => {
                    print!("{}", art.csv);
                    eprintln!("{summary}");
                }
            }
            Ok(verdict_code(r))
        }
        Command::Simulate { chain, x0 } => {
            let ex = Experiment::Simulate { chain: b.chain(&chain)?, x0, n_paths: cli.paths, seed: cli.seed };
            let art = one_shot(&b.finish("simulate", ex, cli.workers), out)?;
            if out.is_none() {
                print!("{}", art.csv);
            }
            eprintln!("{}", art.report.summary_line());
            Ok(verdict_code(&art.report))
        }
        Command::Report { dir } => {
            let s = app::report(&dir)?;
            print!("{}", s.table());
            Ok(if s.all_pass() { 0 } else { 1 })
        }
        Command::Driver { action: DriverAction::Lint { chain, driver } } => {
            let a = read_json::<ChainDocument>(&chain)?
                .into_rate_matrix()
                .map_err(|e| AppError::ConfigInvalid(format!("{}: {e}", chain.display())))?;
            let doc: Value = read_json(&driver)?;
            let f = parse_driver_value(&doc, &a).map_err(|e| AppError::ConfigInvalid(format!("{}: {e}", driver.display())))?;
            let m = assumption_margin(&a, f.l2());
            let lint = json!({
                "l1": f.l1(),
                "l2": f.l2(),
                "normalized": f.is_normalized(),
                "margin_product": m.product,
                "l2_max": m.l2_max,
                "classification": m.classification,
            });
            println!("{}", serde_json::to_string_pretty(&lint).unwrap_or_default());
            Ok(0)
        }
        Command::Verify { suite } => verify(suite, cli.seed, cli.step, cli.paths, cli.workers, out, b),
    }
}

fn verify(suite: Suite, seed: u64, step: f64, paths: usize, workers: Option<usize>, out: Option<&Path>, mut b: Builder) -> Result<u8, AppError> {
    match suite {
        Suite::Geometry { chain, samples, driver } => {
            let doc: ChainDocument = read_json(&chain)?;
            let a = doc.clone().into_rate_matrix().map_err(|e| AppError::ConfigInvalid(format!("{}: {e}", chain.display())))?;
            let l2 = match &driver {
                Some(p) => {
                    let v: Value = read_json(p)?;
                    parse_driver_value(&v, &a).map_err(|e| AppError::ConfigInvalid(format!("{}: {e}", p.display())))?.l2()
                }
                None => 0.0,
            };
            b.chains.insert("chain".into(), doc);
            let ex = Experiment::Geometry { chain: "chain".into(), samples, seed };
            let art = one_shot(&b.finish("geometry", ex, workers), out)?;
            print!("{}", art.csv);
            let m = assumption_margin(&a, l2);
            println!(
                "margin l2={} sup_psi_dagger_norm={} m={} product={} l2_max={} class={:?} verdict={}",
                m.l2, m.sup_psi_dagger_norm, m.m, m.product, m.l2_max, m.classification, art.report.verdict
            );
            Ok(verdict_code(&art.report))
        }
        Suite::Bracket { chain, x0 } => {
            let ex = Experiment::Bracket { chain: b.chain(&chain)?, x0, n_paths: paths, seed };
            let art = one_shot(&b.finish("bracket", ex, workers), out)?;
            print_report(&art.report);
            Ok(verdict_code(&art.report))
        }
        Suite::Duality { pair, x0 } => {
            let [chain, f1, f2, g1, g2] = b.pair(&pair)?;
            let ex = Experiment::Duality { chain, f1, f2, g1, g2, x0, step, n_paths: paths, seed };
            let art = one_shot(&b.finish("duality", ex, workers), out)?;
            let r = &art.report;
            let m = &r.margins;
            let summary = if m.contains_key("ode_value") {
                json!({"ode_value": m["ode_value"], "mc_mean": m["mc_mean"], "mc_se": m["mc_se"], "n_paths": paths, "verdict": r.verdict})
            } else {
                json!({"verdict": r.verdict, "witness": r.witness})
            };
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            Ok(verdict_code(r))
        }
        Suite::Fexp { chain, driver, cases } => {
            let ex = Experiment::Fexp { chain: b.chain(&chain)?, driver: b.driver("f", &driver)?, step, cases, seed };
            let art = one_shot(&b.finish("fexp", ex, workers), out)?;
            print!("{}", art.csv);
            eprintln!("{}", art.report.summary_line());
            Ok(verdict_code(&art.report))
        }
        Suite::Comparison { pair, equality } => {
            let [chain, f1, f2, g1, g2] = b.pair(&pair)?;
            let (name, ex) = if equality {
                ("equality", Experiment::Equality { chain, f1, f2, g1, g2, step })
            } else {
                ("comparison", Experiment::Comparison { chain, f1, f2, g1, g2, step })
            };
            let art = one_shot(&b.finish(name, ex, workers), out)?;
            print_report(&art.report);
            Ok(verdict_code(&art.report))
        }
        Suite::Sweep { random, strict } => {
            let ex = Experiment::ComparisonSweep { n_random: random, n_strict: strict, step, seed };
            let art = one_shot(&b.finish("comparison_sweep", ex, workers), out)?;
            print!("{}", art.csv);
            eprintln!("{}", art.report.summary_line());
            Ok(verdict_code(&art.report))
        }
        Suite::Converse { chain, f1, f2, delta, y, z, x0 } => {
            let ex = Experiment::ConverseWitness {
                chain: b.chain(&chain)?,
                f1: b.driver("f1", &f1)?,
                f2: b.driver("f2", &f2)?,
                delta,
                y,
                z,
                x0,
                step,
                n_paths: paths,
                seed,
            };
            let art = one_shot(&b.finish("converse_witness", ex, workers), out)?;
            print_report(&art.report);
            Ok(verdict_code(&art.report))
        }
        Suite::Order { chain, f1, f2 } => {
            let ex = Experiment::DriverOrder {
                chain: b.chain(&chain)?,
                f1: b.driver("f1", &f1)?,
                f2: b.driver("f2", &f2)?,
                grid: GridParams { n_times: 11, n_y: 5, n_random_z: 20, seed },
            };
            let art = one_shot(&b.finish("driver_order", ex, workers), out)?;
            print_report(&art.report);
            Ok(verdict_code(&art.report))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
