//! Experiment configuration, orchestration, and artifact emission.
//!
//! A run writes `<name>.json` (the [`VerdictReport`]) and `<name>.csv` per
//! experiment, then `manifest.json` once at the end. Timestamps and runtimes
//! live only in the manifest so that report and CSV bodies are reproducible.

mod config;

pub use config::{Expectation, Experiment, ExperimentConfig, ExperimentEntry, GridParams, Resolved};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chain::{simulate_ensemble, write_paths_csv, RateMatrix};
use crate::driver::{driver_order_check, OrderGrid};
use crate::fexp::FExpectationOperator;
use crate::geometry::{assumption_margin, bracket_consistency, geometry_sweep, geometry_suite, psi_invariant_check};
use crate::harness::{
    comparison_check, comparison_sweep, converse_search, converse_witness, equality_characterization, witness_report,
    ConverseWitness, WitnessParams,
};
use crate::report::{Verdict, VerdictReport};
use crate::solver::{convergence_study, duality_check, solve_markovian, BsdeSolution, TerminalCondition};
use crate::tolerances::SOLVER;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum AppError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("experiments without a pass verdict: {}", failed.join(", "))]
    ExperimentFailed { failed: Vec<String>, out_dir: PathBuf },
    #[error("no {MANIFEST} under {0}")]
    MissingManifest(PathBuf),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl AppError {
    /// Process exit status: 1 for failed verdicts, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::ExperimentFailed { .. } => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> AppError {
    AppError::Io { path: path.to_owned(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: String,
    pub verdict: Verdict,
    pub worst_margin: Option<String>,
    pub worst_value: Option<f64>,
    pub seeds: Vec<u64>,
    pub step: Option<f64>,
    pub runtime_s: f64,
    pub report: String,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub workers: usize,
    pub all_pass: bool,
    pub experiments: Vec<ManifestEntry>,
}

/// Report and CSV body of one experiment.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub report: VerdictReport,
    pub csv: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub reports: Vec<VerdictReport>,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Runs every experiment (concurrently, up to `workers`) and writes the
/// artifacts into `out_dir`, falling back to the configured output directory.
/// Fails with `ExperimentFailed` after writing everything if any verdict is
/// not a pass.
pub fn run(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunSummary, AppError> {
    let resolved = config.validate()?;
    let out_dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| AppError::ConfigInvalid("no output directory given".into()))?;
    let workers = config.workers.unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| AppError::ConfigInvalid(e.to_string()))?;
    let started = unix_now();
    let done: Vec<(Artifact, f64)> = pool.install(|| {
        config
            .experiments
            .par_iter()
            .map(|entry| {
                let clock = Instant::now();
                let artifact = execute(config, &resolved, &entry.experiment);
                (artifact, clock.elapsed().as_secs_f64())
            })
            .collect()
    });
    persist(config, &out_dir, workers, started, done)
}

/// Writes one report and CSV per experiment of `config` (in order) plus the
/// manifest.
pub fn persist(
    config: &ExperimentConfig,
    out_dir: &Path,
    workers: usize,
    started_unix: f64,
    done: Vec<(Artifact, f64)>,
) -> Result<RunSummary, AppError> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let canonical = serde_json::to_vec(config).map_err(|e| AppError::ConfigInvalid(e.to_string()))?;
    let mut entries = Vec::with_capacity(done.len());
    let mut reports = Vec::with_capacity(done.len());
    for (entry, (artifact, runtime_s)) in config.experiments.iter().zip(done) {
        let report_file = format!("{}.json", entry.name);
        let csv_file = format!("{}.csv", entry.name);
        let p = out_dir.join(&report_file);
        let body = serde_json::to_string_pretty(&artifact.report).map_err(|e| io_err(&p, e))?;
        fs::write(&p, body + "\n").map_err(|e| io_err(&p, e))?;
        let p = out_dir.join(&csv_file);
        fs::write(&p, &artifact.csv).map_err(|e| io_err(&p, e))?;
        let worst = artifact.report.worst_margin.clone();
        entries.push(ManifestEntry {
            name: entry.name.clone(),
            kind: entry.experiment.kind().to_owned(),
            verdict: artifact.report.verdict,
            worst_margin: worst.as_ref().map(|w| w.name.clone()),
            worst_value: worst.map(|w| w.value).filter(|v| v.is_finite()),
            seeds: artifact.report.seeds.clone(),
            step: artifact.report.step,
            runtime_s,
            report: report_file,
            csv: csv_file,
        });
        reports.push(artifact.report);
    }
    let all_pass = entries.iter().all(|e| e.verdict == Verdict::Pass);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(&canonical),
        started_unix,
        finished_unix: unix_now(),
        workers,
        all_pass,
        experiments: entries,
    };
    let p = out_dir.join(MANIFEST);
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| io_err(&p, e))?;
    fs::write(&p, body + "\n").map_err(|e| io_err(&p, e))?;
    if !all_pass {
        let failed = manifest.experiments.iter().filter(|e| e.verdict != Verdict::Pass).map(|e| e.name.clone()).collect();
        return Err(AppError::ExperimentFailed { failed, out_dir: out_dir.to_owned() });
    }
    Ok(RunSummary { out_dir: out_dir.to_owned(), manifest, reports })
}

/// A failed report carrying the error message as its witness.
fn error_report(kind: &str, err: impl std::fmt::Display) -> VerdictReport {
    let mut r = VerdictReport::new(kind).fail("error", f64::NAN, json!({"error": err.to_string()}));
    r.worst_margin = None;
    r
}

fn row(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// `t,u_1,…,u_N` at every grid time.
pub fn solution_csv(sol: &BsdeSolution) -> String {
    let n = sol.initial().len();
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",u_{i}");
    }
    out.push('\n');
    for (t, u) in sol.times().iter().zip(sol.values()) {
        let _ = writeln!(out, "{t},{}", row(u.iter().copied()));
    }
    out
}

fn witness_csv(w: &ConverseWitness) -> String {
    let mut out = String::from("path_id,tau_delta,tau_prime,y1,y2,terminal_gap,bound,rerun_gap\n");
    for (k, p) in w.paths.iter().enumerate() {
        let _ = writeln!(out, "{k},{}", row([p.tau_delta, p.tau_prime, p.y1, p.y2, p.terminal_gap, p.bound, p.rerun_gap]));
    }
    out
}

fn rows_with_header(report: &VerdictReport, header: &str) -> String {
    let body = report.rows_csv();
    let rest = body.split_once('\n').map_or("", |(_, r)| r);
    format!("{header}\n{rest}")
}

/// Runs one experiment; errors become failed reports.
pub fn execute(config: &ExperimentConfig, resolved: &Resolved, ex: &Experiment) -> Artifact {
    match try_execute(config, resolved, ex) {
        Ok(a) => a,
        Err(e) => {
            let report = error_report(ex.kind(), &e);
            let csv = report.rows_csv();
            Artifact { report, csv }
        }
    }
}

fn try_execute(config: &ExperimentConfig, resolved: &Resolved, ex: &Experiment) -> Result<Artifact, Box<dyn std::error::Error + Send + Sync>> {
    let chain = |name: &str| -> Result<&RateMatrix, AppError> {
        resolved.chains.get(name).ok_or_else(|| AppError::ConfigInvalid(format!("unknown chain '{name}'")))
    };
    let term = |name: &str| -> Result<&TerminalCondition, AppError> {
        resolved.terminals.get(name).ok_or_else(|| AppError::ConfigInvalid(format!("unknown terminal '{name}'")))
    };
    let plain = |report: VerdictReport| {
        let csv = report.rows_csv();
        Artifact { report, csv }
    };
    Ok(match ex {
        Experiment::Solve { chain: c, driver, terminal, step, expect } => {
            let a = chain(c)?;
            let f = config.driver(driver, a)?;
            let sol = solve_markovian(&f, term(terminal)?, a, *step)?;
            let mut report = VerdictReport::new("solve")
                .with_step(*step)
                .tolerance("solver", SOLVER)
                .margin("residual_max", sol.residual_max())
                .margin("residual_total", sol.residual_total());
            for (i, v) in sol.initial().iter().enumerate() {
                report = report.margin(&format!("Y0[{i}]"), *v);
            }
            let mut worst = 0.0f64;
            for (k, e) in expect.iter().enumerate() {
                let got = sol.initial().get(e.state).copied().unwrap_or(f64::NAN);
                let err = (got - e.value).abs();
                report = report.tolerance(&format!("expect[{k}]"), e.tolerance);
                report.push_row(format!("u_{}(0)", e.state + 1), k, got, err <= e.tolerance);
                worst = worst.max(err / e.tolerance);
            }
            let ok = report.rows.iter().all(|r| r.pass);
            let report = if expect.is_empty() {
                report.pass("residual_max", sol.residual_max())
            } else {
                report.conclude(ok, "expect_error_ratio", worst, || json!({"initial": sol.initial().as_slice()}))
            };
            Artifact { report, csv: solution_csv(&sol) }
        }
        Experiment::Convergence { chain: c, driver, terminal, steps, ratio_min, ratio_max } => {
            let a = chain(c)?;
            let f = config.driver(driver, a)?;
            let study = convergence_study(&f, term(terminal)?, a, steps)?;
            let mut report = VerdictReport::new("convergence").tolerance("ratio_min", *ratio_min).tolerance("ratio_max", *ratio_max);
            let mut worst = f64::INFINITY;
            for (k, r) in study.ratios.iter().enumerate() {
                report.push_row("ratio", k, *r, *r >= *ratio_min && *r <= *ratio_max);
                worst = worst.min((r - ratio_min).min(ratio_max - r));
            }
            let ok = !study.ratios.is_empty() && report.rows.iter().all(|r| r.pass);
            let n = a.n_states();
            let mut csv = String::from("step");
            for i in 1..=n {
                let _ = write!(csv, ",u_{i}");
            }
            csv.push_str(",difference,ratio\n");
            for (k, (h, u)) in study.steps.iter().zip(&study.initial_values).enumerate() {
                let d = if k > 0 { study.differences[k - 1].to_string() } else { String::new() };
                let r = if k > 1 { study.ratios[k - 2].to_string() } else { String::new() };
                let _ = writeln!(csv, "{h},{},{d},{r}", row(u.iter().copied()));
            }
            let ratios = study.ratios.clone();
            Artifact { report: report.conclude(ok, "ratio_slack", worst, || json!({"ratios": ratios})), csv }
        }
        Experiment::Geometry { chain: c, samples, seed } => {
            let a = chain(c)?;
            let (rows, bound) = geometry_sweep(a, *samples, *seed);
            let inv = psi_invariant_check(a);
            let margin = assumption_margin(a, 0.0);
            let mut report = VerdictReport::new("geometry")
                .seed(*seed)
                .margin("m", margin.m)
                .margin("sup_psi_dagger_norm", margin.sup_psi_dagger_norm)
                .margin("l2_max", margin.l2_max);
            for (k, v) in &inv.margins {
                report = report.margin(k, *v);
            }
            for (k, v) in inv.tolerances.iter().chain(&bound.tolerances) {
                report = report.tolerance(k, *v);
            }
            report.rows = bound.rows.clone();
            report.rows.extend(inv.rows.iter().cloned());
            let worst = bound.worst_margin.as_ref().map_or(0.0, |w| w.value);
            let ok = bound.is_pass() && inv.is_pass();
            let witness = json!({"bound": bound.witness, "invariants": inv.witness});
            let mut csv = String::from("state,segment,min_eig,psi_dagger_norm,bound_ratio_max\n");
            for r in &rows {
                let _ = writeln!(csv, "{},{},{},{},{}", r.state, r.segment, r.min_eig, r.psi_dagger_norm, r.bound_ratio_max);
            }
            Artifact { report: report.conclude(ok, "max_bound_ratio", worst, || witness), csv }
        }
        Experiment::GeometrySuite { generators, min_states, max_states, samples, seed } => {
            plain(geometry_suite(*generators, *min_states, *max_states, *samples, *seed)?)
        }
        Experiment::Bracket { chain: c, x0, n_paths, seed } => plain(bracket_consistency(chain(c)?, *x0, *n_paths, *seed)?),
        Experiment::Simulate { chain: c, x0, n_paths, seed } => {
            let a = chain(c)?;
            let paths = simulate_ensemble(a, *x0, a.horizon(), *n_paths, *seed)?;
            let jumps: usize = paths.iter().map(|p| p.n_jumps()).sum();
            let mut buf = Vec::new();
            write_paths_csv(&paths, &mut buf)?;
            let report = VerdictReport::new("simulate")
                .seed(*seed)
                .margin("n_paths", *n_paths as f64)
                .margin("mean_jumps", jumps as f64 / (*n_paths).max(1) as f64)
                .pass("n_paths", *n_paths as f64);
            Artifact { report, csv: String::from_utf8(buf)? }
        }
        Experiment::DriverOrder { chain: c, f1, f2, grid } => {
            let a = chain(c)?;
            let og = OrderGrid::sampled(a, grid.n_times, grid.n_y, grid.n_random_z, grid.seed);
            plain(driver_order_check(&config.driver(f1, a)?, &config.driver(f2, a)?, a, &og).seed(grid.seed))
        }
        Experiment::Duality { chain: c, f1, f2, g1, g2, x0, step, n_paths, seed } => {
            let a = chain(c)?;
            let r = duality_check(&config.driver(f1, a)?, &config.driver(f2, a)?, term(g1)?, term(g2)?, a, *x0, *step, *n_paths, *seed)?;
            let m = &r.margins;
            let csv = format!(
                "ode_value,mc_mean,mc_se,n_paths,min_u,verdict\n{},{},{},{},{},{}\n",
                m["ode_value"], m["mc_mean"], m["mc_se"], n_paths, m["min_u"], r.verdict
            );
            Artifact { report: r, csv }
        }
        Experiment::Comparison { chain: c, f1, f2, g1, g2, step } => {
            let a = chain(c)?;
            plain(comparison_check(&config.driver(f1, a)?, &config.driver(f2, a)?, term(g1)?, term(g2)?, a, *step)?)
        }
        Experiment::Equality { chain: c, f1, f2, g1, g2, step } => {
            let a = chain(c)?;
            plain(equality_characterization(&config.driver(f1, a)?, &config.driver(f2, a)?, term(g1)?, term(g2)?, a, *step)?)
        }
        Experiment::ComparisonSweep { n_random, n_strict, step, seed } => plain(comparison_sweep(*n_random, *n_strict, *step, *seed)?),
        Experiment::Fexp { chain: c, driver, step, cases, seed } => {
            let a = chain(c)?;
            let op = FExpectationOperator::new(config.driver(driver, a)?, a.clone(), *step)?;
            let report = op.property_suite(*cases, *seed)?;
            let csv = rows_with_header(&report, "property,case_id,residual,verdict");
            Artifact { report, csv }
        }
        Experiment::ConverseWitness { chain: c, f1, f2, delta, y, z, x0, step, n_paths, seed } => {
            let a = chain(c)?;
            let params = WitnessParams {
                delta: *delta,
                y: *y,
                z: DVector::from_column_slice(z),
                x0: *x0,
                step: *step,
                n_paths: *n_paths,
                seed: *seed,
            };
            let w = converse_witness(&config.driver(f1, a)?, &config.driver(f2, a)?, a, &params)?;
            Artifact { report: witness_report(&w), csv: witness_csv(&w) }
        }
        Experiment::ConverseSearch { chain: c, f1, f2, family, x0, step, grid } => {
            let a = chain(c)?;
            let og = OrderGrid::sampled(a, grid.n_times, grid.n_y, grid.n_random_z, grid.seed);
            let fam = family.iter().map(|t| term(t).cloned()).collect::<Result<Vec<_>, _>>()?;
            let report = converse_search(&config.driver(f1, a)?, &config.driver(f2, a)?, &fam, a, *x0, *step, &og)?.seed(grid.seed);
            plain(report)
        }
    })
}

/// One line of the consolidated summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryLine {
    pub run: String,
    pub entry: ManifestEntry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSummary {
    pub lines: Vec<SummaryLine>,
}

impl SuiteSummary {
    pub fn all_pass(&self) -> bool {
        self.lines.iter().all(|l| l.entry.verdict == Verdict::Pass)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<16} {:<28} {:<18} {:<13} {:<34} {:>10}\n", "run", "experiment", "kind", "verdict", "worst margin", "runtime_s");
        for l in &self.lines {
            let e = &l.entry;
            let worst = match (&e.worst_margin, e.worst_value) {
                (Some(n), Some(v)) => format!("{n}={v:.6e}"),
                (Some(n), None) => format!("{n}=-"),
                _ => "-".into(),
            };
            let flag = if e.verdict == Verdict::Pass { "" } else { "  <--" };
            let _ = writeln!(out, "{:<16} {:<28} {:<18} {:<13} {:<34} {:>10.3}{flag}", l.run, e.name, e.kind, e.verdict.to_string(), worst, e.runtime_s);
        }
        out
    }
}

fn read_manifest(path: &Path) -> Result<Manifest, AppError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// Summarizes `dir/manifest.json`, or the manifests of its immediate
/// subdirectories in name order.
pub fn report(dir: &Path) -> Result<SuiteSummary, AppError> {
    let mut manifests = Vec::new();
    let top = dir.join(MANIFEST);
    if top.is_file() {
        manifests.push((".".to_owned(), read_manifest(&top)?));
    } else if dir.is_dir() {
        let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST).is_file())
            .collect();
        subdirs.sort();
        for p in subdirs {
            let label = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            manifests.push((label, read_manifest(&p.join(MANIFEST))?));
        }
    }
    if manifests.is_empty() {
        return Err(AppError::MissingManifest(dir.to_owned()));
    }
    let lines = manifests
        .into_iter()
        .flat_map(|(run, m)| m.experiments.into_iter().map(move |entry| SummaryLine { run: run.clone(), entry }))
        .collect();
    Ok(SuiteSummary { lines })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn benchmark_config(experiments: Value) -> ExperimentConfig {
        serde_json::from_value(json!({
            "chains": {"bench": {"n_states": 2, "segments": [{"t": 0.0, "A": [[-1.0, 1.0], [1.0, -1.0]]}], "horizon": 1.0}},
            "drivers": {"zero": {}, "lam": {"lambda": 0.3}},
            "terminals": {"e1": {"g": [1.0, 0.0]}},
            "experiments": experiments,
        }))
        .unwrap()
    }

    #[test]
    fn solve_writes_benchmark_row() {
        let cfg = benchmark_config(json!([
            {"name": "bench", "kind": "solve", "chain": "bench", "driver": "zero", "terminal": "e1", "step": 1e-3,
             "expect": [{"state": 0, "value": 0.5676676416183064, "tolerance": 1e-6}]}
        ]));
        let dir = tempfile::tempdir().unwrap();
        let s = run(&cfg, Some(dir.path())).unwrap();
        assert!(s.manifest.all_pass);
        let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,u_1,u_2"));
        let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[0], 0.0);
        assert!((first[1] - 0.5676676416183064).abs() < 1e-6);
    }

    #[test]
    fn empty_experiment_list_writes_manifest_only() {
        let cfg = benchmark_config(json!([]));
        let dir = tempfile::tempdir().unwrap();
        run(&cfg, Some(dir.path())).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from(MANIFEST)]);
        assert!(report(dir.path()).unwrap().all_pass());
    }

    #[test]
    fn unknown_driver_is_rejected() {
        let cfg = benchmark_config(json!([
            {"name": "x", "kind": "solve", "chain": "bench", "driver": "nope", "terminal": "e1", "step": 1e-3}
        ]));
        assert!(matches!(cfg.validate(), Err(AppError::ConfigInvalid(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let ok = r#"{"experiments": [{"name": "x", "kind": "comparison_sweep", "n_random": 1, "n_strict": 0, "step": 0.01, "seed": 1}]}"#;
        assert!(ExperimentConfig::from_json(ok).is_ok());
        let text = r#"{"experiments": [{"name": "x", "kind": "comparison_sweep", "n_random": 1, "n_strict": 0, "step": 0.01, "seed": 1, "extra": 2}]}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(AppError::ConfigInvalid(_))));
        let text = r#"{"experiments": [], "bogus": 1}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(AppError::ConfigInvalid(_))));
    }

    #[test]
    fn empty_directory_has_no_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(report(dir.path()), Err(AppError::MissingManifest(_))));
    }

    #[test]
    fn failed_verdict_propagates() {
        // f2 < f1 everywhere: the comparison hypotheses fail and the report says so
        let cfg = benchmark_config(json!([
            {"name": "bad", "kind": "comparison", "chain": "bench", "f1": "lam", "f2": "zero", "g1": "e1", "g2": "e1", "step": 1e-2}
        ]));
        let dir = tempfile::tempdir().unwrap();
        let err = run(&cfg, Some(dir.path())).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let summary = report(dir.path()).unwrap();
        assert!(!summary.all_pass());
        assert!(summary.table().contains("<--"));
    }
}
