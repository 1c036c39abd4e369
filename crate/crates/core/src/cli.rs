//! Experiment runner behind the `lerw` binary: configuration (JSON file plus
//! flag overrides), execution through the library, and CSV/JSON artifacts.
//!
//! Without `--out` the primary artifact of a command is written to stdout
//! (CSV for per-point series, JSON otherwise). With `--out DIR` every
//! artifact and a `manifest.json` are written into `DIR`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::dimension::{
    connectivity_floor, count_boxes_hit_in, default_c_grid, energy_boundedness_experiment, energy_trend,
    estimate_growth_exponent, lerw_experiment, second_moment_band, tail_demonstration, two_box_frequency, BoxAnnulus,
    BoxConvention, EnergyConfig, GrowthSample,
};
use crate::error::Error;
use crate::escape::{
    default_trials, estimate_es, estimate_es_star, estimate_es_two_scale, estimate_joint_separation, fit_alpha,
    exact_es_one, EscapeEstimate,
};
use crate::lattice::{Ball, LatticeSet, Point3, Scale};
use crate::parallel::{default_workers, Exec};
use crate::potential::{exit_distribution, greens_function, hitting_probability, mean_exit_time, FiniteDomain};
use crate::verify::{verify, Suite};
use crate::walk::StreamKey;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Es,
    EsFit,
    Growth,
    Boxcount,
    Twobox,
    Energy,
    Tail,
    Verify,
    Oracle,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Es => "es",
            Command::EsFit => "es-fit",
            Command::Growth => "growth",
            Command::Boxcount => "boxcount",
            Command::Twobox => "twobox",
            Command::Energy => "energy",
            Command::Tail => "tail",
            Command::Verify => "verify",
            Command::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EsKind {
    Plain,
    Star,
    TwoScale,
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OracleQuery {
    /// `G(x, y)` in `B(0, radius)`.
    Green,
    /// Probability that the walk from `x` hits `y` before leaving `B(0, radius)`.
    Hitting,
    /// Exit distribution of `B(0, radius)` from `x`.
    Exit,
    /// Expected exit time of `B(0, radius)` from `x`.
    ExitTime,
    /// Exact `Es(1)` by enumeration.
    EscapeOne,
}

/// Everything that determines an experiment. Every field is optional so a
/// file config and command-line flags can be layered; [`ExperimentConfig::merge`]
/// lets the later layer win.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(skip_serializing_if = "Option::is_none", alias = "seed")]
    pub master_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<EsKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<i64>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub big_l: Option<i64>,
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    pub big_r: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub es_trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<[i64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<[i64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suite: Option<Suite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<OracleQuery>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<i64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => { $( if $top.$f.is_some() { $base.$f = $top.$f; } )* };
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// `self` overridden by every field set in `top`.
    pub fn merge(mut self, top: ExperimentConfig) -> Self {
        overlay!(
            self, top, command, master_seed, workers, out, kind, n, m, big_l, big_r, trials, es_trials, grid, epsilon, x, y,
            delta, k, beta, suite, query, radius
        );
        self
    }

    pub fn seed(&self) -> u64 {
        self.master_seed.unwrap_or(0)
    }

    pub fn exec(&self) -> Exec {
        Exec { master_seed: self.seed(), workers: self.workers.unwrap_or_else(default_workers).max(1) }
    }

    fn need<T: Clone>(v: &Option<T>, name: &str) -> Result<T, CliError> {
        v.clone().ok_or_else(|| CliError::Usage(format!("missing required parameter `{name}`")))
    }

    fn epsilon_exact(&self, default: f64) -> Result<Scale, CliError> {
        parse_scale(self.epsilon.unwrap_or(default))
    }
}

/// Exact rational for a decimal `ε` such as `0.125`.
pub fn parse_scale(eps: f64) -> Result<Scale, CliError> {
    let r: Option<Ratio<i64>> = Ratio::approximate_float(eps);
    match r {
        Some(r) if eps > 0.0 && eps < 1.0 && (*r.numer() as f64 / *r.denom() as f64 - eps).abs() < 1e-12 => Ok(r),
        _ => Err(CliError::Usage(format!("ε = {eps} must be a rational in (0, 1)"))),
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or arguments (exit 2).
    Usage(String),
    /// The experiment ran and failed, or a check did not pass (exit 1).
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failure(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::BadScales(_)
            | Error::BadGrid(_)
            | Error::DegeneratePair
            | Error::OutsideAnnulus(_)
            | Error::StartOutsideDomain(_)
            | Error::OutsideDomain(_)
            | Error::DivergentKernel(_) => CliError::Usage(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

/// One numeric result with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub label: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    pub master_seed: u64,
    pub trials: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
    pub results: Vec<ResultRecord>,
    pub passed: bool,
}

/// A named artifact produced by a command.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub file: String,
    pub contents: String,
}

/// In-memory result of [`execute`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub command: Command,
    /// The first artifact is the one printed when no output directory is given.
    pub artifacts: Vec<Artifact>,
    pub results: Vec<ResultRecord>,
    pub passed: bool,
}

fn json<T: Serialize>(file: &str, v: &T) -> Artifact {
    let mut contents = serde_json::to_string_pretty(v).expect("serialisable");
    contents.push('\n');
    Artifact { file: file.into(), contents }
}

fn csv_artifact<T: Serialize>(file: &str, rows: &[T], header: &[&str]) -> Artifact {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header).expect("in-memory write");
    }
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    Artifact { file: file.into(), contents: String::from_utf8(w.into_inner().expect("flush")).expect("utf-8") }
}

fn record(label: impl Into<String>, value: f64, stderr: Option<f64>, seed: u64, trials: u64) -> ResultRecord {
    ResultRecord { label: label.into(), value, stderr, master_seed: seed, trials }
}

fn es_record(e: &EscapeEstimate) -> ResultRecord {
    let label = match (e.m, e.big_l) {
        (Some(m), _) => format!("Es({m},{})", e.n),
        (_, Some(l)) => format!("{:?}(L={l},R={},n={})", e.kind, e.big_r.unwrap_or(0), e.n),
        _ => format!("{:?}({})", e.kind, e.n),
    };
    record(label, e.value, Some(e.stderr), e.master_seed, e.trials)
}

#[derive(Serialize)]
struct EsPointRow {
    n: f64,
    trials: u64,
    successes: u64,
    value: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct GrowthRow {
    n: i64,
    trials: u64,
    #[serde(rename = "mean_M")]
    mean_m: f64,
    stderr: f64,
    es_value: f64,
    #[serde(rename = "ratio_M_over_n2Es")]
    ratio: f64,
}

#[derive(Serialize)]
struct BoxRow {
    trial: u64,
    #[serde(rename = "J")]
    j: u64,
}

#[derive(Serialize)]
struct EnergyCsvRow {
    k: u32,
    mean_energy: f64,
    stderr: f64,
    mean_mass: f64,
}

#[derive(Serialize)]
struct TailRow {
    c: f64,
    survival: f64,
}

pub const ES_FIT_HEADER: [&str; 5] = ["n", "trials", "successes", "value", "stderr"];
pub const GROWTH_HEADER: [&str; 6] = ["n", "trials", "mean_M", "stderr", "es_value", "ratio_M_over_n2Es"];
pub const BOXCOUNT_HEADER: [&str; 2] = ["trial", "J"];
pub const ENERGY_HEADER: [&str; 4] = ["k", "mean_energy", "stderr", "mean_mass"];
pub const TAIL_HEADER: [&str; 2] = ["c", "survival"];

fn default_grid(lo: i64, hi: i64) -> Vec<i64> {
    std::iter::successors(Some(lo), |&n| (n < hi).then_some(n * 2)).collect()
}

/// Runs the configured command entirely in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let command = ExperimentConfig::need(&cfg.command, "command")?;
    if cfg.trials == Some(0) || cfg.es_trials == Some(0) {
        return Err(CliError::Usage("trial counts must be positive".into()));
    }
    if cfg.workers == Some(0) {
        return Err(CliError::Usage("workers must be positive".into()));
    }
    let exec = cfg.exec();
    let seed = exec.master_seed;
    let mut out = RunOutput { command, artifacts: Vec::new(), results: Vec::new(), passed: true };
    match command {
        Command::Es => {
            let kind = cfg.kind.unwrap_or(EsKind::Plain);
            let trials = cfg.trials.unwrap_or(100_000);
            let ests = match kind {
                EsKind::Plain => vec![estimate_es(ExperimentConfig::need(&cfg.n, "n")?, trials, exec)?],
                EsKind::Star => vec![estimate_es_star(ExperimentConfig::need(&cfg.n, "n")?, trials, exec)?],
                EsKind::TwoScale => vec![estimate_es_two_scale(
                    ExperimentConfig::need(&cfg.m, "m")?,
                    ExperimentConfig::need(&cfg.n, "n")?,
                    trials,
                    exec,
                )?],
                EsKind::Joint => {
                    let n = ExperimentConfig::need(&cfg.n, "n")?;
                    let r = ExperimentConfig::need(&cfg.big_r, "R")?;
                    let l = cfg.big_l.unwrap_or(4 * r * n);
                    let (f, sep) = estimate_joint_separation(l, r, n, trials, exec)?;
                    vec![f, sep]
                }
            };
            out.results = ests.iter().map(es_record).collect();
            out.artifacts.push(if ests.len() == 1 { json("es.json", &ests[0]) } else { json("es.json", &ests) });
        }
        Command::EsFit => {
            let grid = cfg.grid.clone().unwrap_or_else(|| default_grid(8, 512));
            let (fit, ests) = fit_alpha(&grid, |n| cfg.trials.unwrap_or_else(|| default_trials(n)), exec)?;
            #[derive(Serialize)]
            struct FitDoc<'a> {
                alpha: f64,
                alpha_stderr: f64,
                master_seed: u64,
                fit: &'a crate::escape::ExponentFit,
                estimates: &'a [EscapeEstimate],
            }
            let doc = FitDoc { alpha: fit.alpha(), alpha_stderr: fit.slope_stderr, master_seed: seed, fit: &fit, estimates: &ests };
            out.artifacts.push(json("es-fit.json", &doc));
            let rows: Vec<EsPointRow> = ests
                .iter()
                .map(|e| EsPointRow { n: e.n, trials: e.trials, successes: e.successes, value: e.value, stderr: e.stderr })
                .collect();
            out.artifacts.push(csv_artifact("es-fit.csv", &rows, &ES_FIT_HEADER));
            let total: u64 = ests.iter().map(|e| e.trials).sum();
            out.results.push(record("alpha", fit.alpha(), Some(fit.slope_stderr), seed, total));
            out.results.extend(ests.iter().map(es_record));
        }
        Command::Growth => {
            let grid = cfg.grid.clone().unwrap_or_else(|| default_grid(16, 512));
            let trials = cfg.trials.unwrap_or(10_000);
            let (fit, samples) = estimate_growth_exponent(&grid, |_| trials, exec)?;
            let rows: Vec<GrowthRow> = samples
                .iter()
                .map(|g: &GrowthSample| GrowthRow {
                    n: g.n,
                    trials: g.samples.len() as u64,
                    mean_m: g.mean,
                    stderr: g.stderr,
                    es_value: g.es.value,
                    ratio: g.ratio().0,
                })
                .collect();
            out.artifacts.push(csv_artifact("growth.csv", &rows, &GROWTH_HEADER));
            #[derive(Serialize)]
            struct GrowthDoc<'a> {
                beta: f64,
                beta_stderr: f64,
                master_seed: u64,
                trials_per_n: u64,
                fit: &'a crate::escape::ExponentFit,
            }
            out.artifacts.push(json(
                "growth.json",
                &GrowthDoc { beta: fit.slope, beta_stderr: fit.slope_stderr, master_seed: seed, trials_per_n: trials, fit: &fit },
            ));
            out.results.push(record("beta", fit.slope, Some(fit.slope_stderr), seed, trials));
            for g in &samples {
                out.results.push(record(format!("E[M_{}]", g.n), g.mean, Some(g.stderr), seed, trials));
            }
        }
        Command::Boxcount => {
            let eps = cfg.epsilon_exact(0.125)?;
            let n = cfg.n.unwrap_or(128);
            let trials = cfg.trials.unwrap_or(1000);
            let annulus = BoxAnnulus::new(eps, n, BoxConvention::Contained)?;
            let id = lerw_experiment(n);
            let counts = crate::parallel::run_trials(trials, exec.workers, |t| {
                count_boxes_hit_in(&annulus, StreamKey::new(seed, id, t))
            })
            .into_iter()
            .collect::<crate::Result<Vec<u64>>>()?;
            let rows: Vec<BoxRow> = counts.iter().enumerate().map(|(t, &j)| BoxRow { trial: t as u64, j }).collect();
            out.artifacts.push(csv_artifact("boxcount.csv", &rows, &BOXCOUNT_HEADER));
            let k = counts.len() as f64;
            let mean = counts.iter().sum::<u64>() as f64 / k;
            let var = counts.iter().map(|&j| (j as f64 - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
            #[derive(Serialize)]
            struct BoxDoc {
                epsilon: f64,
                n: i64,
                trials: u64,
                master_seed: u64,
                experiment_id: u64,
                qualifying_boxes: usize,
                mean_j: f64,
                stderr: f64,
                min_j: u64,
                max_j: u64,
                connectivity_floor: f64,
            }
            let doc = BoxDoc {
                epsilon: crate::dimension::to_f64(eps),
                n,
                trials,
                master_seed: seed,
                experiment_id: id,
                qualifying_boxes: annulus.len(),
                mean_j: mean,
                stderr: (var / k).sqrt(),
                min_j: counts.iter().copied().min().unwrap_or(0),
                max_j: counts.iter().copied().max().unwrap_or(0),
                connectivity_floor: connectivity_floor(eps),
            };
            out.results.push(record("mean J", doc.mean_j, Some(doc.stderr), seed, trials));
            out.artifacts.push(json("boxcount.json", &doc));
        }
        Command::Twobox => {
            let eps = cfg.epsilon_exact(0.125)?;
            let x = Point3::from(ExperimentConfig::need(&cfg.x, "x")?);
            let y = Point3::from(ExperimentConfig::need(&cfg.y, "y")?);
            let trials = cfg.trials.unwrap_or(10_000);
            let est = two_box_frequency(x, y, eps, cfg.n.unwrap_or(128), trials, exec)?;
            out.results.push(record("P(both boxes hit)", est.p_both, Some(est.stderr_both), seed, trials));
            out.artifacts.push(json("twobox.json", &est));
        }
        Command::Energy => {
            let n = cfg.n.unwrap_or(128);
            let trials = cfg.trials.unwrap_or(1000);
            let es_trials = cfg.es_trials.unwrap_or(10_000);
            let beta_hat = match cfg.beta {
                Some(b) => b,
                None => estimate_growth_exponent(&[16, 32, 64, 128], |_| es_trials, exec)?.0.slope,
            };
            let ecfg = EnergyConfig {
                k_grid: cfg.k.clone().unwrap_or_else(|| vec![2, 3, 4, 5]),
                n,
                trials,
                es_trials,
                delta: cfg.delta.unwrap_or(0.2),
                beta_hat,
            };
            let rows = energy_boundedness_experiment(&ecfg, exec)?;
            let csv_rows: Vec<EnergyCsvRow> = rows
                .iter()
                .map(|r| EnergyCsvRow { k: r.k, mean_energy: r.mean_energy, stderr: r.stderr, mean_mass: r.mean_mass })
                .collect();
            out.artifacts.push(csv_artifact("energy.csv", &csv_rows, &ENERGY_HEADER));
            let (slope, slope_stderr) = energy_trend(&rows);
            #[derive(Serialize)]
            struct EnergyDoc<'a> {
                config: &'a EnergyConfig,
                master_seed: u64,
                trend_slope: f64,
                trend_stderr: f64,
                second_moment_band: crate::escape::BandCheck,
                rows: &'a [crate::dimension::EnergyRow],
            }
            let band = second_moment_band(&rows, 4.0, 2.0);
            for r in &rows {
                out.results.push(record(format!("mean I(mu_{})", r.k), r.mean_energy, Some(r.stderr), seed, trials));
            }
            out.artifacts.push(json(
                "energy.json",
                &EnergyDoc { config: &ecfg, master_seed: seed, trend_slope: slope, trend_stderr: slope_stderr, second_moment_band: band, rows: &rows },
            ));
        }
        Command::Tail => {
            let eps = cfg.epsilon_exact(0.125)?;
            let trials = cfg.trials.unwrap_or(1000);
            let report = tail_demonstration(eps, cfg.n.unwrap_or(128), trials, &default_c_grid(), exec)?;
            let rows: Vec<TailRow> = report.curve.iter().map(|&(c, survival)| TailRow { c, survival }).collect();
            out.artifacts.push(csv_artifact("tail.csv", &rows, &TAIL_HEADER));
            out.results.push(record("IQR ratio", report.iqr_ratio, None, seed, trials));
            out.results.push(es_record(&report.es));
            out.artifacts.push(json("tail.json", &report));
        }
        Command::Verify => {
            let report = verify(cfg.suite.unwrap_or(Suite::All), exec)?;
            out.passed = report.passed;
            for c in &report.checks {
                out.results.push(record(format!("{}: {}", c.suite, c.name), c.value, None, seed, 0));
            }
            out.artifacts.push(json("verify.json", &report));
        }
        Command::Oracle => {
            let query = ExperimentConfig::need(&cfg.query, "query")?;
            #[derive(Serialize)]
            struct OracleDoc {
                query: OracleQuery,
                #[serde(skip_serializing_if = "Option::is_none")]
                radius: Option<i64>,
                #[serde(skip_serializing_if = "Option::is_none")]
                x: Option<[i64; 3]>,
                #[serde(skip_serializing_if = "Option::is_none")]
                y: Option<[i64; 3]>,
                value: f64,
                #[serde(skip_serializing_if = "Vec::is_empty")]
                distribution: Vec<([i64; 3], f64)>,
            }
            let mut doc = OracleDoc { query, radius: None, x: None, y: None, value: 0.0, distribution: Vec::new() };
            if query == OracleQuery::EscapeOne {
                doc.value = exact_es_one();
            } else {
                let radius = ExperimentConfig::need(&cfg.radius, "radius")?;
                let domain = FiniteDomain::from_ball(&Ball::centered(radius))?;
                let x = Point3::from(cfg.x.unwrap_or([0, 0, 0]));
                doc.radius = Some(radius);
                doc.x = Some(x.coords());
                match query {
                    OracleQuery::Green => {
                        let y = Point3::from(ExperimentConfig::need(&cfg.y, "y")?);
                        doc.y = Some(y.coords());
                        doc.value = greens_function(&domain, x, y)?;
                    }
                    OracleQuery::Hitting => {
                        let y = Point3::from(ExperimentConfig::need(&cfg.y, "y")?);
                        doc.y = Some(y.coords());
                        let target: LatticeSet = [y].into_iter().collect();
                        doc.value = hitting_probability(&domain, x, &target)?;
                    }
                    OracleQuery::Exit => {
                        let d = exit_distribution(&domain, x)?;
                        doc.value = d.iter().map(|e| e.1).sum();
                        doc.distribution = d.into_iter().map(|(p, w)| (p.coords(), w)).collect();
                    }
                    OracleQuery::ExitTime => doc.value = mean_exit_time(&domain, x)?,
                    OracleQuery::EscapeOne => unreachable!(),
                }
            }
            out.results.push(record(format!("{query:?}"), doc.value, None, seed, 0));
            out.artifacts.push(json("oracle.json", &doc));
        }
    }
    Ok(out)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Executes `cfg`, writes artifacts (to `cfg.out` or stdout) and returns the
/// manifest. A failed verification is reported as [`CliError::Failure`]
/// after the artifacts are written.
pub fn run(cfg: &ExperimentConfig, stdout: &mut dyn Write) -> Result<RunManifest, CliError> {
    let started = unix_now();
    let output = execute(cfg)?;
    let mut manifest = RunManifest {
        tool: "lerw".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        started_unix: started,
        finished_unix: unix_now(),
        outputs: output.artifacts.iter().map(|a| a.file.clone()).collect(),
        results: output.results,
        passed: output.passed,
    };
    let io = |e: std::io::Error| CliError::Failure(format!("cannot write output: {e}"));
    match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io)?;
            for a in &output.artifacts {
                fs::write(dir.join(&a.file), &a.contents).map_err(io)?;
            }
            manifest.outputs.push("manifest.json".into());
            fs::write(dir.join("manifest.json"), json("manifest.json", &manifest).contents).map_err(io)?;
            writeln!(stdout, "{}: wrote {} to {}", output.command.name(), manifest.outputs.join(", "), dir.display()).map_err(io)?;
        }
        None => stdout.write_all(output.artifacts[0].contents.as_bytes()).map_err(io)?,
    }
    if !manifest.passed {
        return Err(CliError::Failure("verification checks failed".into()));
    }
    Ok(manifest)
}

// ---- command line ----

#[derive(Parser, Debug)]
#[command(name = "lerw", version, about = "Loop-erased random walk experiments on Z^3")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// JSON config file; flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (falls back to LERW_WORKERS, then the core count).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory for CSV/JSON artifacts and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<u64>,
}

fn parse_epsilon(s: &str) -> Result<f64, String> {
    match s.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| format!("bad ε `{s}`"))?;
            let q: f64 = q.trim().parse().map_err(|_| format!("bad ε `{s}`"))?;
            Ok(p / q)
        }
        None => s.parse().map_err(|_| format!("bad ε `{s}`")),
    }
}

fn parse_point(s: &str) -> Result<[i64; 3], String> {
    let v: Vec<i64> = s.split(',').map(|t| t.trim().parse::<i64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    v.try_into().map_err(|_| format!("expected three comma-separated integers, got `{s}`"))
}

#[derive(Subcommand, Debug)]
pub enum CliCommand {
    /// Escape probability estimate.
    Es {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: Option<EsKind>,
        #[arg(long)]
        n: Option<i64>,
        #[arg(long)]
        m: Option<i64>,
        #[arg(long = "L")]
        big_l: Option<i64>,
        #[arg(long = "R")]
        big_r: Option<i64>,
    },
    /// Log-log fit of Es(n) over a grid of radii.
    EsFit {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<i64>>,
    },
    /// Mean LERW length E(M_n) and its ratio to n² Es(n).
    Growth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<i64>>,
    },
    /// Box counts J_{ε,n} per sample.
    Boxcount {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_epsilon)]
        epsilon: Option<f64>,
        #[arg(long)]
        n: Option<i64>,
    },
    /// Joint hitting frequency of two boxes.
    Twobox {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        x: Option<[i64; 3]>,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        y: Option<[i64; 3]>,
        #[arg(long, value_parser = parse_epsilon)]
        epsilon: Option<f64>,
        #[arg(long)]
        n: Option<i64>,
    },
    /// Riesz energies of the grid measures μ_k.
    Energy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<u32>>,
        #[arg(long)]
        n: Option<i64>,
        /// Growth exponent; estimated from E(M_n) when omitted.
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        es_trials: Option<u64>,
    },
    /// Survival curve of the normalised box count.
    Tail {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_epsilon)]
        epsilon: Option<f64>,
        #[arg(long)]
        n: Option<i64>,
    },
    /// Invariant batteries.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = |s: &str| Suite::parse(s).ok_or_else(|| format!("unknown suite `{s}`")))]
        suite: Option<Suite>,
    },
    /// Exact Green's function, hitting and exit queries on B(0, radius).
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        query: Option<OracleQuery>,
        #[arg(long)]
        radius: Option<i64>,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        x: Option<[i64; 3]>,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        y: Option<[i64; 3]>,
    },
}

impl CliCommand {
    /// Flag layer and the config file to put under it.
    pub fn into_config(self) -> (ExperimentConfig, Option<PathBuf>) {
        let mut c = ExperimentConfig::default();
        let common = match self {
            CliCommand::Es { common, kind, n, m, big_l, big_r } => {
                c.command = Some(Command::Es);
                (c.kind, c.n, c.m, c.big_l, c.big_r) = (kind, n, m, big_l, big_r);
                common
            }
            CliCommand::EsFit { common, grid } => {
                c.command = Some(Command::EsFit);
                c.grid = grid;
                common
            }
            CliCommand::Growth { common, grid } => {
                c.command = Some(Command::Growth);
                c.grid = grid;
                common
            }
            CliCommand::Boxcount { common, epsilon, n } => {
                c.command = Some(Command::Boxcount);
                (c.epsilon, c.n) = (epsilon, n);
                common
            }
            CliCommand::Twobox { common, x, y, epsilon, n } => {
                c.command = Some(Command::Twobox);
                (c.x, c.y, c.epsilon, c.n) = (x, y, epsilon, n);
                common
            }
            CliCommand::Energy { common, delta, k, n, beta, es_trials } => {
                c.command = Some(Command::Energy);
                (c.delta, c.k, c.n, c.beta, c.es_trials) = (delta, k, n, beta, es_trials);
                common
            }
            CliCommand::Tail { common, epsilon, n } => {
                c.command = Some(Command::Tail);
                (c.epsilon, c.n) = (epsilon, n);
                common
            }
            CliCommand::Verify { common, suite } => {
                c.command = Some(Command::Verify);
                c.suite = suite;
                common
            }
            CliCommand::Oracle { common, query, radius, x, y } => {
                c.command = Some(Command::Oracle);
                (c.query, c.radius, c.x, c.y) = (query, radius, x, y);
                common
            }
        };
        (c.master_seed, c.workers, c.out, c.trials) = (common.seed, common.workers, common.out, common.trials);
        (c, common.config)
    }
}

/// Full command-line entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let (flags, file) = cli.command.into_config();
    let cfg = match file {
        Some(path) => match ExperimentConfig::from_json_file(&path) {
            Ok(base) => {
                if base.command.is_some_and(|c| Some(c) != flags.command) {
                    let _ = writeln!(stderr, "usage error: config file is for a different command");
                    return EXIT_USAGE;
                }
                base.merge(flags)
            }
            Err(e) => {
                let _ = writeln!(stderr, "{e}");
                return e.exit_code();
            }
        },
        None => flags,
    };
    match run(&cfg, stdout) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "{e}");
            e.exit_code()
        }
    }
}
