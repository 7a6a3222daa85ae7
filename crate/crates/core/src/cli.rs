//! Command-line driver: configuration schema, presets and artifact writing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{self, CoveragePoint, FullCoverageSettings};
use crate::error::{Error, ErrorClass, Result};
use crate::fmt_f64;
use crate::funcgrammar;
use crate::kernelsmooth::{ci_band, nw_fit, BandDensity, BandwidthChoice, EvalGrid, Kernel};
use crate::model::{check_stability, simulate, GrowthBound, InitialRegime, InitialValue, ModelSpec, Regression, Series, TransitionMatrix};
use crate::rmfit::{rm_run, FitReport, LagPolicy, RMConfig, RestoreFrom, SigmaMode};

pub const RNG_NAME: &str = "ChaCha8Rng";

#[derive(Debug, Parser)]
#[command(name = "msnar", version, about = "Markov-switching non-linear autoregression: simulation and kernel estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Simulate,
    FitFull,
    FitHidden,
    CoverageFull,
    CoverageHidden,
    CheckStability,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::FitFull => "fit-full",
            Task::FitHidden => "fit-hidden",
            Task::CoverageFull => "coverage-full",
            Task::CoverageHidden => "coverage-hidden",
            Task::CheckStability => "check-stability",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a series and write `series.csv`.
    Simulate(RunArgs),
    /// Per-regime kernel regression with the regime path observed.
    FitFull(RunArgs),
    /// Robbins-Monro fit with the regime path hidden.
    FitHidden(RunArgs),
    /// Monte-Carlo coverage of the fully observed bands.
    CoverageFull(RunArgs),
    /// Coverage of the hidden-case bands over reruns on one series.
    CoverageHidden(RunArgs),
    /// Stationary law and moment conditions of the model.
    CheckStability(RunArgs),
}

impl Command {
    pub fn task(&self) -> Task {
        match self {
            Command::Simulate(_) => Task::Simulate,
            Command::FitFull(_) => Task::FitFull,
            Command::FitHidden(_) => Task::FitHidden,
            Command::CoverageFull(_) => Task::CoverageFull,
            Command::CoverageHidden(_) => Task::CoverageHidden,
            Command::CheckStability(_) => Task::CheckStability,
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Simulate(a)
            | Command::FitFull(a)
            | Command::FitHidden(a)
            | Command::CoverageFull(a)
            | Command::CoverageHidden(a)
            | Command::CheckStability(a) => a,
        }
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in scenario (`paper_m3`, `m1_linear`).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Robbins-Monro iterations T.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Input series CSV (`k,y,x`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Series length for simulation.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// A regression given as an expression, a named preset, or an
/// expression with growth constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegressionConfig {
    Expr(String),
    Preset {
        preset: String,
    },
    Detailed {
        expr: String,
        #[serde(default)]
        rho: Option<f64>,
        #[serde(default)]
        b: Option<f64>,
        #[serde(default)]
        bounded: bool,
    },
}

impl RegressionConfig {
    fn build(&self) -> Result<Regression> {
        match self {
            RegressionConfig::Expr(s) => Regression::parse(s, None),
            RegressionConfig::Preset { preset } => Ok(Regression::from_preset(funcgrammar::preset(preset)?)),
            RegressionConfig::Detailed { expr, rho, b, bounded } => {
                let growth = match (rho, b) {
                    (Some(rho), b) => Some(GrowthBound { rho: *rho, b: b.unwrap_or(0.0) }),
                    (None, Some(b)) if *bounded => Some(GrowthBound { rho: funcgrammar::BOUNDED_DEFAULT_RHO, b: *b }),
                    (None, Some(_)) => {
                        return Err(Error::Config("regression with `b` but no `rho` must set `bounded: true`".into()))
                    }
                    (None, None) => None,
                };
                Regression::parse(expr, growth)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum X1Config {
    Named(String),
    Law(Vec<f64>),
}

impl Default for X1Config {
    fn default() -> Self {
        X1Config::Named("stationary".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub transition: Vec<Vec<f64>>,
    pub regressions: Vec<RegressionConfig>,
    pub noise_sigma: f64,
    #[serde(default)]
    pub y0: InitialValue,
    #[serde(default)]
    pub x1: X1Config,
    #[serde(default)]
    pub burn_in: usize,
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        let transition = TransitionMatrix::new(self.transition.clone())?;
        let regressions = self.regressions.iter().map(RegressionConfig::build).collect::<Result<Vec<_>>>()?;
        let mut spec = ModelSpec::new(transition, regressions, self.noise_sigma)?;
        spec.y0 = self.y0;
        spec.x1 = match &self.x1 {
            X1Config::Named(s) if s == "stationary" => InitialRegime::Stationary,
            X1Config::Named(s) => return Err(Error::Config(format!("unknown x1 law `{s}`"))),
            X1Config::Law(p) => InitialRegime::Given(p.clone()),
        };
        spec.burn_in = self.burn_in;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum GridConfig {
    /// Equispaced over the central `coverage` quantile range of the data.
    Data { points: usize, coverage: f64 },
    Range { lo: f64, hi: f64, points: usize },
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig::Data { points: 201, coverage: 0.98 }
    }
}

impl GridConfig {
    pub fn build(&self, y: &[f64]) -> Result<EvalGrid> {
        match *self {
            GridConfig::Data { points, coverage } => EvalGrid::from_data(y, points, coverage),
            GridConfig::Range { lo, hi, points } => EvalGrid::linspace(lo, hi, points),
        }
    }
}

fn default_k0() -> f64 {
    0.55
}
fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default = "default_k0")]
    pub k0: f64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub band_density: BandDensity,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            kernel: Kernel::Triweight,
            k0: default_k0(),
            grid: GridConfig::default(),
            alpha: default_alpha(),
            band_density: BandDensity::default(),
        }
    }
}

fn default_gamma0() -> f64 {
    1.0
}
fn default_exponent() -> f64 {
    0.6
}
fn default_iterations() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmSettings {
    #[serde(default = "default_gamma0")]
    pub gamma0: f64,
    #[serde(default = "default_exponent")]
    pub gamma_exponent: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub lag: LagPolicy,
    #[serde(default)]
    pub restore_from: RestoreFrom,
    #[serde(default)]
    pub sigma_mode: SigmaMode,
    #[serde(default)]
    pub freeze_h_after: Option<usize>,
}

impl Default for RmSettings {
    fn default() -> Self {
        RmSettings {
            gamma0: default_gamma0(),
            gamma_exponent: default_exponent(),
            iterations: default_iterations(),
            lag: LagPolicy::default(),
            restore_from: RestoreFrom::default(),
            sigma_mode: SigmaMode::default(),
            freeze_h_after: None,
        }
    }
}

fn default_replications() -> usize {
    200
}
fn default_points_per_regime() -> usize {
    5
}
fn default_min_density() -> f64 {
    0.05
}
fn default_pilot_n() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageConfig {
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_points_per_regime")]
    pub points_per_regime: usize,
    #[serde(default = "default_min_density")]
    pub min_density: f64,
    /// Length of the pilot series used to place interior points.
    #[serde(default = "default_pilot_n")]
    pub pilot_n: usize,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig {
            replications: default_replications(),
            points_per_regime: default_points_per_regime(),
            min_density: default_min_density(),
            pilot_n: default_pilot_n(),
        }
    }
}

fn default_s() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    #[serde(default = "default_s")]
    pub s: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig { s: default_s() }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<ModelConfig>,
    /// Number of regimes for fits without a model section.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub rm: RmSettings,
    #[serde(default)]
    pub coverage: CoverageConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
}

/// Built-in scenarios.
pub fn scenario_preset(name: &str) -> Result<RunConfig> {
    let base = RunConfig {
        model: None,
        m: None,
        n: Some(3000),
        seed: 0,
        input: None,
        out: default_out(),
        estimator: EstimatorConfig::default(),
        rm: RmSettings::default(),
        coverage: CoverageConfig::default(),
        stability: StabilityConfig::default(),
    };
    match name {
        "paper_m3" => {
            let off = 0.025;
            Ok(RunConfig {
                model: Some(ModelConfig {
                    transition: vec![vec![0.95, off, off], vec![off, 0.95, off], vec![off, off, 0.95]],
                    regressions: funcgrammar::PRESETS
                        .iter()
                        .map(|p| RegressionConfig::Preset { preset: p.name.to_string() })
                        .collect(),
                    noise_sigma: 0.5,
                    y0: InitialValue::default(),
                    x1: X1Config::default(),
                    burn_in: 0,
                }),
                // the restoration law uses the model's noise density, which the study treats as known
                rm: RmSettings { sigma_mode: SigmaMode::Known(0.5), ..RmSettings::default() },
                ..base
            })
        }
        "m1_linear" => Ok(RunConfig {
            model: Some(ModelConfig {
                transition: vec![vec![1.0]],
                regressions: vec![RegressionConfig::Detailed { expr: "0.5*y".into(), rho: Some(0.5), b: Some(0.0), bounded: false }],
                noise_sigma: 0.3,
                y0: InitialValue::default(),
                x1: X1Config::default(),
                burn_in: 0,
            }),
            rm: RmSettings { iterations: 500, ..RmSettings::default() },
            ..base
        }),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(args: &RunArgs) -> Result<Self> {
        let mut cfg = match (&args.config, &args.preset) {
            (Some(path), _) => Self::from_json(&fs::read_to_string(path)?)?,
            (None, Some(name)) => scenario_preset(name)?,
            (None, None) => return Err(Error::Config("either --config or --preset is required".into())),
        };
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(t) = args.iterations {
            cfg.rm.iterations = t;
        }
        if let Some(o) = &args.out {
            cfg.out = o.clone();
        }
        if let Some(i) = &args.input {
            cfg.input = Some(i.clone());
        }
        if let Some(n) = args.n {
            cfg.n = Some(n);
        }
        if let Some(r) = args.replications {
            cfg.coverage.replications = r;
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form (sorted keys, no whitespace),
    /// leaving out where the artifacts go.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out");
        }
        let text = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn model_spec(&self) -> Result<Option<ModelSpec>> {
        self.model.as_ref().map(ModelConfig::build).transpose()
    }

    fn require_model(&self, task: Task) -> Result<ModelSpec> {
        self.model_spec()?.ok_or_else(|| Error::Config(format!("`{}` needs a `model` section", task.name())))
    }

    fn require_n(&self, task: Task) -> Result<usize> {
        self.n.ok_or_else(|| Error::Config(format!("`{}` needs `n`", task.name())))
    }

    fn regime_count(&self, series: &Series) -> Result<usize> {
        if let Some(m) = self.m {
            return Ok(m);
        }
        if let Some(model) = &self.model {
            return Ok(model.transition.len());
        }
        match &series.x {
            Some(x) => Ok(x.iter().copied().max().map_or(1, |v| v + 1)),
            None => Err(Error::Config("hidden fit needs `m` or a `model` section".into())),
        }
    }

    /// Observed series: the input file, or a simulation from the model.
    fn series(&self, task: Task) -> Result<Series> {
        match &self.input {
            Some(path) => Series::read_csv(fs::File::open(path)?),
            None => {
                let spec = self.require_model(task)?;
                simulate(&spec, self.require_n(task)?, self.seed)
            }
        }
    }

    pub fn rm_config(&self, m: usize, grid: EvalGrid) -> RMConfig {
        RMConfig {
            m,
            grid,
            kernel: self.estimator.kernel,
            k0: self.estimator.k0,
            gamma0: self.rm.gamma0,
            gamma_exponent: self.rm.gamma_exponent,
            iterations: self.rm.iterations,
            seed: self.seed,
            lag: self.rm.lag,
            band_alpha: self.estimator.alpha,
            restore_from: self.rm.restore_from,
            sigma_mode: self.rm.sigma_mode,
            freeze_h_after: self.rm.freeze_h_after,
        }
    }
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Self {
        Artifacts { dir: dir.to_path_buf(), written: Vec::new() }
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.written.push(name.to_string());
        Ok(())
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Runs one task and writes its artifacts plus `manifest.json`.
pub fn run(task: Task, cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    let mut art = Artifacts::new(&cfg.out);
    let summary = match task {
        Task::Simulate => run_simulate(cfg, &mut art)?,
        Task::FitFull => run_fit_full(cfg, &mut art)?,
        Task::FitHidden => run_fit_hidden(cfg, &mut art)?,
        Task::CoverageFull => run_coverage_full(cfg, &mut art)?,
        Task::CoverageHidden => run_coverage_hidden(cfg, &mut art)?,
        Task::CheckStability => run_stability(cfg, &mut art)?,
    };
    let unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let input_sha = cfg.input.as_deref().map(file_sha256).transpose()?;
    let manifest = serde_json::json!({
        "command": task.name(),
        "config": cfg,
        "config_sha256": cfg.hash(),
        "seed": cfg.seed,
        "rng": RNG_NAME,
        "version": env!("CARGO_PKG_VERSION"),
        "input_sha256": input_sha,
        "outputs": art.written,
        "summary": summary,
        "finished_unix": unix,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    write_atomic(&cfg.out.join("manifest.json"), &json_bytes(&manifest)?)
}

fn run_simulate(cfg: &RunConfig, art: &mut Artifacts) -> Result<serde_json::Value> {
    let spec = cfg.require_model(Task::Simulate)?;
    let n = cfg.require_n(Task::Simulate)?;
    let series = simulate(&spec, n, cfg.seed)?;
    art.put("series.csv", &csv_bytes(|b| series.write_csv(b))?)?;
    Ok(serde_json::json!({ "n": n, "m": spec.m() }))
}

fn run_fit_full(cfg: &RunConfig, art: &mut Artifacts) -> Result<serde_json::Value> {
    let series = cfg.series(Task::FitFull)?;
    if series.x.is_none() {
        return Err(Error::InvalidSeries("fit-full needs the regime column `x`".into()));
    }
    let m = cfg.regime_count(&series)?;
    let grid = cfg.estimator.grid.build(&series.y)?;
    let est = nw_fit(&series, m, cfg.estimator.kernel, &BandwidthChoice::Rule { k0: cfg.estimator.k0 }, &grid)?;
    let est = ci_band(est, cfg.estimator.alpha, cfg.estimator.band_density, &series)?;
    art.put("estimate.csv", &csv_bytes(|b| est.write_csv(b))?)?;
    let sidecar = est.sidecar();
    art.put("estimate.json", &json_bytes(&sidecar)?)?;
    Ok(sidecar)
}

fn write_fit_report(report: &FitReport, truth: Option<&TruthComparison>, art: &mut Artifacts) -> Result<()> {
    let m = report.theta_bar.len();
    let pts = report.grid.points();
    let mut buf = b"y,regime,value,ci_lo,ci_hi\n".to_vec();
    for i in 0..m {
        for (g, &y) in pts.iter().enumerate() {
            let v = report.theta_bar[i][g];
            let hw = report.half_width[i][g];
            writeln!(buf, "{},{},{},{},{}", fmt_f64(y), i + 1, fmt_f64(v), fmt_f64(v - hw), fmt_f64(v + hw))?;
        }
    }
    art.put("theta_bar.csv", &buf)?;

    let mut buf = b"y,regime,value,f_tilde\n".to_vec();
    for i in 0..m {
        for (g, &y) in pts.iter().enumerate() {
            writeln!(buf, "{},{},{},{}", fmt_f64(y), i + 1, fmt_f64(report.theta_star[i][g]), fmt_f64(report.f_tilde[i][g]))?;
        }
    }
    art.put("theta_star.csv", &buf)?;

    let mut buf = b"t,step_change_sq,frobenius_sq_error\n".to_vec();
    for tr in &report.trace {
        let err = truth.map(|c| diagnostics::transition_error(&tr.a, &c.a_true, Some(&c.permutation)));
        writeln!(buf, "{},{},{}", tr.t, fmt_f64(tr.a_step_sq), err.map(fmt_f64).unwrap_or_default())?;
    }
    art.put("transition_trace.csv", &buf)?;

    let mut buf = b"t,regime,sigma2\n".to_vec();
    for tr in &report.trace {
        for (i, s2) in tr.sigma2.iter().enumerate() {
            writeln!(buf, "{},{},{}", tr.t, i + 1, fmt_f64(*s2))?;
        }
    }
    art.put("sigma_trace.csv", &buf)?;
    art.put("posterior.csv", &csv_bytes(|b| report.posterior.write_csv(b))?)?;
    Ok(())
}

/// Ground truth used to score a hidden fit.
struct TruthComparison {
    a_true: Vec<Vec<f64>>,
    /// estimated label -> true label
    permutation: Vec<usize>,
}

fn run_fit_hidden(cfg: &RunConfig, art: &mut Artifacts) -> Result<serde_json::Value> {
    let series = cfg.series(Task::FitHidden)?;
    let m = cfg.regime_count(&series)?;
    let grid = cfg.estimator.grid.build(&series.y)?;
    let rm = cfg.rm_config(m, grid.clone());
    let report = rm_run(&series.hidden(), &rm)?;
    let spec = cfg.model_spec()?;

    let alignment = match &series.x {
        Some(x) => Some(diagnostics::align_labels(&report.last_path, x, m)?),
        None => None,
    };
    let permutation = match (&alignment, &spec) {
        (Some(a), _) => Some(a.permutation.clone()),
        (None, Some(spec)) => {
            let truth: Vec<Vec<f64>> =
                spec.regressions.iter().map(|r| grid.points().iter().map(|&y| r.eval(y)).collect()).collect();
            Some(diagnostics::align_by_curves(&report.theta_bar, &truth)?)
        }
        (None, None) => None,
    };
    let truth = match (&spec, &permutation) {
        (Some(spec), Some(p)) if spec.m() == m => {
            Some(TruthComparison { a_true: spec.transition.rows().clone(), permutation: p.clone() })
        }
        _ => None,
    };
    write_fit_report(&report, truth.as_ref(), art)?;

    let lag_used = report.covariance.first().map(|c| c.lag_used);
    let mut summary = serde_json::json!({
        "m": m,
        "n": series.n(),
        "iterations": report.iterations,
        "transition": report.a.rows(),
        "lambda": report.lambda,
        "sigma2": report.sigma.iter().map(|s| s * s).collect::<Vec<_>>(),
        "h": report.h,
        "loglik": report.posterior.loglik,
        "lag_used": lag_used,
        "band_alpha": rm.band_alpha,
    });
    if let Some(p) = &permutation {
        summary["permutation"] = serde_json::json!(p.iter().map(|v| v + 1).collect::<Vec<_>>());
        summary["transition_aligned"] = serde_json::json!(diagnostics::permute_matrix(report.a.rows(), p));
        summary["sigma2_aligned"] = serde_json::json!(diagnostics::permute_rows(
            &report.sigma.iter().map(|s| s * s).collect::<Vec<_>>(),
            p
        ));
    }
    if let Some(a) = &alignment {
        summary["misclassification_rate"] = serde_json::json!(a.misclassification_rate);
        summary["classification_matrix"] = serde_json::json!(a.classification_matrix.entries);
    }
    if let Some(t) = &truth {
        summary["frobenius_sq_error"] =
            serde_json::json!(diagnostics::transition_error(report.a.rows(), &t.a_true, Some(&t.permutation)));
    }
    art.put("fit_report.json", &json_bytes(&summary)?)?;
    Ok(summary)
}

fn coverage_points(cfg: &RunConfig, spec: &ModelSpec) -> Result<Vec<CoveragePoint>> {
    diagnostics::interior_points(
        spec,
        cfg.coverage.pilot_n,
        cfg.coverage.points_per_regime,
        cfg.coverage.min_density,
        cfg.estimator.kernel,
        cfg.estimator.k0,
        cfg.seed ^ 0x5EED,
    )
}

fn run_coverage_full(cfg: &RunConfig, art: &mut Artifacts) -> Result<serde_json::Value> {
    let spec = cfg.require_model(Task::CoverageFull)?;
    let points = coverage_points(cfg, &spec)?;
    let settings = FullCoverageSettings {
        n: cfg.require_n(Task::CoverageFull)?,
        replications: cfg.coverage.replications,
        alpha: cfg.estimator.alpha,
        kernel: cfg.estimator.kernel,
        k0: cfg.estimator.k0,
        seed: cfg.seed,
    };
    let report = diagnostics::coverage_experiment_full(&spec, &settings, &points)?;
    art.put("coverage.csv", &csv_bytes(|b| report.write_csv(b))?)?;
    art.put("coverage.json", &json_bytes(&report)?)?;
    Ok(serde_json::json!({ "points": report.points.len(), "replications": report.replications }))
}

fn run_coverage_hidden(cfg: &RunConfig, art: &mut Artifacts) -> Result<serde_json::Value> {
    let spec = cfg.require_model(Task::CoverageHidden)?;
    let series = cfg.series(Task::CoverageHidden)?;
    let m = spec.m();
    let grid = cfg.estimator.grid.build(&series.y)?;
    let rm = cfg.rm_config(m, grid.clone());
    let points = diagnostics::snap_to_grid(&coverage_points(cfg, &spec)?, &grid);
    let report = diagnostics::coverage_experiment_hidden(&series, &rm, cfg.coverage.replications, &points)?;
    art.put("coverage.csv", &csv_bytes(|b| report.write_csv(b))?)?;
    art.put("coverage.json", &json_bytes(&report)?)?;
    Ok(serde_json::json!({
        "points": report.points.len(),
        "replications": report.replications,
        "pre_asymptotic": report.pre_asymptotic,
    }))
}

fn run_stability(cfg: &RunConfig, art: &mut Artifacts) -> Result<serde_json::Value> {
    let spec = cfg.require_model(Task::CheckStability)?;
    let report = check_stability(&spec, cfg.stability.s)?;
    let value = serde_json::json!({ "report": report, "satisfied": report.satisfied() });
    art.put("stability.json", &json_bytes(&value)?)?;
    Ok(value)
}

/// Process exit code for an error class.
pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Schema => 2,
        ErrorClass::Io => 3,
        ErrorClass::Numerical => 4,
    }
}

/// Machine-readable error line for stderr.
pub fn error_json(err: &Error) -> String {
    serde_json::json!({ "error": err.kind(), "message": err.to_string() }).to_string()
}

/// Entry point behind `main`: returns the exit code.
pub fn main_with(cli: Cli) -> i32 {
    let args = cli.command.args().clone();
    if let Some(t) = args.threads {
        // only fails if a global pool already exists, in which case it is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    let result = RunConfig::load(&args).and_then(|cfg| run(cli.command.task(), &cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(e.class())
        }
    }
}
