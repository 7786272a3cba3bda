//! Experiment configuration, execution and result manifests for the `zdx`
//! command line.
//!
//! A run takes an [`ExperimentConfig`], executes one experiment kind and
//! writes `manifest.json` plus CSV tables into the output directory. Numeric
//! payloads depend only on the config and seed: every Monte Carlo reduction
//! in the core crate runs in fixed batch order.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use zdx_core::driver::Driver;
use zdx_core::excursion::{hit_stats, kac_check, ExcursionOptions, HitConfig, DEFAULT_CAP};
use zdx_core::greenkubo::{gk_extension, gk_induced};
use zdx_core::kernel::{g_fourier_many, g_series_many, SeriesOptions};
use zdx_core::lattice::{make_fp, Dim, Observable, Point};
use zdx_core::mlgm::{clt_experiment, mlgm_moment, sampler_moments};
use zdx_core::spectral::{fit_stable_params, llt_check, spectral_scan};
use zdx_core::suite::{preset, run_suite, SuiteConfig};
use zdx_core::{Exec, ZdxError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A config field failed validation; `path` names the field.
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Core(#[from] ZdxError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn config_err<T>(path: impl Into<String>, message: impl Into<String>) -> Result<T> {
    Err(CliError::Config { path: path.into(), message: message.into() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Spectral,
    Kernel,
    Excursion,
    Gk,
    Limit,
    Mlgm,
    Suite,
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    /// Fixture name or path to a driver JSON file.
    #[serde(default)]
    pub driver: Option<String>,
    /// `fp:x` / `fp:x,y` for `δ_p − δ_0`, or a path to an observable JSON file.
    #[serde(default)]
    pub obs: Option<String>,
    #[serde(default)]
    pub points: Vec<Vec<i64>>,
    /// Horizons (limit, spectral).
    #[serde(default)]
    pub n: Vec<u64>,
    /// Monte Carlo sample count: trajectories, excursions or draws.
    #[serde(default)]
    pub samples: Option<u64>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub cap: Option<u64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub criteria: Vec<u8>,
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
}

fn default_seed() -> u64 {
    7
}

impl ExperimentConfig {
    pub fn new(kind: Kind) -> Self {
        ExperimentConfig {
            kind,
            driver: None,
            obs: None,
            points: Vec::new(),
            n: Vec::new(),
            samples: None,
            tol: None,
            grid: None,
            cap: None,
            gamma: None,
            preset: None,
            criteria: Vec::new(),
            scale: None,
            seed: default_seed(),
            workers: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config { path: "config".into(), message: e.to_string() })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
    pub workers: usize,
    pub parallel: bool,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: String,
    pub pass: bool,
}

/// A rectangular table written as CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultManifest {
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub results: Value,
    pub assertions: Vec<Assertion>,
    pub pass: bool,
    /// Fields whose values may change with the worker count. Every reduction
    /// runs in batch order, so none do.
    pub reduction_order_sensitive: Vec<String>,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

/// Resolves a fixture name or a driver JSON path.
pub fn load_driver(reference: Option<&str>) -> Result<Driver> {
    let Some(r) = reference else {
        return config_err("driver", "a driver is required for this experiment");
    };
    if Path::new(r).is_file() {
        let text = fs::read_to_string(r)?;
        return Driver::from_json(&text).map_err(|e| CliError::Config { path: format!("driver ({r})"), message: e.to_string() });
    }
    Driver::fixture(r).map_err(|e| CliError::Config { path: "driver".into(), message: e.to_string() })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservableSpec {
    d: usize,
    support: Vec<(Vec<i64>, f64)>,
}

fn parse_point(coords: &[i64], d: Dim, path: &str) -> Result<Point> {
    if coords.len() != d.get() {
        return config_err(path, format!("expected {} coordinates, got {}", d.get(), coords.len()));
    }
    Point::from_coords(coords).map_err(|e| CliError::Config { path: path.into(), message: e.to_string() })
}

/// Resolves `fp:…` or an observable JSON path for a driver of dimension `d`.
pub fn load_observable(reference: Option<&str>, d: Dim) -> Result<Observable> {
    let Some(r) = reference else {
        return config_err("obs", "an observable is required for this experiment");
    };
    if let Some(rest) = r.strip_prefix("fp:") {
        let coords: Vec<i64> = rest
            .split(',')
            .map(|s| s.trim().parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CliError::Config { path: "obs".into(), message: format!("bad coordinate in `{r}`: {e}") })?;
        let p = parse_point(&coords, d, "obs")?;
        return Ok(make_fp(d, p)?);
    }
    let text = fs::read_to_string(r).map_err(|e| CliError::Config { path: "obs".into(), message: format!("{r}: {e}") })?;
    let spec: ObservableSpec = serde_json::from_str(&text).map_err(|e| CliError::Config { path: format!("obs ({r})"), message: e.to_string() })?;
    if spec.d != d.get() {
        return config_err("obs.d", format!("observable has d={} but the driver has d={}", spec.d, d.get()));
    }
    let support = spec
        .support
        .iter()
        .enumerate()
        .map(|(i, (c, w))| Ok((parse_point(c, d, &format!("obs.support[{i}]"))?, *w)))
        .collect::<Result<Vec<_>>>()?;
    let obs = Observable::from_weights(d, support).map_err(|e| CliError::Config { path: "obs.support".into(), message: e.to_string() })?;
    obs.ensure_centred().map_err(|e| CliError::Config { path: "obs.support".into(), message: e.to_string() })?;
    Ok(obs)
}

fn points(cfg: &ExperimentConfig, d: Dim, default: &[Point]) -> Result<Vec<Point>> {
    if cfg.points.is_empty() {
        return Ok(default.to_vec());
    }
    cfg.points.iter().enumerate().map(|(i, c)| parse_point(c, d, &format!("points[{i}]"))).collect()
}

fn positive<T: PartialOrd + Default + Copy + std::fmt::Display>(value: Option<T>, default: T, path: &str) -> Result<T> {
    let v = value.unwrap_or(default);
    if v <= T::default() {
        return config_err(path, format!("must be positive, got {v}"));
    }
    Ok(v)
}

fn default_points(d: Dim) -> Vec<Point> {
    match d {
        Dim::One => vec![Point::d1(1), Point::d1(2), Point::d1(3)],
        Dim::Two => vec![Point::d2(1, 0), Point::d2(2, 1)],
    }
}

/// Executes the experiment on a pool of `cfg.workers` threads.
pub fn run(cfg: &ExperimentConfig) -> Result<ResultManifest> {
    #[cfg(feature = "parallel")]
    {
        if cfg.workers > 0 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| CliError::Config { path: "workers".into(), message: e.to_string() })?;
            return pool.install(|| run_here(cfg));
        }
    }
    run_here(cfg)
}

fn run_here(cfg: &ExperimentConfig) -> Result<ResultManifest> {
    let start = Instant::now();
    let (results, assertions, tables) = match cfg.kind {
        Kind::Spectral => spectral(cfg)?,
        Kind::Kernel => kernel(cfg)?,
        Kind::Excursion => excursion(cfg)?,
        Kind::Gk => gk(cfg)?,
        Kind::Limit => limit(cfg)?,
        Kind::Mlgm => mlgm(cfg)?,
        Kind::Suite => suite(cfg)?,
    };
    let workers = if cfg!(feature = "parallel") && cfg.workers == 0 { available_workers() } else { cfg.workers.max(1) };
    Ok(ResultManifest {
        config: cfg.clone(),
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            workers,
            parallel: cfg!(feature = "parallel"),
            wall_seconds: start.elapsed().as_secs_f64(),
        },
        results,
        pass: assertions.iter().all(|a| a.pass),
        assertions,
        reduction_order_sensitive: Vec::new(),
        tables,
    })
}

fn available_workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

type Outcome = (Value, Vec<Assertion>, Vec<Table>);

fn f(x: f64) -> String {
    format!("{x:.12e}")
}

fn spectral(cfg: &ExperimentConfig) -> Result<Outcome> {
    let driver = load_driver(cfg.driver.as_deref())?;
    let grid = positive(cfg.grid, 64, "grid")?;
    let scan = spectral_scan(&driver, grid, 0.5, Exec::default())?;
    let mut results = json!({ "scan": scan_summary(&scan) });
    let mut table = Table::new("llt", &["n", "a_n", "max_scaled_error", "p0_exact", "p0_predicted"]);
    if scan.aperiodic {
        let fit = fit_stable_params(&scan)?;
        results["fit"] = serde_json::to_value(&fit)?;
        let ns = if cfg.n.is_empty() { vec![100, 10_000] } else { cfg.n.clone() };
        let mut rows = Vec::new();
        for &n in &ns {
            let r = llt_check(&driver, n, 100_000)?;
            table.push(vec![n.to_string(), f(r.a_n), f(r.max_scaled_error), f(r.p0_exact), f(r.p0_predicted)]);
            rows.push(r);
        }
        results["llt"] = serde_json::to_value(&rows)?;
    }
    Ok((results, Vec::new(), vec![table]))
}

fn scan_summary(s: &zdx_core::spectral::SpectralData) -> Value {
    json!({
        "aperiodic": s.aperiodic,
        "period": s.period,
        "max_offzero_modulus": s.max_offzero_modulus,
        "argmax_u": s.argmax_u,
        "gap": s.gap,
        "remainder_radius": s.remainder_radius,
        "outside_radius": s.outside_radius,
        "grid_size": s.grid_size,
    })
}

fn kernel(cfg: &ExperimentConfig) -> Result<Outcome> {
    let driver = load_driver(cfg.driver.as_deref())?;
    let ps = points(cfg, driver.dim(), &default_points(driver.dim()))?;
    let tol = positive(cfg.tol, 1e-6, "tol")?;
    let grid = positive(cfg.grid, 128, "grid")?;
    let series = g_series_many(&driver, &ps, SeriesOptions::for_dim(driver.dim(), tol))?;
    let fourier = g_fourier_many(&driver, &ps, grid);
    let mut table = Table::new("kernel", &["p", "g_series", "g_series_err", "g_fourier", "g_fourier_err"]);
    let mut assertions = Vec::new();
    match &fourier {
        Ok(fs) => {
            for (s, fo) in series.iter().zip(fs) {
                table.push(vec![s.p.to_string(), f(s.value), f(s.error_bound), f(fo.value), f(fo.error_bound)]);
                assertions.push(Assertion {
                    name: format!("|g_series - g_fourier| <= bounds at {}", s.p),
                    pass: (s.value - fo.value).abs() <= s.error_bound + fo.error_bound,
                });
            }
        }
        Err(_) => {
            for s in &series {
                table.push(vec![s.p.to_string(), f(s.value), f(s.error_bound), String::new(), String::new()]);
            }
        }
    }
    let results = json!({
        "series": series,
        "fourier": fourier.as_ref().ok(),
        "fourier_error": fourier.as_ref().err().map(|e| e.to_string()),
    });
    Ok((results, assertions, vec![table]))
}

fn excursion(cfg: &ExperimentConfig) -> Result<Outcome> {
    let driver = load_driver(cfg.driver.as_deref())?;
    let ps = points(cfg, driver.dim(), &default_points(driver.dim()))?;
    let n = positive(cfg.samples, 100_000, "samples")?;
    let cap = positive(cfg.cap, DEFAULT_CAP, "cap")?;
    let fold = driver.dim() == Dim::One && driver.max_step() == 1 && driver.as_iid().is_some();
    let kac = kac_check(&driver, &ps, n, cfg.seed, ExcursionOptions { cap, fold }, None)?;
    let mut table = Table::new("excursion", &["p", "E_N_p", "E_N_p_se", "alpha_hat", "alpha_lo", "alpha_hi", "censored"]);
    let mut hits = Vec::new();
    let mut assertions = Vec::new();
    for (k, &p) in kac.iter().zip(&ps) {
        let h = hit_stats(&driver, p, n, cfg.seed, &HitConfig { cap, ..HitConfig::default() })?;
        table.push(vec![
            p.to_string(),
            f(k.mean.mean),
            f(k.mean.se),
            f(h.alpha_hat.value),
            f(h.alpha_hat.lo),
            f(h.alpha_hat.hi),
            k.censored.to_string(),
        ]);
        assertions.push(Assertion { name: format!("Kac E[N_{p}] within 3 SE of 1"), pass: (k.mean.mean - 1.0).abs() <= 3.0 * k.mean.se });
        hits.push(h);
    }
    Ok((json!({ "kac": kac, "hits": hits }), assertions, vec![table]))
}

fn gk(cfg: &ExperimentConfig) -> Result<Outcome> {
    let driver = load_driver(cfg.driver.as_deref())?;
    let obs = load_observable(cfg.obs.as_deref(), driver.dim())?;
    let tol = positive(cfg.tol, 1e-8, "tol")?;
    let ext = gk_extension(&driver, &obs, tol)?;
    let mut table = Table::new("gk", &["method", "sigma_gk2", "error"]);
    table.push(vec!["extension".into(), f(ext.value), f(ext.truncation_bound)]);
    let mut results = json!({ "extension": summary_gk(&ext) });
    let mut assertions = Vec::new();
    if let Some(n) = cfg.samples {
        let ind = gk_induced(&driver, &obs, n, 64, cfg.seed)?;
        let ci = ind.ci.unwrap_or(f64::NAN);
        table.push(vec!["induced".into(), f(ind.value), f(ci)]);
        assertions.push(Assertion { name: "|extension - induced| <= 3 CI".into(), pass: (ext.value - ind.value).abs() <= 3.0 * ci });
        results["induced"] = summary_gk(&ind);
    }
    Ok((results, assertions, vec![table]))
}

fn summary_gk(r: &zdx_core::greenkubo::GkResult) -> Value {
    json!({
        "value": r.value,
        "truncation_bound": r.truncation_bound,
        "se": r.se,
        "ci": r.ci,
        "cesaro": r.cesaro,
        "decay_exponent": r.decay_exponent,
        "converged": r.converged,
        "censored": r.censored,
        "terms": r.per_k_terms.len(),
    })
}

fn limit(cfg: &ExperimentConfig) -> Result<Outcome> {
    let driver = load_driver(cfg.driver.as_deref())?;
    let obs = load_observable(cfg.obs.as_deref(), driver.dim())?;
    let ns: Vec<usize> = if cfg.n.is_empty() { vec![256, 1024, 4096] } else { cfg.n.iter().map(|&n| n as usize).collect() };
    if let Some(i) = (1..ns.len()).find(|&i| ns[i] <= ns[i - 1]) {
        return config_err(format!("n[{i}]"), "horizons must be strictly increasing");
    }
    let traj = positive(cfg.samples, 100_000, "samples")?;
    let report = clt_experiment(&driver, &obs, &ns, traj, cfg.seed)?;
    let mut table = Table::new(
        "limit",
        &["n", "normalizer", "return_mass_ratio", "m1", "m1_se", "m2_ratio", "m3", "m3_se", "m4_ratio"],
    );
    for r in &report.rows {
        table.push(vec![
            r.n.to_string(),
            f(r.normalization),
            r.normalization_ratio.map(f).unwrap_or_default(),
            f(r.moments[0].mean),
            f(r.moments[0].se),
            f(r.ratios[1]),
            f(r.moments[2].mean),
            f(r.moments[2].se),
            f(r.ratios[3]),
        ]);
    }
    Ok((serde_json::to_value(&report)?, Vec::new(), vec![table]))
}

fn mlgm(cfg: &ExperimentConfig) -> Result<Outcome> {
    let g = cfg.gamma.unwrap_or(0.5);
    if !(0.0..=1.0).contains(&g) {
        return config_err("gamma", format!("must lie in [0, 1], got {g}"));
    }
    let n = positive(cfg.samples, 1_000_000, "samples")?;
    let m = sampler_moments(g, true, n, cfg.seed, 4);
    let mut table = Table::new("mlgm", &["m", "empirical", "se", "exact"]);
    let mut assertions = Vec::new();
    for (k, e) in m.iter().enumerate() {
        let order = k as u32 + 1;
        let exact = mlgm_moment(g, order);
        table.push(vec![order.to_string(), f(e.mean), f(e.se), f(exact)]);
        assertions.push(Assertion { name: format!("moment {order} within 3 SE"), pass: (e.mean - exact).abs() <= 3.0 * e.se });
    }
    Ok((json!({ "gamma": g, "samples": n, "moments": m }), assertions, vec![table]))
}

fn suite(cfg: &ExperimentConfig) -> Result<Outcome> {
    let ids = if !cfg.criteria.is_empty() {
        cfg.criteria.clone()
    } else {
        preset(cfg.preset.as_deref().unwrap_or("all")).map_err(|e| CliError::Config { path: "preset".into(), message: e.to_string() })?
    };
    if let Some(bad) = ids.iter().find(|&&i| !(1..=10).contains(&i)) {
        return config_err("criteria", format!("criteria are numbered 1 to 10, got {bad}"));
    }
    let scale = positive(cfg.scale, 1.0, "scale")?;
    let reports = run_suite(&ids, &SuiteConfig { seed: cfg.seed, scale })?;
    let mut table = Table::new("suite", &["criterion", "check", "pass", "value", "target", "tolerance", "explained"]);
    let mut assertions = Vec::new();
    for r in &reports {
        for c in &r.checks {
            let explained = c.limit.as_ref().is_some_and(|l| l.cause_confirmed);
            table.push(vec![r.id.to_string(), c.name.clone(), c.pass.to_string(), f(c.value), f(c.target), f(c.tolerance), explained.to_string()]);
        }
        assertions.push(Assertion { name: format!("criterion {}: {}", r.id, r.title), pass: r.pass() });
    }
    Ok((serde_json::to_value(&reports)?, assertions, vec![table]))
}

/// Writes `manifest.json` and one CSV per table; returns the written paths.
pub fn write_outputs(manifest: &ResultManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(manifest)?)?;
    written.push(path);
    for t in &manifest.tables {
        let path = dir.join(format!("{}.csv", t.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&t.header)?;
        for row in &t.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
