//! Command implementations behind the `bqe` binary.
//!
//! Every command returns an [`Outcome`] (text for stdout and the files it
//! wrote) or an [`AppError`] whose [`AppError::exit_code`] is the process
//! status. All files are written atomically and carry the configuration hash
//! and the format version.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::billiard::{
    birkhoff_average, invariant_mean, measure_preservation_check, random_point, standard_observables, SampleDensity,
};
use crate::boundary_calculus::{predicted_limit, BoundaryMeasure, CalculusError, SFactor, SigmaFactor, SymbolSpec};
use crate::cache::{build_cache, json_hash, read_cache, write_atomic, write_cache, CacheError, SpectrumCache, FORMAT_VERSION};
use crate::config::{ConfigError, RunConfig};
use crate::eigensolver::solver::{verify_completeness, SolverError};
use crate::geometry::{build_domain, BoundaryCurve, DomainSpec, Shape};
use crate::mode::BcKind;
use crate::oracles::{disk_levels_below, weyl_count};
use crate::qe_stats::{cesaro, compare, qe_analysis, ModeEnsemble, QEReport, StatsError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Input(_) => 3,
            AppError::Numerical(_) => 4,
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e.0)
    }
}

impl From<CacheError> for AppError {
    fn from(e: CacheError) -> Self {
        AppError::Input(e.to_string())
    }
}

impl From<SolverError> for AppError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Config(m) => AppError::Config(m),
            other => AppError::Numerical(other.to_string()),
        }
    }
}

impl From<CalculusError> for AppError {
    fn from(e: CalculusError) -> Self {
        match e {
            CalculusError::Data(m) => AppError::Input(m),
            CalculusError::Unsupported(m) | CalculusError::Invalid(m) => AppError::Config(m),
        }
    }
}

impl From<StatsError> for AppError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::Config(m) => AppError::Config(m),
            StatsError::Ensemble(m) => AppError::Input(m),
            StatsError::Calculus(c) => c.into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    /// Text printed on stdout.
    pub message: String,
    pub files: Vec<PathBuf>,
}

fn header_line(config_hash: &str) -> String {
    format!("# bqe format_version={FORMAT_VERSION} config_hash={config_hash}\n")
}

/// CSV text with the provenance comment line on top.
fn csv_text(config_hash: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf8 csv");
    header_line(config_hash) + &body
}

fn json_text<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("value serializes") + "\n"
}

fn g(x: f64) -> String {
    format!("{x:.12e}")
}

struct Writer {
    files: Vec<PathBuf>,
}

impl Writer {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn put(&mut self, path: PathBuf, text: &[u8]) -> Result<(), AppError> {
        write_atomic(&path, text).map_err(|e| AppError::Input(format!("cannot write output: {e}")))?;
        self.files.push(path);
        Ok(())
    }
}

fn bc_slug(bc: BcKind) -> &'static str {
    match bc {
        BcKind::Dirichlet => "dirichlet",
        BcKind::Neumann => "neumann",
        BcKind::RobinConstant { .. } => "robin_constant",
        BcKind::RobinMultiplier { .. } => "robin_multiplier",
    }
}

fn dry_run_message(cfg: &RunConfig, plan: &[String]) -> String {
    let mut s = format!("dry run: configuration valid\nconfig_hash = {}\n\n{}", cfg.hash(), cfg.to_toml());
    if !plan.is_empty() {
        s += "\nwould write:\n";
        for p in plan {
            s += &format!("  {p}\n");
        }
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct DomainInfo {
    pub format_version: u32,
    pub config_hash: String,
    pub domain: DomainSpec,
    pub domain_hash: String,
    pub length: f64,
    pub area: f64,
    pub inradius: f64,
    pub corners: Vec<f64>,
    pub closure_error: f64,
    /// Two-term Weyl count at the configured scan ceiling.
    pub weyl_count: f64,
}

pub fn domain_info(cfg: &RunConfig) -> Result<Outcome, AppError> {
    cfg.validate()?;
    let curve = cfg.curve()?;
    let info = DomainInfo {
        format_version: FORMAT_VERSION,
        config_hash: cfg.hash(),
        domain: cfg.domain,
        domain_hash: cfg.domain.content_hash(),
        length: curve.length,
        area: curve.area(),
        inradius: curve.inradius(),
        corners: curve.corners.clone(),
        closure_error: curve.closure_error(),
        weyl_count: weyl_count(&curve, cfg.bc, cfg.scan.k_max),
    };
    Ok(Outcome { message: json_text(&info), files: Vec::new() })
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservableSummary {
    pub name: String,
    pub mean: f64,
    pub invariant_mean: f64,
    pub sup_norm: f64,
    /// `|mean - invariant_mean| / sup_norm`
    pub relative_deviation: f64,
    pub visited: usize,
    pub truncated: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BilliardSummary {
    pub format_version: u32,
    pub config_hash: String,
    pub domain: DomainSpec,
    pub start: (f64, f64),
    pub bounces: usize,
    pub observables: Vec<ObservableSummary>,
    pub measure_discrepancy: f64,
    pub measure_samples: usize,
}

pub fn billiard_run(cfg: &RunConfig, dry_run: bool) -> Result<Outcome, AppError> {
    cfg.validate()?;
    let curve = cfg.curve()?;
    let dir = cfg.output_dir().join("billiard");
    let observables = standard_observables(&curve);
    if dry_run {
        let mut plan: Vec<String> = observables.iter().map(|o| dir.join(format!("{}.csv", o.name)).display().to_string()).collect();
        plan.push(dir.join("summary.json").display().to_string());
        plan.push(dir.join("plot_billiard.py").display().to_string());
        return Ok(Outcome { message: dry_run_message(cfg, &plan), files: Vec::new() });
    }
    let hash = cfg.hash();
    let start = match cfg.billiard.start {
        Some(x) => x,
        None => random_point(&curve, &mut ChaCha8Rng::seed_from_u64(cfg.seed)),
    };
    let mut out = Writer::new();
    let mut summaries = Vec::new();
    for obs in &observables {
        let avg = birkhoff_average(&curve, obs, start, cfg.billiard.bounces);
        if avg.visited == 0 {
            return Err(AppError::Numerical(format!("trajectory from ({}, {}) stopped before the first bounce", start.s, start.p)));
        }
        let target = invariant_mean(&curve, obs);
        let rows = avg.running.iter().map(|&(n, m)| vec![n.to_string(), g(m), g(target), g((m - target).abs())]);
        out.put(dir.join(format!("{}.csv", obs.name)), csv_text(&hash, &["n", "running_mean", "invariant_mean", "deviation"], rows).as_bytes())?;
        summaries.push(ObservableSummary {
            name: obs.name.clone(),
            mean: avg.mean,
            invariant_mean: target,
            sup_norm: obs.sup_norm,
            relative_deviation: (avg.mean - target).abs() / obs.sup_norm,
            visited: avg.visited,
            truncated: avg.truncated.map(|e| e.to_string()),
        });
    }
    let check = measure_preservation_check(&curve, cfg.billiard.samples, SampleDensity::Invariant, cfg.seed);
    let summary = BilliardSummary {
        format_version: FORMAT_VERSION,
        config_hash: hash.clone(),
        domain: cfg.domain,
        start: (start.s, start.p),
        bounces: cfg.billiard.bounces,
        observables: summaries,
        measure_discrepancy: check.discrepancy,
        measure_samples: check.samples,
    };
    out.put(dir.join("summary.json"), json_text(&summary).as_bytes())?;
    let names: Vec<String> = observables.iter().map(|o| o.name.clone()).collect();
    out.put(dir.join("plot_billiard.py"), plot_billiard(&hash, &names).as_bytes())?;
    let mut message = format!("billiard on {} from (s, p) = ({:.6}, {:.6}), {} bounces\n", cfg.domain.kind_name(), start.s, start.p, cfg.billiard.bounces);
    for o in &summary.observables {
        message += &format!("  {:<10} mean {:+.6}  invariant {:+.6}  relative deviation {:.2e}\n", o.name, o.mean, o.invariant_mean, o.relative_deviation);
    }
    message += &format!("  measure preservation discrepancy {:.2e} ({} samples)\n", check.discrepancy, check.samples);
    Ok(Outcome { message, files: out.files })
}

fn default_cache_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir().join("spectrum").join(format!("{}_{}.qespec", cfg.domain.kind_name(), bc_slug(cfg.bc)))
}

pub fn spectrum_compute(cfg: &RunConfig, out_path: Option<&Path>, dry_run: bool) -> Result<Outcome, AppError> {
    cfg.validate()?;
    let curve = cfg.curve()?;
    let scan = cfg.scan_config(&curve);
    let path = out_path.map(Path::to_path_buf).unwrap_or_else(|| default_cache_path(cfg));
    let stem = path.with_extension("");
    let side = |suffix: &str| PathBuf::from(format!("{}{suffix}", stem.display()));
    if dry_run {
        let mut msg = dry_run_message(cfg, &[path.display().to_string(), side(".audit.json").display().to_string(), side(".eigenvalues.csv").display().to_string(), side(".plot.py").display().to_string()]);
        msg += &format!("scan step dk = {:.4e}, expected modes ≈ {:.0}\n", scan.dk, weyl_count(&curve, cfg.bc, scan.k_max));
        return Ok(Outcome { message: msg, files: Vec::new() });
    }
    let hash = cfg.hash();
    let cache = build_cache(&cfg.domain, cfg.bc, &scan, &hash)?;
    let mut out = Writer::new();
    write_cache(&path, &cache).map_err(|e| AppError::Input(format!("cannot write output: {e}")))?;
    out.files.push(path.clone());
    write_spectrum_sidecars(&mut out, &cache, &side(""))?;
    let a = &cache.audit;
    let message = format!(
        "{} modes of {} {} in [{}, {}]; completeness: {} (max |N - N_W| = {:.2}, {} flagged windows)\ncache: {}\n",
        cache.modes.len(),
        cfg.domain.kind_name(),
        cfg.bc.name(),
        scan.k_min,
        scan.k_max,
        if a.ok { "ok" } else { "FLAGGED" },
        a.max_deviation,
        a.flagged.len(),
        path.display()
    );
    if !a.ok {
        return Err(AppError::Numerical(format!("{message}completeness audit flagged windows {:?}", a.flagged)));
    }
    Ok(Outcome { message, files: out.files })
}

#[derive(Serialize)]
struct AuditFile<'a> {
    format_version: u32,
    config_hash: &'a str,
    domain: DomainSpec,
    bc: BcKind,
    modes: usize,
    audit: &'a crate::eigensolver::solver::CompletenessReport,
    log: &'a [String],
}

fn write_spectrum_sidecars(out: &mut Writer, cache: &SpectrumCache, stem: &Path) -> Result<(), AppError> {
    let h = &cache.header;
    let side = |suffix: &str| PathBuf::from(format!("{}{suffix}", stem.display()));
    let audit = AuditFile {
        format_version: FORMAT_VERSION,
        config_hash: &h.config_hash,
        domain: h.domain,
        bc: h.bc,
        modes: cache.modes.len(),
        audit: &cache.audit,
        log: &cache.log,
    };
    out.put(side(".audit.json"), json_text(&audit).as_bytes())?;
    let rows = cache.modes.iter().enumerate().map(|(j, m)| {
        vec![
            j.to_string(),
            g(m.lambda),
            g(m.quality),
            g(m.certificate.error),
            m.degeneracy.multiplicity.to_string(),
            m.degeneracy.label.clone(),
        ]
    });
    out.put(side(".eigenvalues.csv"), csv_text(&h.config_hash, &["index", "lambda", "quality", "norm_error", "multiplicity", "label"], rows).as_bytes())?;
    let rows = cache.audit.deviation.iter().map(|&(l, d)| vec![g(l), g(d)]);
    out.put(side(".audit.csv"), csv_text(&h.config_hash, &["lambda", "count_minus_weyl"], rows).as_bytes())?;
    let name = |suffix: &str| side(suffix).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    out.put(side(".plot.py"), plot_spectrum(&h.config_hash, &name(".audit.csv"), &name(".eigenvalues.csv")).as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub format_version: u32,
    pub config_hash: String,
    pub modes: usize,
    pub checks: Vec<VerifyCheck>,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyCheck {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

/// Relative eigenvalue tolerance against closed forms.
pub const ORACLE_TOL: f64 = 1e-6;

pub fn spectrum_verify(cache_path: &Path, dry_run: bool) -> Result<Outcome, AppError> {
    let cache = read_cache(cache_path)?;
    let h = &cache.header;
    let curve = build_domain(&h.domain).map_err(|e| AppError::Input(format!("cache domain: {e}")))?;
    if h.domain.content_hash() != h.domain_hash {
        return Err(AppError::Input("cache domain hash does not match its domain".into()));
    }
    let report_path = PathBuf::from(format!("{}.verify.json", cache_path.with_extension("").display()));
    if dry_run {
        return Ok(Outcome { message: format!("dry run: cache readable ({} modes)\nwould write:\n  {}\n", cache.modes.len(), report_path.display()), files: Vec::new() });
    }
    let mut checks = Vec::new();
    let mut check = |name: &str, value: f64, limit: f64| checks.push(VerifyCheck { name: name.into(), value, limit, pass: value <= limit });

    let redo = verify_completeness(&curve, h.bc, &cache.modes, h.scan.k_max, cache.audit.window, cache.audit.band);
    check("flagged completeness windows", redo.flagged.len() as f64, 0.0);
    check("stored audit disagreement", (redo.max_deviation - cache.audit.max_deviation).abs(), 1e-12);
    let unsorted = cache.modes.windows(2).filter(|w| w[1].lambda < w[0].lambda).count();
    check("unsorted modes", unsorted as f64, 0.0);
    check("worst mode quality", cache.modes.iter().map(|m| m.quality).fold(0.0, f64::max), h.scan.accept);
    check("worst normalization error", cache.modes.iter().map(|m| m.certificate.error).fold(0.0, f64::max), 1e-6);
    if let Shape::Disk { radius } = h.domain.shape {
        let mut exact: Vec<f64> = Vec::new();
        for l in disk_levels_below(radius, h.bc, h.scan.k_max + 1.0) {
            let copies = if l.m == 0 { 1 } else { 2 };
            exact.extend(std::iter::repeat(l.lambda).take(copies));
        }
        let inside: Vec<f64> = exact.into_iter().filter(|&l| l >= h.scan.k_min && l <= h.scan.k_max).collect();
        check("count mismatch against closed form", (inside.len() as f64 - cache.modes.len() as f64).abs(), 0.0);
        let worst = inside.iter().zip(&cache.modes).map(|(e, m)| ((m.lambda - e) / e).abs()).fold(0.0, f64::max);
        check("worst relative eigenvalue error", worst, ORACLE_TOL);
    }
    if h.bc.is_dirichlet() {
        let mut worst: f64 = 0.0;
        for m in &cache.modes {
            worst = worst.max(crate::boundary_calculus::rellich_check(m, &curve, None)?);
        }
        check("worst Rellich residual", worst, 1e-3);
    }
    let ok = checks.iter().all(|c| c.pass);
    let report = VerifyReport { format_version: FORMAT_VERSION, config_hash: h.config_hash.clone(), modes: cache.modes.len(), checks, ok };
    let mut out = Writer::new();
    out.put(report_path, json_text(&report).as_bytes())?;
    let mut message = format!("{} modes of {} {}\n", report.modes, h.domain.kind_name(), h.bc.name());
    for c in &report.checks {
        message += &format!("  {} {:<40} {:.3e} (limit {:.1e})\n", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.limit);
    }
    if !ok {
        return Err(AppError::Numerical(format!("{message}verification failed")));
    }
    Ok(Outcome { message, files: out.files })
}

/// Checks of the boundary normalization before any statistics are computed:
/// the constant symbol must integrate to its closed-form value on the unit
/// disk for Dirichlet (2) and Neumann (4) data.
pub fn calibration_gate(curve: &BoundaryCurve, bc: BcKind) -> Result<Vec<String>, AppError> {
    let disk = build_domain(&DomainSpec::disk(1.0)).expect("unit disk");
    let one = SymbolSpec::separable("one", SFactor::One, SigmaFactor::One);
    for (b, want) in [(BcKind::Dirichlet, 2.0), (BcKind::Neumann, 4.0)] {
        let got = predicted_limit(&one.bind(&disk), &BoundaryMeasure::new(b, &disk));
        if (got - want).abs() > 1e-9 * want {
            return Err(AppError::Numerical(format!("calibration: ⟨μ, 1⟩ on the unit disk for {} is {got}, expected {want}", b.name())));
        }
    }
    let m = BoundaryMeasure::new(bc, curve);
    let want = 2.0 / (std::f64::consts::PI * curve.area());
    if (m.c_norm - want).abs() > 1e-12 * want {
        return Err(AppError::Numerical(format!("calibration: normalizing constant {} differs from 2/(π·area) = {want}", m.c_norm)));
    }
    Ok(vec!["calibration: unit-disk limits of the constant symbol reproduced (Dirichlet 2, Neumann 4)".into()])
}

pub fn qe_analyze(cfg: &RunConfig, cache_path: &Path, dry_run: bool) -> Result<Outcome, AppError> {
    cfg.validate()?;
    let suite = cfg.suite()?;
    let cache = read_cache(cache_path)?;
    let h = &cache.header;
    let curve = build_domain(&h.domain).map_err(|e| AppError::Input(format!("cache domain: {e}")))?;
    let stem = cache_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "spectrum".into());
    let dir = cfg.output_dir().join("qe").join(format!("{stem}_{}", cfg.qe.suite));
    let names = ["report.json", "cesaro.csv", "variance.csv", "density.csv", "elements.csv", "plot_qe.py"];
    if dry_run {
        let plan: Vec<String> = names.iter().map(|n| dir.join(n).display().to_string()).collect();
        let mut msg = dry_run_message(cfg, &plan);
        msg += &format!("cache: {} modes of {} {}\n", cache.modes.len(), h.domain.kind_name(), h.bc.name());
        return Ok(Outcome { message: msg, files: Vec::new() });
    }
    let mut notes = calibration_gate(&curve, h.bc)?;
    let ensemble = ModeEnsemble::from_cache(&cache)?;
    let symbols: Vec<_> = suite.iter().map(|s| s.bind(&curve)).collect();
    let hash = json_hash(&(cfg.hash(), &h.config_hash));
    let (mut report, table) = qe_analysis(&ensemble, &curve, &symbols, &cfg.report_options(), &hash)?;
    if let (Shape::Disk { .. }, Some(k)) = (h.domain.shape, table.index("one")) {
        let n = table.values[k].len().min(500);
        let c = cesaro(&table.values[k][..n]).last().map_or(f64::NAN, |c| c.1);
        let rel = (c - table.limits[k]).abs() / table.limits[k];
        notes.push(format!("calibration: disk Cesàro mean of the constant symbol at N={n} is {c:.5} against {:.5} (relative {rel:.2e})", table.limits[k]));
    }
    notes.push(format!("spectrum cache configuration hash {}", h.config_hash));
    report.notes.extend(notes);

    let mut out = Writer::new();
    out.put(dir.join("report.json"), json_text(&report).as_bytes())?;
    let cesaro_rows = report.symbols.iter().flat_map(|s| s.cesaro.iter().map(move |&(n, c)| vec![s.id.clone(), n.to_string(), g(c), g(s.limit)]));
    out.put(dir.join("cesaro.csv"), csv_text(&hash, &["symbol", "n", "cesaro", "limit"], cesaro_rows).as_bytes())?;
    let var_rows = report.symbols.iter().flat_map(|s| s.variance.iter().map(move |p| vec![s.id.clone(), p.n.to_string(), g(p.v), g(p.m)]));
    out.put(dir.join("variance.csv"), csv_text(&hash, &["symbol", "n", "variance", "mean_abs_deviation"], var_rows).as_bytes())?;
    let dens_rows = report.subsequence.density.iter().map(|&(n, d)| vec![n.to_string(), g(d)]);
    out.put(dir.join("density.csv"), csv_text(&hash, &["n", "density"], dens_rows).as_bytes())?;
    let el_rows = (0..table.lambdas.len()).flat_map(|j| {
        let t = &table;
        let label = &cache.modes[j].degeneracy.label;
        (0..t.ids.len()).map(move |k| {
            vec![j.to_string(), t.ids[k].clone(), g(t.lambdas[j]), g(t.values[k][j]), g(t.imag[k][j]), g(t.limits[k]), t.aliased[j].to_string(), label.clone()]
        })
    });
    out.put(
        dir.join("elements.csv"),
        csv_text(&hash, &["mode_index", "symbol_id", "lambda", "value", "imag", "limit", "aliased", "label"], el_rows).as_bytes(),
    )?;
    out.put(dir.join("plot_qe.py"), plot_qe(&hash).as_bytes())?;
    Ok(Outcome { message: qe_summary(&report, &dir), files: out.files })
}

fn qe_summary(r: &QEReport, dir: &Path) -> String {
    let mut s = format!(
        "{} modes of {} {} (λ {:.3} to {:.3})\n  {:<22} {:>10} {:>10} {:>10} {:>8}\n",
        r.modes,
        r.domain.kind_name(),
        r.bc.name(),
        r.lambda_min,
        r.lambda_max,
        "symbol",
        "C_N",
        "limit",
        "V_N",
        "V_N/V_N/4"
    );
    for x in &r.symbols {
        s += &format!(
            "  {:<22} {:>10.5} {:>10.5} {:>10.3e} {:>8.3}\n",
            x.id,
            x.final_cesaro(),
            x.limit,
            x.final_variance(),
            x.variance_ratio
        );
    }
    s += &format!("  density of the selected subsequence: {:.3}\n", r.subsequence.final_density());
    s += &format!("  report: {}\n", dir.join("report.json").display());
    s
}

pub fn read_report(path: &Path) -> Result<QEReport, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::Input(format!("{}: {e}", path.display())))?;
    let r: QEReport = serde_json::from_str(&text).map_err(|e| AppError::Input(format!("{}: not a QE report: {e}", path.display())))?;
    if r.format_version != FORMAT_VERSION {
        return Err(AppError::Input(format!("{}: format version {} is not supported", path.display(), r.format_version)));
    }
    Ok(r)
}

pub fn qe_compare(cfg: &RunConfig, a: &Path, b: &Path, dry_run: bool) -> Result<Outcome, AppError> {
    let (ra, rb) = (read_report(a)?, read_report(b)?);
    let dir = cfg.output_dir().join("compare");
    if dry_run {
        return Ok(Outcome { message: format!("dry run: both reports readable\nwould write:\n  {}\n  {}\n", dir.join("comparison.json").display(), dir.join("comparison.csv").display()), files: Vec::new() });
    }
    let c = compare(&ra, &rb)?;
    let hash = json_hash(&(&c.config_hash_a, &c.config_hash_b));
    let mut out = Writer::new();
    out.put(dir.join("comparison.json"), json_text(&c).as_bytes())?;
    let rows = c.rows.iter().map(|r| vec![r.id.clone(), r.n.to_string(), g(r.variance_a), g(r.variance_b), g(r.ratio), g(r.cesaro_error_a), g(r.cesaro_error_b)]);
    out.put(
        dir.join("comparison.csv"),
        csv_text(&hash, &["symbol", "n", "variance_a", "variance_b", "ratio", "cesaro_error_a", "cesaro_error_b"], rows).as_bytes(),
    )?;
    let mut message = format!("a = {}, b = {}\n  {:<22} {:>6} {:>11} {:>11} {:>9}\n", c.label_a, c.label_b, "symbol", "N", "V_N(a)", "V_N(b)", "b/a");
    for r in &c.rows {
        message += &format!("  {:<22} {:>6} {:>11.3e} {:>11.3e} {:>9.3}\n", r.id, r.n, r.variance_a, r.variance_b, r.ratio);
    }
    Ok(Outcome { message, files: out.files })
}

const PLOT_PRELUDE: &str = r##"import csv, os, sys
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def rows(name):
    with open(os.path.join(HERE, name)) as f:
        return list(csv.DictReader(line for line in f if not line.startswith("#")))

"##;

fn plot_billiard(hash: &str, names: &[String]) -> String {
    format!(
        "{}{PLOT_PRELUDE}\nfig, ax = plt.subplots()\nfor name in {:?}:\n    r = rows(name + \".csv\")\n    ax.loglog([int(x[\"n\"]) for x in r], [max(float(x[\"deviation\"]), 1e-16) for x in r], label=name)\nax.set_xlabel(\"bounces\")\nax.set_ylabel(\"|running mean - invariant mean|\")\nax.legend()\nfig.savefig(os.path.join(HERE, \"billiard.png\"), dpi=150)\n",
        header_line(hash),
        names
    )
}

fn plot_spectrum(hash: &str, audit: &str, eig: &str) -> String {
    format!(
        "{}{PLOT_PRELUDE}\nfig, (a, b) = plt.subplots(2, 1, figsize=(7, 7))\nr = rows({audit:?})\na.plot([float(x[\"lambda\"]) for x in r], [float(x[\"count_minus_weyl\"]) for x in r])\na.set_xlabel(\"lambda\")\na.set_ylabel(\"N(lambda) - Weyl\")\nr = rows({eig:?})\nb.semilogy([float(x[\"lambda\"]) for x in r], [max(float(x[\"quality\"]), 1e-16) for x in r], \".\")\nb.set_xlabel(\"lambda\")\nb.set_ylabel(\"quality\")\nfig.tight_layout()\nfig.savefig(os.path.join(HERE, {:?}), dpi=150)\n",
        header_line(hash),
        eig.replace(".eigenvalues.csv", ".png")
    )
}

fn plot_qe(hash: &str) -> String {
    format!(
        "{}{PLOT_PRELUDE}\nfrom collections import defaultdict\n\nfig, (a, b, c) = plt.subplots(3, 1, figsize=(7, 10))\ncurves = defaultdict(list)\nfor x in rows(\"cesaro.csv\"):\n    curves[x[\"symbol\"]].append((int(x[\"n\"]), abs(float(x[\"cesaro\"]) - float(x[\"limit\"]))))\nfor k, v in curves.items():\n    a.loglog(*zip(*v), label=k)\na.set_ylabel(\"|C_N - limit|\")\na.legend(fontsize=6)\ncurves = defaultdict(list)\nfor x in rows(\"variance.csv\"):\n    curves[x[\"symbol\"]].append((int(x[\"n\"]), max(float(x[\"variance\"]), 1e-16)))\nfor k, v in curves.items():\n    b.loglog(*zip(*v), label=k)\nb.set_ylabel(\"V_N\")\nr = rows(\"density.csv\")\nc.plot([int(x[\"n\"]) for x in r], [float(x[\"density\"]) for x in r])\nc.set_xlabel(\"N\")\nc.set_ylabel(\"d(N)\")\nfig.tight_layout()\nfig.savefig(os.path.join(HERE, \"qe.png\"), dpi=150)\n",
        header_line(hash)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(AppError::Config("x".into()).exit_code(), 2);
        assert_eq!(AppError::Input("x".into()).exit_code(), 3);
        assert_eq!(AppError::Numerical("x".into()).exit_code(), 4);
        let e: AppError = SolverError::Config("bad".into()).into();
        assert_eq!(e.exit_code(), 2);
        let e: AppError = StatsError::Ensemble("few".into()).into();
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn csv_carries_provenance() {
        let t = csv_text("abc", &["a", "b"], vec![vec!["1".into(), "x,y".into()]]);
        assert_eq!(t, format!("# bqe format_version={FORMAT_VERSION} config_hash=abc\na,b\n1,\"x,y\"\n"));
    }

    #[test]
    fn calibration_passes_on_every_domain() {
        for spec in [DomainSpec::disk(1.3), DomainSpec::rectangle(1.0, 0.5), DomainSpec::stadium(1.0, 1.0)] {
            let c = build_domain(&spec).unwrap();
            assert_eq!(calibration_gate(&c, BcKind::Neumann).unwrap().len(), 1);
        }
    }

    #[test]
    fn small_billiard_run_writes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.billiard.bounces = 2000;
        cfg.billiard.samples = 2000;
        cfg.output_dir = Some(dir.path().to_path_buf());
        let out = billiard_run(&cfg, false).unwrap();
        assert_eq!(out.files.len(), 7);
        let text = std::fs::read_to_string(dir.path().join("billiard/p2.csv")).unwrap();
        assert!(text.starts_with(&header_line(&cfg.hash())));
        assert!(text.lines().nth(1).unwrap() == "n,running_mean,invariant_mean,deviation");
        assert!(billiard_run(&cfg, true).unwrap().files.is_empty());
    }
}
