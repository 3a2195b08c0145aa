//! Ensemble statistics of boundary matrix elements: Cesàro means, quantum
//! variance, density-one subsequences and the assembled [`QEReport`].
//!
//! Every statistic is a fold over the table of Hermitian matrix elements
//! `x_j(a) = Re⟨Op(a) e_j^b, e_j^b⟩`, computed once per (mode, symbol).

use serde::{Deserialize, Serialize};

use crate::boundary_calculus::{
    boundary_observable, collar_mass, elliptic_mass, make_cutoff, matrix_element, predicted_limit, rellich_check, BoundaryMeasure,
    BoundarySymbol, CalculusError, CutoffSpec, CutoffTarget, SigmaFactor, Structure,
};
use crate::cache::{SpectrumCache, FORMAT_VERSION};
use crate::eigensolver::solver::{par_map, CompletenessReport};
use crate::geometry::{BoundaryCurve, DomainSpec};
use crate::mode::{BcKind, Mode};

/// Smallest ensemble for which statistics are reported.
pub const MIN_ENSEMBLE: usize = 50;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("ensemble: {0}")]
    Ensemble(String),
    #[error(transparent)]
    Calculus(#[from] CalculusError),
}

/// Non-finite values as JSON `null`, read back as NaN.
mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Modes sorted by frequency with their provenance.
#[derive(Debug, Clone)]
pub struct ModeEnsemble {
    pub domain_hash: String,
    pub bc: BcKind,
    pub modes: Vec<Mode>,
    pub audit: Option<CompletenessReport>,
}

impl ModeEnsemble {
    pub fn new(domain_hash: String, bc: BcKind, modes: Vec<Mode>, audit: Option<CompletenessReport>) -> Result<Self, StatsError> {
        if modes.len() < MIN_ENSEMBLE {
            return Err(StatsError::Ensemble(format!("{} modes, at least {MIN_ENSEMBLE} are needed", modes.len())));
        }
        if let Some(i) = modes.windows(2).position(|w| w[1].lambda < w[0].lambda) {
            return Err(StatsError::Ensemble(format!("modes not sorted at index {}", i + 1)));
        }
        if let Some(m) = modes.iter().find(|m| m.bc != bc) {
            return Err(StatsError::Ensemble(format!("mode with condition {} in a {} ensemble", m.bc.name(), bc.name())));
        }
        if let Some(a) = &audit {
            if !a.flagged.is_empty() {
                let (lo, hi, dev) = a.flagged[0];
                return Err(StatsError::Ensemble(format!(
                    "completeness audit has {} unresolved windows, first [{lo:.3}, {hi:.3}] off by {dev:.1}",
                    a.flagged.len()
                )));
            }
        }
        Ok(Self { domain_hash, bc, modes, audit })
    }

    pub fn from_cache(cache: &SpectrumCache) -> Result<Self, StatsError> {
        Self::new(cache.header.domain_hash.clone(), cache.header.bc, cache.modes.clone(), Some(cache.audit.clone()))
    }

    /// The first `n` modes.
    pub fn truncated(&self, n: usize) -> Result<Self, StatsError> {
        Self::new(self.domain_hash.clone(), self.bc, self.modes[..n.min(self.modes.len())].to_vec(), self.audit.clone())
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

/// Hermitian matrix elements `values[symbol][mode]` and predicted limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementTable {
    pub ids: Vec<String>,
    pub limits: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub imag: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    /// Modes whose observable failed the aliasing guard.
    pub aliased: Vec<bool>,
}

impl ElementTable {
    pub fn compute(ensemble: &ModeEnsemble, symbols: &[BoundarySymbol], measure: &BoundaryMeasure, threads: usize) -> Result<Self, StatsError> {
        let rows = par_map(&ensemble.modes, threads, |mode| -> Result<Vec<(f64, f64, bool)>, CalculusError> {
            boundary_observable(mode)?;
            symbols.iter().map(|a| matrix_element(a, mode).map(|e| (e.hermitian, e.im, e.aliased))).collect()
        });
        let rows: Vec<Vec<(f64, f64, bool)>> = rows.into_iter().collect::<Result<_, _>>()?;
        let ns = symbols.len();
        Ok(Self {
            ids: symbols.iter().map(|a| a.id.clone()).collect(),
            limits: symbols.iter().map(|a| predicted_limit(a, measure)).collect(),
            values: (0..ns).map(|k| rows.iter().map(|r| r[k].0).collect()).collect(),
            imag: (0..ns).map(|k| rows.iter().map(|r| r[k].1).collect()).collect(),
            lambdas: ensemble.modes.iter().map(|m| m.lambda).collect(),
            aliased: rows.iter().map(|r| r.iter().any(|x| x.2)).collect(),
        })
    }

    pub fn index(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// `|x_j(a) - ⟨μ_b, a⟩|` per symbol and mode.
    pub fn deviations(&self) -> Vec<Vec<f64>> {
        self.values.iter().zip(&self.limits).map(|(v, l)| v.iter().map(|x| (x - l).abs()).collect()).collect()
    }
}

/// `C_N = (1/N) Σ_{j<=N} x_j` for `N = 50..=len`.
pub fn cesaro(values: &[f64]) -> Vec<(usize, f64)> {
    let mut acc = 0.0;
    let mut out = Vec::new();
    for (j, x) in values.iter().enumerate() {
        acc += x;
        let n = j + 1;
        if n >= MIN_ENSEMBLE {
            out.push((n, acc / n as f64));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    pub n: usize,
    /// `(1/N) Σ |x_j - ℓ|²`
    pub v: f64,
    /// `(1/N) Σ |x_j - ℓ|`
    pub m: f64,
}

/// Quantum variance and first absolute moment about `limit`, `N = 50..=len`.
pub fn quantum_variance(values: &[f64], limit: f64) -> Vec<VariancePoint> {
    let (mut sq, mut ab) = (0.0, 0.0);
    let mut out = Vec::new();
    for (j, x) in values.iter().enumerate() {
        let d = x - limit;
        sq += d * d;
        ab += d.abs();
        let n = j + 1;
        if n >= MIN_ENSEMBLE {
            out.push(VariancePoint { n, v: sq / n as f64, m: ab / n as f64 });
        }
    }
    out
}

/// Value of a curve at `N` (curves start at `N = 50`).
pub fn at<T: Copy>(curve: &[T], n: usize) -> Option<T> {
    n.checked_sub(MIN_ENSEMBLE).and_then(|i| curve.get(i)).copied()
}

/// Smallest nonincreasing majorant: `t_j = factor · sqrt(max_{n >= max(j, 50)} V_n)`.
pub fn variance_schedule(variance: &[VariancePoint], len: usize, factor: f64) -> Vec<f64> {
    let mut env = vec![0.0; variance.len()];
    let mut run: f64 = 0.0;
    for i in (0..variance.len()).rev() {
        run = run.max(variance[i].v);
        env[i] = run;
    }
    (1..=len).map(|j| factor * env[j.max(MIN_ENSEMBLE) - MIN_ENSEMBLE].sqrt()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlongSubsequence {
    pub id: String,
    pub limit: f64,
    /// Mean of `x_j` over the selected indices.
    #[serde(with = "nullable")]
    pub mean: f64,
    /// Largest `|x_j - ℓ|` over the selected indices.
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsequenceReport {
    /// Selected zero-based mode indices.
    pub selected: Vec<usize>,
    /// `(N, #(S ∩ {1..N}) / N)` for `N = 1..=len`.
    pub density: Vec<(usize, f64)>,
    /// `schedule[symbol][j]`: threshold applied at rank `j + 1`.
    pub schedule: Vec<Vec<f64>>,
    pub along: Vec<AlongSubsequence>,
}

impl SubsequenceReport {
    pub fn final_density(&self) -> f64 {
        self.density.last().map_or(0.0, |d| d.1)
    }
}

/// Modes whose deviation is within the schedule for every symbol.
pub fn extract_density_one(table: &ElementTable, schedule: &[Vec<f64>]) -> Result<SubsequenceReport, StatsError> {
    let n = table.lambdas.len();
    if schedule.len() != table.ids.len() {
        return Err(StatsError::Config(format!("{} schedules for {} symbols", schedule.len(), table.ids.len())));
    }
    for (k, t) in schedule.iter().enumerate() {
        if t.len() != n {
            return Err(StatsError::Config(format!("schedule for {} has {} entries, expected {n}", table.ids[k], t.len())));
        }
        if let Some(j) = t.windows(2).position(|w| w[1] > w[0]) {
            return Err(StatsError::Config(format!("schedule for {} increases at rank {}", table.ids[k], j + 2)));
        }
        if t.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(StatsError::Config(format!("schedule for {} has negative or non-finite entries", table.ids[k])));
        }
    }
    let dev = table.deviations();
    let selected: Vec<usize> = (0..n).filter(|&j| (0..dev.len()).all(|k| dev[k][j] <= schedule[k][j])).collect();
    let mut density = Vec::with_capacity(n);
    let mut count = 0usize;
    let mut it = selected.iter().peekable();
    for j in 0..n {
        if it.peek() == Some(&&j) {
            count += 1;
            it.next();
        }
        density.push((j + 1, count as f64 / (j + 1) as f64));
    }
    let along = (0..table.ids.len())
        .map(|k| {
            let xs: Vec<f64> = selected.iter().map(|&j| table.values[k][j]).collect();
            AlongSubsequence {
                id: table.ids[k].clone(),
                limit: table.limits[k],
                mean: if xs.is_empty() { f64::NAN } else { xs.iter().sum::<f64>() / xs.len() as f64 },
                max_deviation: selected.iter().map(|&j| dev[k][j]).fold(0.0, f64::max),
            }
        })
        .collect();
    Ok(SubsequenceReport { selected, density, schedule: schedule.to_vec(), along })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopDeviation {
    pub index: usize,
    pub lambda: f64,
    pub label: String,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolReport {
    pub id: String,
    pub structure: Structure,
    pub limit: f64,
    /// `sup |a|` on `|σ| <= 1`.
    pub sup_norm: f64,
    pub cesaro: Vec<(usize, f64)>,
    pub variance: Vec<VariancePoint>,
    /// `V_N / V_{N/4}` at the ensemble size.
    #[serde(with = "nullable")]
    pub variance_ratio: f64,
    /// `V_{N/4} > V_{N/2} > V_N`.
    pub decreasing: bool,
    /// `(ε, C_N(a (1 - χ_ε)), ⟨μ_b, a (1 - χ_ε)⟩)` with the glancing cutoff `χ_ε`.
    pub glancing_removed: Vec<(f64, f64, f64)>,
    pub top_deviations: Vec<TopDeviation>,
}

impl SymbolReport {
    pub fn final_cesaro(&self) -> f64 {
        self.cesaro.last().map_or(f64::NAN, |c| c.1)
    }

    pub fn final_variance(&self) -> f64 {
        self.variance.last().map_or(f64::NAN, |v| v.v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffCesaro {
    pub eps: f64,
    #[serde(with = "nullable")]
    pub cesaro: f64,
    pub limit: f64,
    pub notice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RellichSummary {
    pub count: usize,
    pub max: f64,
    pub mean: f64,
    /// `(index, λ, residual)` of the worst modes.
    pub worst: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticSummary {
    pub delta: f64,
    pub lambda_from: f64,
    /// Modes with `λ >= lambda_from`.
    pub count: usize,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollarSummary {
    pub eps: f64,
    /// Modes whose certificate recorded this width.
    pub count: usize,
    pub mean_mass: f64,
    pub mean_grad_mass: f64,
    pub warnings: usize,
}

/// Options of a report run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Cutoff widths for glancing, corner and collar statistics.
    pub widths: Vec<f64>,
    /// `t_N = factor · sqrt(V_N)`.
    pub schedule_factor: f64,
    pub elliptic_delta: f64,
    pub elliptic_from: f64,
    /// Rellich residuals are taken over `λ <= rellich_to`.
    pub rellich_to: f64,
    pub top: usize,
    pub threads: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            widths: vec![0.05, 0.1, 0.2],
            schedule_factor: 3.0,
            elliptic_delta: 0.2,
            elliptic_from: 30.0,
            rellich_to: f64::INFINITY,
            top: 5,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QEReport {
    pub format_version: u32,
    pub config_hash: String,
    pub domain: DomainSpec,
    pub domain_hash: String,
    pub bc: BcKind,
    pub modes: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub c_norm: f64,
    pub symbols: Vec<SymbolReport>,
    pub subsequence: SubsequenceReport,
    pub rellich: Option<RellichSummary>,
    pub elliptic: EllipticSummary,
    pub collar: Vec<CollarSummary>,
    pub corner: Vec<CutoffCesaro>,
    pub glancing: Vec<CutoffCesaro>,
    /// Least-squares slope of `log C_N(χ_ε)` against `log ε`.
    pub glancing_exponent: Option<f64>,
    pub aliased_modes: usize,
    pub notes: Vec<String>,
}

impl QEReport {
    pub fn symbol(&self, id: &str) -> Option<&SymbolReport> {
        self.symbols.iter().find(|s| s.id == id)
    }
}

fn slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Full statistics of an ensemble against a symbol suite.
pub fn qe_report(
    ensemble: &ModeEnsemble,
    curve: &BoundaryCurve,
    suite: &[BoundarySymbol],
    opts: &ReportOptions,
    config_hash: &str,
) -> Result<QEReport, StatsError> {
    qe_analysis(ensemble, curve, suite, opts, config_hash).map(|(r, _)| r)
}

/// [`qe_report`] together with the per-mode elements of the suite.
pub fn qe_analysis(
    ensemble: &ModeEnsemble,
    curve: &BoundaryCurve,
    suite: &[BoundarySymbol],
    opts: &ReportOptions,
    config_hash: &str,
) -> Result<(QEReport, ElementTable), StatsError> {
    if suite.is_empty() {
        return Err(StatsError::Config("empty symbol suite".into()));
    }
    if opts.widths.iter().any(|&e| !(e > 0.0)) || !(opts.schedule_factor > 0.0) || !(opts.elliptic_delta > 0.0) {
        return Err(StatsError::Config("widths, schedule factor and elliptic δ must be positive".into()));
    }
    let measure = BoundaryMeasure::new(ensemble.bc, curve);
    let n = ensemble.len();
    let mut notes = vec!["density-one subsequence is certified for the listed suite only".to_string()];

    // suite, suite × (1 - glancing cutoff), glancing and corner cutoffs in one table
    let mut symbols: Vec<BoundarySymbol> = suite.to_vec();
    for a in suite {
        for &eps in &opts.widths {
            let g = SigmaFactor::Complement { of: Box::new(SigmaFactor::Glancing { eps }) };
            symbols.push(a.times_sigma(&g, &format!("{}|no_glancing_eps{eps}", a.id)));
        }
    }
    let mut glancing_ids = Vec::new();
    for &eps in &opts.widths {
        let (g, _) = make_cutoff(CutoffSpec { target: CutoffTarget::Glancing, eps }, curve)?;
        glancing_ids.push(g.id.clone());
        symbols.push(g);
    }
    let mut corner_ids = Vec::new();
    if !curve.corners.is_empty() {
        for &eps in &opts.widths {
            let (c, notice) = make_cutoff(CutoffSpec { target: CutoffTarget::Corner, eps }, curve)?;
            corner_ids.push((c.id.clone(), notice));
            symbols.push(c);
        }
    }
    let table = ElementTable::compute(ensemble, &symbols, &measure, opts.threads)?;
    let aliased_modes = table.aliased.iter().filter(|&&a| a).count();
    if aliased_modes > 0 {
        notes.push(format!("{aliased_modes} modes failed the aliasing guard"));
    }

    let ns = suite.len();
    let mut reports = Vec::with_capacity(ns);
    for (k, a) in suite.iter().enumerate() {
        let values = &table.values[k];
        let limit = table.limits[k];
        let variance = quantum_variance(values, limit);
        let v = |m: usize| at(&variance, m).map(|p| p.v);
        let (vn, vq, vh) = (v(n), v(n / 4), v(n / 2));
        let variance_ratio = match (vn, vq) {
            (Some(x), Some(y)) if y > 0.0 => x / y,
            _ => f64::NAN,
        };
        let decreasing = matches!((vq, vh, vn), (Some(a), Some(b), Some(c)) if a > b && b > c);
        let glancing_removed = opts
            .widths
            .iter()
            .enumerate()
            .map(|(w, &eps)| {
                let idx = ns + k * opts.widths.len() + w;
                (eps, cesaro(&table.values[idx]).last().map_or(f64::NAN, |c| c.1), table.limits[idx])
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| (values[j] - limit).abs().total_cmp(&(values[i] - limit).abs()));
        let top_deviations = order
            .iter()
            .take(opts.top)
            .map(|&j| TopDeviation {
                index: j,
                lambda: ensemble.modes[j].lambda,
                label: ensemble.modes[j].degeneracy.label.clone(),
                deviation: values[j] - limit,
            })
            .collect();
        reports.push(SymbolReport {
            id: a.id.clone(),
            structure: a.structure(),
            limit,
            sup_norm: a.sup_norm(),
            cesaro: cesaro(values),
            variance,
            variance_ratio,
            decreasing,
            glancing_removed,
            top_deviations,
        });
    }

    let suite_table = ElementTable {
        ids: table.ids[..ns].to_vec(),
        limits: table.limits[..ns].to_vec(),
        values: table.values[..ns].to_vec(),
        imag: table.imag[..ns].to_vec(),
        lambdas: table.lambdas.clone(),
        aliased: table.aliased.clone(),
    };
    let schedule: Vec<Vec<f64>> = reports.iter().map(|r| variance_schedule(&r.variance, n, opts.schedule_factor)).collect();
    let subsequence = extract_density_one(&suite_table, &schedule)?;

    let final_c = |id: &str| -> (f64, f64) {
        let k = table.index(id).expect("symbol in table");
        (cesaro(&table.values[k]).last().map_or(f64::NAN, |c| c.1), table.limits[k])
    };
    let glancing: Vec<CutoffCesaro> = opts
        .widths
        .iter()
        .zip(&glancing_ids)
        .map(|(&eps, id)| {
            let (c, l) = final_c(id);
            CutoffCesaro { eps, cesaro: c, limit: l, notice: None }
        })
        .collect();
    let glancing_exponent = slope(&glancing.iter().map(|g| (g.eps, g.cesaro)).collect::<Vec<_>>());
    let corner: Vec<CutoffCesaro> = opts
        .widths
        .iter()
        .zip(&corner_ids)
        .map(|(&eps, (id, notice))| {
            let (c, l) = final_c(id);
            CutoffCesaro { eps, cesaro: c, limit: l, notice: notice.clone() }
        })
        .collect();

    let rellich = if ensemble.bc.is_dirichlet() {
        let mut res = Vec::new();
        for (j, m) in ensemble.modes.iter().enumerate().filter(|(_, m)| m.lambda <= opts.rellich_to) {
            res.push((j, m.lambda, rellich_check(m, curve, None)?));
        }
        let vals: Vec<f64> = res.iter().map(|r| r.2).collect();
        res.sort_by(|a, b| b.2.total_cmp(&a.2));
        res.truncate(opts.top);
        (!vals.is_empty()).then(|| RellichSummary {
            count: vals.len(),
            max: vals.iter().copied().fold(0.0, f64::max),
            mean: mean_of(&vals),
            worst: res,
        })
    } else {
        notes.push("Rellich residuals are reported for Dirichlet ensembles only".into());
        None
    };

    let mut fr = Vec::new();
    for m in ensemble.modes.iter().filter(|m| m.lambda >= opts.elliptic_from) {
        fr.push(elliptic_mass(m, opts.elliptic_delta)?.fraction);
    }
    let elliptic = EllipticSummary {
        delta: opts.elliptic_delta,
        lambda_from: opts.elliptic_from,
        count: fr.len(),
        max: fr.iter().copied().fold(0.0, f64::max),
        mean: if fr.is_empty() { 0.0 } else { mean_of(&fr) },
    };

    let mut collar = Vec::new();
    for &eps in opts.widths.iter().filter(|&&e| e < 0.5 * curve.inradius()) {
        let (mut mass, mut grad, mut warnings) = (Vec::new(), Vec::new(), 0);
        for m in ensemble.modes.iter().filter(|m| m.certificate.bands.iter().any(|b| (b.eps - eps).abs() <= 1e-12 * eps)) {
            let c = collar_mass(m, curve, eps)?;
            mass.push(c.mass);
            grad.push(c.grad_mass);
            warnings += c.warning.is_some() as usize;
        }
        if mass.is_empty() {
            continue;
        }
        collar.push(CollarSummary { eps, count: mass.len(), mean_mass: mean_of(&mass), mean_grad_mass: mean_of(&grad), warnings });
    }
    if collar.is_empty() {
        notes.push("no collar masses recorded in the mode certificates".into());
    }

    let report = QEReport {
        format_version: FORMAT_VERSION,
        config_hash: config_hash.into(),
        domain: curve.spec,
        domain_hash: ensemble.domain_hash.clone(),
        bc: ensemble.bc,
        modes: n,
        lambda_min: ensemble.modes[0].lambda,
        lambda_max: ensemble.modes[n - 1].lambda,
        c_norm: measure.c_norm,
        symbols: reports,
        subsequence,
        rellich,
        elliptic,
        collar,
        corner,
        glancing,
        glancing_exponent,
        aliased_modes,
        notes,
    };
    Ok((report, suite_table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub id: String,
    pub n: usize,
    #[serde(with = "nullable")]
    pub variance_a: f64,
    #[serde(with = "nullable")]
    pub variance_b: f64,
    /// `V_N(b) / V_N(a)`
    #[serde(with = "nullable")]
    pub ratio: f64,
    #[serde(with = "nullable")]
    pub cesaro_error_a: f64,
    #[serde(with = "nullable")]
    pub cesaro_error_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub format_version: u32,
    pub label_a: String,
    pub label_b: String,
    pub config_hash_a: String,
    pub config_hash_b: String,
    pub rows: Vec<ComparisonRow>,
}

/// Join two reports on their common symbols at the common ensemble size.
pub fn compare(a: &QEReport, b: &QEReport) -> Result<Comparison, StatsError> {
    let n = a.modes.min(b.modes);
    let mut rows = Vec::new();
    for sa in &a.symbols {
        let Some(sb) = b.symbol(&sa.id) else { continue };
        let va = at(&sa.variance, n).map_or(f64::NAN, |p| p.v);
        let vb = at(&sb.variance, n).map_or(f64::NAN, |p| p.v);
        let ca = at(&sa.cesaro, n).map_or(f64::NAN, |c| c.1);
        let cb = at(&sb.cesaro, n).map_or(f64::NAN, |c| c.1);
        rows.push(ComparisonRow {
            id: sa.id.clone(),
            n,
            variance_a: va,
            variance_b: vb,
            ratio: vb / va,
            cesaro_error_a: ca - sa.limit,
            cesaro_error_b: cb - sb.limit,
        });
    }
    if rows.is_empty() {
        return Err(StatsError::Config("the two reports share no symbols".into()));
    }
    let label = |r: &QEReport| format!("{} {}", r.domain.kind_name(), r.bc.name());
    Ok(Comparison {
        format_version: FORMAT_VERSION,
        label_a: label(a),
        label_b: label(b),
        config_hash_a: a.config_hash.clone(),
        config_hash_b: b.config_hash.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary_calculus::{canonical_suite, SFactor, SymbolSpec, Term};
    use crate::geometry::build_domain;
    use crate::oracles::{disk_levels_below, disk_modes_first};
    use proptest::prelude::*;

    fn disk_ensemble(bc: BcKind, n: usize) -> (BoundaryCurve, ModeEnsemble) {
        let spec = DomainSpec::disk(1.0);
        let curve = build_domain(&spec).unwrap();
        let modes = disk_modes_first(&curve, bc, n).unwrap();
        (curve, ModeEnsemble::new(spec.content_hash(), bc, modes, None).unwrap())
    }

    fn table(values: Vec<Vec<f64>>, limits: Vec<f64>) -> ElementTable {
        let n = values[0].len();
        ElementTable {
            ids: (0..values.len()).map(|k| format!("s{k}")).collect(),
            limits,
            imag: values.iter().map(|v| vec![0.0; v.len()]).collect(),
            values,
            lambdas: (0..n).map(|j| j as f64 + 1.0).collect(),
            aliased: vec![false; n],
        }
    }

    #[test]
    fn ensemble_invariants() {
        let (_, e) = disk_ensemble(BcKind::Dirichlet, 60);
        assert!(e.truncated(49).is_err());
        let mut modes = e.modes.clone();
        modes.swap(3, 40);
        assert!(ModeEnsemble::new("x".into(), BcKind::Dirichlet, modes, None).is_err());
        assert!(ModeEnsemble::new("x".into(), BcKind::Neumann, e.modes.clone(), None).is_err());
    }

    #[test]
    fn curves_start_at_fifty() {
        let xs: Vec<f64> = (0..80).map(|j| j as f64).collect();
        let c = cesaro(&xs);
        assert_eq!(c[0], (50, 24.5));
        assert_eq!(c.len(), 31);
        let v = quantum_variance(&vec![0.0; 60], 0.0);
        assert!(v.iter().all(|p| p.v == 0.0 && p.m == 0.0));
        assert_eq!(at(&c, 80).unwrap().0, 80);
        assert!(at(&c, 49).is_none());
    }

    #[test]
    fn disk_calibration_dirichlet() {
        let (curve, e) = disk_ensemble(BcKind::Dirichlet, 500);
        let one = canonical_suite(0.1)[0].bind(&curve);
        let t = ElementTable::compute(&e, &[one], &BoundaryMeasure::new(BcKind::Dirichlet, &curve), 1).unwrap();
        let c = cesaro(&t.values[0]).last().unwrap().1;
        assert!((c - 2.0).abs() < 0.02 * 2.0 && (t.limits[0] - 2.0).abs() < 1e-12, "{c}");
    }

    #[test]
    fn disk_sigma_squared_variance_tends_to_the_semicircle_value() {
        // elements 2(m/λ)²; m/λ over all levels below λ_max is asymptotically
        // semicircle-distributed, whose 2σ² has variance 1/4. The approach is
        // O(1/λ_max), so extrapolate from λ_max = 100 and 200.
        let v_below = |lmax: f64| {
            let mut xs = Vec::new();
            for lv in disk_levels_below(1.0, BcKind::Dirichlet, lmax) {
                for _ in 0..(if lv.m == 0 { 1 } else { 2 }) {
                    xs.push(2.0 * (lv.m as f64 / lv.lambda).powi(2));
                }
            }
            quantum_variance(&xs, 0.5).last().unwrap().v
        };
        let (v1, v2) = (v_below(100.0), v_below(200.0));
        assert!(v1 < v2 && v2 < 0.25);
        assert!((2.0 * v2 - v1 - 0.25).abs() < 0.005, "{v1} {v2}");
        let (curve, e) = disk_ensemble(BcKind::Dirichlet, 400);
        let s2 = SymbolSpec::separable("sigma2", SFactor::One, SigmaFactor::Power { p: 2 }).bind(&curve);
        let t = ElementTable::compute(&e, &[s2], &BoundaryMeasure::new(BcKind::Dirichlet, &curve), 1).unwrap();
        for (j, m) in e.modes.iter().enumerate() {
            let label_m: f64 = m.degeneracy.label.split_whitespace().next().unwrap()[2..].parse().unwrap();
            assert!((t.values[0][j] - 2.0 * (label_m / m.lambda).powi(2)).abs() < 1e-10);
        }
        assert!((t.limits[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cesaro_is_linear_and_bounded() {
        let (curve, e) = disk_ensemble(BcKind::Dirichlet, 120);
        let a = SymbolSpec::separable("a", SFactor::Cos { harmonic: 2 }, SigmaFactor::Bump { lo: -0.5, hi: 0.7 });
        let b = SymbolSpec::separable("b", SFactor::One, SigmaFactor::Power { p: 2 });
        let sum = SymbolSpec { id: "a+2b".into(), terms: vec![a.terms[0].clone(), Term { coeff: 2.0, ..b.terms[0].clone() }] };
        let one = SymbolSpec::separable("one", SFactor::One, SigmaFactor::One);
        let syms: Vec<_> = [a, b, sum, one].iter().map(|s| s.bind(&curve)).collect();
        let t = ElementTable::compute(&e, &syms, &BoundaryMeasure::new(BcKind::Dirichlet, &curve), 1).unwrap();
        let c: Vec<Vec<(usize, f64)>> = t.values.iter().map(|v| cesaro(v)).collect();
        for i in 0..c[0].len() {
            assert!((c[2][i].1 - c[0][i].1 - 2.0 * c[1][i].1).abs() < 1e-12);
            assert!(c[0][i].1.abs() <= syms[0].sup_norm() * c[3][i].1 + 1e-12);
        }
        assert!((t.limits[2] - t.limits[0] - 2.0 * t.limits[1]).abs() < 1e-12);
    }

    #[test]
    fn constant_shift_identity_on_deviations() {
        let (curve, e) = disk_ensemble(BcKind::Neumann, 80);
        let a = SymbolSpec::separable("a", SFactor::Sin { harmonic: 1 }, SigmaFactor::Power { p: 2 });
        let c = 0.7;
        let shifted = SymbolSpec { id: "a+c".into(), terms: vec![a.terms[0].clone(), Term { coeff: c, s: SFactor::One, sigma: SigmaFactor::One }] };
        let one = SymbolSpec::separable("one", SFactor::One, SigmaFactor::One);
        let syms: Vec<_> = [a, shifted, one].iter().map(|s| s.bind(&curve)).collect();
        let t = ElementTable::compute(&e, &syms, &BoundaryMeasure::new(BcKind::Neumann, &curve), 1).unwrap();
        for j in 0..e.len() {
            let d = |k: usize| t.values[k][j] - t.limits[k];
            assert!((d(1) - d(0) - c * d(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn density_one_extraction_basics() {
        let n = 100;
        let t = table(vec![vec![1.0; n], vec![0.5; n]], vec![1.0, 0.5]);
        let r = extract_density_one(&t, &[vec![0.0; n], vec![0.0; n]]).unwrap();
        assert_eq!(r.selected.len(), n);
        assert!(r.density.iter().all(|d| d.1 == 1.0));
        let mut inc = vec![0.1; n];
        inc[10] = 0.2;
        assert!(matches!(extract_density_one(&t, &[inc, vec![0.0; n]]), Err(StatsError::Config(_))));
        assert!(extract_density_one(&t, &[vec![0.0; n]]).is_err());
    }

    #[test]
    fn disk_density_stays_below_one_for_sigma_squared() {
        let (curve, e) = disk_ensemble(BcKind::Dirichlet, 400);
        let s2 = SymbolSpec::separable("sigma2", SFactor::One, SigmaFactor::Power { p: 2 }).bind(&curve);
        let t = ElementTable::compute(&e, &[s2], &BoundaryMeasure::new(BcKind::Dirichlet, &curve), 1).unwrap();
        let v = quantum_variance(&t.values[0], t.limits[0]);
        // a threshold at a third of the limiting spread leaves out a positive fraction
        let sched = vec![vec![0.5 * 0.25f64.sqrt() / 3.0; e.len()]];
        let r = extract_density_one(&t, &sched).unwrap();
        assert!(r.final_density() < 0.5, "{}", r.final_density());
        assert!(at(&v, 400).unwrap().v > 0.1);
    }

    #[test]
    fn schedule_is_a_nonincreasing_majorant() {
        let v: Vec<VariancePoint> = [4.0, 1.0, 2.0, 0.5, 0.7, 0.1].iter().enumerate().map(|(i, &v)| VariancePoint { n: 50 + i, v, m: 0.0 }).collect();
        let t = variance_schedule(&v, 55, 3.0);
        assert_eq!(t.len(), 55);
        assert!(t.windows(2).all(|w| w[1] <= w[0]));
        for p in &v {
            assert!(t[p.n - 1] >= 3.0 * p.v.sqrt() - 1e-15);
        }
        assert_eq!(t[0], 3.0 * 2.0);
    }

    #[test]
    fn report_on_the_disk() {
        let (curve, e) = disk_ensemble(BcKind::Dirichlet, 200);
        let suite: Vec<_> = canonical_suite(0.1).iter().map(|s| s.bind(&curve)).collect();
        let r = qe_report(&e, &curve, &suite, &ReportOptions { elliptic_from: 10.0, ..Default::default() }, "cfg").unwrap();
        assert_eq!(r.symbols.len(), 10);
        assert!(r.rellich.as_ref().unwrap().max < 1e-10);
        assert!(r.elliptic.max < 1e-12 && r.elliptic.count > 0);
        assert!(r.corner.is_empty());
        assert_eq!(r.glancing.len(), 3);
        assert!(r.glancing_exponent.is_some());
        assert_eq!(r.subsequence.density.len(), 200);
        let one = r.symbol("one").unwrap();
        assert!((one.final_cesaro() - 2.0).abs() < 0.05);
        for (eps, c, l) in &one.glancing_removed {
            assert!(c <= &one.final_cesaro() && l < &one.limit, "{eps}");
        }
        let cmp = compare(&r, &r).unwrap();
        assert!(cmp.rows.iter().all(|row| row.ratio == 1.0 || row.variance_a == 0.0));
        let json = serde_json::to_string(&r).unwrap();
        let back: QEReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.symbols[3].cesaro, r.symbols[3].cesaro);
    }

    proptest! {
        #[test]
        fn stricter_schedules_select_subsets(
            devs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 60), 1..4),
            t0 in 0.05f64..1.0, shrink in 0.0f64..1.0,
        ) {
            let k = devs.len();
            let t = table(devs, vec![0.0; k]);
            let loose: Vec<Vec<f64>> = (0..k).map(|_| (0..60).map(|j| t0 / (1.0 + j as f64 * 0.01)).collect()).collect();
            let strict: Vec<Vec<f64>> = loose.iter().map(|v| v.iter().map(|x| x * shrink).collect()).collect();
            let a = extract_density_one(&t, &loose).unwrap();
            let b = extract_density_one(&t, &strict).unwrap();
            prop_assert!(b.selected.iter().all(|j| a.selected.contains(j)));
            prop_assert!(a.density.iter().all(|d| (0.0..=1.0).contains(&d.1)));
        }

        #[test]
        fn variance_dominates_squared_first_moment(xs in proptest::collection::vec(-5.0f64..5.0, 50..120), l in -2.0f64..2.0) {
            for p in quantum_variance(&xs, l) {
                prop_assert!(p.v + 1e-12 >= p.m * p.m);
            }
        }
    }
}
