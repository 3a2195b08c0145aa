//! Run configuration shared by every command, read from TOML.
//!
//! All sections are optional; see `docs/config.md` for the fields and their
//! ranges. The configuration hash covers everything that can change a
//! result, so it excludes the output directory and the thread count.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::billiard::BirkhoffPoint;
use crate::boundary_calculus::{canonical_suite, SymbolSpec};
use crate::cache::json_hash;
use crate::eigensolver::solver::{max_step, ScanConfig};
use crate::geometry::{build_domain, BoundaryCurve, DomainSpec};
use crate::mode::BcKind;
use crate::qe_stats::ReportOptions;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "BQE_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "bqe-out";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    #[serde(default = "default_k_min")]
    pub k_min: f64,
    #[serde(default = "default_k_max")]
    pub k_max: f64,
    /// Defaults to the largest admissible step for the range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dk: Option<f64>,
    #[serde(default = "default_ppw")]
    pub ppw: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_dip")]
    pub dip_threshold: f64,
    #[serde(default = "default_accept")]
    pub accept: f64,
}

fn default_k_min() -> f64 {
    0.5
}
fn default_k_max() -> f64 {
    10.0
}
fn default_ppw() -> f64 {
    8.0
}
fn default_tol() -> f64 {
    1e-9
}
fn default_dip() -> f64 {
    0.1
}
fn default_accept() -> f64 {
    1e-4
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            k_min: default_k_min(),
            k_max: default_k_max(),
            dk: None,
            ppw: default_ppw(),
            tol: default_tol(),
            dip_threshold: default_dip(),
            accept: default_accept(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilliardSection {
    #[serde(default = "default_bounces")]
    pub bounces: usize,
    /// Samples of the measure-preservation check.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Starting point; drawn from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<BirkhoffPoint>,
}

fn default_bounces() -> usize {
    1_000_000
}
fn default_samples() -> usize {
    1_000_000
}

impl Default for BilliardSection {
    fn default() -> Self {
        Self { bounces: default_bounces(), samples: default_samples(), start: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QeSection {
    /// `canonical` or `inline`.
    #[serde(default = "default_suite")]
    pub suite: String,
    /// Symbols of the `inline` suite.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub symbols: Vec<SymbolSpec>,
    /// Cutoff widths for glancing, corner and collar statistics.
    #[serde(default = "default_widths")]
    pub widths: Vec<f64>,
    /// Width of the glancing cutoff inside the canonical suite.
    #[serde(default = "default_glancing")]
    pub glancing_eps: f64,
    #[serde(default = "default_factor")]
    pub schedule_factor: f64,
    #[serde(default = "default_delta")]
    pub elliptic_delta: f64,
    #[serde(default = "default_elliptic_from")]
    pub elliptic_from: f64,
}

fn default_suite() -> String {
    "canonical".into()
}
fn default_widths() -> Vec<f64> {
    vec![0.05, 0.1, 0.2]
}
fn default_glancing() -> f64 {
    0.1
}
fn default_factor() -> f64 {
    3.0
}
fn default_delta() -> f64 {
    0.2
}
fn default_elliptic_from() -> f64 {
    30.0
}

impl Default for QeSection {
    fn default() -> Self {
        Self {
            suite: default_suite(),
            symbols: Vec::new(),
            widths: default_widths(),
            glancing_eps: default_glancing(),
            schedule_factor: default_factor(),
            elliptic_delta: default_delta(),
            elliptic_from: default_elliptic_from(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_domain")]
    pub domain: DomainSpec,
    #[serde(default = "default_bc")]
    pub bc: BcKind,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub billiard: BilliardSection,
    #[serde(default)]
    pub qe: QeSection,
    /// Output directory; see [`RunConfig::output_dir`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_domain() -> DomainSpec {
    DomainSpec::stadium(1.0, 1.0)
}
fn default_bc() -> BcKind {
    BcKind::Dirichlet
}
fn default_seed() -> u64 {
    1
}
fn default_threads() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: default_domain(),
            bc: default_bc(),
            scan: ScanSection::default(),
            billiard: BilliardSection::default(),
            qe: QeSection::default(),
            output_dir: None,
            seed: default_seed(),
            threads: default_threads(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub bc: Option<String>,
    pub kappa: Option<f64>,
    pub k_min: Option<f64>,
    pub k_max: Option<f64>,
    pub bounces: Option<usize>,
    pub suite: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

/// Parse a condition name: `dirichlet`, `neumann`, `robin_constant`,
/// `robin_multiplier` (Robin forms take `kappa`).
pub fn parse_bc(name: &str, kappa: Option<f64>) -> Result<BcKind, ConfigError> {
    let k = || kappa.ok_or_else(|| ConfigError(format!("condition {name} needs a kappa")));
    match name {
        "dirichlet" => Ok(BcKind::Dirichlet),
        "neumann" => Ok(BcKind::Neumann),
        "robin_constant" => Ok(BcKind::RobinConstant { kappa: k()? }),
        "robin_multiplier" => Ok(BcKind::RobinMultiplier { kappa: k()? }),
        other => err(format!("unknown boundary condition `{other}`")),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(name) = &o.bc {
            self.bc = parse_bc(name, o.kappa.or(self.bc.kappa()))?;
        } else if let Some(k) = o.kappa {
            self.bc = match self.bc {
                BcKind::RobinConstant { .. } => BcKind::RobinConstant { kappa: k },
                BcKind::RobinMultiplier { .. } => BcKind::RobinMultiplier { kappa: k },
                _ => return err("--kappa needs a Robin condition"),
            };
        }
        if let Some(v) = o.k_min {
            self.scan.k_min = v;
        }
        if let Some(v) = o.k_max {
            self.scan.k_max = v;
        }
        if let Some(v) = o.bounces {
            self.billiard.bounces = v;
        }
        if let Some(v) = &o.suite {
            self.qe.suite = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.threads {
            self.threads = v;
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = Some(v.clone());
        }
        Ok(())
    }

    pub fn curve(&self) -> Result<BoundaryCurve, ConfigError> {
        build_domain(&self.domain).map_err(|e| ConfigError(format!("domain: {e}")))
    }

    pub fn scan_config(&self, curve: &BoundaryCurve) -> ScanConfig {
        let s = &self.scan;
        ScanConfig {
            k_min: s.k_min,
            k_max: s.k_max,
            dk: s.dk.unwrap_or_else(|| max_step(curve, self.bc, s.k_max)),
            ppw: s.ppw,
            tol: s.tol,
            dip_threshold: s.dip_threshold,
            accept: s.accept,
            threads: self.threads,
        }
    }

    /// The symbols of the configured suite.
    pub fn suite(&self) -> Result<Vec<SymbolSpec>, ConfigError> {
        match self.qe.suite.as_str() {
            "canonical" => Ok(canonical_suite(self.qe.glancing_eps)),
            "inline" if self.qe.symbols.is_empty() => err("suite `inline` needs [[qe.symbols]] entries"),
            "inline" => Ok(self.qe.symbols.clone()),
            other => err(format!("unknown suite `{other}` (expected `canonical` or `inline`)")),
        }
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            widths: self.qe.widths.clone(),
            schedule_factor: self.qe.schedule_factor,
            elliptic_delta: self.qe.elliptic_delta,
            elliptic_from: self.qe.elliptic_from,
            threads: self.threads,
            ..ReportOptions::default()
        }
    }

    /// Flag, then file, then `$BQE_OUTPUT_ROOT`, then `bqe-out`.
    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let curve = self.curve()?;
        self.bc.validate().map_err(ConfigError)?;
        if self.threads == 0 || self.threads > 256 {
            return err(format!("threads must be in 1..=256, got {}", self.threads));
        }
        self.scan_config(&curve).validate(&curve, self.bc).map_err(|e| ConfigError(format!("scan: {e}")))?;
        if self.billiard.bounces == 0 {
            return err("billiard.bounces must be at least 1");
        }
        if self.billiard.samples == 0 {
            return err("billiard.samples must be at least 1");
        }
        if let Some(x) = self.billiard.start {
            if !(x.p > -1.0 && x.p < 1.0 && x.s.is_finite()) {
                return err(format!("billiard.start needs finite s and |p| < 1, got ({}, {})", x.s, x.p));
            }
        }
        for s in self.suite()? {
            s.validate().map_err(ConfigError)?;
        }
        let q = &self.qe;
        if q.widths.is_empty() || q.widths.iter().any(|&w| !(w > 0.0 && w < 1.0)) {
            return err("qe.widths must be a nonempty list in (0, 1)");
        }
        if !(q.glancing_eps > 0.0 && q.glancing_eps < 1.0) {
            return err("qe.glancing_eps must lie in (0, 1)");
        }
        if !(q.schedule_factor > 0.0 && q.schedule_factor.is_finite()) {
            return err("qe.schedule_factor must be positive");
        }
        if !(q.elliptic_delta > 0.0 && q.elliptic_delta.is_finite()) {
            return err("qe.elliptic_delta must be positive");
        }
        if !(q.elliptic_from >= 0.0) {
            return err("qe.elliptic_from must be nonnegative");
        }
        Ok(())
    }

    /// Hash of the result-relevant fields.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.threads = 1;
        json_hash(&c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn full_file() {
        let text = r#"
            seed = 7
            threads = 2
            output_dir = "out"
            [domain]
            kind = "rectangle"
            a = 1.0
            b = 0.7
            [bc]
            kind = "neumann"
            [scan]
            k_min = 1.0
            k_max = 12.0
            [qe]
            suite = "inline"
            widths = [0.1]
            [[qe.symbols]]
            id = "mixed"
            [[qe.symbols.terms]]
            coeff = 2.0
            s = { kind = "cos", harmonic = 1 }
            sigma = { kind = "power", p = 2 }
        "#;
        let c = RunConfig::from_toml(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.bc, BcKind::Neumann);
        assert_eq!(c.suite().unwrap()[0].terms[0].coeff, 2.0);
        assert_eq!(c.output_dir(), PathBuf::from("out"));
    }

    #[test]
    fn errors_are_reported() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[domain]\nkind = \"disk\"\nradius = -1.0").unwrap().validate().is_err());
        let mut c = RunConfig::default();
        c.qe.suite = "nope".into();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.billiard.bounces = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.scan.k_max = 0.1;
        assert!(c.validate().is_err());
        assert!(parse_bc("robin_constant", None).is_err());
        assert_eq!(parse_bc("robin_multiplier", Some(1.0)).unwrap(), BcKind::RobinMultiplier { kappa: 1.0 });
    }

    #[test]
    fn documented_examples_parse() {
        let doc = include_str!("../../../docs/config.md");
        let blocks: Vec<&str> = doc.split("```toml").skip(1).map(|b| b.split("```").next().unwrap()).collect();
        assert_eq!(blocks.len(), 2);
        for b in blocks {
            RunConfig::from_toml(b).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn overrides_and_hash() {
        let mut c = RunConfig::default();
        let h0 = c.hash();
        c.apply(&Overrides { threads: Some(4), output_dir: Some("x".into()), ..Default::default() }).unwrap();
        assert_eq!(c.hash(), h0);
        c.apply(&Overrides { bc: Some("robin_constant".into()), kappa: Some(1.0), k_max: Some(5.0), ..Default::default() }).unwrap();
        assert_eq!(c.bc, BcKind::RobinConstant { kappa: 1.0 });
        assert_ne!(c.hash(), h0);
        c.apply(&Overrides { kappa: Some(2.0), ..Default::default() }).unwrap();
        assert_eq!(c.bc.kappa(), Some(2.0));
        let mut d = RunConfig::default();
        assert!(d.apply(&Overrides { kappa: Some(2.0), ..Default::default() }).is_err());
    }
}
