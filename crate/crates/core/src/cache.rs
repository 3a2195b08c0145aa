//! Spectrum cache files and atomic output.
//!
//! Layout: the 8-byte magic `QESPEC01`, the 32-byte sha256 of the body, then
//! the body as CBOR. A file whose body does not hash to the stored digest is
//! refused.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eigensolver::solver::{solve_spectrum, verify_completeness, CompletenessReport, ScanConfig, SolverError};
use crate::geometry::{build_domain, DomainSpec};
use crate::mode::{BcKind, Mode};

pub const MAGIC: &[u8; 8] = b"QESPEC01";
/// Version of the output formats (cache body, reports, CSV headers).
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}: not a spectrum cache (bad magic)")]
    Magic(PathBuf),
    #[error("{0}: checksum mismatch, refusing a modified cache")]
    Checksum(PathBuf),
    #[error("{path}: undecodable cache body: {msg}")]
    Decode { path: PathBuf, msg: String },
    #[error("{path}: format version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { path: PathBuf, found: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub format_version: u32,
    pub domain: DomainSpec,
    pub domain_hash: String,
    pub bc: BcKind,
    pub scan: ScanConfig,
    /// Hash of the run configuration that produced the cache.
    pub config_hash: String,
    /// Boundary length.
    pub length: f64,
    /// Largest boundary grid size among the stored modes.
    pub grid_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumCache {
    pub header: CacheHeader,
    pub audit: CompletenessReport,
    /// Modes sorted by frequency, degenerate spaces in their stored basis.
    pub modes: Vec<Mode>,
    /// Solver log (rejected minima, split pairs).
    pub log: Vec<String>,
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CacheError> {
    let io = |source| CacheError::Io { path: path.to_path_buf(), source };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io)
}

pub fn encode(cache: &SpectrumCache) -> Vec<u8> {
    let mut body = Vec::new();
    ciborium::into_writer(cache, &mut body).expect("cache serializes");
    let digest = Sha256::digest(&body);
    let mut out = Vec::with_capacity(MAGIC.len() + digest.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&digest);
    out.extend_from_slice(&body);
    out
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<SpectrumCache, CacheError> {
    let p = || path.to_path_buf();
    if bytes.len() < 40 || &bytes[..8] != MAGIC {
        return Err(CacheError::Magic(p()));
    }
    let (digest, body) = (&bytes[8..40], &bytes[40..]);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CacheError::Checksum(p()));
    }
    let cache: SpectrumCache = ciborium::from_reader(body).map_err(|e| CacheError::Decode { path: p(), msg: e.to_string() })?;
    if cache.header.format_version != FORMAT_VERSION {
        return Err(CacheError::Version { path: p(), found: cache.header.format_version });
    }
    Ok(cache)
}

pub fn write_cache(path: &Path, cache: &SpectrumCache) -> Result<(), CacheError> {
    write_atomic(path, &encode(cache))
}

pub fn read_cache(path: &Path) -> Result<SpectrumCache, CacheError> {
    let bytes = fs::read(path).map_err(|source| CacheError::Io { path: path.to_path_buf(), source })?;
    decode(path, &bytes)
}

/// Sliding-window width and tolerated count deviation of the completeness audit.
pub const AUDIT_WINDOW: f64 = 5.0;
pub const AUDIT_BAND: f64 = 8.0;

/// Solve for every mode in the scan range and attach the completeness audit.
pub fn build_cache(spec: &DomainSpec, bc: BcKind, scan: &ScanConfig, config_hash: &str) -> Result<SpectrumCache, SolverError> {
    let curve = build_domain(spec).map_err(|e| SolverError::Config(e.to_string()))?;
    scan.validate(&curve, bc)?;
    let spectrum = solve_spectrum(&curve, bc, scan)?;
    let audit = verify_completeness(&curve, bc, &spectrum.modes, scan.k_max, AUDIT_WINDOW, AUDIT_BAND);
    Ok(SpectrumCache {
        header: CacheHeader {
            format_version: FORMAT_VERSION,
            domain: *spec,
            domain_hash: spec.content_hash(),
            bc,
            scan: scan.clone(),
            config_hash: config_hash.into(),
            length: curve.length,
            grid_max: spectrum.modes.iter().map(|m| m.grid.m).max().unwrap_or(0),
        },
        audit,
        modes: spectrum.modes,
        log: spectrum.log,
    })
}

/// Hex sha256 of a value's canonical JSON encoding.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("value serializes");
    crate::geometry::hex(&Sha256::digest(json.as_bytes()))
}
