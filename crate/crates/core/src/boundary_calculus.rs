//! Boundary symbols, their periodic quantization at scale `h = 1/λ`, matrix
//! elements of boundary observables and the limiting boundary measures.
//!
//! The boundary observable `e^b` of a mode is `λ⁻¹∂ₙu` for Dirichlet and the
//! trace `u` for Neumann and Robin conditions. A symbol `a(s, σ)` acts on a
//! grid function through the left (Kohn–Nirenberg) quantization
//!
//! ```text
//! (Op_h(a) f)_i = Σ_m a(s_i, h ξ_m) f̂_m e^{i ξ_m s_i},   ξ_m = 2πm/L,
//! ```
//!
//! with `m` in `(-M/2, M/2]`. Symbols are finite sums of separable terms
//! `c f(s) g(σ)`, so every application costs one FFT pair per term.
//!
//! The limiting measure is `C_norm w(σ) dσ ds` on `|σ| < 1` with
//! `C_norm = 2/(π area)` and `γ = √(1-σ²)`:
//!
//! | condition | `w(σ)` |
//! |---|---|
//! | Dirichlet | `γ` |
//! | Neumann, Robin constant | `1/γ` |
//! | Robin multiplier `κ\|D_s\|` | `γ/(γ² + κ²σ²)` |

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigensolver::interior::{collar_width, interior_integrals, InteriorOptions};
use crate::eigensolver::nodes::Nodes;
use crate::geometry::{periodic_distance, BoundaryCurve};
use crate::mode::{BcKind, Mode};
use crate::quadrature::gauss_legendre;
use crate::spectral;

/// Spectral mass fraction above which a grid function counts as under-resolved.
pub const ALIASING_THRESHOLD: f64 = 1e-6;
/// `e^b` with smaller norm is treated as a wrong observable (e.g. a Dirichlet trace).
pub const TRIVIAL_NORM: f64 = 1e-6;
/// Collar masses with a worse normalization certificate carry a warning.
pub const COLLAR_CERTIFICATE_LIMIT: f64 = 1e-3;
/// Half-width of the glancing set `||σ| - 1| <= GLANCING_TOL`.
pub const GLANCING_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalculusError {
    #[error("mode data: {0}")]
    Data(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// `exp(1 - 1/(1 - x²))` on `|x| < 1`, zero outside; equals 1 at `x = 0`.
pub fn bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - x * x)).exp()
    }
}

/// Position factor `f(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SFactor {
    One,
    /// `cos(2π n s / L)`
    Cos { harmonic: u32 },
    /// `sin(2π n s / L)`
    Sin { harmonic: u32 },
    /// Periodic bump centred at arclength `center`, half-width `width`.
    Bump { center: f64, width: f64 },
    /// Bump of half-width `eps` around every corner.
    Corners { eps: f64 },
}

/// Momentum factor `g(σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaFactor {
    One,
    /// `σ^p`
    Power { p: u32 },
    /// Bump supported in `lo < σ < hi`, peak 1 at the midpoint.
    Bump { lo: f64, hi: f64 },
    /// Bump in `|σ|`, supported in `lo < |σ| < hi`.
    AbsBump { lo: f64, hi: f64 },
    /// Bump of half-width `eps` around `|σ| = 1`.
    Glancing { eps: f64 },
    /// `1 - g(σ)`
    Complement { of: Box<SigmaFactor> },
    /// `∏ g_i(σ)`
    Product { factors: Vec<SigmaFactor> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    #[serde(default = "one")]
    pub coeff: f64,
    pub s: SFactor,
    pub sigma: SigmaFactor,
}

fn one() -> f64 {
    1.0
}

/// Declarative symbol: an identifier and a sum of separable terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolSpec {
    pub id: String,
    pub terms: Vec<Term>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Multiplication,
    Multiplier,
    Separable,
    General,
}

/// A symbol bound to a boundary (period and corner positions resolved).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySymbol {
    pub id: String,
    pub terms: Vec<Term>,
    length: f64,
    corners: Vec<f64>,
}

impl SFactor {
    fn validate(&self) -> Result<(), String> {
        match *self {
            SFactor::Bump { width, .. } if !(width > 0.0) => Err(format!("s-bump width must be > 0, got {width}")),
            SFactor::Corners { eps } if !(eps > 0.0) => Err(format!("corner cutoff width must be > 0, got {eps}")),
            _ => Ok(()),
        }
    }
}

impl SigmaFactor {
    fn validate(&self) -> Result<(), String> {
        match *self {
            SigmaFactor::Bump { lo, hi } | SigmaFactor::AbsBump { lo, hi } if !(lo < hi) => {
                Err(format!("σ-bump needs lo < hi, got ({lo}, {hi})"))
            }
            SigmaFactor::Glancing { eps } if !(eps > 0.0) => Err(format!("glancing cutoff width must be > 0, got {eps}")),
            SigmaFactor::Complement { ref of } => of.validate(),
            SigmaFactor::Product { ref factors } => factors.iter().try_for_each(|f| f.validate()),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, sigma: f64) -> f64 {
        match *self {
            SigmaFactor::One => 1.0,
            SigmaFactor::Power { p } => sigma.powi(p as i32),
            SigmaFactor::Bump { lo, hi } => bump((2.0 * sigma - lo - hi) / (hi - lo)),
            SigmaFactor::AbsBump { lo, hi } => bump((2.0 * sigma.abs() - lo - hi) / (hi - lo)),
            SigmaFactor::Glancing { eps } => bump((sigma.abs() - 1.0) / eps),
            SigmaFactor::Complement { ref of } => 1.0 - of.eval(sigma),
            SigmaFactor::Product { ref factors } => factors.iter().map(|f| f.eval(sigma)).product(),
        }
    }

    /// Points in `[-1, 1]` where the factor stops being smooth.
    fn breaks(&self) -> Vec<f64> {
        match *self {
            SigmaFactor::Bump { lo, hi } => vec![lo, hi],
            SigmaFactor::AbsBump { lo, hi } => vec![lo, hi, -lo, -hi],
            SigmaFactor::Glancing { eps } => vec![1.0 - eps, eps - 1.0],
            SigmaFactor::Complement { ref of } => of.breaks(),
            SigmaFactor::Product { ref factors } => factors.iter().flat_map(|f| f.breaks()).collect(),
            _ => Vec::new(),
        }
    }

    fn sup(&self) -> f64 {
        match *self {
            SigmaFactor::Power { .. } => f64::INFINITY,
            SigmaFactor::Complement { ref of } => 1.0 + of.sup(),
            SigmaFactor::Product { ref factors } => factors.iter().map(|f| f.sup()).product(),
            _ => 1.0,
        }
    }
}

impl SymbolSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("symbol id must not be empty".into());
        }
        for t in &self.terms {
            if !t.coeff.is_finite() {
                return Err(format!("symbol {}: non-finite coefficient", self.id));
            }
            t.s.validate().and(t.sigma.validate()).map_err(|e| format!("symbol {}: {e}", self.id))?;
        }
        Ok(())
    }

    pub fn bind(&self, curve: &BoundaryCurve) -> BoundarySymbol {
        BoundarySymbol { id: self.id.clone(), terms: self.terms.clone(), length: curve.length, corners: curve.corners.clone() }
    }

    pub fn separable(id: &str, s: SFactor, sigma: SigmaFactor) -> Self {
        Self { id: id.into(), terms: vec![Term { coeff: 1.0, s, sigma }] }
    }
}

impl BoundarySymbol {
    pub fn spec(&self) -> SymbolSpec {
        SymbolSpec { id: self.id.clone(), terms: self.terms.clone() }
    }

    pub fn zero(curve: &BoundaryCurve, id: &str) -> Self {
        SymbolSpec { id: id.into(), terms: Vec::new() }.bind(curve)
    }

    pub fn structure(&self) -> Structure {
        let s_only = self.terms.iter().all(|t| t.sigma == SigmaFactor::One);
        let sigma_only = self.terms.iter().all(|t| t.s == SFactor::One);
        if sigma_only {
            Structure::Multiplier
        } else if s_only {
            Structure::Multiplication
        } else if self.terms.len() == 1 {
            Structure::Separable
        } else {
            Structure::General
        }
    }

    pub fn s_factor(&self, f: &SFactor, s: f64) -> f64 {
        let l = self.length;
        match *f {
            SFactor::One => 1.0,
            SFactor::Cos { harmonic } => (2.0 * PI * harmonic as f64 * s / l).cos(),
            SFactor::Sin { harmonic } => (2.0 * PI * harmonic as f64 * s / l).sin(),
            SFactor::Bump { center, width } => bump(periodic_distance(s, center, l) / width),
            SFactor::Corners { eps } => {
                self.corners.iter().map(|&c| bump(periodic_distance(s, c, l) / eps)).fold(0.0, f64::max)
            }
        }
    }

    pub fn eval(&self, s: f64, sigma: f64) -> f64 {
        self.terms.iter().map(|t| t.coeff * self.s_factor(&t.s, s) * t.sigma.eval(sigma)).sum()
    }

    /// `sup |a|` over `s` and `|σ| <= 1`, sampled.
    pub fn sup_norm(&self) -> f64 {
        let ns = 512;
        let nsig = 401;
        let mut best: f64 = 0.0;
        for i in 0..ns {
            let s = (i as f64 + 0.5) * self.length / ns as f64;
            for j in 0..nsig {
                let sigma = -1.0 + 2.0 * j as f64 / (nsig - 1) as f64;
                best = best.max(self.eval(s, sigma).abs());
            }
        }
        for &c in &self.corners {
            for sigma in [-1.0, 0.0, 1.0] {
                best = best.max(self.eval(c, sigma).abs());
            }
        }
        best
    }

    /// `a(s, σ) g(σ)`, with id `name`.
    pub fn times_sigma(&self, g: &SigmaFactor, name: &str) -> BoundarySymbol {
        let terms = self
            .terms
            .iter()
            .map(|t| Term { coeff: t.coeff, s: t.s.clone(), sigma: SigmaFactor::Product { factors: vec![t.sigma.clone(), g.clone()] } })
            .collect();
        BoundarySymbol { id: name.into(), terms, length: self.length, corners: self.corners.clone() }
    }

    /// Whether every term vanishes on `|σ| <= 1`.
    pub fn elliptic_supported(&self) -> bool {
        self.terms.iter().all(|t| match t.sigma {
            SigmaFactor::AbsBump { lo, .. } => lo >= 1.0,
            SigmaFactor::Bump { lo, hi } => lo >= 1.0 || hi <= -1.0,
            _ => t.coeff == 0.0,
        })
    }

    /// Exact bound for the `σ`-factors when finite.
    pub fn factor_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.coeff.abs() * t.sigma.sup()).sum()
    }
}

/// The canonical suite: `{1, cos(2πs/L), sin(4πs/L)} × {1, σ², bump on (0.2, 0.6)}`
/// plus the glancing cutoff of width `glancing_eps`.
pub fn canonical_suite(glancing_eps: f64) -> Vec<SymbolSpec> {
    let s_parts = [("1", SFactor::One), ("cos1", SFactor::Cos { harmonic: 1 }), ("sin2", SFactor::Sin { harmonic: 2 })];
    let g_parts = [
        ("1", SigmaFactor::One),
        ("sigma2", SigmaFactor::Power { p: 2 }),
        ("bump", SigmaFactor::Bump { lo: 0.2, hi: 0.6 }),
    ];
    let mut out = Vec::new();
    for (gn, g) in &g_parts {
        for (sn, s) in &s_parts {
            let id = match (*sn, *gn) {
                ("1", "1") => "one".to_string(),
                ("1", g) => g.to_string(),
                (s, "1") => s.to_string(),
                (s, g) => format!("{s}*{g}"),
            };
            out.push(SymbolSpec::separable(&id, s.clone(), g.clone()));
        }
    }
    out.push(SymbolSpec::separable("glancing", SFactor::One, SigmaFactor::Glancing { eps: glancing_eps }));
    out
}

/// `e^b` of a mode.
pub fn boundary_observable(mode: &Mode) -> Result<Vec<f64>, CalculusError> {
    let m = mode.grid.m;
    if m == 0 || mode.u.len() != m || mode.v.len() != m {
        return Err(CalculusError::Data(format!(
            "trace arrays of length {}/{} do not match the grid size {m}",
            mode.u.len(),
            mode.v.len()
        )));
    }
    if !(mode.lambda > 0.0) {
        return Err(CalculusError::Data(format!("non-positive frequency {}", mode.lambda)));
    }
    let eb: Vec<f64> = if mode.bc.is_dirichlet() { mode.v.iter().map(|v| v / mode.lambda).collect() } else { mode.u.clone() };
    let norm = (eb.iter().map(|x| x * x).sum::<f64>() * mode.grid.spacing()).sqrt();
    if !(norm > TRIVIAL_NORM) {
        return Err(CalculusError::Data(format!("boundary observable is trivial (norm {norm:.3e})")));
    }
    Ok(eb)
}

/// Result of applying a quantized symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub values: Vec<Complex64>,
    /// Top-quarter spectral fraction of the input exceeded [`ALIASING_THRESHOLD`].
    pub aliased: bool,
    pub top_fraction: f64,
}

/// `Op_h(a) f` on the grid `s_i = origin + (i + 1/2) L / M`.
pub fn quantize_apply(a: &BoundarySymbol, h: f64, f: &[Complex64], origin: f64) -> Result<Applied, CalculusError> {
    let m = f.len();
    if m == 0 || m % 2 != 0 {
        return Err(CalculusError::Invalid(format!("grid size must be even and positive, got {m}")));
    }
    if !(h > 0.0) {
        return Err(CalculusError::Invalid(format!("scale h must be > 0, got {h}")));
    }
    let l = a.length;
    let dx = l / m as f64;
    let nodes: Vec<f64> = (0..m).map(|i| origin + (i as f64 + 0.5) * dx).collect();
    let top_fraction = spectral::top_quarter_fraction(f);
    let c = spectral::forward(f);
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    for t in &a.terms {
        if t.coeff == 0.0 {
            continue;
        }
        let g: Vec<Complex64> = c
            .iter()
            .enumerate()
            .map(|(j, &cj)| cj * t.sigma.eval(h * 2.0 * PI * spectral::signed_freq(j, m) as f64 / l))
            .collect();
        let back = spectral::inverse(&g);
        for i in 0..m {
            out[i] += t.coeff * a.s_factor(&t.s, nodes[i]) * back[i];
        }
    }
    Ok(Applied { values: out, aliased: top_fraction > ALIASING_THRESHOLD, top_fraction })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixElement {
    pub re: f64,
    pub im: f64,
    /// `Re ⟨Op(a) e^b, e^b⟩`, the value used by all statistics.
    pub hermitian: f64,
    pub aliased: bool,
}

/// `⟨Op_{1/λ}(a) e^b, e^b⟩_{L²(∂Ω)}` by the trapezoid rule.
pub fn matrix_element(a: &BoundarySymbol, mode: &Mode) -> Result<MatrixElement, CalculusError> {
    let eb = boundary_observable(mode)?;
    let f: Vec<Complex64> = eb.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let applied = quantize_apply(a, 1.0 / mode.lambda, &f, mode.grid.origin)?;
    let h = mode.grid.spacing();
    let z: Complex64 = applied.values.iter().zip(&f).map(|(x, y)| x * y.conj()).sum::<Complex64>() * h;
    Ok(MatrixElement { re: z.re, im: z.im, hermitian: z.re, aliased: applied.aliased })
}

/// Limiting boundary measure of a boundary condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMeasure {
    pub bc: BcKind,
    /// `2/(π area)`
    pub c_norm: f64,
}

impl BoundaryMeasure {
    pub fn new(bc: BcKind, curve: &BoundaryCurve) -> Self {
        Self { bc, c_norm: 2.0 / (PI * curve.area()) }
    }

    /// `w(σ)` on `|σ| < 1`, zero outside.
    pub fn weight(&self, sigma: f64) -> f64 {
        if sigma.abs() >= 1.0 {
            return 0.0;
        }
        let g = (1.0 - sigma * sigma).sqrt();
        match self.bc {
            BcKind::Dirichlet => g,
            BcKind::Neumann | BcKind::RobinConstant { .. } => 1.0 / g,
            BcKind::RobinMultiplier { kappa } => g / (g * g + kappa * kappa * sigma * sigma),
        }
    }

    /// `w(sin φ) cos φ`: the weight in the variable `σ = sin φ`, bounded
    /// for every condition.
    pub fn weight_phi(&self, phi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        let c = c.max(0.0);
        match self.bc {
            BcKind::Dirichlet => c * c,
            BcKind::Neumann | BcKind::RobinConstant { .. } => 1.0,
            BcKind::RobinMultiplier { kappa } => {
                let d = c * c + kappa * kappa * s * s;
                if d == 0.0 {
                    0.0
                } else {
                    c * c / d
                }
            }
        }
    }

    /// `∫_{-1}^{1} g(σ) w(σ) dσ`.
    pub fn sigma_integral(&self, g: &SigmaFactor) -> f64 {
        let mut br: Vec<f64> = g.breaks().into_iter().filter(|b| b.abs() < 1.0).map(f64::asin).collect();
        br.push(-PI / 2.0);
        br.push(PI / 2.0);
        integrate_pieces(|phi| g.eval(phi.sin()) * self.weight_phi(phi), br)
    }
}

/// `∫` of a function smooth between the given break points (sorted
/// internally), by panel-doubling Gauss–Legendre to relative `1e-13`.
pub fn integrate_pieces(f: impl Fn(f64) -> f64, mut breaks: Vec<f64>) -> f64 {
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let (x, w) = gauss_legendre(20);
    let rule = |a: f64, b: f64, panels: usize| -> f64 {
        let h = (b - a) / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * h;
            for (xi, wi) in x.iter().zip(&w) {
                acc += wi * 0.5 * h * f(mid + 0.5 * h * xi);
            }
        }
        acc
    };
    breaks
        .windows(2)
        .map(|ab| {
            let (a, b) = (ab[0], ab[1]);
            let mut panels = 2;
            let mut prev = rule(a, b, 1);
            loop {
                let cur = rule(a, b, panels);
                if (cur - prev).abs() <= 1e-13 * cur.abs().max(1e-300) || panels >= 1 << 12 {
                    return cur;
                }
                prev = cur;
                panels *= 2;
            }
        })
        .sum()
}

/// `⟨μ_b, a⟩ = C_norm ∫₀ᴸ ∫₋₁¹ a(s, σ) w(σ) dσ ds`.
pub fn predicted_limit(a: &BoundarySymbol, measure: &BoundaryMeasure) -> f64 {
    let l = a.length;
    let s_integral = |f: &SFactor| -> f64 {
        match *f {
            SFactor::One => l,
            SFactor::Cos { harmonic: 0 } => l,
            SFactor::Cos { .. } | SFactor::Sin { .. } => 0.0,
            SFactor::Bump { center, width } => {
                let mut br = vec![0.0, l];
                for d in [-width, 0.0, width] {
                    br.push((center + d).rem_euclid(l));
                }
                integrate_pieces(|s| a.s_factor(f, s), br)
            }
            SFactor::Corners { eps } => {
                let mut br = vec![0.0, l];
                for &c in &a.corners {
                    for d in [-eps, 0.0, eps] {
                        br.push((c + d).rem_euclid(l));
                    }
                }
                integrate_pieces(|s| a.s_factor(f, s), br)
            }
        }
    };
    measure.c_norm * a.terms.iter().map(|t| t.coeff * s_integral(&t.s) * measure.sigma_integral(&t.sigma)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Hyperbolic,
    Glancing,
    Elliptic,
}

pub fn classify_region(sigma: f64) -> RegionKind {
    let d = sigma.abs() - 1.0;
    if d.abs() <= GLANCING_TOL {
        RegionKind::Glancing
    } else if d < 0.0 {
        RegionKind::Hyperbolic
    } else {
        RegionKind::Elliptic
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffTarget {
    Corner,
    Glancing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub target: CutoffTarget,
    pub eps: f64,
}

/// Cutoff symbol; the notice is set when the target set is empty.
pub fn make_cutoff(spec: CutoffSpec, curve: &BoundaryCurve) -> Result<(BoundarySymbol, Option<String>), CalculusError> {
    if !(spec.eps > 0.0) {
        return Err(CalculusError::Invalid(format!("cutoff width must be > 0, got {}", spec.eps)));
    }
    let (id, s, sigma) = match spec.target {
        CutoffTarget::Corner => {
            if curve.corners.is_empty() {
                let id = format!("corner_eps{}", spec.eps);
                return Ok((BoundarySymbol::zero(curve, &id), Some("boundary has no corners: corner cutoff is zero".into())));
            }
            (format!("corner_eps{}", spec.eps), SFactor::Corners { eps: spec.eps }, SigmaFactor::One)
        }
        CutoffTarget::Glancing => (format!("glancing_eps{}", spec.eps), SFactor::One, SigmaFactor::Glancing { eps: spec.eps }),
    };
    Ok((SymbolSpec::separable(&id, s, sigma).bind(curve), None))
}

fn trace_integral(mode: &Mode, f: impl Fn(usize) -> f64) -> f64 {
    (0..mode.grid.m).map(f).sum::<f64>() * mode.grid.spacing()
}

/// Relative Rellich residual
/// `|∫ ((x - x₀)·n) (∂ₙu)² ds - 2λ² ∫_Ω u²| / (2λ²)`, with `∫_Ω u²` taken from
/// the normalization certificate. `x0` defaults to the domain's centre.
pub fn rellich_check(mode: &Mode, curve: &BoundaryCurve, x0: Option<crate::geometry::Vec2>) -> Result<f64, CalculusError> {
    if !mode.bc.is_dirichlet() {
        return Err(CalculusError::Unsupported(format!("the Rellich check needs Dirichlet data, got {}", mode.bc.name())));
    }
    boundary_observable(mode)?;
    let x0 = x0.unwrap_or(curve.spec.origin);
    if curve.signed_distance(x0) <= 0.0 {
        return Err(CalculusError::Invalid(format!("base point ({}, {}) is not interior", x0.x, x0.y)));
    }
    let nodes = mode.grid.nodes();
    let mut frames = Vec::with_capacity(nodes.len());
    for s in nodes {
        frames.push(curve.boundary_eval(s).map_err(|e| CalculusError::Data(e.to_string()))?);
    }
    let flux = trace_integral(mode, |i| (frames[i].point - x0).dot(frames[i].normal) * mode.v[i] * mode.v[i]);
    let l2 = mode.lambda * mode.lambda;
    Ok((flux - 2.0 * l2 * mode.certificate.norm_sq).abs() / (2.0 * l2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticMass {
    pub fraction: f64,
    pub aliased: bool,
}

/// Fraction of `‖e^b‖²` carried by frequencies `|2πm/L| >= (1 + δ) λ`.
pub fn elliptic_mass(mode: &Mode, delta: f64) -> Result<EllipticMass, CalculusError> {
    if !(delta > 0.0) {
        return Err(CalculusError::Invalid(format!("δ must be > 0, got {delta}")));
    }
    let eb = boundary_observable(mode)?;
    let f: Vec<Complex64> = eb.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let c = spectral::forward(&f);
    let m = c.len();
    let cut = (1.0 + delta) * mode.lambda;
    let total: f64 = c.iter().map(|z| z.norm_sqr()).sum();
    let high: f64 = c
        .iter()
        .enumerate()
        .filter(|(j, _)| (2.0 * PI * spectral::signed_freq(*j, m) as f64 / mode.grid.length).abs() >= cut)
        .map(|(_, z)| z.norm_sqr())
        .sum();
    Ok(EllipticMass { fraction: high / total, aliased: spectral::top_quarter_fraction(&f) > ALIASING_THRESHOLD })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollarMass {
    pub eps: f64,
    /// `∫_{dist < ε} u²`
    pub mass: f64,
    /// `∫_{dist < ε} |λ⁻¹ ∇u|²`
    pub grad_mass: f64,
    pub warning: Option<String>,
}

/// Collar masses of a normalized mode, from its certificate when the width
/// was recorded there, otherwise by interior quadrature of its traces.
pub fn collar_mass(mode: &Mode, curve: &BoundaryCurve, eps: f64) -> Result<CollarMass, CalculusError> {
    if !(eps > 0.0 && eps < 0.5 * curve.inradius()) {
        return Err(CalculusError::Invalid(format!("collar width {eps} must lie in (0, inradius/2 = {})", 0.5 * curve.inradius())));
    }
    let warning = (mode.certificate.error > COLLAR_CERTIFICATE_LIMIT)
        .then(|| format!("normalization certificate error {:.2e} exceeds {COLLAR_CERTIFICATE_LIMIT:e}", mode.certificate.error));
    if let Some(b) = mode.certificate.bands.iter().find(|b| (b.eps - eps).abs() <= 1e-12 * eps) {
        return Ok(CollarMass { eps, mass: b.mass, grad_mass: b.grad_mass, warning });
    }
    if eps > collar_width(curve, &[eps]) + 1e-12 {
        return Err(CalculusError::Invalid(format!("collar width {eps} exceeds the resolvable collar")));
    }
    boundary_observable(mode)?;
    let nodes = Nodes::uniform(curve, &mode.grid);
    let opts = InteriorOptions { bands: vec![eps], quadrant: false, ..Default::default() };
    let res = interior_integrals(curve, &nodes, mode.lambda, &[mode.u.clone()], &[mode.v.clone()], &opts);
    let scale = mode.certificate.norm_sq / res.gram[0][0];
    Ok(CollarMass { eps, mass: res.band_mass[0][0] * scale, grad_mass: res.band_grad[0][0] * scale, warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, DomainSpec};
    use crate::oracles::{bessel::bessel_j, disk_boundary_norm, disk_mode, rectangle_mode};
    use proptest::prelude::*;

    fn disk() -> BoundaryCurve {
        build_domain(&DomainSpec::disk(1.0)).unwrap()
    }

    fn cplx(f: &[f64]) -> Vec<Complex64> {
        f.iter().map(|&x| Complex64::new(x, 0.0)).collect()
    }

    fn sym(curve: &BoundaryCurve, s: SFactor, g: SigmaFactor) -> BoundarySymbol {
        SymbolSpec::separable("t", s, g).bind(curve)
    }

    #[test]
    fn disk_observable_norms() {
        let d = disk();
        for (m, n) in [(0, 1), (3, 2), (9, 1)] {
            for md in disk_mode(&d, BcKind::Dirichlet, m, n, None).unwrap() {
                let eb = boundary_observable(&md).unwrap();
                let nrm: f64 = eb.iter().map(|x| x * x).sum::<f64>() * md.grid.spacing();
                assert!((nrm - 2.0).abs() < 1e-10);
            }
            let md = &disk_mode(&d, BcKind::Neumann, m, n, None).unwrap()[0];
            let eb = boundary_observable(md).unwrap();
            let nrm: f64 = eb.iter().map(|x| x * x).sum::<f64>() * md.grid.spacing();
            let want = 2.0 / (1.0 - (m * m) as f64 / (md.lambda * md.lambda));
            assert!((nrm - want).abs() < 1e-10 * want);
        }
    }

    #[test]
    fn dirichlet_trace_is_refused_as_observable() {
        let d = disk();
        let mut md = disk_mode(&d, BcKind::Dirichlet, 2, 1, None).unwrap().remove(0);
        md.v = md.u.clone();
        assert!(matches!(boundary_observable(&md), Err(CalculusError::Data(_))));
        md.v.pop();
        assert!(matches!(boundary_observable(&md), Err(CalculusError::Data(_))));
    }

    #[test]
    fn pure_wave_is_scaled_by_the_multiplier() {
        let d = disk();
        let m = 64;
        let l = d.length;
        let m0 = 5.0;
        let h = 0.13;
        let f: Vec<Complex64> = (0..m)
            .map(|i| Complex64::from_polar(1.0, 2.0 * PI * m0 * (i as f64 + 0.5) / m as f64))
            .collect();
        let a = sym(&d, SFactor::One, SigmaFactor::Bump { lo: 0.0, hi: 1.0 });
        let out = quantize_apply(&a, h, &f, 0.0).unwrap();
        let g = SigmaFactor::Bump { lo: 0.0, hi: 1.0 }.eval(h * 2.0 * PI * m0 / l);
        for (o, x) in out.values.iter().zip(&f) {
            assert!((o - g * x).norm() < 1e-13);
        }
        assert!(!out.aliased);
        assert!(quantize_apply(&a, h, &f[..63], 0.0).is_err());
        assert!(quantize_apply(&a, 0.0, &f, 0.0).is_err());
    }

    #[test]
    fn multiplication_symbols_act_pointwise() {
        let d = disk();
        let m = 48;
        let f: Vec<Complex64> = (0..m).map(|i| Complex64::new((i as f64 * 0.3).sin(), 0.2)).collect();
        let a = sym(&d, SFactor::Cos { harmonic: 3 }, SigmaFactor::One);
        let out = quantize_apply(&a, 0.1, &f, 0.0).unwrap();
        for i in 0..m {
            let s = (i as f64 + 0.5) * d.length / m as f64;
            assert!((out.values[i] - a.s_factor(&SFactor::Cos { harmonic: 3 }, s) * f[i]).norm() < 1e-13);
        }
        let id = sym(&d, SFactor::One, SigmaFactor::One);
        let out = quantize_apply(&id, 0.1, &f, 0.0).unwrap();
        for i in 0..m {
            assert!((out.values[i] - f[i]).norm() < 1e-13);
        }
    }

    #[test]
    fn single_frequency_matrix_elements() {
        let d = disk();
        let g = SigmaFactor::Bump { lo: -0.3, hi: 0.9 };
        for (m, n) in [(2, 1), (5, 3), (11, 2)] {
            let md = &disk_mode(&d, BcKind::Dirichlet, m, n, None).unwrap()[1];
            let a = sym(&d, SFactor::One, g.clone());
            let me = matrix_element(&a, md).unwrap();
            // a real trace contains ±m, each carrying half the norm
            let want = 0.5 * (g.eval(m as f64 / md.lambda) + g.eval(-(m as f64) / md.lambda)) * 2.0;
            assert!((me.hermitian - want).abs() < 1e-10, "{} {want}", me.hermitian);
            let even = sym(&d, SFactor::Cos { harmonic: 1 }, SigmaFactor::Power { p: 2 });
            assert!(matrix_element(&even, md).unwrap().im.abs() < 1e-10 * 2.0);
        }
    }

    #[test]
    fn predicted_limits_on_the_unit_disk() {
        let d = disk();
        let one = sym(&d, SFactor::One, SigmaFactor::One);
        let dm = BoundaryMeasure::new(BcKind::Dirichlet, &d);
        assert!((predicted_limit(&one, &dm) - 2.0).abs() < 1e-8 * 2.0);
        let nm = BoundaryMeasure::new(BcKind::Neumann, &d);
        assert!((predicted_limit(&one, &nm) - 4.0).abs() < 1e-8 * 4.0);
        let ell = sym(&d, SFactor::One, SigmaFactor::AbsBump { lo: 1.1, hi: 2.0 });
        assert_eq!(predicted_limit(&ell, &dm), 0.0);
        assert!(ell.elliptic_supported());
        // σ² against γ: ∫σ²√(1-σ²) = π/8
        let s2 = sym(&d, SFactor::One, SigmaFactor::Power { p: 2 });
        assert!((predicted_limit(&s2, &dm) - 2.0 / (PI * PI) * 2.0 * PI * PI / 8.0).abs() < 1e-12);
        // Robin multiplier κ = 1: ∫ γ dσ / (γ² + σ²) = ∫ γ = π/2
        let rm = BoundaryMeasure::new(BcKind::RobinMultiplier { kappa: 1.0 }, &d);
        assert!((predicted_limit(&one, &rm) - 2.0).abs() < 1e-10);
        // a bump integrated in σ directly on the weight
        let b = SigmaFactor::Bump { lo: 0.2, hi: 0.6 };
        let direct = integrate_pieces(|x| b.eval(x) * (1.0 - x * x).sqrt(), vec![0.2, 0.6]);
        assert!((dm.sigma_integral(&b) - direct).abs() < 1e-12);
    }

    #[test]
    fn regions() {
        assert_eq!(classify_region(0.0), RegionKind::Hyperbolic);
        assert_eq!(classify_region(1.0), RegionKind::Glancing);
        assert_eq!(classify_region(-1.0 - 1e-13), RegionKind::Glancing);
        assert_eq!(classify_region(1.5), RegionKind::Elliptic);
        assert_eq!(classify_region(-0.999), RegionKind::Hyperbolic);
    }

    #[test]
    fn cutoffs() {
        let rect = build_domain(&DomainSpec::rectangle(1.0, 0.7)).unwrap();
        let (c, note) = make_cutoff(CutoffSpec { target: CutoffTarget::Corner, eps: 0.1 }, &rect).unwrap();
        assert!(note.is_none());
        for &s in &rect.corners {
            assert_eq!(c.eval(s, 0.3), 1.0);
            assert_eq!(c.eval(s + 0.1001, 0.3), 0.0);
            assert_eq!(c.eval(s - 0.1001, 0.3), 0.0);
        }
        let d = disk();
        let (z, note) = make_cutoff(CutoffSpec { target: CutoffTarget::Corner, eps: 0.1 }, &d).unwrap();
        assert!(note.is_some() && z.terms.is_empty());
        let (g, _) = make_cutoff(CutoffSpec { target: CutoffTarget::Glancing, eps: 0.1 }, &d).unwrap();
        assert_eq!(g.eval(0.5, 1.0), 1.0);
        assert_eq!(g.eval(0.5, -1.0), 1.0);
        assert_eq!(g.eval(0.5, 1.1001), 0.0);
        assert_eq!(g.eval(0.5, 0.8999), 0.0);
        assert!(make_cutoff(CutoffSpec { target: CutoffTarget::Glancing, eps: 0.0 }, &d).is_err());
        // corner cutoff measure mass: 4 corners × ε ∫bump
        let dm = BoundaryMeasure::new(BcKind::Dirichlet, &rect);
        let ib = integrate_pieces(bump, vec![-1.0, 1.0]);
        let want = dm.c_norm * 4.0 * 0.1 * ib * PI / 2.0;
        assert!((predicted_limit(&c, &dm) - want).abs() < 1e-10 * want);
    }

    #[test]
    fn glancing_cutoff_mass_scales_as_three_halves() {
        let d = disk();
        let dm = BoundaryMeasure::new(BcKind::Dirichlet, &d);
        let mass = |eps: f64| predicted_limit(&make_cutoff(CutoffSpec { target: CutoffTarget::Glancing, eps }, &d).unwrap().0, &dm);
        // small-ε slope of log mass against log ε
        let slope = (mass(1e-4).ln() - mass(1e-3).ln()) / (1e-4f64.ln() - 1e-3f64.ln());
        assert!((slope - 1.5).abs() < 0.01, "{slope}");
        // independent check: 2 · 2π C_norm ∫₀^ε bump(t/ε) √(2t - t²) dt
        let eps = 0.1;
        let direct = 2.0 * 2.0 * PI * dm.c_norm * integrate_pieces(|t| bump(t / eps) * (2.0 * t - t * t).sqrt(), vec![0.0, eps]);
        assert!((mass(eps) - direct).abs() < 1e-8 * direct);
    }

    #[test]
    fn rellich_on_oracle_modes() {
        let d = disk();
        for (m, n) in [(0, 1), (4, 3), (12, 2)] {
            for md in disk_mode(&d, BcKind::Dirichlet, m, n, None).unwrap() {
                assert!(rellich_check(&md, &d, None).unwrap() < 1e-10);
            }
        }
        let sq = build_domain(&DomainSpec::rectangle(1.0, 1.0)).unwrap();
        for (m, n) in [(1, 1), (2, 3), (5, 4)] {
            let md = rectangle_mode(&sq, BcKind::Dirichlet, m, n, Some(8 * 16)).unwrap();
            let r = rellich_check(&md, &sq, None).unwrap();
            assert!(r < 1e-8, "({m},{n}) {r}");
            let off = rellich_check(&md, &sq, Some(crate::geometry::Vec2::new(0.3, -0.2))).unwrap();
            assert!(off < 1e-8, "off-centre ({m},{n}) {off}");
        }
        let nm = &disk_mode(&d, BcKind::Neumann, 1, 1, None).unwrap()[0];
        assert!(matches!(rellich_check(nm, &d, None), Err(CalculusError::Unsupported(_))));
        let md = &disk_mode(&d, BcKind::Dirichlet, 1, 1, None).unwrap()[0];
        assert!(rellich_check(md, &d, Some(crate::geometry::Vec2::new(2.0, 0.0))).is_err());
    }

    #[test]
    fn elliptic_mass_of_disk_modes_and_noise() {
        let d = disk();
        for (m, n) in [(3, 1), (15, 1), (0, 4)] {
            let md = &disk_mode(&d, BcKind::Dirichlet, m, n, None).unwrap()[0];
            assert!(elliptic_mass(md, 0.01).unwrap().fraction < 1e-20);
        }
        let mut md = disk_mode(&d, BcKind::Dirichlet, 3, 1, None).unwrap().remove(0);
        let mut state = 12345u64;
        for v in md.v.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
        }
        let e = elliptic_mass(&md, 0.2).unwrap();
        assert!(e.fraction > 0.1 && e.aliased);
        assert!(elliptic_mass(&md, 0.0).is_err());
    }

    #[test]
    fn collar_mass_against_radial_integral() {
        let d = disk();
        let md = &disk_mode(&d, BcKind::Dirichlet, 0, 1, None).unwrap()[0];
        let lam = md.lambda;
        let j1 = bessel_j(1, lam);
        for eps in [0.1, 0.15] {
            let c = collar_mass(md, &d, eps).unwrap();
            let q = crate::quadrature::composite_gauss(20, 10, 1.0 - eps, 1.0);
            let want = 2.0 * q.iter().map(|(r, w)| w * bessel_j(0, lam * r).powi(2) * r).sum::<f64>() / (j1 * j1);
            assert!((c.mass - want).abs() < 1e-8, "{} {want}", c.mass);
            assert!(c.warning.is_none());
        }
        assert!(collar_mass(md, &d, 0.6).is_err());
        let mut bad = md.clone();
        bad.certificate.error = 1e-2;
        assert!(collar_mass(&bad, &d, 0.1).unwrap().warning.is_some());
    }

    #[test]
    fn cesaro_of_boundary_norms_matches_predicted_limit() {
        // independent: closed-form boundary norms averaged over the first 500 modes
        let d = disk();
        for (bc, tol) in [(BcKind::Dirichlet, 0.02), (BcKind::Neumann, 0.05)] {
            let levels = crate::oracles::disk_levels_below(1.0, bc, 50.0);
            let mut acc = Vec::new();
            for lv in levels {
                for _ in 0..(if lv.m == 0 { 1 } else { 2 }) {
                    acc.push(disk_boundary_norm(1.0, bc, lv.m, lv.lambda));
                }
            }
            let mean = acc[..500].iter().sum::<f64>() / 500.0;
            let one = sym(&d, SFactor::One, SigmaFactor::One);
            let p = predicted_limit(&one, &BoundaryMeasure::new(bc, &d));
            assert!((mean - p).abs() < tol * p, "{bc:?}: {mean} vs {p}");
        }
    }

    #[test]
    fn canonical_suite_has_ten_distinct_symbols() {
        let s = canonical_suite(0.1);
        assert_eq!(s.len(), 10);
        let mut ids: Vec<_> = s.iter().map(|x| x.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);
        let d = disk();
        assert_eq!(s[0].bind(&d).structure(), Structure::Multiplier);
        assert_eq!(s[1].bind(&d).structure(), Structure::Multiplication);
        assert_eq!(s[4].bind(&d).structure(), Structure::Separable);
    }

    fn arb_sigma() -> impl Strategy<Value = SigmaFactor> {
        prop_oneof![
            Just(SigmaFactor::One),
            (0u32..4).prop_map(|p| SigmaFactor::Power { p }),
            (-1.5f64..0.5, 0.1f64..1.5).prop_map(|(lo, w)| SigmaFactor::Bump { lo, hi: lo + w }),
            (0.01f64..0.5).prop_map(|eps| SigmaFactor::Glancing { eps }),
        ]
    }

    fn arb_s() -> impl Strategy<Value = SFactor> {
        prop_oneof![
            Just(SFactor::One),
            (0u32..5).prop_map(|harmonic| SFactor::Cos { harmonic }),
            (1u32..5).prop_map(|harmonic| SFactor::Sin { harmonic }),
            (0.0f64..6.0, 0.1f64..2.0).prop_map(|(center, width)| SFactor::Bump { center, width }),
        ]
    }

    fn arb_grid() -> impl Strategy<Value = Vec<f64>> {
        (8usize..40).prop_flat_map(|half| proptest::collection::vec(-1.0f64..1.0, 2 * half))
    }

    proptest! {
        #[test]
        fn quantization_is_linear(s1 in arb_s(), g1 in arb_sigma(), s2 in arb_s(), g2 in arb_sigma(), f in arb_grid(), h in 0.01f64..1.0) {
            let d = disk();
            let a = sym(&d, s1.clone(), g1.clone());
            let b = sym(&d, s2.clone(), g2.clone());
            let sum = SymbolSpec { id: "a+b".into(), terms: vec![
                Term { coeff: 1.0, s: s1, sigma: g1 }, Term { coeff: 1.0, s: s2, sigma: g2 }] }.bind(&d);
            let fc = cplx(&f);
            let oa = quantize_apply(&a, h, &fc, 0.0).unwrap().values;
            let ob = quantize_apply(&b, h, &fc, 0.0).unwrap().values;
            let os = quantize_apply(&sum, h, &fc, 0.0).unwrap().values;
            for i in 0..f.len() {
                prop_assert!((os[i] - oa[i] - ob[i]).norm() < 1e-12 * (1.0 + oa[i].norm() + ob[i].norm()));
            }
        }

        #[test]
        fn multipliers_are_self_adjoint(g in arb_sigma(), f1 in arb_grid(), seed in 0u64..1000, h in 0.01f64..1.0) {
            let d = disk();
            let a = sym(&d, SFactor::One, g);
            let n = f1.len();
            let f2: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed) % 97) as f64 / 48.0 - 1.0).collect();
            let (c1, c2) = (cplx(&f1), cplx(&f2));
            let a1 = quantize_apply(&a, h, &c1, 0.0).unwrap().values;
            let a2 = quantize_apply(&a, h, &c2, 0.0).unwrap().values;
            let lhs: Complex64 = a1.iter().zip(&c2).map(|(x, y)| x * y.conj()).sum();
            let rhs: Complex64 = c1.iter().zip(&a2).map(|(x, y)| x * y.conj()).sum();
            let gmax = (0..n).map(|j| a.terms[0].sigma.eval(h * 2.0 * PI * spectral::signed_freq(j, n) as f64 / d.length).abs()).fold(1.0, f64::max);
            let scale: f64 = f1.iter().map(|x| x * x).sum::<f64>().sqrt() * f2.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((lhs - rhs).norm() < 1e-12 * gmax * scale.max(1.0));
        }

        #[test]
        fn bounded_symbols_give_bounded_operators(s in arb_s(), g in arb_sigma(), f in arb_grid(), h in 0.01f64..0.5) {
            prop_assume!(!matches!(g, SigmaFactor::Power { .. }));
            let d = disk();
            let a = sym(&d, s, g);
            let fc = cplx(&f);
            let out = quantize_apply(&a, h, &fc, 0.0).unwrap().values;
            let nf: f64 = f.iter().map(|x| x * x).sum::<f64>().sqrt();
            let no: f64 = out.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            // separable terms: |f(s)| <= 1 and |g| <= 1
            prop_assert!(no <= a.factor_bound() * nf * (1.0 + 1e-12));
        }

        #[test]
        fn regions_partition_every_frequency(m in 1usize..400, lambda in 0.5f64..50.0) {
            let l = 2.0 * PI;
            for j in -(m as i64)..=(m as i64) {
                let sigma = 2.0 * PI * j as f64 / l / lambda;
                let d = sigma.abs() - 1.0;
                let memberships = [d < -GLANCING_TOL, d.abs() <= GLANCING_TOL, d > GLANCING_TOL];
                prop_assert_eq!(memberships.iter().filter(|&&x| x).count(), 1);
                let expect = [RegionKind::Hyperbolic, RegionKind::Glancing, RegionKind::Elliptic][memberships.iter().position(|&x| x).unwrap()];
                prop_assert_eq!(classify_region(sigma), expect);
            }
        }
    }
}
