//! Boundary conditions and the [`Mode`] record shared by oracles, the
//! eigensolver, caches and statistics.

use serde::{Deserialize, Serialize};

use crate::geometry::BoundaryCurve;

/// Boundary condition. Robin conditions read `∂ₙu + K u = 0` with the
/// outward normal and `K >= 0`, so eigenvalues are nondecreasing in `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BcKind {
    Dirichlet,
    Neumann,
    /// `K = kappa` (order 0).
    RobinConstant { kappa: f64 },
    /// `K = kappa |D_s|` (order 1, principal symbol `kappa |ξ'|`).
    RobinMultiplier { kappa: f64 },
}

impl BcKind {
    pub fn name(&self) -> String {
        match self {
            BcKind::Dirichlet => "dirichlet".into(),
            BcKind::Neumann => "neumann".into(),
            BcKind::RobinConstant { kappa } => format!("robin_constant(kappa={kappa})"),
            BcKind::RobinMultiplier { kappa } => format!("robin_multiplier(kappa={kappa})"),
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self, BcKind::Dirichlet)
    }

    pub fn kappa(&self) -> Option<f64> {
        match *self {
            BcKind::RobinConstant { kappa } | BcKind::RobinMultiplier { kappa } => Some(kappa),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.kappa() {
            Some(k) if !(k.is_finite() && k >= 0.0) => Err(format!("Robin kappa must be finite and >= 0, got {k}")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Oracle,
    Solver,
}

/// Position of a mode inside its (possibly degenerate) eigenspace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degeneracy {
    /// Dimension of the eigenspace the mode belongs to.
    pub multiplicity: usize,
    /// Index of the mode within the recorded basis of that eigenspace.
    pub member: usize,
    /// Human-readable basis label, e.g. `m=2 n=1 cos` or `class ++`.
    pub label: String,
}

/// Mass of the mode within distance `eps` of the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollarBand {
    pub eps: f64,
    /// `∫_{dist < eps} |u|^2`
    pub mass: f64,
    /// `∫_{dist < eps} |λ^{-1} ∇u|^2`
    pub grad_mass: f64,
}

/// Record of how the interior `L²` norm was established.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `∫_Ω |u|^2` after scaling (1 up to `error`).
    pub norm_sq: f64,
    /// Estimated relative error of the norm.
    pub error: f64,
    pub method: String,
    /// Collar masses at the standard widths (empty when not computed).
    pub bands: Vec<CollarBand>,
}

/// Uniform arclength grid `s_i = origin + (i + 1/2) L / M`, wrapped to `[0, L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub length: f64,
    pub origin: f64,
    pub m: usize,
}

impl Grid {
    pub fn for_curve(curve: &BoundaryCurve, m: usize) -> Self {
        Self { length: curve.length, origin: curve.symmetric_origin(), m }
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.m as f64
    }

    /// Unwrapped node positions (monotone, first node `origin + h/2`).
    pub fn nodes_unwrapped(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.m).map(|i| self.origin + (i as f64 + 0.5) * h).collect()
    }

    pub fn nodes(&self) -> Vec<f64> {
        self.nodes_unwrapped().into_iter().map(|s| s.rem_euclid(self.length)).collect()
    }
}

/// Minimal grid size for a mode at frequency `lambda`: eight nodes per
/// wavelength.
pub fn min_grid_size(lambda: f64, length: f64) -> usize {
    (8.0 / (2.0 * std::f64::consts::PI) * lambda * length).ceil() as usize
}

/// One eigenfunction through its boundary traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    /// Frequency: `-Δu = λ² u`.
    pub lambda: f64,
    pub bc: BcKind,
    pub grid: Grid,
    /// `u(s_i)`
    pub u: Vec<f64>,
    /// Outward normal derivative `∂ₙu(s_i)`.
    pub v: Vec<f64>,
    pub certificate: Certificate,
    pub provenance: Provenance,
    pub degeneracy: Degeneracy,
    /// Oracle: relative boundary-condition residual. Solver: final smallest
    /// singular value relative to the neighbouring level.
    pub quality: f64,
    /// Free-form diagnostics attached during computation.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Mode {
    /// Relative sup-norm residual of the boundary condition on the grid.
    pub fn bc_residual(&self) -> f64 {
        let lam = self.lambda.max(1e-300);
        let scale = self
            .u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| u.abs().max(v.abs() / lam))
            .fold(0.0, f64::max)
            .max(1e-300);
        let res: Vec<f64> = match self.bc {
            BcKind::Dirichlet => self.u.clone(),
            BcKind::Neumann => self.v.iter().map(|v| v / lam).collect(),
            BcKind::RobinConstant { kappa } => self.u.iter().zip(&self.v).map(|(u, v)| (v + kappa * u) / lam).collect(),
            BcKind::RobinMultiplier { kappa } => {
                let ku = crate::spectral::abs_derivative(&self.u, self.grid.length);
                ku.iter().zip(&self.v).map(|(k, v)| (v + kappa * k) / lam).collect()
            }
        };
        res.iter().map(|r| r.abs()).fold(0.0, f64::max) / scale
    }
}
