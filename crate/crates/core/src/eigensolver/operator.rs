//! The boundary-condition operator `A(k)` whose singular frequencies are the
//! eigenvalues, in full and symmetry-reduced form.
//!
//! Rows impose the boundary condition on the traces of `u = Sφ`:
//! Dirichlet `k S`, Neumann `1/2 + K'`, Robin `1/2 + K' + K S` with `K`
//! either `κ` or the circulant multiplier `κ|D_s|`. The Dirichlet rows are
//! scaled by `k` so that all three have singular values of order one.

use faer::{c64, Mat};

use super::kress::{assemble_rows, multiplier_column, reduce, reduce_circulant, KressWeights, Rows};
use super::nodes::{Nodes, NotSymmetric, Symmetry, SymmetryClass};
use super::table::BesselTable;
use crate::geometry::BoundaryCurve;
use crate::mode::BcKind;

/// Discretised problem at a fixed node count.
pub struct Discretisation {
    pub bc: BcKind,
    pub nodes: Nodes,
    pub sym: Symmetry,
    pub weights: KressWeights,
    pub table: BesselTable,
    /// First column of the circulant Robin multiplier, when `K = κ|D_s|`.
    multiplier: Option<Vec<f64>>,
    /// Graded Dirichlet: node factors `sqrt(w̄ / w_j)` applied to rows and
    /// columns. The isometric single layer is compact, and on graded nodes
    /// densities living on the clustered corner nodes would otherwise give
    /// singular values of the order of the local spacing at every `k`.
    spacing_scale: Option<Vec<f64>>,
}

/// Node count for frequency `k` at `ppw` nodes per wavelength. Graded
/// corner grids double it (their mid-side spacing is twice the average).
pub fn node_count(curve: &BoundaryCurve, k: f64, ppw: f64) -> usize {
    let base = (ppw * k * curve.length / (2.0 * std::f64::consts::PI)).ceil() as usize;
    if curve.corners.is_empty() {
        curve.grid_size(base.max(32))
    } else {
        let sides = curve.corners.len();
        // an even count per side keeps nodes off the symmetry axes
        let unit = 4 * 2 * sides / gcd(4, 2 * sides);
        (2 * base.max(32)).div_ceil(unit) * unit
    }
}

/// Smallest node count for normal-derivative rows on a smooth boundary whose
/// curvature jumps (stadium junctions).
pub const JUMP_MIN_NODES: usize = 256;

/// [`node_count`] with the floor that conditions involving `K'` need when
/// the curvature is discontinuous: below it, low-frequency Neumann and Robin
/// minima stall at σ₁ ~ 1e-4 and are rejected.
pub fn solver_node_count(curve: &BoundaryCurve, bc: BcKind, k: f64, ppw: f64) -> usize {
    let m = node_count(curve, k, ppw);
    let jumps = curve.corners.is_empty() && curve.segments.len() > 1;
    if jumps && !bc.is_dirichlet() && m < JUMP_MIN_NODES {
        curve.grid_size(JUMP_MIN_NODES)
    } else {
        m
    }
}

/// Node count for refined roots and mode traces: the curvature-jump floor
/// applies to every condition. The Dirichlet scan cannot use it, because the
/// off-spectrum σ₁ of `k·S` falls like 1/M and the dips narrow below the
/// scan step.
pub fn mode_node_count(curve: &BoundaryCurve, bc: BcKind, k: f64, ppw: f64) -> usize {
    let m = solver_node_count(curve, bc, k, ppw);
    let jumps = curve.corners.is_empty() && curve.segments.len() > 1;
    if jumps && m < JUMP_MIN_NODES {
        curve.grid_size(JUMP_MIN_NODES)
    } else {
        m
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Discretisation {
    /// `k_max` bounds the frequencies this discretisation will be used at.
    pub fn new(curve: &BoundaryCurve, bc: BcKind, m: usize, k_max: f64) -> Result<Self, NotSymmetric> {
        let nodes = Nodes::for_curve(curve, m);
        let sym = Symmetry::new(&nodes, curve.spec.origin)?;
        let diam = nodes
            .x
            .iter()
            .flat_map(|p| nodes.x.iter().map(move |q| (*p - *q).norm()))
            .fold(0.0, f64::max);
        let multiplier = match bc {
            BcKind::RobinMultiplier { kappa } => Some(multiplier_column(m, curve.length, |xi| kappa * xi.abs())),
            _ => None,
        };
        let spacing_scale = (bc.is_dirichlet() && nodes.grid.is_none()).then(|| {
            let w = nodes.weights();
            let mean = curve.length / m as f64;
            w.iter().map(|wj| (mean / wj).sqrt()).collect()
        });
        Ok(Self {
            spacing_scale,
            bc,
            weights: KressWeights::new(m),
            table: BesselTable::new(k_max * diam * 1.01 + 2.0),
            nodes,
            sym,
            multiplier,
        })
    }

    pub fn m(&self) -> usize {
        self.nodes.m
    }

    fn needs_kp(&self) -> bool {
        !self.bc.is_dirichlet()
    }

    /// Rows of `S` and `K'` at the orbit representatives.
    pub fn rep_rows(&self, k: f64) -> Rows {
        assemble_rows(&self.nodes, &self.weights, &self.table, k, &self.sym.reps, self.needs_kp())
    }

    /// Rows of `S` and `K'` at the representatives, whatever the condition.
    pub fn trace_rows(&self, k: f64) -> Rows {
        assemble_rows(&self.nodes, &self.weights, &self.table, k, &self.sym.reps, true)
    }

    /// Reduced blocks of `S` and `1/2 + K'` for one symmetry class.
    pub fn layer_blocks(&self, rows: &Rows, class: SymmetryClass) -> (Mat<c64>, Option<Mat<c64>>) {
        let m = self.m();
        let s = reduce(&rows.s, m, &self.sym, class);
        let kp = if rows.kp.is_empty() {
            None
        } else {
            let mut b = reduce(&rows.kp, m, &self.sym, class);
            for i in 0..b.nrows() {
                b[(i, i)] += c64::new(0.5, 0.0);
            }
            Some(b)
        };
        (s, kp)
    }

    /// Reduced boundary-condition operator for one class.
    pub fn class_operator(&self, k: f64, rows: &Rows, class: SymmetryClass) -> Mat<c64> {
        let (s, kp) = self.layer_blocks(rows, class);
        match self.bc {
            BcKind::Dirichlet => match &self.spacing_scale {
                None => scaled(&s, k),
                Some(f) => {
                    let r = &self.sym.reps;
                    Mat::from_fn(s.nrows(), s.ncols(), |i, j| s[(i, j)] * (k * f[r[i]] * f[r[j]]))
                }
            },
            BcKind::Neumann => kp.expect("normal-derivative rows"),
            BcKind::RobinConstant { kappa } => kp.expect("normal-derivative rows") + scaled(&s, kappa),
            BcKind::RobinMultiplier { .. } => {
                let c = reduce_circulant(self.multiplier.as_ref().expect("multiplier"), &self.sym, class);
                kp.expect("normal-derivative rows") + c * s
            }
        }
    }

    /// Full `M × M` operator in the isometric scaling.
    pub fn full_operator(&self, k: f64) -> Mat<c64> {
        let m = self.m();
        let all: Vec<usize> = (0..m).collect();
        let rows = assemble_rows(&self.nodes, &self.weights, &self.table, k, &all, self.needs_kp());
        let s = Mat::from_fn(m, m, |i, j| rows.s[i * m + j]);
        let kp = || Mat::from_fn(m, m, |i, j| rows.kp[i * m + j] + if i == j { c64::new(0.5, 0.0) } else { c64::new(0.0, 0.0) });
        match self.bc {
            BcKind::Dirichlet => match &self.spacing_scale {
                None => scaled(&s, k),
                Some(f) => Mat::from_fn(m, m, |i, j| s[(i, j)] * (k * f[i] * f[j])),
            },
            BcKind::Neumann => kp(),
            BcKind::RobinConstant { kappa } => kp() + scaled(&s, kappa),
            BcKind::RobinMultiplier { .. } => {
                let col = self.multiplier.as_ref().expect("multiplier");
                let c = Mat::from_fn(m, m, |i, j| c64::new(col[(i + m - j) % m], 0.0));
                kp() + c * s
            }
        }
    }
}

impl Discretisation {
    /// Isometric density (per representative) from a null vector of
    /// [`Discretisation::class_operator`].
    pub fn isometric_density(&self, psi: &[c64]) -> Vec<c64> {
        match &self.spacing_scale {
            None => psi.to_vec(),
            Some(f) => psi.iter().zip(&self.sym.reps).map(|(p, &r)| *p * f[r]).collect(),
        }
    }
}

fn scaled(a: &Mat<c64>, f: f64) -> Mat<c64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * f)
}

/// The two smallest singular values, ascending.
pub fn smallest_two(a: &Mat<c64>) -> (f64, f64) {
    let mut sv = a.singular_values().expect("singular values converge");
    sv.sort_by(f64::total_cmp);
    (sv[0], sv.get(1).copied().unwrap_or(f64::INFINITY))
}
