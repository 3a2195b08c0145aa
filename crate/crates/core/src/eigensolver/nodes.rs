//! Quadrature nodes on the boundary and the D2 reflection symmetry.
//!
//! Smooth boundaries (disk, stadium) use the uniform arclength grid of
//! [`Grid`]. Boundaries with corners use a graded parametrisation: each side
//! is traversed with Kress's sigmoidal substitution, so nodes cluster at the
//! corners and the parametrised curve is smooth to order `GRADING - 1`.

use std::f64::consts::PI;

use crate::geometry::{BoundaryCurve, Side, Vec2};
use crate::mode::Grid;

/// Order of the sigmoidal corner grading.
pub const GRADING: f64 = 6.0;

#[derive(Debug, Clone)]
pub struct Nodes {
    pub m: usize,
    /// Arclength position of each node, in `[0, L)`.
    pub s: Vec<f64>,
    pub x: Vec<Vec2>,
    pub normal: Vec<Vec2>,
    pub curvature: Vec<f64>,
    /// `|dx/dt|` for the parameter `t` in `[0, 2π)`.
    pub speed: Vec<f64>,
    /// The uniform arclength grid, when the nodes are one.
    pub grid: Option<Grid>,
}

fn kress_v(t: f64, p: f64) -> f64 {
    (1.0 / p - 0.5) * ((PI - t) / PI).powi(3) + (t - PI) / (p * PI) + 0.5
}

fn kress_dv(t: f64, p: f64) -> f64 {
    -3.0 * (1.0 / p - 0.5) * (PI - t).powi(2) / PI.powi(3) + 1.0 / (p * PI)
}

/// Kress's substitution `w: [0, 2π] -> [0, 2π]` and its derivative.
pub fn sigmoid(t: f64, p: f64) -> (f64, f64) {
    let a = kress_v(t, p);
    let b = kress_v(2.0 * PI - t, p);
    let va = a.powf(p);
    let vb = b.powf(p);
    let dva = p * a.powf(p - 1.0) * kress_dv(t, p);
    let dvb = -p * b.powf(p - 1.0) * kress_dv(2.0 * PI - t, p);
    let den = va + vb;
    (2.0 * PI * va / den, 2.0 * PI * (dva * vb - va * dvb) / (den * den))
}

impl Nodes {
    /// Uniform arclength nodes of `grid`.
    pub fn uniform(curve: &BoundaryCurve, grid: &Grid) -> Self {
        let s = grid.nodes();
        let frames: Vec<_> = s.iter().map(|&si| curve.boundary_eval_side(si, Side::After)).collect();
        Self {
            m: grid.m,
            x: frames.iter().map(|f| f.point).collect(),
            normal: frames.iter().map(|f| f.normal).collect(),
            curvature: frames.iter().map(|f| f.curvature).collect(),
            speed: vec![curve.length / (2.0 * PI); grid.m],
            s,
            grid: Some(*grid),
        }
    }

    /// Corner-graded nodes: side `i` (between consecutive corners) takes
    /// the parameter range `[2π i/n, 2π (i+1)/n)`; `m` must be a multiple of
    /// the number of sides.
    pub fn graded(curve: &BoundaryCurve, m: usize) -> Self {
        let corners = &curve.corners;
        let sides = corners.len();
        assert!(sides > 0 && m % sides == 0, "graded nodes need m divisible by the side count");
        let per = m / sides;
        let piece = 2.0 * PI / sides as f64;
        let mut out = Self {
            m,
            s: Vec::with_capacity(m),
            x: Vec::with_capacity(m),
            normal: Vec::with_capacity(m),
            curvature: Vec::with_capacity(m),
            speed: Vec::with_capacity(m),
            grid: None,
        };
        for side in 0..sides {
            let s0 = corners[side];
            let s1 = if side + 1 < sides { corners[side + 1] } else { curve.length + corners[0] };
            let len = s1 - s0;
            for j in 0..per {
                let tau = (j as f64 + 0.5) / per as f64;
                let (w, dw) = sigmoid(2.0 * PI * tau, GRADING);
                let s = curve.wrap(s0 + len * w / (2.0 * PI));
                let f = curve.boundary_eval_side(s, Side::After);
                out.s.push(s);
                out.x.push(f.point);
                out.normal.push(f.normal);
                out.curvature.push(f.curvature);
                // s = s0 + len w(2πτ)/(2π) with τ = (t - t_side)/piece
                out.speed.push(len * dw / piece);
            }
        }
        out
    }

    /// Nodes appropriate for the curve: uniform when smooth, graded at corners.
    pub fn for_curve(curve: &BoundaryCurve, m: usize) -> Self {
        if curve.corners.is_empty() {
            Self::uniform(curve, &Grid::for_curve(curve, m))
        } else {
            Self::graded(curve, m)
        }
    }

    /// Node set of the same kind with `factor` times as many nodes; trace
    /// values upsampled with [`crate::spectral::upsample_half_offset`] sit on it.
    pub fn refined(&self, curve: &BoundaryCurve, factor: usize) -> Self {
        match self.grid {
            Some(g) => Self::uniform(curve, &Grid { m: g.m * factor, ..g }),
            None => Self::graded(curve, self.m * factor),
        }
    }

    /// Parameter `t` in `[0, 2π)` of arclength `s` (inverse of the grading).
    pub fn parameter_of(&self, curve: &BoundaryCurve, s: f64) -> f64 {
        match self.grid {
            Some(g) => 2.0 * PI * (s - g.origin).rem_euclid(curve.length) / curve.length,
            None => {
                let corners = &curve.corners;
                let sides = corners.len();
                let piece = 2.0 * PI / sides as f64;
                let s = curve.wrap(s);
                // side containing s
                let mut side = sides - 1;
                for i in 0..sides {
                    let s0 = corners[i];
                    let s1 = if i + 1 < sides { corners[i + 1] } else { curve.length + corners[0] };
                    let ss = if s < s0 { s + curve.length } else { s };
                    if ss >= s0 && ss < s1 {
                        side = i;
                        break;
                    }
                }
                let s0 = corners[side];
                let s1 = if side + 1 < sides { corners[side + 1] } else { curve.length + corners[0] };
                let ss = if s < s0 { s + curve.length } else { s };
                let target = 2.0 * PI * (ss - s0) / (s1 - s0);
                let (mut lo, mut hi) = (0.0, 2.0 * PI);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if sigmoid(mid, GRADING).0 < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                piece * side as f64 + 0.5 * (lo + hi) / (2.0 * PI) * piece
            }
        }
    }

    /// Largest arclength spacing between neighbouring nodes.
    pub fn max_spacing(&self) -> f64 {
        self.weights().into_iter().fold(0.0, f64::max)
    }

    /// Quadrature weights `(2π/M) |dx/dt|` (arclength measure).
    pub fn weights(&self) -> Vec<f64> {
        let h = 2.0 * PI / self.m as f64;
        self.speed.iter().map(|v| h * v).collect()
    }
}

/// The four one-dimensional representations of D2, labelled by parity
/// under `x -> -x` and `y -> -y` about the domain centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct SymmetryClass {
    pub even_x: bool,
    pub even_y: bool,
}

impl SymmetryClass {
    pub const ALL: [SymmetryClass; 4] = [
        SymmetryClass { even_x: true, even_y: true },
        SymmetryClass { even_x: true, even_y: false },
        SymmetryClass { even_x: false, even_y: true },
        SymmetryClass { even_x: false, even_y: false },
    ];

    pub fn label(&self) -> String {
        format!("{}{}", if self.even_x { '+' } else { '-' }, if self.even_y { '+' } else { '-' })
    }

    /// Characters of the group elements `[e, σ_x, σ_y, σ_x σ_y]`.
    pub fn characters(&self) -> [f64; 4] {
        let cx = if self.even_x { 1.0 } else { -1.0 };
        let cy = if self.even_y { 1.0 } else { -1.0 };
        [1.0, cx, cy, cx * cy]
    }
}

/// Node permutations of the reflections and one representative per orbit.
#[derive(Debug, Clone)]
pub struct Symmetry {
    /// `perm[g][i]`: image of node `i` under group element `g`
    /// (`e, σ_x: x -> -x, σ_y: y -> -y, σ_x σ_y`).
    pub perm: [Vec<usize>; 4],
    /// Orbit representatives (one per orbit of four nodes).
    pub reps: Vec<usize>,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
#[error("boundary nodes are not invariant under the reflections of the domain")]
pub struct NotSymmetric;

impl Symmetry {
    pub fn new(nodes: &Nodes, centre: Vec2) -> Result<Self, NotSymmetric> {
        let m = nodes.m;
        let scale = nodes.x.iter().map(|p| (*p - centre).norm()).fold(0.0, f64::max);
        let tol = 1e-9 * scale.max(1.0);
        let find = |q: Vec2| -> Result<usize, NotSymmetric> {
            // nearest node; node sets are small enough for a linear search
            let (best, dist) = nodes
                .x
                .iter()
                .enumerate()
                .map(|(j, p)| (j, (*p - q).norm()))
                .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
            if dist <= tol {
                Ok(best)
            } else {
                Err(NotSymmetric)
            }
        };
        let mut perm: [Vec<usize>; 4] = [(0..m).collect(), vec![0; m], vec![0; m], vec![0; m]];
        for i in 0..m {
            let d = nodes.x[i] - centre;
            perm[1][i] = find(centre + Vec2::new(-d.x, d.y))?;
            perm[2][i] = find(centre + Vec2::new(d.x, -d.y))?;
            perm[3][i] = find(centre + Vec2::new(-d.x, -d.y))?;
        }
        let mut seen = vec![false; m];
        let mut reps = Vec::with_capacity(m / 4);
        for i in 0..m {
            if seen[i] {
                continue;
            }
            let orbit = [perm[0][i], perm[1][i], perm[2][i], perm[3][i]];
            let mut distinct = orbit.to_vec();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() != 4 {
                return Err(NotSymmetric);
            }
            for &j in &orbit {
                seen[j] = true;
            }
            reps.push(i);
        }
        Ok(Self { perm, reps })
    }

    /// Expand per-representative values of a function in `class` to all nodes.
    pub fn expand<T: Copy + Default + std::ops::Mul<f64, Output = T>>(&self, class: SymmetryClass, vals: &[T]) -> Vec<T> {
        let chi = class.characters();
        let m = self.perm[0].len();
        let mut out = vec![T::default(); m];
        for (p, &r) in self.reps.iter().enumerate() {
            for g in 0..4 {
                out[self.perm[g][r]] = vals[p] * chi[g];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, DomainSpec};

    #[test]
    fn sigmoid_is_monotone_with_flat_ends() {
        let (w0, d0) = sigmoid(1e-3, GRADING);
        assert!(w0 < 1e-10 && d0 < 1e-8);
        let (wm, _) = sigmoid(PI, GRADING);
        assert!((wm - PI).abs() < 1e-12);
        let mut last = 0.0;
        for i in 1..200 {
            let t = 2.0 * PI * i as f64 / 200.0;
            let (w, dw) = sigmoid(t, GRADING);
            assert!(w > last && dw >= 0.0);
            let (wr, _) = sigmoid(2.0 * PI - t, GRADING);
            assert!((w + wr - 2.0 * PI).abs() < 1e-12);
            last = w;
        }
    }

    #[test]
    fn graded_speed_integrates_to_perimeter() {
        let curve = build_domain(&DomainSpec::rectangle(1.0, 0.5)).unwrap();
        let nodes = Nodes::graded(&curve, 160);
        let total: f64 = nodes.weights().iter().sum();
        assert!((total - curve.length).abs() < 1e-7, "{total}");
        // nodes avoid corners
        assert!(nodes.s.iter().all(|&s| curve.corner_arc_distance(s) > 0.0));
        for (i, &si) in nodes.s.iter().enumerate() {
            let t = nodes.parameter_of(&curve, si);
            assert!((t - (i as f64 + 0.5) * 2.0 * PI / 160.0).abs() < 1e-9, "{i}");
        }
    }

    #[test]
    fn every_shape_has_four_node_orbits() {
        for spec in [DomainSpec::disk(1.0), DomainSpec::stadium(1.0, 1.0), DomainSpec::rectangle(1.0, 0.5)] {
            let curve = build_domain(&spec).unwrap();
            let m = if curve.corners.is_empty() { curve.grid_size(64) } else { 64 };
            let nodes = Nodes::for_curve(&curve, m);
            let sym = Symmetry::new(&nodes, spec.origin).unwrap();
            assert_eq!(sym.reps.len() * 4, m);
            let class = SymmetryClass { even_x: false, even_y: true };
            let full = sym.expand(class, &vec![1.0; sym.reps.len()]);
            for i in 0..m {
                assert_eq!(full[sym.perm[1][i]], -full[i]);
                assert_eq!(full[sym.perm[2][i]], full[i]);
            }
        }
    }
}
