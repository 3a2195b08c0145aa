//! The billiard map in Birkhoff coordinates `(s, p)`.
//!
//! `p` is the cosine of the angle between the outgoing ray and the
//! positively oriented tangent, so the outgoing direction at `s` is
//! `p T(s) - sqrt(1 - p^2) N(s)` with `N` the outward normal. The map
//! preserves `ds dp`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{BoundaryCurve, Segment, Side, Vec2};
use crate::quadrature::{composite_gauss, gauss_legendre};

/// Hits closer than this (times `L`) to a corner terminate the trajectory;
/// it is also the minimal ray parameter accepted as a new intersection.
pub const HIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffPoint {
    pub s: f64,
    pub p: f64,
}

impl BirkhoffPoint {
    pub fn new(s: f64, p: f64) -> Self {
        Self { s, p }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BilliardError {
    #[error("ray hit the corner at arclength {s}")]
    CornerHit { s: f64 },
    #[error("no boundary intersection found from s = {s}, p = {p}")]
    NoIntersection { s: f64, p: f64 },
    #[error("invalid Birkhoff point: p = {p} must lie strictly inside (-1, 1)")]
    InvalidPoint { p: f64 },
}

/// Outgoing direction of the ray leaving `x`.
pub fn outgoing_direction(curve: &BoundaryCurve, x: BirkhoffPoint) -> (Vec2, Vec2) {
    let f = curve.boundary_eval_side(x.s, Side::After);
    let q = (1.0 - x.p * x.p).max(0.0).sqrt();
    (f.point, x.p * f.tangent - q * f.normal)
}

/// Smallest ray parameter above `tmin` at which `origin + t dir` meets the
/// segment, together with the local arclength of the hit.
fn intersect(seg: &Segment, origin: Vec2, dir: Vec2, tmin: f64) -> Option<(f64, f64)> {
    match *seg {
        Segment::Line { start, end } => {
            let e = end - start;
            let denom = dir.cross(e);
            if denom.abs() < 1e-300 {
                return None;
            }
            let w = start - origin;
            let t = w.cross(e) / denom;
            let u = w.cross(dir) / denom;
            let len = e.norm();
            let slack = HIT_TOL;
            if t > tmin && u >= -slack && u <= 1.0 + slack {
                Some((t, (u * len).clamp(0.0, len)))
            } else {
                None
            }
        }
        Segment::Arc { center, radius, theta0, sweep } => {
            let w = origin - center;
            let b = dir.dot(w);
            let c = w.dot(w) - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            // numerically stable pair of roots
            let q = -(b + sq.copysign(b));
            let roots = if q != 0.0 { [q, c / q] } else { [0.0, 0.0] };
            let mut best: Option<(f64, f64)> = None;
            for &t in &roots {
                if t <= tmin {
                    continue;
                }
                let hit = w + t * dir;
                let mut ang = hit.y.atan2(hit.x) - theta0;
                ang = ang.rem_euclid(2.0 * PI);
                let tol = HIT_TOL / radius;
                let local = if ang <= sweep + tol {
                    Some(ang.min(sweep))
                } else if ang >= 2.0 * PI - tol {
                    Some(0.0)
                } else {
                    None
                };
                if let Some(a) = local {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, a * radius));
                    }
                }
            }
            best
        }
    }
}

/// One application of the billiard map.
pub fn billiard_step(curve: &BoundaryCurve, x: BirkhoffPoint) -> Result<BirkhoffPoint, BilliardError> {
    if !(x.p > -1.0 && x.p < 1.0) {
        return Err(BilliardError::InvalidPoint { p: x.p });
    }
    let (origin, dir) = outgoing_direction(curve, x);
    let tmin = HIT_TOL * curve.length;
    let mut best: Option<(f64, usize, f64)> = None;
    for (i, seg) in curve.segments.iter().enumerate() {
        if let Some((t, local)) = intersect(seg, origin, dir, tmin) {
            if best.is_none_or(|(bt, _, _)| t < bt) {
                best = Some((t, i, local));
            }
        }
    }
    let (_, i, local) = best.ok_or(BilliardError::NoIntersection { s: x.s, p: x.p })?;
    let s_new = curve.wrap(curve.starts[i] + local);
    let corner_tol = HIT_TOL * curve.length;
    if let Some(&c) = curve
        .corners
        .iter()
        .find(|&&c| crate::geometry::periodic_distance(s_new, c, curve.length) <= corner_tol)
    {
        return Err(BilliardError::CornerHit { s: c });
    }
    let frame = curve.segments[i].frame(local);
    let p_new = dir.dot(frame.tangent).clamp(-1.0, 1.0);
    if p_new.abs() >= 1.0 {
        return Err(BilliardError::InvalidPoint { p: p_new });
    }
    Ok(BirkhoffPoint { s: s_new, p: p_new })
}

/// A finite orbit segment. `points[0]` is the starting point.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub points: Vec<BirkhoffPoint>,
    /// Set when the orbit stopped early (corner hit or geometry failure).
    pub truncated: Option<BilliardError>,
}

/// The first `n` points of the orbit of `x0`, starting with `x0` itself.
pub fn trajectory(curve: &BoundaryCurve, x0: BirkhoffPoint, n: usize) -> Trajectory {
    let mut points = Vec::with_capacity(n);
    let mut truncated = None;
    let mut x = x0;
    if n > 0 {
        points.push(x0);
    }
    while points.len() < n {
        match billiard_step(curve, x) {
            Ok(next) => {
                points.push(next);
                x = next;
            }
            Err(e) => {
                truncated = Some(e);
                break;
            }
        }
    }
    Trajectory { points, truncated }
}

/// Bounded function on phase space.
#[derive(Clone)]
pub struct Observable {
    pub name: String,
    /// Upper bound on `|a(s, p)|`.
    pub sup_norm: f64,
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Observable").field("name", &self.name).field("sup_norm", &self.sup_norm).finish()
    }
}

impl Observable {
    pub fn new(name: impl Into<String>, sup_norm: f64, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), sup_norm, f: Arc::new(f) }
    }

    pub fn eval(&self, s: f64, p: f64) -> f64 {
        (self.f)(s, p)
    }
}

/// The five-observable suite used for ergodicity evidence.
pub fn standard_observables(curve: &BoundaryCurve) -> Vec<Observable> {
    let l = curve.length;
    let w = 2.0 * PI / l;
    vec![
        Observable::new("p", 1.0, |_, p| p),
        Observable::new("p2", 1.0, |_, p| p * p),
        Observable::new("cos_s", 1.0, move |s, _| (w * s).cos()),
        Observable::new("sin2s_q2", 1.0, move |s, p| (2.0 * w * s).sin() * (1.0 - p * p)),
        Observable::new("p4_cos", 2.0, move |s, p| (1.0 + (w * s).cos()) * p.powi(4)),
    ]
}

#[derive(Debug, Clone)]
pub struct BirkhoffAverage {
    pub mean: f64,
    /// Number of points averaged (below the request only on early stop).
    pub visited: usize,
    /// `(n, running mean)` at roughly logarithmically spaced `n`.
    pub running: Vec<(usize, f64)>,
    pub truncated: Option<BilliardError>,
}

/// Orbit average of `obs` over the first `n` points of the orbit of `x0`.
pub fn birkhoff_average(curve: &BoundaryCurve, obs: &Observable, x0: BirkhoffPoint, n: usize) -> BirkhoffAverage {
    let mut sum = 0.0;
    let mut visited = 0usize;
    let mut running = Vec::new();
    let mut next_mark = 10usize;
    let mut x = x0;
    let mut truncated = None;
    while visited < n {
        sum += obs.eval(x.s, x.p);
        visited += 1;
        if visited == next_mark || visited == n {
            running.push((visited, sum / visited as f64));
            next_mark = ((next_mark as f64) * 1.25).ceil() as usize;
        }
        if visited == n {
            break;
        }
        match billiard_step(curve, x) {
            Ok(y) => x = y,
            Err(e) => {
                truncated = Some(e);
                if running.last().map(|r| r.0) != Some(visited) {
                    running.push((visited, sum / visited as f64));
                }
                break;
            }
        }
    }
    BirkhoffAverage { mean: sum / visited.max(1) as f64, visited, running, truncated }
}

/// Average of `obs` against the normalized invariant measure `ds dp / 2L`.
pub fn invariant_mean(curve: &BoundaryCurve, obs: &Observable) -> f64 {
    let (pn, pw) = gauss_legendre(40);
    let mut total = 0.0;
    for (i, seg) in curve.segments.iter().enumerate() {
        let len = seg.length();
        let panels = ((32.0 * len / curve.length).ceil() as usize).max(2);
        for (t, wt) in composite_gauss(20, panels, 0.0, len) {
            let s = curve.starts[i] + t;
            let inner: f64 = pn.iter().zip(&pw).map(|(&p, &w)| w * obs.eval(s, p)).sum();
            total += wt * inner;
        }
    }
    total / (2.0 * curve.length)
}

/// Starting density for [`measure_preservation_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleDensity {
    /// Uniform in `(s, p)`: the invariant measure.
    Invariant,
    /// Uniform in `(s, theta)` with `p = cos theta`: not invariant.
    UniformAngle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureCheck {
    /// Largest deviation of the pushed-forward cumulative distribution from
    /// the uniform one over the corners of the 20x20 grid.
    pub discrepancy: f64,
    pub samples: usize,
    /// Samples dropped because their ray hit a corner.
    pub corner_hits: usize,
}

/// Push `samples` points one step and compare with `ds dp / 2L`.
///
/// The statistic is the grid-cumulative discrepancy
/// `max_{i,j} |F_emp(s_i, p_j) - F(s_i, p_j)|` with `F` the distribution
/// function of the uniform law and `(s_i, p_j)` the 21x21 corners of a 20x20
/// cell grid. Its Monte Carlo noise is about `0.5 / sqrt(samples)`.
pub fn measure_preservation_check(curve: &BoundaryCurve, samples: usize, density: SampleDensity, seed: u64) -> MeasureCheck {
    const G: usize = 20;
    let mut counts = vec![0u64; G * G];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = 0usize;
    let mut corner_hits = 0usize;
    for _ in 0..samples {
        let s = rng.gen::<f64>() * curve.length;
        let p = match density {
            SampleDensity::Invariant => 2.0 * rng.gen::<f64>() - 1.0,
            SampleDensity::UniformAngle => (PI * rng.gen::<f64>()).cos(),
        };
        if p.abs() >= 1.0 {
            continue;
        }
        match billiard_step(curve, BirkhoffPoint { s, p }) {
            Ok(y) => {
                let i = ((y.s / curve.length) * G as f64).floor().clamp(0.0, (G - 1) as f64) as usize;
                let j = (((y.p + 1.0) / 2.0) * G as f64).floor().clamp(0.0, (G - 1) as f64) as usize;
                counts[i * G + j] += 1;
                kept += 1;
            }
            Err(_) => corner_hits += 1,
        }
    }
    // 2-D prefix sums over cells
    let mut cum = vec![0u64; (G + 1) * (G + 1)];
    for i in 0..G {
        for j in 0..G {
            cum[(i + 1) * (G + 1) + (j + 1)] =
                counts[i * G + j] + cum[i * (G + 1) + (j + 1)] + cum[(i + 1) * (G + 1) + j] - cum[i * (G + 1) + j];
        }
    }
    let mut worst: f64 = 0.0;
    let n = kept.max(1) as f64;
    for i in 0..=G {
        for j in 0..=G {
            let emp = cum[i * (G + 1) + j] as f64 / n;
            let unif = (i * j) as f64 / (G * G) as f64;
            worst = worst.max((emp - unif).abs());
        }
    }
    MeasureCheck { discrepancy: worst, samples: kept, corner_hits }
}

/// Uniformly random Birkhoff point from a seeded generator.
pub fn random_point(curve: &BoundaryCurve, rng: &mut impl Rng) -> BirkhoffPoint {
    BirkhoffPoint {
        s: rng.gen::<f64>() * curve.length,
        p: (2.0 * rng.gen::<f64>() - 1.0) * 0.999_999,
    }
}
