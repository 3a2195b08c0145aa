//! Integer-order Bessel functions of the first and second kind.
//!
//! `J_n` comes from Miller's backward recurrence normalised by
//! `J_0 + 2 Σ J_{2k} = 1`, which is stable for every order and argument we
//! need (argument up to a few hundred, order up to ~100). `Y_0` and `Y_1`
//! use Neumann's expansions in the same `J` sequence for moderate arguments
//! and Hankel's asymptotic expansion beyond [`ASYMPTOTIC_SWITCH`].

use std::f64::consts::PI;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Arguments at or above this use Hankel's asymptotic expansion for the
/// order 0/1 functions.
pub const ASYMPTOTIC_SWITCH: f64 = 25.0;

/// `J_0, J_1, Y_0, Y_1` at one argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cylinder01 {
    pub j0: f64,
    pub j1: f64,
    pub y0: f64,
    pub y1: f64,
}

fn miller_start(nmax: usize, x: f64) -> usize {
    let top = (nmax as f64).max(x);
    let n = (top + 20.0 + 10.0 * x.max(1.0).cbrt()).ceil() as usize;
    n + (n % 2)
}

/// `J_0(x) ..= J_nmax(x)` for `x >= 0`.
pub fn bessel_j_seq(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    assert!(x > 0.0, "bessel_j_seq needs a non-negative argument");
    let start = miller_start(nmax, x);
    let mut next = 0.0_f64; // j_{k+1}
    let mut cur = 1e-30_f64; // j_k
    let mut norm = 0.0_f64;
    let two_over_x = 2.0 / x;
    for k in (0..=start).rev() {
        if k <= nmax {
            out[k] = cur;
        }
        if k == 0 {
            norm += cur;
        } else if k % 2 == 0 {
            norm += 2.0 * cur;
        }
        if k == 0 {
            break;
        }
        let prev = (k as f64) * two_over_x * cur - next;
        next = cur;
        cur = prev;
        if cur.abs() > 1e250 {
            let scale = 1e-250;
            cur *= scale;
            next *= scale;
            norm *= scale;
            for v in out.iter_mut() {
                *v *= scale;
            }
        }
    }
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// `J_n(x)` for integer `n >= 0` and `x >= 0`.
pub fn bessel_j(n: usize, x: f64) -> f64 {
    bessel_j_seq(n, x)[n]
}

/// `(J_n(x), J_n'(x))`.
pub fn bessel_j_and_prime(n: usize, x: f64) -> (f64, f64) {
    let seq = bessel_j_seq(n + 1, x);
    let d = if n == 0 {
        -seq[1]
    } else {
        0.5 * (seq[n - 1] - seq[n + 1])
    };
    (seq[n], d)
}

/// `J_n'(x)`.
pub fn bessel_j_prime(n: usize, x: f64) -> f64 {
    bessel_j_and_prime(n, x).1
}

fn hankel_asymptotic(nu: f64, x: f64) -> (f64, f64) {
    let mu = 4.0 * nu * nu;
    let inv8x = 1.0 / (8.0 * x);
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0_f64;
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        term *= (mu - odd * odd) * inv8x / k as f64;
        let mag = term.abs();
        if mag > last {
            break;
        }
        last = mag;
        // a_k / x^k alternates between Q (odd k) and P (even k) with sign (-1)^{floor(k/2)}
        match k % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
        if mag < 1e-17 * p.abs().max(1e-300) {
            break;
        }
    }
    let omega = x - (0.5 * nu + 0.25) * PI;
    let amp = (2.0 / (PI * x)).sqrt();
    let (s, c) = omega.sin_cos();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}

/// `J_0, J_1, Y_0, Y_1` at `x > 0`.
pub fn bessel_01(x: f64) -> Cylinder01 {
    assert!(x > 0.0, "bessel_01 needs a positive argument");
    if x >= ASYMPTOTIC_SWITCH {
        let (j0, y0) = hankel_asymptotic(0.0, x);
        let (j1, y1) = hankel_asymptotic(1.0, x);
        return Cylinder01 { j0, j1, y0, y1 };
    }
    bessel_01_series(x)
}

fn bessel_01_series(x: f64) -> Cylinder01 {
    let start = miller_start(1, x);
    let seq = bessel_j_seq(start, x);
    let log_term = (0.5 * x).ln() + EULER_GAMMA;
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut k = 1;
    while 2 * k + 1 <= start {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        s0 += sign * seq[2 * k] / k as f64;
        s1 += sign * (seq[2 * k - 1] - seq[2 * k + 1]) / k as f64;
        k += 1;
    }
    let j0 = seq[0];
    let j1 = seq[1];
    let y0 = (2.0 / PI) * (log_term * j0) - (4.0 / PI) * s0;
    let y1 = -(2.0 / (PI * x)) * j0 + (2.0 / PI) * log_term * j1 + (2.0 / PI) * s1;
    Cylinder01 { j0, j1, y0, y1 }
}

/// Which function's zeros to enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroKind {
    J,
    JPrime,
}

/// Value and derivative of a radial matching function `f(x)` whose zeros
/// are disk eigenvalues (times the radius).
#[derive(Debug, Clone, Copy)]
pub enum Matching {
    /// `J_m(x)`
    Dirichlet,
    /// `J_m'(x)`
    Neumann,
    /// `x J_m'(x) + c J_m(x)` with `c >= 0`
    Robin(f64),
}

impl Matching {
    pub(crate) fn eval(self, m: usize, x: f64) -> (f64, f64) {
        let (j, jp) = bessel_j_and_prime(m, x);
        let mf = m as f64;
        // J'' from Bessel's equation
        let jpp = -jp / x - (1.0 - mf * mf / (x * x)) * j;
        match self {
            Matching::Dirichlet => (j, jp),
            Matching::Neumann => (jp, jpp),
            Matching::Robin(c) => (x * jp + c * j, jp * (1.0 + c) + x * jpp),
        }
    }
}

/// Safeguarded Newton iteration on a sign-changing bracket.
pub(crate) fn polish_root(f: impl Fn(f64) -> (f64, f64), mut lo: f64, mut hi: f64) -> f64 {
    let (flo, _) = f(lo);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return x;
        }
        if (fx > 0.0) == (flo > 0.0) {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs() {
            return next;
        }
        x = next;
        if hi - lo <= 2.0 * f64::EPSILON * x.abs() {
            return x;
        }
    }
    x
}

/// Scan `f` upward from `start` in steps of `step`, returning the first
/// `count` sign-change roots (and stopping once `x` exceeds `x_max`).
pub(crate) fn scan_roots(
    f: impl Fn(f64) -> (f64, f64),
    start: f64,
    step: f64,
    count: usize,
    x_max: f64,
) -> Vec<f64> {
    let mut roots = Vec::new();
    let mut a = start;
    let mut fa = f(a).0;
    while roots.len() < count && a < x_max {
        let b = a + step;
        let fb = f(b).0;
        if fa == 0.0 {
            roots.push(a);
        } else if (fa > 0.0) != (fb > 0.0) {
            let r = polish_root(&f, a, b);
            if r <= x_max {
                roots.push(r);
            } else {
                break;
            }
        }
        a = b;
        fa = fb;
    }
    roots
}

fn scan_start(matching: Matching, m: usize) -> f64 {
    // every positive zero of J_m, J_m' (m >= 1) and every positive Robin
    // root lies above m. For m = 0 start just off the origin; the lowest
    // Robin root behaves like sqrt(2c) as c -> 0.
    match (matching, m) {
        (Matching::Robin(c), 0) if c > 0.0 => (0.5 * c.sqrt()).min(0.25),
        (_, 0) => 0.25,
        _ => m as f64,
    }
}

/// The `n`-th positive zero (`n >= 1`) of `J_m` or `J_m'`.
///
/// For `J_0'` the trivial zero at the origin is not counted, so
/// `bessel_zero(JPrime, 0, 1) = j_{1,1}`.
pub fn bessel_zero(kind: ZeroKind, m: usize, n: usize) -> f64 {
    assert!(n >= 1, "zero index starts at 1");
    let matching = match kind {
        ZeroKind::J => Matching::Dirichlet,
        ZeroKind::JPrime => Matching::Neumann,
    };
    let roots = scan_roots(
        |x| matching.eval(m, x),
        scan_start(matching, m),
        0.5,
        n,
        f64::INFINITY,
    );
    roots[n - 1]
}

/// All positive roots of the matching function below `x_max`, ascending.
pub fn matching_roots_below(matching: Matching, m: usize, x_max: f64) -> Vec<f64> {
    let start = scan_start(matching, m);
    if start >= x_max {
        return Vec::new();
    }
    // Robin roots can sit closer together than pi; a quarter step is safe.
    let step = match matching {
        Matching::Robin(_) => 0.25,
        _ => 0.5,
    };
    scan_roots(|x| matching.eval(m, x), start, step, usize::MAX, x_max)
}

/// McMahon's large-zero expansion, used as a starting guess in tests.
#[cfg(test)]
pub(crate) fn mcmahon_guess(m: usize, n: usize) -> f64 {
    let beta = (n as f64 + 0.5 * m as f64 - 0.25) * PI;
    let mu = 4.0 * (m * m) as f64;
    beta - (mu - 1.0) / (8.0 * beta) - 4.0 * (mu - 1.0) * (7.0 * mu - 31.0) / (3.0 * (8.0 * beta).powi(3))
}
