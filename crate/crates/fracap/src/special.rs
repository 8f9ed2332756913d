//! Gamma function and Gauss–Legendre quadrature.
//!
//! Every closed-form constant of the library is a ratio of Gamma values, so
//! the Gamma function carries the whole accuracy budget of [`crate::constants`].

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Γ(x) for real `x`, using the Lanczos approximation (g = 7, nine terms) for
/// `x ≥ 1/2` and the reflection formula below that.
///
/// Relative accuracy is about 1e-15 for moderate arguments. Poles at the
/// non-positive integers return an infinite value.
///
/// ```
/// use fracap::special::gamma;
/// assert!((gamma(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-14);
/// assert!((gamma(5.0) - 24.0).abs() < 1e-12);
/// ```
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        let sin = (PI * x).sin();
        if sin == 0.0 {
            return f64::INFINITY;
        }
        return PI / (sin * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
}

/// ln Γ(x) for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Volume ω_n of the unit ball of ℝⁿ.
pub fn unit_ball_volume(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    PI.powf(h) / gamma(h + 1.0)
}

/// Gauss–Legendre nodes and weights on `[a, b]` with `m` points.
///
/// ```
/// let (x, w) = fracap::special::gauss_legendre(0.0, 1.0, 5);
/// let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
/// assert!((integral - 1.0 / 9.0).abs() < 1e-14);
/// ```
pub fn gauss_legendre(a: f64, b: f64, m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m > 0, "at least one quadrature node is required");
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let half = (b - a) / 2.0;
    let mid = (a + b) / 2.0;
    for i in 0..m.div_ceil(2) {
        // Chebyshev-like initial guess followed by Newton iterations on P_m.
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = mid - half * x;
        nodes[m - 1 - i] = mid + half * x;
        weights[i] = half * w;
        weights[m - 1 - i] = half * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre rule: `panels` equal panels of `m` points each.
pub fn composite_gauss_legendre(a: f64, b: f64, panels: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(panels * m);
    let mut ws = Vec::with_capacity(panels * m);
    let step = (b - a) / panels as f64;
    for p in 0..panels {
        let (x, w) = gauss_legendre(a + p as f64 * step, a + (p + 1) as f64 * step, m);
        xs.extend(x);
        ws.extend(w);
    }
    (xs, ws)
}

/// Adaptive Simpson quadrature of a smooth scalar function.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 40)
}
