//! Lattice weights of the Gagliardo kernel |z|^{−n−2s}.
//!
//! On a lattice of spacing h the energy
//! `∫∫ |u(x) − u(y)|² / |x − y|^{n+2s}` of a cell-wise field is approximated
//! by `hⁿ Σ_i Σ_{k≠0} h^{−2s} W_k (u_{i+k} − u_i)²` with dimensionless weights
//! `W_k` (computed here for h = 1):
//!
//! * `|k|_∞ ≥ 2`: the kernel integrated over the cell `Q_k` (Gauss–Legendre
//!   up to `|k|_∞ = 8`, midpoint with a Laplacian correction beyond);
//! * `|k|_∞ = 1`: the kernel integrated over `Q_k` with the extra factor
//!   `|z|²/|k|²`, which reproduces the quadratic behaviour of the increments
//!   of smooth fields;
//! * the singular self-cell `Q_0` contributes `∫_{Q_0} |z|^{2−n−2s}`, split
//!   evenly over the 2n axis neighbours.
//!
//! All weights are positive, so the discrete form obeys a maximum principle.

use crate::special::gauss_legendre;

/// `J(n, p) = ∫_{[−1,1]^{n−1}} (1 + |y|²)^{p/2} dy`, the angular factor of
/// integrals of `|z|^p` over shells between cubes.
pub fn cube_shell_factor(n: usize, p: f64) -> f64 {
    match n {
        1 => 1.0,
        _ => {
            let (x, w) = gauss_legendre(-1.0, 1.0, 32);
            if n == 2 {
                x.iter()
                    .zip(&w)
                    .map(|(y, w)| w * (1.0 + y * y).powf(p / 2.0))
                    .sum()
            } else {
                let mut acc = 0.0;
                for (y1, w1) in x.iter().zip(&w) {
                    for (y2, w2) in x.iter().zip(&w) {
                        acc += w1 * w2 * (1.0 + y1 * y1 + y2 * y2).powf(p / 2.0);
                    }
                }
                acc
            }
        }
    }
}

/// `∫_{|z|_∞ > c} |z|^{−n−2s} dz`.
pub fn outer_tail(n: usize, s: f64, c: f64) -> f64 {
    2.0 * n as f64 * c.powf(-2.0 * s) / (2.0 * s) * cube_shell_factor(n, -(n as f64) - 2.0 * s)
}

/// `∫_{[−½,½]ⁿ} |z|^{2−n−2s} dz`.
pub fn self_cell_moment(n: usize, s: f64) -> f64 {
    let nf = n as f64;
    2.0 * nf * 0.5f64.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s)
        * cube_shell_factor(n, 2.0 - nf - 2.0 * s)
}

/// Tensor Gauss–Legendre integral of `f(|z|)` over the unit cell centred at `k`.
fn cell_integral(n: usize, k: &[i64], m: usize, f: &dyn Fn(f64) -> f64) -> f64 {
    let mut nodes = Vec::with_capacity(n);
    for &ka in k.iter().take(n) {
        nodes.push(gauss_legendre(ka as f64 - 0.5, ka as f64 + 0.5, m));
    }
    let total = m.pow(n as u32);
    let mut acc = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        let mut r2 = 0.0;
        let mut w = 1.0;
        for (x, wx) in nodes.iter() {
            let j = rem % m;
            rem /= m;
            r2 += x[j] * x[j];
            w *= wx[j];
        }
        acc += w * f(r2.sqrt());
    }
    acc
}

/// The weight table on offsets `[−K, K]ⁿ` together with the full-lattice
/// weight sum (including the continuum tail beyond the table).
#[derive(Debug, Clone)]
pub struct KernelWeights {
    pub n: usize,
    pub s: f64,
    pub half: usize,
    /// Row-major table over `[−K, K]ⁿ`; the centre entry is zero.
    pub table: Vec<f64>,
    /// `Σ_{k ≠ 0} W_k` over the whole lattice.
    pub total: f64,
}

impl KernelWeights {
    pub fn new(n: usize, s: f64, half: usize) -> Self {
        let side = 2 * half + 1;
        let len = side.pow(n as u32);
        let nf = n as f64;
        let p_far = -nf - 2.0 * s;
        let corr = (nf + 2.0 * s) * (2.0 + 2.0 * s) / 24.0;
        let self_share = self_cell_moment(n, s) / (2.0 * nf);
        let h = half as i64;
        let table: Vec<f64> = (0..len)
            .map(|flat| {
                let mut k = [0i64; 3];
                let mut rem = flat;
                for a in (0..n).rev() {
                    k[a] = (rem % side) as i64 - h;
                    rem /= side;
                }
                let k = &k[..n];
                let inf = k.iter().map(|x| x.abs()).max().unwrap_or(0);
                let k2: f64 = k.iter().map(|&x| (x * x) as f64).sum();
                match inf {
                    0 => 0.0,
                    1 => {
                        let near = cell_integral(n, k, 12, &|r| r.powf(2.0 + p_far)) / k2;
                        let axis = k.iter().filter(|x| **x != 0).count() == 1;
                        near + if axis { self_share } else { 0.0 }
                    }
                    2..=8 => cell_integral(n, k, 8, &|r| r.powf(p_far)),
                    _ => k2.powf(p_far / 2.0) * (1.0 + corr / k2),
                }
            })
            .collect();
        let total = table.iter().sum::<f64>() + outer_tail(n, s, half as f64 + 0.5);
        KernelWeights {
            n,
            s,
            half,
            table,
            total,
        }
    }

    /// Weight at offset `k` (zero outside the table).
    pub fn at(&self, k: &[i64]) -> f64 {
        let side = 2 * self.half + 1;
        let mut idx = 0usize;
        for &ka in k.iter().take(self.n) {
            if ka.unsigned_abs() as usize > self.half {
                return 0.0;
            }
            idx = idx * side + (ka + self.half as i64) as usize;
        }
        self.table[idx]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_moment_matches_known_value() {
        // ∫ over the unit square of 1/|z| = 4 asinh(1).
        assert!((self_cell_moment(2, 0.5) - 4.0 * 1f64.asinh()).abs() < 1e-10);
        // One dimension: ∫_{−½}^{½} |z|^{1−2s} = 2 (½)^{2−2s}/(2−2s).
        let s: f64 = 0.3;
        assert!(
            (self_cell_moment(1, s) - 2.0 * 0.5f64.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s)).abs()
                < 1e-14
        );
    }

    #[test]
    fn tail_in_one_dimension() {
        let (s, c) = (0.4, 3.5);
        assert!((outer_tail(1, s, c) - 2.0 * c.powf(-2.0 * s) / (2.0 * s)).abs() < 1e-14);
    }

    #[test]
    fn far_weights_match_cell_integrals() {
        let w = KernelWeights::new(2, 0.6, 12);
        let exact = cell_integral(2, &[10, 3], 10, &|r| r.powf(-3.2));
        assert!((w.at(&[10, 3]) / exact - 1.0).abs() < 1e-4);
        assert!((w.at(&[-10, 3]) - w.at(&[10, -3])).abs() < 1e-15);
    }

    #[test]
    fn total_weight_is_table_independent() {
        // The far-field part of the lattice sum is replaced by the continuum
        // tail; the total must not depend much on where the switch happens.
        let a = KernelWeights::new(3, 0.75, 10).total;
        let b = KernelWeights::new(3, 0.75, 20).total;
        assert!((a / b - 1.0).abs() < 1e-4, "{a} vs {b}");
    }
}
