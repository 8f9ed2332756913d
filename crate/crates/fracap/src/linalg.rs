//! Preconditioned conjugate gradients and deterministic reductions.

use crate::error::{Error, Result};
use rayon::prelude::*;

const CHUNK: usize = 1 << 14;

/// Dot product with a reduction order fixed by index, independent of the
/// number of worker threads.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(x, y)| x * y).sum())
        .collect();
    partial.iter().sum()
}

/// Sum with a reduction order fixed by index.
pub fn sum(a: &[f64]) -> f64 {
    let partial: Vec<f64> = a.par_chunks(CHUNK).map(|x| x.iter().sum()).collect();
    partial.iter().sum()
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut()
        .zip(x.par_iter())
        .for_each(|(y, x)| *y += alpha * x);
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solve `A x = b` for a symmetric positive (semi)definite operator by
/// preconditioned conjugate gradients, starting from `x`.
///
/// `apply(v, out)` writes `A v`; `precondition(r, out)` writes `M⁻¹ r`.
/// Convergence is declared when `‖b − A x‖ ≤ tol · ‖b‖`.
pub fn pcg(
    apply: &mut dyn FnMut(&[f64], &mut [f64]),
    precondition: &mut dyn FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgReport> {
    let len = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; len];
    apply(x, &mut r);
    r.par_iter_mut()
        .zip(b.par_iter())
        .for_each(|(r, b)| *r = b - *r);
    let mut z = vec![0.0; len];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; len];
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / bnorm;
    for it in 0..max_iter {
        if res <= tol {
            return Ok(CgReport {
                iterations: it,
                relative_residual: res,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: res,
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        res = dot(&r, &r).sqrt() / bnorm;
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut()
            .zip(z.par_iter())
            .for_each(|(p, z)| *p = z + beta * *p);
    }
    if res <= tol {
        return Ok(CgReport {
            iterations: max_iter,
            relative_residual: res,
        });
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: res,
    })
}

/// Two independent conjugate-gradient solves that share every operator
/// application, for operators that can act on a pair of vectors more cheaply
/// than on each separately (e.g. FFT convolutions packed into one complex
/// transform). No preconditioner; `apply2(a, b, out_a, out_b)` writes `A a`
/// and `A b`.
pub fn cg_pair(
    apply2: &mut dyn FnMut(&[f64], &[f64], &mut [f64], &mut [f64]),
    b: [&[f64]; 2],
    x: [&mut [f64]; 2],
    tol: f64,
    max_iter: usize,
) -> Result<[CgReport; 2]> {
    let len = b[0].len();
    let xs = x;
    let bnorm = [dot(b[0], b[0]).sqrt(), dot(b[1], b[1]).sqrt()];
    let mut r = [vec![0.0; len], vec![0.0; len]];
    {
        let (ra, rb) = r.split_at_mut(1);
        apply2(&*xs[0], &*xs[1], &mut ra[0], &mut rb[0]);
    }
    for k in 0..2 {
        r[k].par_iter_mut()
            .zip(b[k].par_iter())
            .for_each(|(r, b)| *r = b - *r);
    }
    let mut p = r.clone();
    let mut ap = [vec![0.0; len], vec![0.0; len]];
    let mut rr = [dot(&r[0], &r[0]), dot(&r[1], &r[1])];
    let rel = |rr: f64, k: usize| {
        if bnorm[k] == 0.0 {
            0.0
        } else {
            rr.sqrt() / bnorm[k]
        }
    };
    let mut done = [rel(rr[0], 0) <= tol, rel(rr[1], 1) <= tol];
    let mut iters = [0usize; 2];
    for it in 0..max_iter {
        if done[0] && done[1] {
            break;
        }
        {
            let (aa, ab) = ap.split_at_mut(1);
            let zero_a;
            let zero_b;
            let pa: &[f64] = if done[0] {
                zero_a = vec![0.0; len];
                &zero_a
            } else {
                &p[0]
            };
            let pb: &[f64] = if done[1] {
                zero_b = vec![0.0; len];
                &zero_b
            } else {
                &p[1]
            };
            apply2(pa, pb, &mut aa[0], &mut ab[0]);
        }
        for k in 0..2 {
            if done[k] {
                continue;
            }
            let pap = dot(&p[k], &ap[k]);
            if pap <= 0.0 {
                return Err(Error::NoConvergence {
                    iterations: it,
                    residual: rel(rr[k], k),
                });
            }
            let alpha = rr[k] / pap;
            axpy(alpha, &p[k], xs[k]);
            axpy(-alpha, &ap[k], &mut r[k]);
            let rr_new = dot(&r[k], &r[k]);
            let beta = rr_new / rr[k];
            rr[k] = rr_new;
            let rk = &r[k];
            p[k].par_iter_mut()
                .zip(rk.par_iter())
                .for_each(|(p, r)| *p = r + beta * *p);
            iters[k] = it + 1;
            if rel(rr[k], k) <= tol {
                done[k] = true;
            }
        }
    }
    let reports = [
        CgReport {
            iterations: iters[0],
            relative_residual: rel(rr[0], 0),
        },
        CgReport {
            iterations: iters[1],
            relative_residual: rel(rr[1], 1),
        },
    ];
    for rep in reports {
        if rep.relative_residual > tol {
            return Err(Error::NoConvergence {
                iterations: rep.iterations,
                residual: rep.relative_residual,
            });
        }
    }
    Ok(reports)
}

/// Solve a symmetric tridiagonal system in place (Thomas algorithm).
/// `diag` has length m, `off` length m−1; the right-hand side is overwritten
/// by the solution. `work` must have length m.
pub fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &mut [f64], work: &mut [f64]) {
    let m = diag.len();
    if m == 0 {
        return;
    }
    let mut denom = diag[0];
    rhs[0] /= denom;
    for i in 1..m {
        work[i] = off[i - 1] / denom;
        denom = diag[i] - off[i - 1] * work[i];
        rhs[i] = (rhs[i] - off[i - 1] * rhs[i - 1]) / denom;
    }
    for i in (0..m - 1).rev() {
        let w = work[i + 1];
        rhs[i] -= w * rhs[i + 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_solves_a_small_laplacian() {
        let m = 50;
        let mut apply = |v: &[f64], out: &mut [f64]| {
            for i in 0..m {
                let l = if i > 0 { v[i - 1] } else { 0.0 };
                let r = if i + 1 < m { v[i + 1] } else { 0.0 };
                out[i] = 2.0 * v[i] - l - r;
            }
        };
        let mut id = |r: &[f64], z: &mut [f64]| z.copy_from_slice(r);
        let b = vec![1.0; m];
        let mut x = vec![0.0; m];
        let rep = pcg(&mut apply, &mut id, &b, &mut x, 1e-12, 200).unwrap();
        assert!(rep.iterations <= m);
        // Exact solution of -u'' = 1 with zero ends: x_i = (i+1)(m-i)/2.
        for (i, v) in x.iter().enumerate() {
            let exact = (i + 1) as f64 * (m - i) as f64 / 2.0;
            assert!((v - exact).abs() < 1e-8 * exact.max(1.0));
        }
    }

    #[test]
    fn tridiagonal_matches_cg() {
        let diag = vec![4.0, 5.0, 6.0, 7.0];
        let off = vec![-1.0, -2.0, -1.5];
        let mut rhs = vec![1.0, 2.0, 3.0, 4.0];
        let mut work = vec![0.0; 4];
        let b = rhs.clone();
        solve_tridiagonal(&diag, &off, &mut rhs, &mut work);
        for i in 0..4 {
            let mut ax = diag[i] * rhs[i];
            if i > 0 {
                ax += off[i - 1] * rhs[i - 1];
            }
            if i < 3 {
                ax += off[i] * rhs[i + 1];
            }
            assert!((ax - b[i]).abs() < 1e-12);
        }
    }
}
