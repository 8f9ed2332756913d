//! Multi-dimensional FFT convolution on cubic arrays.
//!
//! The lattice operators of the library are translation invariant, so every
//! matrix–vector product is a zero-padded linear convolution evaluated by a
//! circular one. Only the axis lines that can hold nonzero data are
//! transformed on the way in, and only the lines feeding the requested output
//! block are transformed on the way out.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Forward and inverse plans for an `n`-dimensional cube of side `p`.
#[derive(Clone)]
pub struct FftCube {
    n: usize,
    p: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FftCube {
    pub fn new(n: usize, p: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftCube {
            n,
            p,
            fwd: planner.plan_fft_forward(p),
            inv: planner.plan_fft_inverse(p),
        }
    }

    pub fn len(&self) -> usize {
        self.p.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Forward transform of data known to vanish outside `[0, extent)^n`.
    pub fn forward(&self, data: &mut [Complex64], extent: usize) {
        // Axes are processed from the fastest (last) to the slowest; before
        // transforming axis d only the coordinates of axes < d are still
        // restricted to the nonzero extent.
        for axis in (0..self.n).rev() {
            self.axis_pass(
                data,
                axis,
                &self.fwd,
                |other_axis| other_axis < axis,
                extent,
            );
        }
    }

    /// Inverse transform (normalised) whose result is only needed on
    /// `[0, extent)^n`; values elsewhere are left unspecified.
    pub fn inverse(&self, data: &mut [Complex64], extent: usize) {
        for axis in 0..self.n {
            self.axis_pass(
                data,
                axis,
                &self.inv,
                |other_axis| other_axis < axis,
                extent,
            );
        }
        let scale = 1.0 / self.len() as f64;
        data.par_iter_mut().for_each(|v| *v *= scale);
    }

    /// Transform every line along `axis` whose restricted coordinates (axes
    /// for which `restricted` holds) are below `extent`.
    fn axis_pass(
        &self,
        data: &mut [Complex64],
        axis: usize,
        plan: &Arc<dyn Fft<f64>>,
        restricted: impl Fn(usize) -> bool + Sync,
        extent: usize,
    ) {
        let p = self.p;
        let n = self.n;
        let inner = p.pow((n - 1 - axis) as u32);
        let block = p * inner;
        let extent = extent.min(p);
        let keep_outer = |outer: usize| -> bool {
            // Decode the coordinates of axes < axis from the outer index.
            let mut rem = outer;
            for a in (0..axis).rev() {
                let c = rem % p;
                rem /= p;
                if restricted(a) && c >= extent {
                    return false;
                }
            }
            true
        };
        let keep_inner = |inner_idx: usize| -> bool {
            let mut rem = inner_idx;
            for a in ((axis + 1)..n).rev() {
                let c = rem % p;
                rem /= p;
                if restricted(a) && c >= extent {
                    return false;
                }
            }
            true
        };
        data.par_chunks_mut(block)
            .enumerate()
            .for_each(|(outer, chunk)| {
                if !keep_outer(outer) {
                    return;
                }
                let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
                if inner == 1 {
                    plan.process_with_scratch(chunk, &mut scratch);
                    return;
                }
                let mut line = vec![Complex64::new(0.0, 0.0); p];
                for j in 0..inner {
                    if !keep_inner(j) {
                        continue;
                    }
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = chunk[k * inner + j];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (k, v) in line.iter().enumerate() {
                        chunk[k * inner + j] = *v;
                    }
                }
            });
    }
}

/// Smallest integer ≥ `m` whose only prime factors are 2, 3 and 5.
pub fn smooth_size(m: usize) -> usize {
    let mut k = m.max(1);
    loop {
        let mut r = k;
        for f in [2, 3, 5] {
            while r % f == 0 {
                r /= f;
            }
        }
        if r == 1 {
            return k;
        }
        k += 1;
    }
}

/// Linear convolution with an even (symmetric) lattice kernel, evaluated by a
/// circular FFT convolution on a cube of side `p`.
///
/// Input arrays are cubes of side `in_side` placed at the origin; outputs are
/// the cube of side `out_side` starting at offset `out_offset` in every axis.
pub struct KernelConvolution {
    cube: FftCube,
    kernel_hat: Vec<f64>,
    in_side: usize,
    out_side: usize,
    out_offset: usize,
}

impl KernelConvolution {
    /// `kernel(k)` returns the weight at lattice offset `k` (each entry in
    /// `-half..=half`); the kernel must satisfy `kernel(k) = kernel(-k)`.
    pub fn new(
        n: usize,
        half: usize,
        kernel: impl Fn(&[i64]) -> f64 + Sync,
        in_side: usize,
        out_side: usize,
        out_offset: usize,
    ) -> Self {
        // Largest offset between an input and an output cell; kernel entries
        // beyond it never contribute and are dropped so that they cannot alias.
        let max_diff = (out_offset + out_side - 1).max(in_side.saturating_sub(1 + out_offset));
        let half = half.min(max_diff);
        let p = smooth_size(max_diff + half + 1);
        let cube = FftCube::new(n, p);
        let mut data = vec![Complex64::new(0.0, 0.0); cube.len()];
        let h = half as i64;
        let side = 2 * half + 1;
        let count = side.pow(n as u32);
        for flat in 0..count {
            let mut k = [0i64; 3];
            let mut rem = flat;
            for a in (0..n).rev() {
                k[a] = (rem % side) as i64 - h;
                rem /= side;
            }
            let mut idx = 0usize;
            for &ka in k.iter().take(n) {
                idx = idx * p + ka.rem_euclid(p as i64) as usize;
            }
            data[idx] = Complex64::new(kernel(&k[..n]), 0.0);
        }
        cube.forward(&mut data, p);
        // An even real kernel has a real spectrum.
        let kernel_hat = data.iter().map(|c| c.re).collect();
        KernelConvolution {
            cube,
            kernel_hat,
            in_side,
            out_side,
            out_offset,
        }
    }

    /// Convolve two real fields at once, packed as real and imaginary parts.
    pub fn apply_pair(
        &self,
        a: &[f64],
        b: Option<&[f64]>,
        out_a: &mut [f64],
        out_b: Option<&mut [f64]>,
    ) {
        let n = self.cube.n;
        let p = self.cube.p;
        let mut data = vec![Complex64::new(0.0, 0.0); self.cube.len()];
        let s = self.in_side;
        let count = s.pow(n as u32);
        for flat in 0..count {
            let idx = remap(flat, s, p, 0, n);
            data[idx] = Complex64::new(a[flat], b.map_or(0.0, |b| b[flat]));
        }
        self.cube.forward(&mut data, s);
        data.par_iter_mut()
            .zip(self.kernel_hat.par_iter())
            .for_each(|(d, k)| *d *= *k);
        // The pruned inverse only completes lines covering [0, extent)^n, so
        // ask for the smallest extent that contains the output block.
        self.cube
            .inverse(&mut data, self.out_offset + self.out_side);
        let o = self.out_side;
        let count = o.pow(n as u32);
        match out_b {
            Some(out_b) => {
                for flat in 0..count {
                    let v = data[remap(flat, o, p, self.out_offset, n)];
                    out_a[flat] = v.re;
                    out_b[flat] = v.im;
                }
            }
            None => {
                for flat in 0..count {
                    out_a[flat] = data[remap(flat, o, p, self.out_offset, n)].re;
                }
            }
        }
    }

    pub fn apply(&self, a: &[f64], out: &mut [f64]) {
        self.apply_pair(a, None, out, None);
    }
}

/// Map a flat index of a cube of side `s` into a cube of side `p`, shifted by
/// `offset` in every axis.
fn remap(flat: usize, s: usize, p: usize, offset: usize, n: usize) -> usize {
    let mut rem = flat;
    let mut coords = [0usize; 3];
    for a in (0..n).rev() {
        coords[a] = rem % s + offset;
        rem /= s;
    }
    let mut idx = 0;
    for &c in coords.iter().take(n) {
        idx = idx * p + c;
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(
        n: usize,
        side: usize,
        half: i64,
        kernel: &dyn Fn(&[i64]) -> f64,
        a: &[f64],
        off: usize,
        o: usize,
    ) -> Vec<f64> {
        let mut out = vec![0.0; o.pow(n as u32)];
        for (oi, slot) in out.iter_mut().enumerate() {
            let mut ic = [0i64; 3];
            let mut rem = oi;
            for ax in (0..n).rev() {
                ic[ax] = (rem % o + off) as i64;
                rem /= o;
            }
            for (ji, &v) in a.iter().enumerate() {
                let mut jc = [0i64; 3];
                let mut rem = ji;
                for ax in (0..n).rev() {
                    jc[ax] = (rem % side) as i64;
                    rem /= side;
                }
                let k: Vec<i64> = (0..n).map(|ax| ic[ax] - jc[ax]).collect();
                if k.iter().all(|x| x.abs() <= half) {
                    *slot += kernel(&k) * v;
                }
            }
        }
        out
    }

    #[test]
    fn convolution_matches_direct_sum() {
        for n in 1..=3 {
            let side: usize = 5;
            let half = 4usize;
            let kernel = |k: &[i64]| 1.0 / (1.0 + k.iter().map(|x| (x * x) as f64).sum::<f64>());
            let len = side.pow(n as u32);
            let a: Vec<f64> = (0..len).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
            let b: Vec<f64> = (0..len).map(|i| ((i * 104729) % 11) as f64).collect();
            for &(off, o) in &[(0usize, 5usize), (2, 3)] {
                let conv = KernelConvolution::new(n, half, kernel, side, o, off);
                let mut oa = vec![0.0; o.pow(n as u32)];
                let mut ob = vec![0.0; o.pow(n as u32)];
                conv.apply_pair(&a, Some(&b), &mut oa, Some(&mut ob));
                let ea = brute(n, side, half as i64, &kernel, &a, off, o);
                let eb = brute(n, side, half as i64, &kernel, &b, off, o);
                for i in 0..oa.len() {
                    assert!((oa[i] - ea[i]).abs() < 1e-10, "n={n} a[{i}]");
                    assert!((ob[i] - eb[i]).abs() < 1e-10, "n={n} b[{i}]");
                }
            }
        }
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(194), 200);
        assert_eq!(smooth_size(128), 128);
        assert_eq!(smooth_size(7), 8);
    }
}
