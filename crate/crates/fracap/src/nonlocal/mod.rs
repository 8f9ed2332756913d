//! Gagliardo energies, the direct computation of the s-capacity, and the
//! Poisson-kernel extension.
//!
//! The Gagliardo energy `[u]_s² = ∫∫ |u(x) − u(y)|² |x − y|^{−n−2s} dx dy` of a
//! cell-wise field on the box `[-R, R]ⁿ` is discretised as
//! `hⁿ Σ_i Σ_{k≠0} W_k (u_{i+k} − u_i)²` over the whole lattice (see
//! [`weights`]). Inside the box the operator is a convolution, applied by FFT.

pub mod poisson;
pub mod weights;

use crate::capacity::{CapacityResult, CapacitySolution, GridSpec};
use crate::constants::far_field_coefficient;
use crate::error::{domain, Error, Result};
use crate::fft::KernelConvolution;
use crate::geometry::Shape;
use crate::lattice::{GridFunction, Lattice, Mask, Monopole};
use crate::linalg::{cg_pair, dot};
use crate::special::gauss_legendre;
pub use poisson::{poisson_extend, poisson_extension_energy, PoissonEnergy};
use rayon::prelude::*;
pub use weights::KernelWeights;

/// The discrete Gagliardo form on a centred cube lattice.
///
/// `apply` computes `(L u)_i = h^{−2s} (S u_i − Σ_k W_k u_{i+k})` for a field
/// vanishing outside the box, where `S` is the full-lattice weight sum; the
/// energy is `form(u, u) = 2hⁿ Σ_i u_i (L u)_i`.
pub struct NonlocalForm {
    pub lattice: Lattice,
    pub s: f64,
    pub weights: KernelWeights,
    conv: KernelConvolution,
}

impl NonlocalForm {
    pub fn new(lattice: &Lattice, s: f64) -> Result<Self> {
        let n = lattice.n;
        if !(s > 0.0 && s < 1.0) {
            return domain(format!("order s must lie in (0, 1), got {s}"));
        }
        if lattice.dims.iter().any(|&d| d != lattice.dims[0]) {
            return domain("the nonlocal form needs a cubic lattice");
        }
        let cells = lattice.dims[0];
        let half = cells - 1;
        let weights = KernelWeights::new(n, s, half);
        let conv = KernelConvolution::new(n, half, |k| weights.at(k), cells, cells, 0);
        Ok(NonlocalForm {
            lattice: lattice.clone(),
            s,
            weights,
            conv,
        })
    }

    fn scale(&self) -> f64 {
        self.lattice.h.powf(-2.0 * self.s)
    }

    /// `L a` and `L b` with one packed transform.
    pub fn apply_pair(&self, a: &[f64], b: &[f64], out_a: &mut [f64], out_b: &mut [f64]) {
        self.conv.apply_pair(a, Some(b), out_a, Some(out_b));
        let (sc, tot) = (self.scale(), self.weights.total);
        out_a
            .par_iter_mut()
            .zip(a.par_iter())
            .for_each(|(o, u)| *o = sc * (tot * u - *o));
        out_b
            .par_iter_mut()
            .zip(b.par_iter())
            .for_each(|(o, u)| *o = sc * (tot * u - *o));
    }

    pub fn apply(&self, a: &[f64], out: &mut [f64]) {
        self.conv.apply(a, out);
        let (sc, tot) = (self.scale(), self.weights.total);
        out.par_iter_mut()
            .zip(a.par_iter())
            .for_each(|(o, u)| *o = sc * (tot * u - *o));
    }

    /// `form(u, v)`.
    pub fn form(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut lv = vec![0.0; v.len()];
        self.apply(v, &mut lv);
        2.0 * self.lattice.cell_volume() * dot(u, &lv)
    }

    /// Coupling `b_i = Σ_{j outside the box} h^{−2s} W_{j−i} Φ(x_j)` of every
    /// box cell with exterior data Φ, split into a lattice shell of width `R`
    /// around the box and a continuum far field beyond `|x|_∞ = 2R`.
    pub fn exterior_coupling(&self, phi: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Vec<f64> {
        let n = self.lattice.n;
        let cells = self.lattice.dims[0];
        let h = self.lattice.h;
        let big = 2 * cells;
        let offset = (big - cells) / 2;
        let outer = Lattice::centered_cube(n, 2.0 * self.lattice.dims[0] as f64 * h / 2.0, big);
        let data: Vec<f64> = (0..outer.len())
            .into_par_iter()
            .map(|i| {
                let c = outer.coords(i);
                let inside = (0..n).all(|a| c[a] >= offset && c[a] < offset + cells);
                if inside {
                    0.0
                } else {
                    phi(&outer.center(i)[..n])
                }
            })
            .collect();
        let half = (big + cells) / 2 + 1;
        let shell_weights = KernelWeights::new(n, self.s, half);
        let conv = KernelConvolution::new(n, half, |k| shell_weights.at(k), big, cells, offset);
        let mut b = vec![0.0; self.lattice.len()];
        conv.apply(&data, &mut b);
        let sc = self.scale();
        b.iter_mut().for_each(|v| *v *= sc);
        let l = 2.0 * self.lattice.dims[0] as f64 * h / 2.0;
        let far = interpolated_far_field(&self.lattice, self.s, l, phi);
        for (v, f) in b.iter_mut().zip(far) {
            *v += f;
        }
        b
    }
}

/// `∫_{|y|_∞ > L} |y − x|^{−n−2s} Φ(y) dy` for a point `x` inside the cube of
/// half-width `L`, by rays from `x` through the cube faces: with `y = x +
/// (p − x)/η` for face points `p`, the integral becomes
/// `Σ_faces ∫ |p_d − x_d| / |p − x|^{n+2s} ∫_0^1 η^{2s−1} Φ(y) dη dp`, and the
/// inner integral is regularised by `η = t^{1/(2s)}`.
pub fn far_exterior_integral(x: &[f64], s: f64, l: f64, phi: &dyn Fn(&[f64]) -> f64) -> f64 {
    let n = x.len();
    let (fx, fw) = gauss_legendre(-l, l, 12);
    let (tx, tw) = gauss_legendre(0.0, 1.0, 16);
    let faces_pts = 12usize.pow(n as u32 - 1);
    let mut total = 0.0;
    for d in 0..n {
        for side in [-1.0, 1.0] {
            for f in 0..faces_pts {
                let mut p = [0.0; 3];
                let mut w = 1.0;
                let mut rem = f;
                for a in 0..n {
                    if a == d {
                        p[a] = side * l;
                    } else {
                        let j = rem % 12;
                        rem /= 12;
                        p[a] = fx[j];
                        w *= fw[j];
                    }
                }
                let diff: Vec<f64> = (0..n).map(|a| p[a] - x[a]).collect();
                let dist = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mut inner = 0.0;
                let mut y = [0.0; 3];
                for (t, wt) in tx.iter().zip(&tw) {
                    let eta = t.powf(1.0 / (2.0 * s));
                    for a in 0..n {
                        y[a] = x[a] + diff[a] / eta;
                    }
                    inner += wt * phi(&y[..n]);
                }
                inner /= 2.0 * s;
                total += w * diff[d].abs() / dist.powi(n as i32) * dist.powf(-2.0 * s) * inner;
            }
        }
    }
    total
}

/// The far-field integral on a coarse node grid over the box, interpolated to
/// the cell centres with tensor cubic Lagrange polynomials.
fn interpolated_far_field(
    lattice: &Lattice,
    s: f64,
    l: f64,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> Vec<f64> {
    const NODES: usize = 9;
    let n = lattice.n;
    let lo = lattice.origin[0] + 0.5 * lattice.h;
    let hi = lattice.origin[0] + (lattice.dims[0] as f64 - 0.5) * lattice.h;
    let step = (hi - lo) / (NODES - 1) as f64;
    let count = NODES.pow(n as u32);
    let values: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|f| {
            let mut rem = f;
            let mut x = [0.0; 3];
            for a in (0..n).rev() {
                x[a] = lo + (rem % NODES) as f64 * step;
                rem /= NODES;
            }
            far_exterior_integral(&x[..n], s, l, phi)
        })
        .collect();
    (0..lattice.len())
        .into_par_iter()
        .map(|i| {
            let x = lattice.center(i);
            let mut idx = [0usize; 3];
            let mut wts = [[0.0; 4]; 3];
            for a in 0..n {
                let t = (x[a] - lo) / step;
                let base = (t.floor() as i64 - 1).clamp(0, NODES as i64 - 4) as usize;
                idx[a] = base;
                for (j, w) in wts[a].iter_mut().enumerate() {
                    let mut v = 1.0;
                    for m in 0..4 {
                        if m != j {
                            v *= (t - (base + m) as f64) / (j as f64 - m as f64);
                        }
                    }
                    *w = v;
                }
            }
            let mut acc = 0.0;
            for corner in 0..4usize.pow(n as u32) {
                let mut rem = corner;
                let mut f = 0;
                let mut w = 1.0;
                for a in 0..n {
                    let j = rem % 4;
                    rem /= 4;
                    w *= wts[a][j];
                    f = f * NODES + idx[a] + j;
                }
                acc += w * values[f];
            }
            acc
        })
        .collect()
}

/// `[u]_s²` of a field on a centred cube lattice, taken to vanish outside
/// the box.
///
/// ```
/// use fracap::lattice::{GridFunction, Lattice};
/// let lattice = Lattice::centered_cube(1, 2.0, 64);
/// let u = GridFunction::zeros(lattice, 0.5);
/// assert_eq!(fracap::nonlocal::gagliardo_seminorm(&u).unwrap(), 0.0);
/// ```
pub fn gagliardo_seminorm(u: &GridFunction) -> Result<f64> {
    let lat = &u.lattice;
    let touches = u.values.iter().enumerate().any(|(i, &v)| {
        v != 0.0 && {
            let c = lat.coords(i);
            (0..lat.n).any(|a| c[a] == 0 || c[a] + 1 == lat.dims[a])
        }
    });
    if touches {
        return Err(Error::TruncationTooSmall(
            "support reaches the outermost cell layer".into(),
        ));
    }
    let form = NonlocalForm::new(lat, u.s)?;
    Ok(form.form(&u.values, &u.values))
}

/// The s-capacity by direct minimisation of the discrete Gagliardo energy.
///
/// Cells of the rasterised set are fixed to 1 and the remaining cells of the
/// box `[-R, R]ⁿ` are solved for. Beyond the box the potential is continued by
/// its far-field law `q |x − c|^{2s−n}` (c: centroid of the set), with the
/// charge `q` fixed self-consistently: by linearity `u = u₀ + q u₁`, where `u₀`
/// has zero exterior data and `u₁` vanishes on the set with exterior data
/// `|x − c|^{2s−n}`, and `q = g·cap` with the far-field coefficient `g` of
/// [`far_field_coefficient`].
pub fn frac_capacity_direct(shape: &Shape, s: f64, grid: &GridSpec) -> Result<CapacitySolution> {
    shape.validate()?;
    grid.validate()?;
    let n = shape.dim();
    if n as f64 <= 2.0 * s || !(s > 0.0 && s < 1.0) {
        return domain(format!("need 0 < s < 1 and n > 2s, got n = {n}, s = {s}"));
    }
    let lattice = grid.lattice(n);
    let mask = shape.rasterize(&lattice);
    solve_on_mask(&mask, s, grid.tol)
}

/// [`frac_capacity_direct`] for an already rasterised set on a centred cube.
pub fn solve_on_mask(mask: &Mask, s: f64, tol: f64) -> Result<CapacitySolution> {
    let lattice = &mask.lattice;
    let n = lattice.n;
    let count = mask.count();
    if count == 0 {
        return Err(Error::Degenerate(
            "the set contains no cell centre of the grid".into(),
        ));
    }
    if mask.touches_boundary(2) {
        return Err(Error::TruncationTooSmall(
            "the set reaches the edge of the truncation box".into(),
        ));
    }
    let form = NonlocalForm::new(lattice, s)?;
    let len = lattice.len();
    let center = mask.centroid();
    let exponent = 2.0 * s - n as f64;
    let phi = move |x: &[f64]| {
        let r2: f64 = x
            .iter()
            .zip(center.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        r2.powf(exponent / 2.0)
    };
    let b = form.exterior_coupling(&phi);
    let free: Vec<bool> = mask.bits.iter().map(|&m| !m).collect();
    let indicator: Vec<f64> = mask
        .bits
        .iter()
        .map(|&m| if m { 1.0 } else { 0.0 })
        .collect();
    let mut l_ind = vec![0.0; len];
    form.apply(&indicator, &mut l_ind);
    let rhs0: Vec<f64> = (0..len)
        .map(|i| if free[i] { -l_ind[i] } else { 0.0 })
        .collect();
    let rhs1: Vec<f64> = (0..len).map(|i| if free[i] { b[i] } else { 0.0 }).collect();
    let mut v0 = vec![0.0; len];
    let mut v1 = vec![0.0; len];
    let mut apply2 = |a: &[f64], c: &[f64], oa: &mut [f64], oc: &mut [f64]| {
        form.apply_pair(a, c, oa, oc);
        for i in 0..len {
            if !free[i] {
                oa[i] = 0.0;
                oc[i] = 0.0;
            }
        }
    };
    let max_iter = 50 * ((len - count) as f64).sqrt().ceil() as usize + 50;
    let reports = cg_pair(
        &mut apply2,
        [&rhs0, &rhs1],
        [&mut v0, &mut v1],
        tol,
        max_iter,
    )?;
    let u0: Vec<f64> = (0..len)
        .map(|i| if free[i] { v0[i] } else { 1.0 })
        .collect();
    let u1: Vec<f64> = (0..len)
        .map(|i| if free[i] { v1[i] } else { 0.0 })
        .collect();
    let mut lu0 = vec![0.0; len];
    let mut lu1 = vec![0.0; len];
    form.apply_pair(&u0, &u1, &mut lu0, &mut lu1);
    let dv2 = 2.0 * lattice.cell_volume();
    let q0: f64 = dv2
        * (0..len)
            .filter(|&i| mask.bits[i])
            .map(|i| lu0[i])
            .sum::<f64>();
    let q1: f64 = dv2
        * (0..len)
            .filter(|&i| mask.bits[i])
            .map(|i| lu1[i] - b[i])
            .sum::<f64>();
    let g = far_field_coefficient(n, s)?;
    let q = g * q0 / (1.0 - g * q1);
    let cap = q0 + q * q1;
    let u: Vec<f64> = u0.iter().zip(&u1).map(|(a, c)| a + q * c).collect();
    // Energy of the minimiser: 2hⁿ Σ u (L u − q b) over the box.
    let energy = dv2
        * (0..len)
            .map(|i| u[i] * (lu0[i] + q * lu1[i] - q * b[i]))
            .sum::<f64>();
    let min = u.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let potential = GridFunction {
        lattice: lattice.clone(),
        values: u,
        s,
        exterior: Some(Monopole {
            charge: q,
            center,
            exponent,
        }),
    };
    let result = CapacityResult {
        value: cap,
        energy,
        residual: reports[0]
            .relative_residual
            .max(reports[1].relative_residual),
        h: lattice.h,
        half_width: -lattice.origin[0],
        iterations: reports[0].iterations.max(reports[1].iterations),
        method: "direct".into(),
        volume: count as f64 * lattice.cell_volume(),
        far_charge: q,
        min_potential: min,
        max_potential: max,
    };
    Ok(CapacitySolution {
        result,
        potential,
        mask: mask.clone(),
    })
}

/// Clip a potential to `[0, 1]` and report the largest violation together
/// with the energy change `form(clip u) − form(u)` of the box part.
pub fn clip_potential(potential: &GridFunction) -> Result<(GridFunction, f64, f64)> {
    let violation = potential
        .values
        .iter()
        .map(|&v| (-v).max(v - 1.0).max(0.0))
        .fold(0.0, f64::max);
    let mut clipped = potential.clone();
    clipped
        .values
        .iter_mut()
        .for_each(|v| *v = v.clamp(0.0, 1.0));
    let form = NonlocalForm::new(&potential.lattice, potential.s)?;
    let delta = form.form(&clipped.values, &clipped.values)
        - form.form(&potential.values, &potential.values);
    Ok((clipped, violation, delta))
}
