//! The Poisson-kernel extension `U_φ(x, z) = (P_z ⋆ φ)(x)` with
//! `P_z(x) = c_{n,s} z^{2s} / (|x|² + z²)^{(n+2s)/2}`.
//!
//! On a lattice of spacing h the kernel is replaced by its cell masses,
//! which depend on `ζ = z/h` only. They are normalised so that the full
//! lattice (table plus analytic tail) carries unit mass.

use super::weights::cube_shell_factor;
use crate::constants::poisson_normalization;
use crate::error::{domain, Result};
use crate::extension::ExtensionField;
use crate::fft::KernelConvolution;
use crate::lattice::{GridFunction, Lattice};
use crate::special::gauss_legendre;

/// `∫_{|y|_∞ > c} |y|^{−n−2σ} dy`.
fn shell_tail(n: usize, sigma: f64, c: f64) -> f64 {
    2.0 * n as f64 * c.powf(-2.0 * sigma) / (2.0 * sigma)
        * cube_shell_factor(n, -(n as f64) - 2.0 * sigma)
}

/// Tensor Gauss–Legendre integral over the box `[lo, hi]` (per axis) split
/// into `panels` panels of `m` nodes per axis.
fn box_integral(
    n: usize,
    lo: &[f64],
    hi: &[f64],
    panels: usize,
    m: usize,
    f: &dyn Fn(f64) -> f64,
) -> f64 {
    let mut axes = Vec::with_capacity(n);
    for a in 0..n {
        let mut xs = Vec::new();
        let mut ws = Vec::new();
        let step = (hi[a] - lo[a]) / panels as f64;
        for p in 0..panels {
            let (x, w) = gauss_legendre(lo[a] + p as f64 * step, lo[a] + (p + 1) as f64 * step, m);
            xs.extend(x);
            ws.extend(w);
        }
        axes.push((xs, ws));
    }
    let k = panels * m;
    let mut acc = 0.0;
    for flat in 0..k.pow(n as u32) {
        let mut rem = flat;
        let mut r2 = 0.0;
        let mut w = 1.0;
        for (x, wx) in &axes {
            let j = rem % k;
            rem /= k;
            r2 += x[j] * x[j];
            w *= wx[j];
        }
        acc += w * f(r2);
    }
    acc
}

/// Cell masses of `P_ζ` (lattice spacing 1) on offsets `[−K, K]ⁿ`, and of its
/// ζ-derivative. Returns `(mass, d_mass, tail, d_tail)` where the tails are the
/// masses beyond the table.
pub fn poisson_cell_masses(
    n: usize,
    s: f64,
    zeta: f64,
    half: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
    let c = poisson_normalization(n, s)?;
    if !(zeta > 0.0) {
        return domain("heights must be positive");
    }
    if zeta > (half as f64 + 0.5) / 4.0 {
        return domain(format!(
            "height {zeta} (in cells) is too large for a kernel table of half-width {half}"
        ));
    }
    let a = (n as f64 + 2.0 * s) / 2.0;
    let z2 = zeta * zeta;
    let zs = zeta.powf(2.0 * s);
    let dens = |r2: f64| c * zs * (r2 + z2).powf(-a);
    let ddens = |r2: f64| {
        let q = r2 + z2;
        c * (2.0 * s * zeta.powf(2.0 * s - 1.0) * q.powf(-a)
            - 2.0 * a * zeta.powf(2.0 * s + 1.0) * q.powf(-a - 1.0))
    };
    // Laplacian of the density, for the midpoint correction of far cells.
    let lap = |r2: f64, f: &dyn Fn(f64) -> f64| {
        let q = r2 + z2;
        let nf = n as f64;
        f(1.0) * (-2.0 * a * nf * q.powf(-a - 1.0) + 4.0 * a * (a + 1.0) * r2 * q.powf(-a - 2.0))
    };
    let side = 2 * half + 1;
    let len = side.pow(n as u32);
    let mut mass = vec![0.0; len];
    let mut dmass = vec![0.0; len];
    let h = half as i64;
    let mut centre = 0usize;
    for (flat, (m, dm)) in mass.iter_mut().zip(dmass.iter_mut()).enumerate() {
        let mut k = [0i64; 3];
        let mut rem = flat;
        for ax in (0..n).rev() {
            k[ax] = (rem % side) as i64 - h;
            rem /= side;
        }
        let k = &k[..n];
        let inf = k.iter().map(|x| x.abs()).max().unwrap_or(0);
        let k2: f64 = k.iter().map(|&x| (x * x) as f64).sum();
        if inf == 0 {
            centre = flat;
            continue;
        }
        let near = (inf as f64) < 8.0 + 2.0 * zeta;
        if near {
            let lo: Vec<f64> = k.iter().map(|&x| x as f64 - 0.5).collect();
            let hi: Vec<f64> = k.iter().map(|&x| x as f64 + 0.5).collect();
            let panels = if inf == 1 && zeta < 1.0 { 2 } else { 1 };
            *m = box_integral(n, &lo, &hi, panels, 8, &dens);
            *dm = box_integral(n, &lo, &hi, panels, 8, &ddens);
        } else {
            *m = dens(k2) + lap(k2, &|_| c * zs) / 24.0;
            // d/dζ of the corrected midpoint value, by a centred difference in ζ
            // of the closed form (cheap and accurate far from the origin).
            let e = 1e-4 * zeta.max(1e-3);
            let val = |zz: f64| {
                let q = k2 + zz * zz;
                let nf = n as f64;
                c * zz.powf(2.0 * s)
                    * (q.powf(-a)
                        + (-2.0 * a * nf * q.powf(-a - 1.0)
                            + 4.0 * a * (a + 1.0) * k2 * q.powf(-a - 2.0))
                            / 24.0)
            };
            *dm = (val(zeta + e) - val(zeta - e)) / (2.0 * e);
        }
    }
    // Beyond the table (|y|_∞ > c ≥ 4ζ) expand (|y|² + ζ²)^{−a} in ζ²/|y|².
    let cbox = half as f64 + 0.5;
    let b2 = a * (a + 1.0) / 2.0;
    let (t0, t1, t2) = (
        shell_tail(n, s, cbox),
        shell_tail(n, s + 1.0, cbox),
        shell_tail(n, s + 2.0, cbox),
    );
    let tail = c * zs * (t0 - a * z2 * t1 + b2 * z2 * z2 * t2);
    let dtail = c
        * (2.0 * s * zeta.powf(2.0 * s - 1.0) * t0
            - a * (2.0 * s + 2.0) * zeta.powf(2.0 * s + 1.0) * t1
            + b2 * (2.0 * s + 4.0) * zeta.powf(2.0 * s + 3.0) * t2);
    if zeta >= 0.25 {
        let lo = vec![-0.5; n];
        let hi = vec![0.5; n];
        let panels = (4.0 / zeta.min(1.0)).ceil() as usize;
        mass[centre] = box_integral(n, &lo, &hi, panels.min(16), 6, &dens);
        dmass[centre] = box_integral(n, &lo, &hi, panels.min(16), 6, &ddens);
        // Renormalise to unit total mass, spreading the quadrature defect over
        // the centre cell (where the kernel is least smooth).
        let total: f64 = mass.iter().sum::<f64>() + tail;
        mass[centre] += 1.0 - total;
        let dtotal: f64 = dmass.iter().sum::<f64>() + dtail;
        dmass[centre] -= dtotal;
    } else {
        let others: f64 = mass.iter().sum();
        mass[centre] = 1.0 - others - tail;
        let dothers: f64 = dmass.iter().sum();
        dmass[centre] = -dothers - dtail;
    }
    Ok((mass, dmass, tail, dtail))
}

fn check_lattice(phi: &GridFunction) -> Result<usize> {
    let lat = &phi.lattice;
    if lat.dims.iter().any(|&d| d != lat.dims[0]) {
        return domain("the Poisson extension needs a cubic lattice");
    }
    Ok(lat.dims[0])
}

/// Slices `U_φ(·, z)` of the Poisson extension on the lattice of `phi`, at
/// height 0 (the trace itself) and at each requested height. `phi` is taken
/// to vanish outside its lattice.
pub fn poisson_extend(phi: &GridFunction, z_levels: &[f64]) -> Result<ExtensionField> {
    let cells = check_lattice(phi)?;
    let lat = &phi.lattice;
    let n = lat.n;
    let mut zs = vec![0.0];
    for &z in z_levels {
        if !(z >= 0.0) {
            return domain("heights must be non-negative");
        }
        if z > 0.0 {
            zs.push(z);
        }
    }
    let mut slices = vec![phi.values.clone()];
    for &z in &zs[1..] {
        let (mass, _, _, _) = poisson_cell_masses(n, phi.s, z / lat.h, cells - 1)?;
        let side = 2 * (cells - 1) + 1;
        let half = cells - 1;
        let table = |k: &[i64]| {
            let mut idx = 0usize;
            for &ka in k {
                idx = idx * side + (ka + half as i64) as usize;
            }
            mass[idx]
        };
        let conv = KernelConvolution::new(n, half, table, cells, cells, 0);
        let mut out = vec![0.0; lat.len()];
        conv.apply(&phi.values, &mut out);
        slices.push(out);
    }
    Ok(ExtensionField::from_slices(lat, phi.s, &zs, &slices))
}

/// Weighted half-space energy of a Poisson extension, split as in
/// `∫ z^{1−2s} |∇_x U|² + ∫ z^{1−2s} |∂_z U|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonEnergy {
    pub x_part: f64,
    pub z_part: f64,
    pub total: f64,
}

/// Block averages of `phi` on the centred cube of spacing `factor·h` and
/// half-width `half_width` (a multiple of that spacing, at least `R`).
fn coarsen_padded(phi: &GridFunction, factor: usize, half_width: f64) -> Lattice {
    let lat = &phi.lattice;
    let hc = factor as f64 * lat.h;
    let cells = (2.0 * half_width / hc).round() as usize;
    Lattice::centered_cube(lat.n, half_width, cells)
}

fn block_average(phi: &GridFunction, coarse: &Lattice, factor: usize) -> Vec<f64> {
    let lat = &phi.lattice;
    let n = lat.n;
    // Offset of the fine lattice inside the padded fine grid, in fine cells.
    let offset = (coarse.dims[0] * factor - lat.dims[0]) / 2;
    let mut out = vec![0.0; coarse.len()];
    let weight = (factor as f64).powi(n as i32).recip();
    for (i, &v) in phi.values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let c = lat.coords(i);
        let cc: Vec<usize> = (0..n).map(|a| (c[a] + offset) / factor).collect();
        out[coarse.flat(&cc)] += weight * v;
    }
    out
}

/// Weighted energy of `U_φ`, integrating slice energies over log-spaced
/// heights in `[h/8, z_max]` (`per_decade` levels per decade), with the
/// small- and large-height asymptotics added in closed form.
///
/// Each slice is evaluated on a centred cube that covers `[-R − 8z, R + 8z]ⁿ`
/// with spacing at most `max(h, z/8)` (block averages of φ), so that the
/// energy of `U(·, z)` outside the box of φ is included. The x-gradient uses
/// forward differences, the z-derivative the exact ζ-derivative of the cell
/// masses.
pub fn poisson_extension_energy(
    phi: &GridFunction,
    z_max: f64,
    per_decade: usize,
) -> Result<PoissonEnergy> {
    let cells = check_lattice(phi)?;
    let lat = &phi.lattice;
    if cells % 2 != 0 {
        return domain("the Poisson energy needs an even number of cells per axis");
    }
    let n = lat.n;
    let s = phi.s;
    let h = lat.h;
    let r = cells as f64 * h / 2.0;
    let z_min = h / 8.0;
    if !(z_max > z_min) || per_decade == 0 {
        return domain("need z_max > h/8 and at least one level per decade");
    }
    let decades = (z_max / z_min).log10();
    let levels = (decades * per_decade as f64).ceil() as usize + 1;
    let height = |j: usize| z_min * (z_max / z_min).powf(j as f64 / (levels - 1) as f64);
    let mut xs = Vec::with_capacity(levels);
    let mut zs = Vec::with_capacity(levels);
    for j in 0..levels {
        let z = height(j);
        let mut factor = 1usize;
        while 2.0 * factor as f64 * h <= z / 8.0 {
            factor *= 2;
        }
        let hc = factor as f64 * h;
        let half_width = (((r + 8.0 * z) / hc).ceil() * hc).max(r);
        let coarse = coarsen_padded(phi, factor, half_width);
        let values = block_average(phi, &coarse, factor);
        let m = coarse.dims[0];
        let half = m - 1;
        let side = 2 * half + 1;
        let (mass, dmass, _, _) = poisson_cell_masses(n, s, z / hc, half)?;
        let lookup = |tab: &Vec<f64>, k: &[i64]| {
            let mut idx = 0usize;
            for &ka in k {
                idx = idx * side + (ka + half as i64) as usize;
            }
            tab[idx]
        };
        let conv_u = KernelConvolution::new(n, half, |k| lookup(&mass, k), m, m, 0);
        let conv_d = KernelConvolution::new(n, half, |k| lookup(&dmass, k), m, m, 0);
        let mut u = vec![0.0; coarse.len()];
        let mut du = vec![0.0; coarse.len()];
        conv_u.apply(&values, &mut u);
        conv_d.apply(&values, &mut du);
        // ∂_z = (1/h_c) ∂_ζ.
        let zpart: f64 = du.iter().map(|v| v * v).sum::<f64>() * coarse.cell_volume() / (hc * hc);
        let mut xpart = 0.0;
        for i in 0..coarse.len() {
            let c = coarse.coords(i);
            for a in 0..n {
                if c[a] + 1 < m {
                    let mut cc = c;
                    cc[a] += 1;
                    let d = u[coarse.flat(&cc[..n])] - u[i];
                    xpart += d * d;
                }
            }
        }
        xpart *= hc.powi(n as i32 - 2);
        xs.push(xpart);
        zs.push(zpart);
    }
    // Trapezoid in ln z of z^{2−2s} F(z).
    let du = (z_max / z_min).ln() / (levels - 1) as f64;
    let mut ex = 0.0;
    let mut ez = 0.0;
    for j in 0..levels {
        let z = height(j);
        let w = if j == 0 || j + 1 == levels {
            0.5 * du
        } else {
            du
        };
        ex += w * z.powf(2.0 - 2.0 * s) * xs[j];
        ez += w * z.powf(2.0 - 2.0 * s) * zs[j];
    }
    // Below z_min: |∇_x U|² is constant and |∂_z U|² ∝ z^{4s−2}.
    ex += xs[0] * z_min.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s);
    ez += zs[0] * z_min.powf(2.0 - 2.0 * s) / (2.0 * s);
    // Above z_max: both parts decay like z^{−n−2} (monopole far field).
    let last = levels - 1;
    ex += xs[last] * z_max.powf(2.0 - 2.0 * s) / (n as f64 + 2.0 * s);
    ez += zs[last] * z_max.powf(2.0 - 2.0 * s) / (n as f64 + 2.0 * s);
    Ok(PoissonEnergy {
        x_part: ex,
        z_part: ez,
        total: ex + ez,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_has_unit_mass() {
        for &(n, s, zeta) in &[
            (1usize, 0.3, 0.01),
            (2, 0.5, 0.3),
            (2, 0.75, 3.0),
            (3, 0.6, 0.05),
        ] {
            let half = if n == 3 { 12 } else { 40 };
            let (mass, dmass, tail, dtail) = poisson_cell_masses(n, s, zeta, half).unwrap();
            let total: f64 = mass.iter().sum::<f64>() + tail;
            assert!((total - 1.0).abs() < 1e-12, "{n} {s} {zeta}");
            let dtotal: f64 = dmass.iter().sum::<f64>() + dtail;
            assert!(dtotal.abs() < 1e-10);
            assert!(mass.iter().all(|&m| m >= 0.0));
        }
    }

    #[test]
    fn quadrature_defect_is_small() {
        // For moderate heights the centre cell is integrated directly; the
        // renormalisation must then be a tiny correction.
        let (n, s, zeta, half) = (2usize, 0.5f64, 2.0f64, 60usize);
        let c = poisson_normalization(n, s).unwrap();
        let a = (n as f64 + 2.0 * s) / 2.0;
        let dens = |r2: f64| c * zeta.powf(2.0 * s) * (r2 + zeta * zeta).powf(-a);
        let direct = box_integral(n, &[-0.5, -0.5], &[0.5, 0.5], 8, 6, &dens);
        let (mass, ..) = poisson_cell_masses(n, s, zeta, half).unwrap();
        let side = 2 * half + 1;
        let centre = half * side + half;
        assert!((mass[centre] / direct - 1.0).abs() < 1e-3);
    }
}
