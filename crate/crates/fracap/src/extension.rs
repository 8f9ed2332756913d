//! The weighted local problem on the half-space `ℝⁿ × (0, ∞)` with weight
//! `z^{1−2s}`: the capacitary extension solver, partial Schwarz
//! symmetrization, superlevel statistics and the threshold machinery.

use crate::capacity::{CapacityResult, GridSpec};
use crate::constants::{asymmetry_transfer, extension_constant, poisson_normalization};
use crate::error::{domain, Error, Result};
use crate::geometry::{fraenkel_asymmetry, mask_asymmetry, Shape};
use crate::lattice::{GridFunction, Lattice, Mask, Monopole};
use crate::linalg::{dot, pcg, solve_tridiagonal, CgReport};
use crate::multigrid::Multigrid;
use crate::nonlocal::poisson_extend;
use crate::special::unit_ball_volume;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

/// Default height of the truncated half-space, in units of `R`.
pub const DEFAULT_HEIGHT_FACTOR: f64 = 30.0;
/// Default growth ratio of the vertical grid above `z = R`.
pub const DEFAULT_GROWTH: f64 = 1.3;
/// Number of uniform levels of the superlevel ladder.
pub const LADDER_LEVELS: usize = 512;

/// A field on the tensor grid `lattice × {z_0 = 0 < z_1 < … < z_M}`.
///
/// The horizontal nodes are the cell centres of `lattice`; values are stored
/// column by column (`values[i * nz + j]` is the value at cell `i`, height
/// `z_j`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionField {
    pub lattice: Lattice,
    pub s: f64,
    pub z_nodes: Vec<f64>,
    pub values: Vec<f64>,
    /// Centre of the far-field condition used on the walls, if the field was
    /// produced by the capacity solver.
    pub robin_center: Option<[f64; 3]>,
}

/// The weighted energy `∫ z^{1−2s} |∇U|²` split into its horizontal and
/// vertical parts, plus the far-field wall term of the capacity solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEnergy {
    pub x_part: f64,
    pub z_part: f64,
    pub boundary: f64,
    pub total: f64,
}

impl ExtensionField {
    /// Assemble a field from horizontal slices at the given heights.
    pub fn from_slices(lattice: &Lattice, s: f64, z_nodes: &[f64], slices: &[Vec<f64>]) -> Self {
        let nz = z_nodes.len();
        let len = lattice.len();
        let mut values = vec![0.0; len * nz];
        for (j, slice) in slices.iter().enumerate() {
            for (i, &v) in slice.iter().enumerate() {
                values[i * nz + j] = v;
            }
        }
        ExtensionField {
            lattice: lattice.clone(),
            s,
            z_nodes: z_nodes.to_vec(),
            values,
            robin_center: None,
        }
    }

    pub fn nz(&self) -> usize {
        self.z_nodes.len()
    }

    pub fn value(&self, cell: usize, level: usize) -> f64 {
        self.values[cell * self.nz() + level]
    }

    /// The horizontal slice at level `j`.
    pub fn slice(&self, j: usize) -> Vec<f64> {
        let nz = self.nz();
        self.values.iter().skip(j).step_by(nz).copied().collect()
    }

    /// The trace `U(·, 0)` as a grid function.
    pub fn trace(&self) -> GridFunction {
        GridFunction {
            lattice: self.lattice.clone(),
            values: self.slice(0),
            s: self.s,
            exterior: None,
        }
    }

    fn operator(&self) -> WeightedOperator<'_> {
        WeightedOperator::new(
            &self.lattice,
            self.s,
            &self.z_nodes,
            self.robin_center,
            None,
        )
    }

    /// Discrete weighted energy with the solver's conductances.
    pub fn energy(&self) -> WeightedEnergy {
        self.operator().energy(&self.values)
    }

    /// Write the field as a flat little-endian binary file plus a JSON
    /// sidecar (`<path>.json`) describing the layout.
    ///
    /// Binary layout: the magic `FRACAPX1`; `n` and `nz` as `u32`; the `n`
    /// lattice dimensions as `u32`; `s`, the vertical growth ratio, `h` and
    /// the lattice origin as `f64`; the `nz` heights; then the values with
    /// the height index fastest.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Malformed(format!("{}: {e}", path.display()));
        let mut buf = Vec::with_capacity(64 + 8 * (self.values.len() + self.nz()));
        buf.extend_from_slice(b"FRACAPX1");
        buf.extend_from_slice(&(self.lattice.n as u32).to_le_bytes());
        buf.extend_from_slice(&(self.nz() as u32).to_le_bytes());
        for &d in &self.lattice.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let growth = growth_ratio(&self.z_nodes);
        for v in [self.s, growth, self.lattice.h]
            .iter()
            .chain(self.lattice.origin.iter())
        {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.z_nodes.iter().chain(self.values.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(io)?;
        let sidecar = serde_json::json!({
            "format": "FRACAPX1",
            "n": self.lattice.n,
            "dims": self.lattice.dims,
            "nz": self.nz(),
            "s": self.s,
            "growth": growth,
            "h": self.lattice.h,
            "origin": self.lattice.origin,
            "layout": "row-major cells, height index fastest, little-endian f64",
        });
        let mut side = path.as_os_str().to_owned();
        side.push(".json");
        std::fs::write(
            &side,
            serde_json::to_string_pretty(&sidecar).expect("serialisable") + "\n",
        )
        .map_err(io)?;
        Ok(())
    }

    /// Read a field written by [`ExtensionField::dump`].
    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
        let bad = || Error::Malformed(format!("{}: not a field dump", path.display()));
        if bytes.len() < 16 || &bytes[..8] != b"FRACAPX1" {
            return Err(bad());
        }
        let mut pos = 8;
        let u32_at = |pos: &mut usize| -> Result<usize> {
            let b = bytes.get(*pos..*pos + 4).ok_or_else(bad)?;
            *pos += 4;
            Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
        };
        let n = u32_at(&mut pos)?;
        let nz = u32_at(&mut pos)?;
        if !(1..=3).contains(&n) || nz == 0 {
            return Err(bad());
        }
        let dims = (0..n)
            .map(|_| u32_at(&mut pos))
            .collect::<Result<Vec<_>>>()?;
        let count = 3 + n + nz + dims.iter().product::<usize>() * nz;
        let body = bytes.get(pos..pos + 8 * count).ok_or_else(bad)?;
        if bytes.len() != pos + 8 * count {
            return Err(bad());
        }
        let f: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let s = f[0];
        let h = f[2];
        let origin = f[3..3 + n].to_vec();
        let z_nodes = f[3 + n..3 + n + nz].to_vec();
        let values = f[3 + n + nz..].to_vec();
        Ok(ExtensionField {
            lattice: Lattice::new(origin, h, dims),
            s,
            z_nodes,
            values,
            robin_center: None,
        })
    }
}

/// Largest ratio of successive vertical steps (1 for a uniform grid).
fn growth_ratio(z: &[f64]) -> f64 {
    let steps: Vec<f64> = z.windows(2).map(|w| w[1] - w[0]).collect();
    steps.windows(2).map(|w| w[1] / w[0]).fold(1.0, f64::max)
}

/// Vertical grid: uniform steps `h` up to `R`, then geometric growth up to
/// the height `z_top`. With `levels` given, the growth ratio is chosen so the
/// grid has exactly that many levels (including `z = 0`).
pub fn z_grid(h: f64, half_width: f64, z_top: f64, levels: Option<usize>) -> Result<Vec<f64>> {
    if !(h > 0.0 && half_width >= h && z_top > half_width) {
        return domain("need 0 < h ≤ R < Z for the vertical grid");
    }
    let uniform = (half_width / h).round() as usize;
    let mut z: Vec<f64> = (0..=uniform).map(|j| j as f64 * h).collect();
    let base = z[uniform];
    let span = z_top - base;
    let ratio = match levels {
        None => DEFAULT_GROWTH,
        Some(m) => {
            if m < uniform + 3 {
                return Err(Error::ZGridTooCoarse(format!(
                    "{m} levels cannot cover the uniform layer of {} levels",
                    uniform + 1
                )));
            }
            let steps = (m - uniform - 1) as i32;
            // Σ_{k=1}^{steps} h g^k = span, solved for g by bisection.
            let reach = |g: f64| (1..=steps).map(|k| h * g.powi(k)).sum::<f64>();
            if reach(1.0) >= span {
                1.0
            } else {
                let (mut lo, mut hi) = (1.0, 2.0);
                while reach(hi) < span {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if reach(mid) < span {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        }
    };
    if ratio > 2.0 {
        return Err(Error::ZGridTooCoarse(format!(
            "vertical growth ratio {ratio:.3} exceeds 2"
        )));
    }
    let mut step = h;
    while *z.last().expect("nonempty") < z_top * (1.0 - 1e-12) {
        step *= ratio;
        let next = (z.last().expect("nonempty") + step).min(z_top);
        z.push(next);
        if levels.is_some_and(|m| z.len() == m) {
            break;
        }
    }
    *z.last_mut().expect("nonempty") = z_top;
    Ok(z)
}

/// `∫_a^b z^p dz` for `p > −1`.
fn power_integral(a: f64, b: f64, p: f64) -> f64 {
    (b.powf(p + 1.0) - a.powf(p + 1.0)) / (p + 1.0)
}

/// Finite-volume discretisation of `−div(z^{1−2s}∇U)` on `lattice × z_nodes`.
///
/// Horizontal edges carry `h^{n−2} ∫_{dual cell} z^{1−2s}`, vertical edges the
/// exact harmonic conductance `hⁿ / ∫_{z_j}^{z_{j+1}} z^{2s−1}`. On the side
/// walls and the top the far-field condition `∂_ν U = −(n−2s)(X·ν)/|X|² U`
/// (the decay of a monopole centred at `center`) adds a Robin term.
struct WeightedOperator<'a> {
    lattice: &'a Lattice,
    n: usize,
    nz: usize,
    strides: [usize; 3],
    cx: Vec<f64>,
    cz: Vec<f64>,
    side_area: Vec<f64>,
    top_area: f64,
    z: &'a [f64],
    center: Option<[f64; 3]>,
    decay: f64,
    /// Cells whose bottom node carries a Dirichlet value.
    fixed: Option<&'a [bool]>,
}

impl<'a> WeightedOperator<'a> {
    fn new(
        lattice: &'a Lattice,
        s: f64,
        z: &'a [f64],
        center: Option<[f64; 3]>,
        fixed: Option<&'a [bool]>,
    ) -> Self {
        let n = lattice.n;
        let nz = z.len();
        let h = lattice.h;
        let p = 1.0 - 2.0 * s;
        let wz: Vec<f64> = (0..nz)
            .map(|j| {
                let lo = if j == 0 { 0.0 } else { 0.5 * (z[j - 1] + z[j]) };
                let hi = if j + 1 == nz {
                    z[j]
                } else {
                    0.5 * (z[j] + z[j + 1])
                };
                power_integral(lo, hi, p)
            })
            .collect();
        let cx = wz.iter().map(|w| h.powi(n as i32 - 2) * w).collect();
        let cz = z
            .windows(2)
            .map(|w| h.powi(n as i32) / power_integral(w[0], w[1], -p))
            .collect();
        let side_area = wz.iter().map(|w| h.powi(n as i32 - 1) * w).collect();
        let top_area = h.powi(n as i32) * z[nz - 1].powf(p);
        let mut strides = [0usize; 3];
        let mut st = 1;
        for a in (0..n).rev() {
            strides[a] = st;
            st *= lattice.dims[a];
        }
        WeightedOperator {
            lattice,
            n,
            nz,
            strides,
            cx,
            cz,
            side_area,
            top_area,
            z,
            center,
            decay: n as f64 - 2.0 * s,
            fixed,
        }
    }

    /// Robin coefficient of the node (cell, level).
    fn robin(&self, coords: &[usize; 3], x: &[f64; 3], j: usize) -> f64 {
        let Some(c) = self.center else { return 0.0 };
        let n = self.n;
        let h = self.lattice.h;
        let zj = self.z[j];
        let mut r2_perp = zj * zj;
        for a in 0..n {
            r2_perp += (x[a] - c[a]) * (x[a] - c[a]);
        }
        let mut acc = 0.0;
        for a in 0..n {
            let d = x[a] - c[a];
            let rest = r2_perp - d * d;
            for (at_face, sign) in [
                (coords[a] == 0, -1.0),
                (coords[a] + 1 == self.lattice.dims[a], 1.0),
            ] {
                if at_face {
                    let xn = sign * (d + sign * 0.5 * h);
                    acc += self.side_area[j] * self.decay * xn / (xn * xn + rest);
                }
            }
        }
        if j + 1 == self.nz {
            acc += self.top_area * self.decay * zj / r2_perp;
        }
        acc
    }

    fn is_fixed(&self, cell: usize, j: usize) -> bool {
        j == 0 && self.fixed.is_some_and(|f| f[cell])
    }

    /// `out = L u`; with `masked`, Dirichlet nodes are treated as absent
    /// (their input is ignored and their output is zero).
    fn apply(&self, u: &[f64], out: &mut [f64], masked: bool) {
        let nz = self.nz;
        let n = self.n;
        out.par_chunks_mut(nz).enumerate().for_each(|(cell, col)| {
            let coords = self.lattice.coords(cell);
            let x = self.lattice.center(cell);
            let at = |c: usize, j: usize| -> f64 {
                if masked && self.is_fixed(c, j) {
                    0.0
                } else {
                    u[c * nz + j]
                }
            };
            for j in 0..nz {
                if masked && self.is_fixed(cell, j) {
                    col[j] = 0.0;
                    continue;
                }
                let u0 = u[cell * nz + j];
                let mut acc = 0.0;
                for a in 0..n {
                    if coords[a] > 0 {
                        acc += self.cx[j] * (u0 - at(cell - self.strides[a], j));
                    }
                    if coords[a] + 1 < self.lattice.dims[a] {
                        acc += self.cx[j] * (u0 - at(cell + self.strides[a], j));
                    }
                }
                if j > 0 {
                    acc += self.cz[j - 1] * (u0 - at(cell, j - 1));
                }
                if j + 1 < nz {
                    acc += self.cz[j] * (u0 - at(cell, j + 1));
                }
                acc += self.robin(&coords, &x, j) * u0;
                col[j] = acc;
            }
        });
    }

    /// Block Jacobi with exact solves along vertical lines.
    fn precondition(&self, r: &[f64], out: &mut [f64]) {
        let nz = self.nz;
        let n = self.n;
        out.par_chunks_mut(nz).enumerate().for_each_init(
            || (vec![0.0; nz], vec![0.0; nz], vec![0.0; nz]),
            |(diag, off, work), (cell, col)| {
                let coords = self.lattice.coords(cell);
                let x = self.lattice.center(cell);
                let mut neighbours = 0.0;
                for a in 0..n {
                    neighbours += (coords[a] > 0) as usize as f64
                        + (coords[a] + 1 < self.lattice.dims[a]) as usize as f64;
                }
                for j in 0..nz {
                    let mut d = neighbours * self.cx[j] + self.robin(&coords, &x, j);
                    if j > 0 {
                        d += self.cz[j - 1];
                    }
                    if j + 1 < nz {
                        d += self.cz[j];
                        off[j] = -self.cz[j];
                    }
                    diag[j] = d;
                }
                let start = if self.is_fixed(cell, 0) { 1 } else { 0 };
                col.copy_from_slice(&r[cell * nz..(cell + 1) * nz]);
                col[..start].iter_mut().for_each(|v| *v = 0.0);
                solve_tridiagonal(
                    &diag[start..],
                    &off[start..nz - 1],
                    &mut col[start..],
                    &mut work[start..],
                );
            },
        );
    }

    fn energy(&self, u: &[f64]) -> WeightedEnergy {
        let nz = self.nz;
        let n = self.n;
        let parts: Vec<[f64; 3]> = u
            .par_chunks(nz)
            .enumerate()
            .map(|(cell, col)| {
                let coords = self.lattice.coords(cell);
                let x = self.lattice.center(cell);
                let mut e = [0.0; 3];
                for j in 0..nz {
                    for a in 0..n {
                        if coords[a] + 1 < self.lattice.dims[a] {
                            let d = col[j] - u[(cell + self.strides[a]) * nz + j];
                            e[0] += self.cx[j] * d * d;
                        }
                    }
                    if j + 1 < nz {
                        let d = col[j] - col[j + 1];
                        e[1] += self.cz[j] * d * d;
                    }
                    e[2] += self.robin(&coords, &x, j) * col[j] * col[j];
                }
                e
            })
            .collect();
        let mut e = [0.0; 3];
        for p in parts {
            for k in 0..3 {
                e[k] += p[k];
            }
        }
        WeightedEnergy {
            x_part: e[0],
            z_part: e[1],
            boundary: e[2],
            total: e[0] + e[1] + e[2],
        }
    }
}

/// A capacitary extension with its trace data.
#[derive(Debug, Clone)]
pub struct ExtensionSolution {
    pub result: CapacityResult,
    pub field: ExtensionField,
    pub mask: Mask,
    pub energy: WeightedEnergy,
}

impl ExtensionSolution {
    /// The trace `u_Ω = U_Ω(·, 0)`, continued outside the box by the fitted
    /// far-field monopole.
    pub fn potential(&self) -> GridFunction {
        let mut trace = self.field.trace();
        trace.exterior = Some(Monopole {
            charge: self.result.far_charge,
            center: self.field.robin_center.unwrap_or([0.0; 3]),
            exponent: 2.0 * self.field.s - self.field.lattice.n as f64,
        });
        trace
    }
}

fn vertical_grid(grid: &GridSpec) -> Result<Vec<f64>> {
    let z_top = grid
        .z_top
        .unwrap_or(DEFAULT_HEIGHT_FACTOR * grid.half_width);
    if z_top < 4.0 * grid.half_width {
        return Err(Error::ZGridTooCoarse(format!(
            "height Z = {z_top} is below 4R"
        )));
    }
    let lat = grid.lattice(1);
    z_grid(lat.h, grid.half_width, z_top, grid.z_levels)
}

/// Capacity through the extension problem: minimise the weighted energy with
/// `U = 1` on `Ω × {0}` and natural (zero conormal flux) conditions on the
/// rest of the bottom; `cap_s(Ω) = E / α_{n,s}`.
pub fn frac_capacity_extension(
    shape: &Shape,
    s: f64,
    grid: &GridSpec,
) -> Result<ExtensionSolution> {
    shape.validate()?;
    grid.validate()?;
    let n = shape.dim();
    if n as f64 <= 2.0 * s || !(s > 0.0 && s < 1.0) {
        return domain(format!("need 0 < s < 1 and n > 2s, got n = {n}, s = {s}"));
    }
    let lattice = grid.lattice(n);
    let mask = shape.rasterize(&lattice);
    let z = vertical_grid(grid)?;
    solve_extension_on_mask(&mask, s, &z, grid.tol)
}

/// [`frac_capacity_extension`] for an already rasterised set.
pub fn solve_extension_on_mask(
    mask: &Mask,
    s: f64,
    z: &[f64],
    tol: f64,
) -> Result<ExtensionSolution> {
    let lattice = &mask.lattice;
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
    let center = mask.centroid();
    let bottom: Vec<Option<f64>> = mask
        .bits
        .iter()
        .map(|&b| if b { Some(1.0) } else { None })
        .collect();
    let (field, report) = solve_weighted(lattice, s, z, &bottom, Some(center), tol)?;
    let energy = field.energy();
    let alpha = extension_constant(lattice.n, s)?;
    let value = energy.total / alpha;
    let far_charge = fit_far_charge(&field.trace(), center, s);
    let (min, max) = field
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let result = CapacityResult {
        value,
        energy: energy.total,
        residual: report.relative_residual,
        h: lattice.h,
        half_width: -lattice.origin[0],
        iterations: report.iterations,
        method: "extension".into(),
        volume: count as f64 * lattice.cell_volume(),
        far_charge,
        min_potential: min,
        max_potential: max,
    };
    Ok(ExtensionSolution {
        result,
        field,
        mask: mask.clone(),
        energy,
    })
}

/// Minimise the weighted energy on `lattice × z` with Dirichlet data on the
/// bottom nodes where `bottom[i]` is `Some`, natural conditions elsewhere on
/// the bottom, and the far-field condition on the walls when `center` is
/// given (zero flux otherwise).
pub fn solve_weighted(
    lattice: &Lattice,
    s: f64,
    z: &[f64],
    bottom: &[Option<f64>],
    center: Option<[f64; 3]>,
    tol: f64,
) -> Result<(ExtensionField, CgReport)> {
    if z.len() < 3 || z[0] != 0.0 || z.windows(2).any(|w| w[1] <= w[0]) {
        return domain("heights must start at 0 and increase");
    }
    if bottom.len() != lattice.len() {
        return domain("bottom data must have one entry per cell");
    }
    let nz = z.len();
    let len = lattice.len() * nz;
    let fixed: Vec<bool> = bottom.iter().map(|b| b.is_some()).collect();
    let op = WeightedOperator::new(lattice, s, z, center, Some(&fixed));
    let mut g = vec![0.0; len];
    for (i, b) in bottom.iter().enumerate() {
        if let Some(v) = b {
            g[i * nz] = *v;
        }
    }
    let mut rhs = vec![0.0; len];
    op.apply(&g, &mut rhs, false);
    rhs.par_chunks_mut(nz).enumerate().for_each(|(cell, col)| {
        for (j, v) in col.iter_mut().enumerate() {
            *v = if op.is_fixed(cell, j) { 0.0 } else { -*v };
        }
    });
    let mut x = vec![0.0; len];
    let free = len - fixed.iter().filter(|&&f| f).count();
    let max_iter = 50 * (free as f64).sqrt().ceil() as usize + 50;
    let mut apply = |v: &[f64], out: &mut [f64]| op.apply(v, out, true);
    let report = if lattice.dims[..lattice.n]
        .iter()
        .all(|&d| d % 2 == 0 && d >= 4)
    {
        let mg = Multigrid::new(&op);
        let mut pre = |r: &[f64], out: &mut [f64]| mg.apply(r, out);
        pcg(&mut apply, &mut pre, &rhs, &mut x, tol, max_iter)?
    } else {
        let mut pre = |r: &[f64], out: &mut [f64]| op.precondition(r, out);
        pcg(&mut apply, &mut pre, &rhs, &mut x, tol, max_iter)?
    };
    x.par_iter_mut()
        .zip(g.par_iter())
        .for_each(|(x, g)| *x += g);
    let field = ExtensionField {
        lattice: lattice.clone(),
        s,
        z_nodes: z.to_vec(),
        values: x,
        robin_center: center,
    };
    Ok((field, report))
}

impl crate::multigrid::Stencil for WeightedOperator<'_> {
    fn n(&self) -> usize {
        self.n
    }
    fn dims(&self) -> [usize; 3] {
        let mut d = [1usize; 3];
        d[..self.n].copy_from_slice(&self.lattice.dims);
        d
    }
    fn nz(&self) -> usize {
        self.nz
    }
    fn column(&self, cell: usize, diag: &mut [f64], off: &mut [f64]) {
        let nz = self.nz;
        let coords = self.lattice.coords(cell);
        let x = self.lattice.center(cell);
        let mut neighbours = 0.0;
        for a in 0..self.n {
            neighbours += (coords[a] > 0) as usize as f64
                + (coords[a] + 1 < self.lattice.dims[a]) as usize as f64;
        }
        for j in 0..nz {
            let mut d = neighbours * self.cx[j] + self.robin(&coords, &x, j);
            if j > 0 {
                d += self.cz[j - 1];
            }
            if j + 1 < nz {
                d += self.cz[j];
                off[j] = -self.cz[j];
            }
            diag[j] = d;
        }
        if self.is_fixed(cell, 0) {
            diag[0] = 1.0;
            off[0] = 0.0;
        }
    }
    fn x_plus(&self, cell: usize, a: usize, j: usize) -> f64 {
        let c = self.lattice.coords(cell);
        if c[a] + 1 >= self.lattice.dims[a]
            || self.is_fixed(cell, j)
            || self.is_fixed(cell + self.strides[a], j)
        {
            0.0
        } else {
            self.cx[j]
        }
    }
    fn active(&self, cell: usize, j: usize) -> bool {
        !self.is_fixed(cell, j)
    }
}

/// Minimal weighted extension of a given trace on the solver grid (the trace
/// is imposed on every bottom node; the walls carry zero flux).
pub fn extend_trace(
    phi: &GridFunction,
    z: &[f64],
    tol: f64,
) -> Result<(ExtensionField, WeightedEnergy)> {
    let bottom: Vec<Option<f64>> = phi.values.iter().map(|&v| Some(v)).collect();
    let (field, _) = solve_weighted(&phi.lattice, phi.s, z, &bottom, None, tol)?;
    let energy = field.energy();
    Ok((field, energy))
}

/// Coefficient `q` of the far field `q |x − c|^{2s−n}` that best matches the
/// trace on the outermost layer of cells.
fn fit_far_charge(trace: &GridFunction, center: [f64; 3], s: f64) -> f64 {
    let lat = &trace.lattice;
    let n = lat.n;
    let exponent = n as f64 - 2.0 * s;
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..lat.len() {
        let c = lat.coords(i);
        if (0..n).any(|a| c[a] == 0 || c[a] + 1 == lat.dims[a]) {
            let x = lat.center(i);
            let r2: f64 = (0..n).map(|a| (x[a] - center[a]).powi(2)).sum();
            acc += trace.values[i] * r2.powf(exponent / 2.0);
            count += 1;
        }
    }
    acc / count.max(1) as f64
}

/// Partial Schwarz symmetrization: each horizontal slice is replaced by its
/// radially decreasing rearrangement about the origin. Cells are ranked by
/// distance of their centre to the origin, ties by flat index, so that the
/// multiset of values of every slice (hence every superlevel measure) is
/// preserved exactly.
pub fn partial_schwarz(field: &ExtensionField) -> Result<ExtensionField> {
    if field.values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return domain("symmetrization needs a nonnegative field");
    }
    let order = radial_order(&field.lattice);
    let nz = field.nz();
    let slices: Vec<Vec<f64>> = (0..nz)
        .into_par_iter()
        .map(|j| rearrange(&field.slice(j), &order))
        .collect();
    let mut out = ExtensionField::from_slices(&field.lattice, field.s, &field.z_nodes, &slices);
    out.robin_center = field.robin_center.map(|_| [0.0; 3]);
    Ok(out)
}

/// Schwarz rearrangement of a grid function about the origin.
pub fn schwarz_rearrangement(phi: &GridFunction) -> Result<GridFunction> {
    if phi.values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return domain("symmetrization needs a nonnegative function");
    }
    let order = radial_order(&phi.lattice);
    Ok(GridFunction {
        values: rearrange(&phi.values, &order),
        exterior: None,
        ..phi.clone()
    })
}

/// Cells sorted by distance of their centre to the origin, then by index.
fn radial_order(lat: &Lattice) -> Vec<usize> {
    let n = lat.n;
    let mut keyed: Vec<(f64, usize)> = (0..lat.len())
        .map(|i| {
            let x = lat.center(i);
            ((0..n).map(|a| x[a] * x[a]).sum::<f64>(), i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| i).collect()
}

fn rearrange(values: &[f64], order: &[usize]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut out = vec![0.0; values.len()];
    for (k, &cell) in order.iter().enumerate() {
        out[cell] = sorted[k];
    }
    out
}

/// `∫|∇_x u|²` of one slice by forward differences.
pub fn slice_gradient_energy(lattice: &Lattice, values: &[f64]) -> f64 {
    let n = lattice.n;
    let mut acc = 0.0;
    for i in 0..lattice.len() {
        let c = lattice.coords(i);
        let mut stride = 1;
        for a in (0..n).rev() {
            if c[a] + 1 < lattice.dims[a] {
                let d = values[i + stride] - values[i];
                acc += d * d;
            }
            stride *= lattice.dims[a];
        }
    }
    acc * lattice.h.powi(n as i32 - 2)
}

/// Coarea lower bound `∫ P(Ω_t*)² / (−μ′(t)) dt` of one radially symmetric
/// slice, with `P` the perimeter of the ball of measure `μ(t)` and `μ′` by
/// finite differences on `levels` uniform levels in `(0, max)`.
///
/// Cell counts of lattice discs fluctuate by roughly the square root of their
/// perimeter (in cells), and `1/(−Δμ)` turns that noise into an upward bias;
/// choose `levels` so that each level band holds many more cells than that.
pub fn coarea_bound(lattice: &Lattice, values: &[f64], levels: usize) -> f64 {
    let n = lattice.n as f64;
    let omega = unit_ball_volume(lattice.n);
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let dv = lattice.cell_volume();
    let mu = |t: f64| sorted.partition_point(|&v| v >= t) as f64 * dv;
    let max = sorted.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0.0;
    }
    let dt = max / levels as f64;
    let mut acc = 0.0;
    for k in 0..levels {
        let (t0, t1) = (k as f64 * dt, (k + 1) as f64 * dt);
        let drop = mu(t0.max(1e-300)) - mu(t1);
        if drop <= 0.0 {
            continue;
        }
        let m = mu(0.5 * (t0 + t1));
        let p = n * omega.powf(1.0 / n) * m.powf((n - 1.0) / n);
        acc += p * p * dt * dt / drop;
    }
    acc
}

/// `|{x ∉ box : q (|x − c|² + z²)^{(2s−n)/2} ≥ t}|`: the part of a superlevel
/// set of the far field lying outside the lattice box, by radial integration
/// over directions.
pub fn exterior_superlevel_measure(lattice: &Lattice, far: &Monopole, t: f64, z: f64) -> f64 {
    if !(t > 0.0) || far.charge <= 0.0 {
        return if t > 0.0 { 0.0 } else { f64::INFINITY };
    }
    let n = lattice.n;
    let rho2 = (far.charge / t).powf(2.0 / (-far.exponent)) - z * z;
    if rho2 <= 0.0 {
        return 0.0;
    }
    let rho = rho2.sqrt();
    let lo = &lattice.origin;
    let hi = lattice.upper();
    let c = &far.center;
    let inner = (0..n)
        .map(|a| (c[a] - lo[a]).min(hi[a] - c[a]))
        .fold(f64::INFINITY, f64::min);
    if rho <= inner {
        return 0.0;
    }
    // Distance from c to the box boundary along the unit direction d.
    let exit = |d: &[f64]| -> f64 {
        (0..n)
            .map(|a| {
                if d[a] > 0.0 {
                    (hi[a] - c[a]) / d[a]
                } else if d[a] < 0.0 {
                    (lo[a] - c[a]) / d[a]
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min)
    };
    let radial = |d: &[f64]| (rho.powi(n as i32) - exit(d).min(rho).powi(n as i32)) / n as f64;
    match n {
        1 => radial(&[1.0]) + radial(&[-1.0]),
        2 => {
            let m = 2048;
            let dth = 2.0 * std::f64::consts::PI / m as f64;
            (0..m)
                .map(|k| {
                    let th = (k as f64 + 0.5) * dth;
                    radial(&[th.cos(), th.sin()])
                })
                .sum::<f64>()
                * dth
        }
        _ => {
            let (mu, w) = crate::special::composite_gauss_legendre(-1.0, 1.0, 16, 8);
            let m = 256;
            let dph = 2.0 * std::f64::consts::PI / m as f64;
            let mut acc = 0.0;
            for (cz, wz) in mu.iter().zip(&w) {
                let sz = (1.0 - cz * cz).sqrt();
                for k in 0..m {
                    let ph = (k as f64 + 0.5) * dph;
                    acc += wz * dph * radial(&[sz * ph.cos(), sz * ph.sin(), *cz]);
                }
            }
            acc
        }
    }
}

/// Superlevel statistics of a capacitary extension and the threshold data
/// built on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    /// Sorted levels in (0, 1): the uniform ladder plus the window ends.
    pub levels: Vec<f64>,
    /// Heights at which `mu` is tabulated.
    pub heights: Vec<f64>,
    /// `mu[k][l] = μ_{z_k}(t_l) = |{U(·, z_k) ≥ t_l}|`.
    pub mu: Vec<Vec<f64>>,
    pub volume: f64,
    pub asymmetry: f64,
    pub capacity: f64,
    pub gamma: f64,
    /// T = inf{t : μ(t) ≤ |Ω|(1 + γA(Ω))}.
    pub threshold: f64,
    /// T̂ = 1 − T.
    pub hat_t: f64,
    /// z₀ = ((T̂/16)·√(γA|Ω| / (c_{n,s} cap_s(Ω))))^{1/s}.
    pub z0: f64,
    /// [T + T̂/8, T + 3T̂/8].
    pub window: [f64; 2],
    /// A(Ω) = 0: T = 1, z₀ = 0 and every window statement is vacuous.
    pub rigid: bool,
    /// Whether the tabulated μ includes the far-field part outside the box.
    pub includes_exterior: bool,
}

/// Level ladder `(k + ½)/512`, `k < 512`, merged with extra points.
fn ladder(extra: &[f64]) -> Vec<f64> {
    let mut levels: Vec<f64> = (0..LADDER_LEVELS)
        .map(|k| (k as f64 + 0.5) / LADDER_LEVELS as f64)
        .collect();
    levels.extend(extra.iter().copied().filter(|t| *t > 0.0 && *t < 1.0));
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup();
    levels
}

/// `μ(t)` of a slice: measure of cells with value ≥ t (values sorted
/// decreasingly).
fn slice_measure(sorted_desc: &[f64], cell_volume: f64, t: f64) -> f64 {
    sorted_desc.partition_point(|&v| v >= t) as f64 * cell_volume
}

/// Compute μ_z(t), the threshold T, T̂ and z₀ for the capacitary extension
/// `field` of `shape` with capacity `capacity`.
///
/// The asymmetry is that of the shape itself (exactly zero for a ball); the
/// measure `|Ω|` is that of the rasterised set on the field's lattice. The far
/// field beyond the box is included through `far` when given.
pub fn level_stats(
    field: &ExtensionField,
    shape: &Shape,
    gamma_param: f64,
    capacity: f64,
    far: Option<&Monopole>,
) -> Result<LevelStats> {
    if !(gamma_param > 0.0 && gamma_param < 1.0 / 9.0) {
        return domain("γ must lie in (0, 1/9)");
    }
    if !(capacity > 0.0) {
        return domain("capacity must be positive");
    }
    let lat = &field.lattice;
    let mask = shape.rasterize(lat);
    let volume = mask.volume();
    if volume <= 0.0 {
        return Err(Error::Degenerate(
            "the set contains no cell centre of the grid".into(),
        ));
    }
    let asymmetry = fraenkel_asymmetry(shape, lat.h)?.value;
    let dv = lat.cell_volume();
    let mut trace = field.slice(0);
    trace.sort_by(|a, b| b.total_cmp(a));
    let rigid = asymmetry == 0.0;
    let target = volume * (1.0 + gamma_param * asymmetry);
    // μ(t) ≤ target ⇔ #{v ≥ t} ≤ K ⇔ t > v_{K+1}, hence T = v_{K+1}.
    let k = (target / dv + 1e-9).floor() as usize;
    let threshold = if rigid {
        1.0
    } else {
        trace.get(k).copied().unwrap_or(0.0).clamp(0.0, 1.0)
    };
    let hat_t = 1.0 - threshold;
    let c = poisson_normalization(lat.n, field.s)?;
    let z0 = if rigid {
        0.0
    } else {
        (hat_t / 16.0 * (gamma_param * asymmetry * volume / (c * capacity)).sqrt())
            .powf(1.0 / field.s)
    };
    let window = [threshold + hat_t / 8.0, threshold + 3.0 * hat_t / 8.0];
    let levels = ladder(if rigid { &[] } else { &window[..] });
    let heights = field.z_nodes.clone();
    let mu: Vec<Vec<f64>> = (0..field.nz())
        .into_par_iter()
        .map(|j| {
            let mut v = field.slice(j);
            v.sort_by(|a, b| b.total_cmp(a));
            levels
                .iter()
                .map(|&t| {
                    let inside = slice_measure(&v, dv, t);
                    inside + far.map_or(0.0, |f| exterior_superlevel_measure(lat, f, t, heights[j]))
                })
                .collect()
        })
        .collect();
    Ok(LevelStats {
        levels,
        heights,
        mu,
        volume,
        asymmetry,
        capacity,
        gamma: gamma_param,
        threshold,
        hat_t,
        z0,
        window,
        rigid,
        includes_exterior: far.is_some(),
    })
}

/// One sampled point of the window check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabSample {
    pub t: f64,
    pub z: f64,
    /// `3γA(Ω) − ||Ω_{t,z}| − |Ω|| / |Ω|`.
    pub volume_margin: f64,
    /// `A(Ω_{t,z}) − c_γ A(Ω)` with `c_γ = C_{3γ}`.
    pub asymmetry_margin: f64,
    pub slice_asymmetry: f64,
}

/// Outcome of the window check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabReport {
    /// `"checked"`, `"vacuous"` (rigid set) or `"windowUnresolved"`.
    pub status: String,
    pub c_gamma: f64,
    /// A(Ω) of the rasterised set, the reference for both margins.
    pub reference_asymmetry: f64,
    pub samples: Vec<SlabSample>,
    pub min_volume_margin: f64,
    pub min_asymmetry_margin: f64,
    pub all_hold: bool,
}

/// Check, on sampled `(t, z)` with `T + T̂/8 ≤ t ≤ T + 3T̂/8` and `0 < z ≤ z₀`,
/// that `||Ω_{t,z}| − |Ω|| ≤ 3γA(Ω)|Ω|` and `A(Ω_{t,z}) ≥ c_γ A(Ω)`.
///
/// Since z₀ is usually far below the first vertical grid step, the slices
/// `U(·, z)` at `z = z₀·{¼, ½, 1}` are computed as Poisson extensions of the
/// trace (the extension of the trace with least weighted energy). Levels are
/// the ladder points inside the window, thinned to at most 17, including
/// both ends. Both asymmetries are measured on the same lattice.
pub fn slab_asymmetry_check(
    field: &ExtensionField,
    stats: &LevelStats,
    shape: &Shape,
) -> Result<SlabReport> {
    let c_gamma = asymmetry_transfer(3.0 * stats.gamma)?;
    let empty = |status: &str| SlabReport {
        status: status.into(),
        c_gamma,
        reference_asymmetry: stats.asymmetry,
        samples: Vec::new(),
        min_volume_margin: f64::INFINITY,
        min_asymmetry_margin: f64::INFINITY,
        all_hold: true,
    };
    if stats.rigid {
        return Ok(empty("vacuous"));
    }
    let lat = &field.lattice;
    let [lo, hi] = stats.window;
    let inside: Vec<f64> = stats
        .levels
        .iter()
        .copied()
        .filter(|t| *t >= lo && *t <= hi)
        .collect();
    if inside.len() < 2 || !(stats.z0 > 0.0) {
        return Ok(empty("windowUnresolved"));
    }
    let stride = (inside.len() - 1).div_ceil(16).max(1);
    let mut ts: Vec<f64> = inside.iter().copied().step_by(stride).collect();
    if ts.last() != inside.last() {
        ts.push(*inside.last().expect("nonempty"));
    }
    let zs = [0.25 * stats.z0, 0.5 * stats.z0, stats.z0];
    let ext = poisson_extend(&field.trace(), &zs)?;
    let mask = shape.rasterize(lat);
    let volume = mask.volume();
    let reference = mask_asymmetry(&mask)?.value;
    let gamma_a = stats.gamma * reference;
    let mut cache: HashMap<Vec<bool>, f64> = HashMap::new();
    let mut samples = Vec::new();
    for (zi, &z) in zs.iter().enumerate() {
        let slice = ext.slice(zi + 1);
        for &t in &ts {
            let bits: Vec<bool> = slice.iter().map(|&v| v >= t).collect();
            let m = Mask {
                lattice: lat.clone(),
                bits,
            };
            let vol = m.volume();
            let a = match cache.get(&m.bits) {
                Some(&a) => a,
                None => {
                    let a = if m.count() == 0 {
                        1.0
                    } else {
                        mask_asymmetry(&m)?.value
                    };
                    cache.insert(m.bits.clone(), a);
                    a
                }
            };
            samples.push(SlabSample {
                t,
                z,
                volume_margin: 3.0 * gamma_a - (vol - volume).abs() / volume,
                asymmetry_margin: a - c_gamma * reference,
                slice_asymmetry: a,
            });
        }
    }
    let min_v = samples
        .iter()
        .map(|s| s.volume_margin)
        .fold(f64::INFINITY, f64::min);
    let min_a = samples
        .iter()
        .map(|s| s.asymmetry_margin)
        .fold(f64::INFINITY, f64::min);
    Ok(SlabReport {
        status: "checked".into(),
        c_gamma,
        reference_asymmetry: reference,
        samples,
        min_volume_margin: min_v,
        min_asymmetry_margin: min_a,
        all_hold: min_v >= 0.0 && min_a >= 0.0,
    })
}

/// Weighted energy of a field restricted to its interior conductances
/// (no wall term); used to compare a field with its symmetrization.
pub fn interior_energy(field: &ExtensionField) -> WeightedEnergy {
    let op = WeightedOperator::new(&field.lattice, field.s, &field.z_nodes, None, None);
    op.energy(&field.values)
}

/// Relative residual `‖L U‖` at the free nodes of a capacitary extension,
/// for diagnostics.
pub fn free_residual(sol: &ExtensionSolution) -> f64 {
    let field = &sol.field;
    let op = WeightedOperator::new(
        &field.lattice,
        field.s,
        &field.z_nodes,
        field.robin_center,
        Some(&sol.mask.bits),
    );
    let mut out = vec![0.0; field.values.len()];
    op.apply(&field.values, &mut out, false);
    let nz = field.nz();
    for (i, &b) in sol.mask.bits.iter().enumerate() {
        if b {
            out[i * nz] = 0.0;
        }
    }
    dot(&out, &out).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertical_grid_shapes() {
        let z = z_grid(0.125, 2.0, 60.0, None).unwrap();
        assert_eq!(z[0], 0.0);
        assert!((z[16] - 2.0).abs() < 1e-12);
        assert_eq!(*z.last().unwrap(), 60.0);
        let z = z_grid(0.125, 2.0, 60.0, Some(40)).unwrap();
        assert_eq!(z.len(), 40);
        assert!(z.windows(2).all(|w| w[1] > w[0]));
        assert!(matches!(
            z_grid(0.125, 2.0, 60.0, Some(20)),
            Err(Error::ZGridTooCoarse(_))
        ));
    }

    #[test]
    fn rearrangement_preserves_values() {
        let lat = Lattice::centered_cube(2, 1.0, 8);
        let phi = GridFunction::from_fn(lat, 0.5, |x| ((x[0] - 0.3).powi(2) + x[1] * x[1]).sqrt());
        let star = schwarz_rearrangement(&phi).unwrap();
        let mut a = phi.values.clone();
        let mut b = star.values.clone();
        a.sort_by(|x, y| x.total_cmp(y));
        b.sort_by(|x, y| x.total_cmp(y));
        assert_eq!(a, b);
        let again = schwarz_rearrangement(&star).unwrap();
        assert_eq!(again.values, star.values);
    }

    #[test]
    fn dump_round_trip() {
        let lat = Lattice::centered_cube(2, 1.0, 4);
        let z = vec![0.0, 0.5, 1.0];
        let slices: Vec<Vec<f64>> = (0..3)
            .map(|j| (0..16).map(|i| (i * 3 + j) as f64).collect())
            .collect();
        let f = ExtensionField::from_slices(&lat, 0.4, &z, &slices);
        let dir = std::env::temp_dir().join(format!("fracap-dump-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.bin");
        f.dump(&path).unwrap();
        let g = ExtensionField::load(&path).unwrap();
        assert_eq!(f.values, g.values);
        assert_eq!(f.z_nodes, g.z_nodes);
        assert_eq!(f.lattice, g.lattice);
        assert!(dir.join("field.bin.json").exists());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn exterior_measure_of_centered_ball() {
        // Superlevel radius 2 around the centre of the box [-1,1]²: the
        // exterior part is π·4 − 4.
        let lat = Lattice::centered_cube(2, 1.0, 8);
        let far = Monopole {
            charge: 2.0,
            center: [0.0; 3],
            exponent: -1.0,
        };
        let m = exterior_superlevel_measure(&lat, &far, 1.0, 0.0);
        assert!((m - (4.0 * std::f64::consts::PI - 4.0)).abs() < 1e-3, "{m}");
        assert_eq!(exterior_superlevel_measure(&lat, &far, 3.0, 0.0), 0.0);
    }
}
