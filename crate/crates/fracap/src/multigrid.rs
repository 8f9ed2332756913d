//! Multigrid preconditioner for column-structured stencils: operators on
//! `lattice × {z_j}` that couple each node to its horizontal neighbours and
//! to the nodes above and below it.
//!
//! Smoothing is red–black Gauss–Seidel by vertical lines (each column solved
//! exactly), coarsening halves the horizontal lattice only. Line relaxation
//! in one direction combined with semicoarsening in the others is robust for
//! any ratio of horizontal to vertical coupling, which is what the graded
//! vertical grid of the extension problem produces. Coarse operators are
//! Galerkin products with piecewise-constant interpolation, with horizontal
//! couplings halved (the piecewise-constant Galerkin product over-weights
//! them by exactly that factor relative to a rediscretisation).

use crate::linalg::solve_tridiagonal;
use rayon::prelude::*;

/// A symmetric stencil `A u = diag·u − Σ c_nb u_nb` on a column-structured
/// grid. Inactive (Dirichlet) nodes decouple and have zero output.
pub(crate) trait Stencil: Sync {
    fn n(&self) -> usize;
    fn dims(&self) -> [usize; 3];
    fn nz(&self) -> usize;
    /// Diagonal and vertical couplings `off[j] = −A(j, j+1)` of a column;
    /// inactive nodes get `diag = 1` and zero couplings.
    fn column(&self, col: usize, diag: &mut [f64], off: &mut [f64]);
    /// Conductance between `(col, j)` and `(col + e_a, j)` (zero if either
    /// is inactive or the neighbour does not exist).
    fn x_plus(&self, col: usize, a: usize, j: usize) -> f64;
    fn active(&self, col: usize, j: usize) -> bool;

    fn columns(&self) -> usize {
        self.dims()[..self.n()].iter().product()
    }

    fn strides(&self) -> [usize; 3] {
        let d = self.dims();
        let mut st = [0usize; 3];
        let mut acc = 1;
        for a in (0..self.n()).rev() {
            st[a] = acc;
            acc *= d[a];
        }
        st
    }

    fn coords(&self, col: usize) -> [usize; 3] {
        let d = self.dims();
        let mut c = [0usize; 3];
        let mut rem = col;
        for a in (0..self.n()).rev() {
            c[a] = rem % d[a];
            rem /= d[a];
        }
        c
    }
}

/// A stencil with explicitly stored coefficients.
struct Explicit {
    n: usize,
    dims: [usize; 3],
    nz: usize,
    /// `xp[a][col * nz + j]`: coupling to `col + e_a`.
    xp: [Vec<f64>; 3],
    /// `zp[col * nz + j]`: coupling to `j + 1`.
    zp: Vec<f64>,
    diag: Vec<f64>,
    active: Vec<bool>,
}

impl Stencil for Explicit {
    fn n(&self) -> usize {
        self.n
    }
    fn dims(&self) -> [usize; 3] {
        self.dims
    }
    fn nz(&self) -> usize {
        self.nz
    }
    fn column(&self, col: usize, diag: &mut [f64], off: &mut [f64]) {
        let base = col * self.nz;
        for j in 0..self.nz {
            diag[j] = if self.active[base + j] {
                self.diag[base + j]
            } else {
                1.0
            };
            if j + 1 < self.nz {
                off[j] = -self.zp[base + j];
            }
        }
    }
    fn x_plus(&self, col: usize, a: usize, j: usize) -> f64 {
        self.xp[a][col * self.nz + j]
    }
    fn active(&self, col: usize, j: usize) -> bool {
        self.active[col * self.nz + j]
    }
}

/// Coupling to the neighbour `col − e_a` (zero at the lower wall).
fn x_minus(
    st: &dyn Stencil,
    col: usize,
    c: &[usize; 3],
    strides: &[usize; 3],
    a: usize,
    j: usize,
) -> f64 {
    if c[a] == 0 {
        0.0
    } else {
        st.x_plus(col - strides[a], a, j)
    }
}

/// `out = A u` for a stencil.
fn apply(st: &dyn Stencil, u: &[f64], out: &mut [f64]) {
    let nz = st.nz();
    let n = st.n();
    let dims = st.dims();
    let strides = st.strides();
    out.par_chunks_mut(nz).enumerate().for_each_init(
        || (vec![0.0; nz], vec![0.0; nz]),
        |(diag, off), (col, o)| {
            st.column(col, diag, off);
            let c = st.coords(col);
            let base = col * nz;
            for j in 0..nz {
                if !st.active(col, j) {
                    o[j] = 0.0;
                    continue;
                }
                let mut acc = diag[j] * u[base + j];
                if j > 0 {
                    acc += off[j - 1] * u[base + j - 1];
                }
                if j + 1 < nz {
                    acc += off[j] * u[base + j + 1];
                }
                for a in 0..n {
                    if c[a] > 0 {
                        acc -= x_minus(st, col, &c, &strides, a, j) * u[base - strides[a] * nz + j];
                    }
                    if c[a] + 1 < dims[a] {
                        acc -= st.x_plus(col, a, j) * u[base + strides[a] * nz + j];
                    }
                }
                o[j] = acc;
            }
        },
    );
}

fn color(st: &dyn Stencil, col: usize) -> usize {
    let c = st.coords(col);
    (0..st.n()).map(|a| c[a]).sum::<usize>() % 2
}

/// One red–black sweep of line Gauss–Seidel (`order` gives the colours).
fn sweep(st: &dyn Stencil, b: &[f64], x: &mut [f64], tmp: &mut [f64], order: [usize; 2]) {
    let nz = st.nz();
    let n = st.n();
    let dims = st.dims();
    let strides = st.strides();
    for colour in order {
        {
            let xr: &[f64] = x;
            tmp.par_chunks_mut(nz).enumerate().for_each_init(
                || (vec![0.0; nz], vec![0.0; nz], vec![0.0; nz]),
                |(diag, off, work), (col, out)| {
                    if color(st, col) != colour {
                        return;
                    }
                    st.column(col, diag, off);
                    let c = st.coords(col);
                    let base = col * nz;
                    for j in 0..nz {
                        if !st.active(col, j) {
                            out[j] = 0.0;
                            continue;
                        }
                        let mut r = b[base + j];
                        for a in 0..n {
                            if c[a] > 0 {
                                r += x_minus(st, col, &c, &strides, a, j)
                                    * xr[base - strides[a] * nz + j];
                            }
                            if c[a] + 1 < dims[a] {
                                r += st.x_plus(col, a, j) * xr[base + strides[a] * nz + j];
                            }
                        }
                        out[j] = r;
                    }
                    solve_tridiagonal(diag, &off[..nz - 1], out, work);
                },
            );
        }
        x.par_chunks_mut(nz)
            .zip(tmp.par_chunks(nz))
            .enumerate()
            .for_each(|(col, (x, t))| {
                if color(st, col) == colour {
                    x.copy_from_slice(t);
                }
            });
    }
}

/// Galerkin coarse operator of `fine` under pairwise horizontal aggregation.
fn coarsen(fine: &dyn Stencil) -> Explicit {
    let n = fine.n();
    let nz = fine.nz();
    let fd = fine.dims();
    let mut cd = [1usize; 3];
    for a in 0..n {
        cd[a] = fd[a] / 2;
    }
    let ccols: usize = cd[..n].iter().product();
    let len = ccols * nz;
    // Per coarse node: [xp_0, xp_1, xp_2, zp, diag, active].
    let rows: Vec<Vec<[f64; 6]>> = (0..ccols)
        .into_par_iter()
        .map(|cc| {
            let mut ci = [0usize; 3];
            let mut rem = cc;
            for a in (0..n).rev() {
                ci[a] = rem % cd[a];
                rem /= cd[a];
            }
            let children: Vec<usize> = (0..1usize << n)
                .map(|mask| {
                    let mut f = 0;
                    for a in 0..n {
                        let fc = 2 * ci[a] + ((mask >> (n - 1 - a)) & 1);
                        f = f * fd[a] + fc;
                    }
                    f
                })
                .collect();
            let mut diag = vec![0.0; nz];
            let mut off = vec![0.0; nz];
            let mut out = vec![[0.0; 6]; nz];
            for &f in &children {
                fine.column(f, &mut diag, &mut off);
                let fc = fine.coords(f);
                for j in 0..nz {
                    if !fine.active(f, j) {
                        continue;
                    }
                    out[j][5] = 1.0;
                    out[j][4] += diag[j];
                    if j + 1 < nz && fine.active(f, j + 1) {
                        out[j][3] += -off[j];
                    }
                    for a in 0..n {
                        if fc[a] + 1 >= fd[a] {
                            continue;
                        }
                        let c = fine.x_plus(f, a, j);
                        if fc[a] % 2 == 0 {
                            // Edge inside the aggregate: removed twice from the diagonal.
                            out[j][4] -= 2.0 * c;
                        } else {
                            out[j][a] += c;
                        }
                    }
                }
            }
            out
        })
        .collect();
    let mut xp = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
    let mut zp = vec![0.0; len];
    let mut diag = vec![0.0; len];
    let mut active = vec![false; len];
    for (cc, col) in rows.iter().enumerate() {
        for (j, v) in col.iter().enumerate() {
            let k = cc * nz + j;
            for a in 0..n {
                xp[a][k] = v[a];
            }
            zp[k] = v[3];
            diag[k] = v[4];
            active[k] = v[5] > 0.0;
        }
    }
    // Couplings into inactive nodes vanish (they only exist at the bottom
    // when a whole aggregate is Dirichlet).
    for cc in 0..ccols {
        let mut c = [0usize; 3];
        let mut rem = cc;
        for a in (0..n).rev() {
            c[a] = rem % cd[a];
            rem /= cd[a];
        }
        let mut st = [0usize; 3];
        let mut acc = 1;
        for a in (0..n).rev() {
            st[a] = acc;
            acc *= cd[a];
        }
        for j in 0..nz {
            let k = cc * nz + j;
            for a in 0..n {
                if c[a] + 1 < cd[a] {
                    let k2 = (cc + st[a]) * nz + j;
                    if !active[k] || !active[k2] {
                        xp[a][k] = 0.0;
                    }
                }
            }
            if j + 1 < nz && (!active[k] || !active[k + 1]) {
                zp[k] = 0.0;
            }
        }
    }
    // Halve horizontal couplings, moving the removed half off the diagonal.
    let mut st = [0usize; 3];
    let mut acc = 1;
    for a in (0..n).rev() {
        st[a] = acc;
        acc *= cd[a];
    }
    for a in 0..n {
        for k in 0..len {
            let c = xp[a][k];
            if c != 0.0 {
                xp[a][k] = 0.5 * c;
                diag[k] -= 0.5 * c;
                let k2 = k + st[a] * nz;
                diag[k2] -= 0.5 * c;
            }
        }
    }
    Explicit {
        n,
        dims: cd,
        nz,
        xp,
        zp,
        diag,
        active,
    }
}

/// A V-cycle preconditioner built on a fine stencil.
pub(crate) struct Multigrid<'a> {
    fine: &'a dyn Stencil,
    coarse: Vec<Explicit>,
    coarsest_sweeps: usize,
}

impl<'a> Multigrid<'a> {
    pub(crate) fn new(fine: &'a dyn Stencil) -> Self {
        let mut coarse: Vec<Explicit> = Vec::new();
        loop {
            let cur: &dyn Stencil = coarse.last().map_or(fine, |c| c as &dyn Stencil);
            let d = cur.dims();
            let n = cur.n();
            if (0..n).any(|a| d[a] % 2 != 0 || d[a] < 4) {
                break;
            }
            let next = coarsen(cur);
            coarse.push(next);
        }
        Multigrid {
            fine,
            coarse,
            coarsest_sweeps: 40,
        }
    }

    fn level(&self, k: usize) -> &dyn Stencil {
        if k == 0 {
            self.fine
        } else {
            &self.coarse[k - 1]
        }
    }

    /// `x = M⁻¹ b` by one symmetric V-cycle from a zero initial guess.
    pub(crate) fn apply(&self, b: &[f64], x: &mut [f64]) {
        self.vcycle(0, b, x);
    }

    fn vcycle(&self, k: usize, b: &[f64], x: &mut [f64]) {
        let st = self.level(k);
        let mut tmp = vec![0.0; b.len()];
        x.iter_mut().for_each(|v| *v = 0.0);
        if k == self.coarse.len() {
            for _ in 0..self.coarsest_sweeps {
                sweep(st, b, x, &mut tmp, [0, 1]);
            }
            for _ in 0..self.coarsest_sweeps {
                sweep(st, b, x, &mut tmp, [1, 0]);
            }
            return;
        }
        sweep(st, b, x, &mut tmp, [0, 1]);
        let mut r = tmp;
        apply(st, x, &mut r);
        r.par_iter_mut()
            .zip(b.par_iter())
            .for_each(|(r, b)| *r = b - *r);
        let coarse = self.level(k + 1);
        let nz = st.nz();
        let n = st.n();
        let fd = st.dims();
        let cd = coarse.dims();
        let ccols = coarse.columns();
        let mut bc = vec![0.0; ccols * nz];
        // Restriction: sum over the children of each aggregate.
        bc.par_chunks_mut(nz).enumerate().for_each(|(cc, out)| {
            let ci = coarse.coords(cc);
            for mask in 0..1usize << n {
                let mut f = 0;
                for a in 0..n {
                    f = f * fd[a] + 2 * ci[a] + ((mask >> (n - 1 - a)) & 1);
                }
                for j in 0..nz {
                    out[j] += r[f * nz + j];
                }
            }
            for j in 0..nz {
                if !coarse.active(cc, j) {
                    out[j] = 0.0;
                }
            }
        });
        let mut xc = vec![0.0; ccols * nz];
        self.vcycle(k + 1, &bc, &mut xc);
        // Prolongation: piecewise constant on active fine nodes.
        x.par_chunks_mut(nz).enumerate().for_each(|(f, xf)| {
            let c = st.coords(f);
            let mut cc = 0;
            for a in 0..n {
                cc = cc * cd[a] + c[a] / 2;
            }
            for j in 0..nz {
                if st.active(f, j) {
                    xf[j] += xc[cc * nz + j];
                }
            }
        });
        let mut tmp = r;
        sweep(st, b, x, &mut tmp, [1, 0]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, pcg};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Anisotropic graded problem on 16×16 columns of 12 nodes, Dirichlet
    /// bottom row, absorbing diagonal term on the walls.
    fn model() -> Explicit {
        let (n, nz) = (2, 12);
        let dims = [16, 16, 1];
        let len = 256 * nz;
        let mut xp = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
        let mut zp = vec![0.0; len];
        let mut diag = vec![0.0; len];
        let mut active = vec![true; len];
        for col in 0..256 {
            let c = [col / 16, col % 16];
            for j in 0..nz {
                let k = col * nz + j;
                active[k] = j > 0;
                let cx = 1.5f64.powi(j as i32);
                let cz = 1.5f64.powi(-(j as i32));
                if j > 0 {
                    if c[0] + 1 < 16 {
                        xp[0][k] = cx;
                    }
                    if c[1] + 1 < 16 {
                        xp[1][k] = cx;
                    }
                    if j + 1 < nz {
                        zp[k] = cz;
                    }
                }
            }
        }
        for col in 0..256 {
            let c = [col / 16, col % 16];
            for j in 1..nz {
                let k = col * nz + j;
                let cx = 1.5f64.powi(j as i32);
                let mut d = 1.5f64.powi(-(j as i32 - 1));
                if j + 1 < nz {
                    d += 1.5f64.powi(-(j as i32));
                } else {
                    d += 0.1;
                }
                for a in 0..2 {
                    d += cx * ((c[a] > 0) as usize + (c[a] + 1 < 16) as usize) as f64;
                    if c[a] == 0 || c[a] == 15 {
                        d += 0.05 * cx;
                    }
                }
                diag[k] = d;
            }
        }
        Explicit {
            n,
            dims,
            nz,
            xp,
            zp,
            diag,
            active,
        }
    }

    #[test]
    fn vcycle_is_symmetric_and_effective() {
        let st = model();
        let mg = Multigrid::new(&st);
        assert_eq!(mg.coarse.len(), 3);
        let len = 256 * st.nz;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mask = |v: &mut Vec<f64>| {
            for (k, x) in v.iter_mut().enumerate() {
                if !st.active[k] {
                    *x = 0.0;
                }
            }
        };
        let mut a: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut b: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        mask(&mut a);
        mask(&mut b);
        let (mut ma, mut mb) = (vec![0.0; len], vec![0.0; len]);
        mg.apply(&a, &mut ma);
        mg.apply(&b, &mut mb);
        let (ab, ba) = (dot(&ma, &b), dot(&a, &mb));
        assert!((ab - ba).abs() <= 1e-10 * ab.abs().max(1.0), "{ab} vs {ba}");
        assert!(dot(&ma, &a) > 0.0);

        let mut x = vec![0.0; len];
        let mut op = |u: &[f64], out: &mut [f64]| apply(&st, u, out);
        let mut pre = |r: &[f64], out: &mut [f64]| mg.apply(r, out);
        let report = pcg(&mut op, &mut pre, &b, &mut x, 1e-10, 200).unwrap();
        assert!(report.iterations <= 25, "{} iterations", report.iterations);
    }
}
