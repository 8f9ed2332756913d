//! Uniform cell lattices, boolean masks and grid functions.

use serde::{Deserialize, Serialize};

/// A uniform axis-aligned lattice of `dims[0] × … × dims[n-1]` cubic cells of
/// side `h`, whose lowest corner sits at `origin`. Cell `i` has centre
/// `origin + (i + ½) h`. Flat indices are row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub n: usize,
    pub origin: Vec<f64>,
    pub h: f64,
    pub dims: Vec<usize>,
}

impl Lattice {
    pub fn new(origin: Vec<f64>, h: f64, dims: Vec<usize>) -> Self {
        assert_eq!(origin.len(), dims.len());
        assert!(
            (1..=3).contains(&dims.len()),
            "lattices have dimension 1, 2 or 3"
        );
        assert!(h > 0.0);
        Lattice {
            n: dims.len(),
            origin,
            h,
            dims,
        }
    }

    /// The truncation box `[-R, R]^n` split into `cells` cells per axis.
    pub fn centered_cube(n: usize, half_width: f64, cells: usize) -> Self {
        let h = 2.0 * half_width / cells as f64;
        Lattice::new(vec![-half_width; n], h, vec![cells; n])
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.n as i32)
    }

    /// Multi-index of a flat index.
    pub fn coords(&self, flat: usize) -> [usize; 3] {
        let mut c = [0usize; 3];
        let mut rem = flat;
        for a in (0..self.n).rev() {
            c[a] = rem % self.dims[a];
            rem /= self.dims[a];
        }
        c
    }

    pub fn flat(&self, c: &[usize]) -> usize {
        let mut idx = 0;
        for a in 0..self.n {
            idx = idx * self.dims[a] + c[a];
        }
        idx
    }

    /// Centre of a cell given by its flat index.
    pub fn center(&self, flat: usize) -> [f64; 3] {
        let c = self.coords(flat);
        let mut x = [0.0; 3];
        for a in 0..self.n {
            x[a] = self.origin[a] + (c[a] as f64 + 0.5) * self.h;
        }
        x
    }

    /// Index of the cell containing `x`, if any.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut c = [0usize; 3];
        for a in 0..self.n {
            let t = ((x[a] - self.origin[a]) / self.h).floor();
            if t < 0.0 || t >= self.dims[a] as f64 {
                return None;
            }
            c[a] = t as usize;
        }
        Some(self.flat(&c[..self.n]))
    }

    /// Upper corner of the lattice.
    pub fn upper(&self) -> Vec<f64> {
        (0..self.n)
            .map(|a| self.origin[a] + self.dims[a] as f64 * self.h)
            .collect()
    }
}

/// A boolean cell mask on a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub lattice: Lattice,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.lattice.cell_volume()
    }

    /// Centroid of the set cells.
    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        let mut k = 0usize;
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                let x = self.lattice.center(i);
                for a in 0..self.lattice.n {
                    c[a] += x[a];
                }
                k += 1;
            }
        }
        if k > 0 {
            for v in c.iter_mut() {
                *v /= k as f64;
            }
        }
        c
    }

    /// Whether any set cell lies in the outermost `layers` layers.
    pub fn touches_boundary(&self, layers: usize) -> bool {
        self.bits.iter().enumerate().any(|(i, &b)| {
            b && {
                let c = self.lattice.coords(i);
                (0..self.lattice.n).any(|a| c[a] < layers || c[a] + layers >= self.lattice.dims[a])
            }
        })
    }
}

/// A scalar field sampled at the cells of the truncation box `[-R, R]^n`,
/// implicitly continued outside the box by `exterior` (if any).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub lattice: Lattice,
    pub values: Vec<f64>,
    /// Order of the fractional energy the field is associated with.
    pub s: f64,
    /// Monopole continuation `q |x - c|^{2s-n}` outside the box, as used by
    /// the capacity solvers; `None` means the field vanishes outside.
    pub exterior: Option<Monopole>,
}

/// The far field `charge · |x − center|^{exponent}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monopole {
    pub charge: f64,
    pub center: [f64; 3],
    pub exponent: f64,
}

impl Monopole {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(self.center.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.charge * r2.powf(self.exponent / 2.0)
    }
}

impl GridFunction {
    pub fn zeros(lattice: Lattice, s: f64) -> Self {
        let len = lattice.len();
        GridFunction {
            lattice,
            values: vec![0.0; len],
            s,
            exterior: None,
        }
    }

    pub fn from_fn(lattice: Lattice, s: f64, f: impl Fn(&[f64]) -> f64) -> Self {
        let n = lattice.n;
        let values = (0..lattice.len())
            .map(|i| f(&lattice.center(i)[..n]))
            .collect();
        GridFunction {
            lattice,
            values,
            s,
            exterior: None,
        }
    }

    /// Measure of `{x in box : value ≥ t}`.
    pub fn superlevel_measure(&self, t: f64) -> f64 {
        self.values.iter().filter(|&&v| v >= t).count() as f64 * self.lattice.cell_volume()
    }

    /// L² norm over the box.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.lattice.cell_volume()).sqrt()
    }
}
