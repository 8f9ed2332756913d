//! Types shared by the capacity solvers.

use crate::error::{domain, Result};
use crate::lattice::{GridFunction, Lattice, Mask};
use serde::{Deserialize, Serialize};

/// Discretisation parameters shared by all solvers.
///
/// The truncation box is `[-R, R]ⁿ` with `2R/h` cells per axis; the
/// extension solver additionally uses a vertical extent `Z` and `M` vertical
/// levels (both chosen automatically when absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub h: f64,
    #[serde(rename = "R")]
    pub half_width: f64,
    #[serde(rename = "Z")]
    pub z_top: Option<f64>,
    pub z_levels: Option<usize>,
    /// Relative residual tolerance of the linear solvers.
    pub tol: f64,
}

impl GridSpec {
    pub fn new(h: f64, half_width: f64) -> Self {
        GridSpec {
            h,
            half_width,
            z_top: None,
            z_levels: None,
            tol: 1e-9,
        }
    }

    /// `R/cells_per_half_width` spacing: `GridSpec::with_cells(R, 32)` is the
    /// `h = R/32` grid.
    pub fn with_cells(half_width: f64, cells_per_half_width: usize) -> Self {
        GridSpec::new(half_width / cells_per_half_width as f64, half_width)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.half_width > 0.0) {
            return domain("grid spacing and truncation radius must be positive");
        }
        if self.h > self.half_width / 8.0 + 1e-12 {
            return domain(format!(
                "grid too coarse: need h ≤ R/8, got h = {}, R = {}",
                self.h, self.half_width
            ));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return domain("solver tolerance must lie in (0, 1)");
        }
        Ok(())
    }

    /// Number of cells per axis (rounded to an even number).
    pub fn cells(&self) -> usize {
        let c = (2.0 * self.half_width / self.h).round() as usize;
        c + c % 2
    }

    /// The truncation box lattice in dimension `n`.
    pub fn lattice(&self, n: usize) -> Lattice {
        Lattice::centered_cube(n, self.half_width, self.cells())
    }
}

/// Capacity value with solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub value: f64,
    /// Energy of the discrete minimiser (equals `value` up to the residual).
    pub energy: f64,
    pub residual: f64,
    pub h: f64,
    #[serde(rename = "R")]
    pub half_width: f64,
    pub iterations: usize,
    pub method: String,
    /// Measure of the rasterised set.
    pub volume: f64,
    /// Coefficient of the far-field monopole used beyond the box.
    pub far_charge: f64,
    /// Extremes of the discrete potential before any clipping.
    pub min_potential: f64,
    pub max_potential: f64,
}

/// A capacity together with its discrete capacitary potential.
#[derive(Debug, Clone)]
pub struct CapacitySolution {
    pub result: CapacityResult,
    pub potential: GridFunction,
    pub mask: Mask,
}
