//! Isocapacitary deficits, the stability inequality and its two-branch
//! structure, and exponent scans.

use crate::capacity::{CapacityResult, GridSpec};
use crate::classical::{classical_on_mask, fractional_capacity, linear_fit, Method};
use crate::constants::{kappa_of, lambda, stability_constant, ConstantBranch, StabilityConstant};
use crate::error::{domain, Error, Result};
use crate::extension::{
    exterior_superlevel_measure, frac_capacity_extension, level_stats, ExtensionField,
};
use crate::geometry::{fraenkel_asymmetry, Shape};
use crate::lattice::Monopole;
use crate::nonlocal::frac_capacity_direct;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

/// Error budget shared by every inequality check; printed in each report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceBudget {
    /// Relative discretisation error of one capacity solve.
    pub capacity: f64,
    /// Additive tolerance on a deficit (two solves: the set and the ball).
    pub deficit: f64,
    /// Additive tolerance on the unconditional branch `d ≥ 2^{−3/s}A^{3/s}`.
    pub unconditional: f64,
    /// Relative tolerance on the test-function chain of the small-gap case.
    pub chain: f64,
}

impl Default for ToleranceBudget {
    fn default() -> Self {
        ToleranceBudget {
            capacity: 0.02,
            deficit: 0.04,
            unconditional: 0.02,
            chain: 0.04,
        }
    }
}

/// Parameters of the reference-ball cache key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct BallKey {
    n: usize,
    s: u64,
    h: u64,
    r: u64,
    z: Option<u64>,
    m: Option<usize>,
    tol: u64,
    method: Method,
}

impl BallKey {
    fn new(n: usize, s: f64, grid: &GridSpec, method: Method) -> Self {
        BallKey {
            n,
            s: s.to_bits(),
            h: grid.h.to_bits(),
            r: grid.half_width.to_bits(),
            z: grid.z_top.map(f64::to_bits),
            m: grid.z_levels,
            tol: grid.tol.to_bits(),
            method,
        }
    }
}

/// Capacities of the reference ball, keyed by dimension, order, grid and
/// solver. Any change of a solver parameter changes the key, so stale
/// entries are never used. Readers share the lock; a miss computes outside
/// the lock and inserts once.
#[derive(Debug, Default)]
pub struct BallCache {
    entries: RwLock<HashMap<BallKey, CapacityResult>>,
}

impl BallCache {
    pub fn new() -> Self {
        BallCache::default()
    }

    /// The process-wide cache.
    pub fn global() -> &'static BallCache {
        static CACHE: OnceLock<BallCache> = OnceLock::new();
        CACHE.get_or_init(BallCache::new)
    }

    /// The reference ball: centred at the origin with radius `R/2`.
    pub fn reference_ball(n: usize, grid: &GridSpec) -> Shape {
        Shape::ball(&vec![0.0; n], grid.half_width / 2.0)
    }

    /// `cap_s` (or the classical capacity, with `s = 1`) of the reference
    /// ball on `grid`.
    pub fn get(&self, n: usize, s: f64, grid: &GridSpec, method: Method) -> Result<CapacityResult> {
        let key = BallKey::new(n, s, grid, method);
        if let Some(hit) = self.entries.read().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let ball = BallCache::reference_ball(n, grid);
        let result = if s == 1.0 {
            classical_on_mask(&ball.rasterize(&grid.lattice(n)), grid.tol)?
        } else {
            fractional_capacity(&ball, s, grid, method)?
        };
        let mut map = self.entries.write().expect("cache lock");
        Ok(map.entry(key).or_insert(result).clone())
    }

    /// Number of cached entries.
    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop every entry.
    pub fn clear(&self) {
        self.entries.write().expect("cache lock").clear();
    }

    /// Snapshot of the cache as a JSON array, for storage beside results.
    pub fn to_json(&self) -> serde_json::Value {
        let map = self.entries.read().expect("cache lock");
        let mut rows: Vec<serde_json::Value> = map
            .iter()
            .map(|(k, v)| {
                serde_json::json!({
                    "n": k.n, "s": f64::from_bits(k.s), "h": f64::from_bits(k.h), "R": f64::from_bits(k.r),
                    "method": k.method, "capacity": v.value, "volume": v.volume,
                })
            })
            .collect();
        rows.sort_by_key(|v| v.to_string());
        serde_json::Value::Array(rows)
    }
}

/// Volume-normalised deficit `|Ω|^{(2s−n)/n} cap(Ω) / (|B|^{(2s−n)/n} cap(B)) − 1`
/// from two capacity results (use `s = 1` for the classical deficit).
pub fn deficit_from(n: usize, s: f64, set: &CapacityResult, ball: &CapacityResult) -> f64 {
    let e = (2.0 * s - n as f64) / n as f64;
    set.volume.powf(e) * set.value / (ball.volume.powf(e) * ball.value) - 1.0
}

/// Capacity of a ball of volume `volume`, scaled from the reference ball.
pub fn equal_volume_ball_capacity(n: usize, s: f64, ball: &CapacityResult, volume: f64) -> f64 {
    ball.value * (volume / ball.volume).powf((n as f64 - 2.0 * s) / n as f64)
}

/// Fractional isocapacitary deficit of a shape, with the reference ball
/// taken from the global cache.
pub fn deficit(shape: &Shape, s: f64, grid: &GridSpec, method: Method) -> Result<f64> {
    let n = shape.dim();
    let set = fractional_capacity(shape, s, grid, method)?;
    let ball = BallCache::global().get(n, s, grid, method)?;
    Ok(deficit_from(n, s, &set, &ball))
}

/// Classical (Newtonian, n = 3) isocapacitary deficit.
pub fn classical_deficit(shape: &Shape, grid: &GridSpec) -> Result<f64> {
    let n = shape.dim();
    let set = crate::classical::classical_capacity(shape, grid)?;
    let ball = BallCache::global().get(n, 1.0, grid, Method::Direct)?;
    Ok(deficit_from(n, 1.0, &set, &ball))
}

/// Which case of the proof a set falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum GapBranch {
    /// `1 − T ≥ κA`.
    LargeGap,
    /// `1 − T < κA`.
    SmallGap,
    /// `A = 0`.
    Rigid,
}

impl GapBranch {
    pub fn as_str(&self) -> &'static str {
        match self {
            GapBranch::LargeGap => "largeGap",
            GapBranch::SmallGap => "smallGap",
            GapBranch::Rigid => "rigid",
        }
    }
}

/// Signed margins of the checks (nonnegative means the check holds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// `d − rhs + tol` (only meaningful when C_4 is trusted).
    pub main: f64,
    /// `d − 2^{−3/s}A^{3/s} + tol`, present when `cap_s(Ω) > 2 cap_s(B)`.
    pub unconditional: Option<f64>,
    /// `cap_s(Ω)/(T² cap_s(B_{|Ω_T|})) − 1 + tol`, present in the small-gap case.
    pub chain: Option<f64>,
    /// `d + tol`: isocapacitary inequality.
    pub deficit: f64,
}

/// Everything the stability check computes for one shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub shape: String,
    pub n: usize,
    pub s: f64,
    pub gamma: f64,
    pub c4: f64,
    pub capacity: f64,
    pub capacity_direct: Option<CapacityResult>,
    pub capacity_extension: Option<CapacityResult>,
    pub ball_capacity_equal_volume: f64,
    pub deficit: f64,
    /// Deficit from the extension solver when both solvers ran.
    pub deficit_extension: Option<f64>,
    pub asymmetry: f64,
    pub constant: StabilityConstant,
    /// `C_{n,s} A^{3/s}`.
    pub rhs: f64,
    /// The conditional branch of `C_{n,s}` is active: `rhs` depends on C_4.
    pub conditional: bool,
    pub c4_trusted: bool,
    pub branch: GapBranch,
    pub threshold: Option<f64>,
    pub kappa: f64,
    /// `|Ω_T|`, when the threshold was computed.
    pub measure_at_threshold: Option<f64>,
    pub cap_ratio: f64,
    pub margins: Margins,
    pub tolerance: ToleranceBudget,
    /// Whether every asserted check holds.
    pub passed: bool,
}

/// `|Ω_T| = |{u_Ω ≥ T}|` of the trace, including the far field.
fn threshold_measure(field: &ExtensionField, t: f64, far: Option<&Monopole>) -> f64 {
    let lat = &field.lattice;
    let inside = field.slice(0).iter().filter(|&&v| v >= t).count() as f64 * lat.cell_volume();
    inside + far.map_or(0.0, |f| exterior_superlevel_measure(lat, f, t, 0.0))
}

/// Solver selection for the stability check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Direct,
    Extension,
    Both,
}

/// Assemble the stability report of `shape`.
///
/// Always asserted: the isocapacitary inequality `d ≥ −tol`; the
/// unconditional branch (if `cap_s(Ω) > 2 cap_s(B)` then
/// `d ≥ 2^{−3/s}A^{3/s} − tol`); in the small-gap case the test-function
/// chain `cap_s(Ω) ≥ T² cap_s(B)|Ω_T|^{(n−2s)/n}`. The full inequality
/// `d ≥ C_{n,s}A^{3/s} − tol` is asserted only when `c4_trusted`.
#[allow(clippy::too_many_arguments)]
pub fn verify_stability(
    name: &str,
    shape: &Shape,
    s: f64,
    grid: &GridSpec,
    gamma_param: f64,
    c4: f64,
    c4_trusted: bool,
    methods: MethodChoice,
) -> Result<StabilityReport> {
    shape.validate()?;
    let n = shape.dim();
    let tol = ToleranceBudget::default();
    let primary = if methods == MethodChoice::Extension {
        Method::Extension
    } else {
        Method::Direct
    };
    let direct_sol = if methods != MethodChoice::Extension {
        Some(frac_capacity_direct(shape, s, grid)?)
    } else {
        None
    };
    let ext_sol = if methods != MethodChoice::Direct {
        Some(frac_capacity_extension(shape, s, grid)?)
    } else {
        None
    };
    let direct = direct_sol.as_ref().map(|x| x.result.clone());
    let extension = ext_sol.as_ref().map(|x| x.result.clone());
    let set = direct
        .clone()
        .or_else(|| extension.clone())
        .expect("one solver ran");
    let ball = BallCache::global().get(n, s, grid, primary)?;
    let d = deficit_from(n, s, &set, &ball);
    let deficit_extension = match (&direct, &extension) {
        (Some(_), Some(e)) => Some(deficit_from(
            n,
            s,
            e,
            &BallCache::global().get(n, s, grid, Method::Extension)?,
        )),
        _ => None,
    };
    let ball_eq = equal_volume_ball_capacity(n, s, &ball, set.volume);
    let cap_ratio = set.value / ball_eq;
    let asymmetry = fraenkel_asymmetry(shape, grid.h)?.value;
    let unit_ball = equal_volume_ball_capacity(n, s, &ball, 1.0);
    let constant = stability_constant(n, s, gamma_param, c4, Some((1.0 - s) * unit_ball))?;
    let rhs = constant.value * asymmetry.powf(3.0 / s);
    let kappa = kappa_of(lambda(n, s, gamma_param));
    let (branch, threshold, measure_t, chain) = if asymmetry == 0.0 {
        (GapBranch::Rigid, None, None, None)
    } else {
        let (field, far) = match (&direct_sol, &ext_sol) {
            (Some(sol), _) => (
                ExtensionField::from_slices(
                    &sol.potential.lattice,
                    s,
                    &[0.0],
                    std::slice::from_ref(&sol.potential.values),
                ),
                sol.potential.exterior,
            ),
            (None, Some(sol)) => (sol.field.clone(), sol.potential().exterior),
            (None, None) => unreachable!("one solver ran"),
        };
        let stats = level_stats(&field, shape, gamma_param, set.value, far.as_ref())?;
        let t = stats.threshold;
        let mu_t = threshold_measure(&field, t, far.as_ref());
        let branch = if 1.0 - t >= kappa * asymmetry {
            GapBranch::LargeGap
        } else {
            GapBranch::SmallGap
        };
        let chain = if branch == GapBranch::SmallGap {
            let bound = t * t * equal_volume_ball_capacity(n, s, &ball, mu_t);
            Some(set.value / bound - 1.0 + tol.chain)
        } else {
            None
        };
        (branch, Some(t), Some(mu_t), chain)
    };
    let unconditional = if cap_ratio > 2.0 {
        Some(d - 2f64.powf(-3.0 / s) * asymmetry.powf(3.0 / s) + tol.unconditional)
    } else {
        None
    };
    let margins = Margins {
        main: d - rhs + tol.deficit,
        unconditional,
        chain,
        deficit: d + tol.deficit,
    };
    let passed = margins.deficit >= 0.0
        && unconditional.is_none_or(|m| m >= 0.0)
        && chain.is_none_or(|m| m >= 0.0)
        && (!c4_trusted || margins.main >= 0.0);
    Ok(StabilityReport {
        shape: name.to_string(),
        n,
        s,
        gamma: gamma_param,
        c4,
        capacity: set.value,
        capacity_direct: direct,
        capacity_extension: extension,
        ball_capacity_equal_volume: ball_eq,
        deficit: d,
        deficit_extension,
        asymmetry,
        constant,
        rhs,
        conditional: constant.branch == ConstantBranch::Conditional,
        c4_trusted,
        branch,
        threshold,
        kappa,
        measure_at_threshold: measure_t,
        cap_ratio,
        margins,
        tolerance: tol,
        passed,
    })
}

/// One row of an exponent scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub shape: String,
    pub asymmetry: f64,
    pub deficit: f64,
    pub rhs: f64,
    pub branch: GapBranch,
    pub margin: f64,
}

/// Result of an exponent scan: the rows and the fitted `d ≈ C A^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
    /// Least-squares slope of `log d` against `log A`.
    pub exponent: Option<f64>,
    pub prefactor: Option<f64>,
    /// Fewer than five usable points.
    pub underdetermined: bool,
    /// Points with `A > 0` and `d > 0` used in the fit.
    pub fitted_points: usize,
    /// Exponents the fit can be compared with: `3/s` (proved) and 2
    /// (conjectured). Reported, never asserted.
    pub proved_exponent: f64,
    pub conjectured_exponent: f64,
}

impl ScanTable {
    /// CSV with columns `shape,A,d,rhs,branch,margin`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("shape,A,d,rhs,branch,margin\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.shape,
                r.asymmetry,
                r.deficit,
                r.rhs,
                r.branch.as_str(),
                r.margin
            ));
        }
        out
    }
}

/// Fit `log d` against `log A` over a family of stability reports.
pub fn fit_exponent(reports: &[StabilityReport]) -> Result<ScanTable> {
    if reports.is_empty() {
        return domain("an exponent scan needs at least one shape");
    }
    let s = reports[0].s;
    let rows: Vec<ScanRow> = reports
        .iter()
        .map(|r| ScanRow {
            shape: r.shape.clone(),
            asymmetry: r.asymmetry,
            deficit: r.deficit,
            rhs: r.rhs,
            branch: r.branch,
            margin: r.margins.main,
        })
        .collect();
    let usable: Vec<&ScanRow> = rows
        .iter()
        .filter(|r| r.asymmetry > 0.0 && r.deficit > 0.0)
        .collect();
    let first = usable.first().map(|r| r.asymmetry);
    if usable.len() < 2 || usable.iter().all(|r| Some(r.asymmetry) == first) {
        return Err(Error::Degenerate(
            "family degenerate: fewer than two distinct positive asymmetries".into(),
        ));
    }
    let x: Vec<f64> = usable.iter().map(|r| r.asymmetry.ln()).collect();
    let y: Vec<f64> = usable.iter().map(|r| r.deficit.ln()).collect();
    let (b, p) = linear_fit(&x, &y).expect("two distinct abscissae");
    Ok(ScanTable {
        underdetermined: usable.len() < 5,
        fitted_points: usable.len(),
        rows,
        exponent: Some(p),
        prefactor: Some(b.exp()),
        proved_exponent: 3.0 / s,
        conjectured_exponent: 2.0,
    })
}

/// Run the stability check over a family and fit the empirical exponent.
pub fn sharpness_scan(
    family: &[(String, Shape)],
    s: f64,
    grid: &GridSpec,
    gamma_param: f64,
    c4: f64,
    methods: MethodChoice,
) -> Result<ScanTable> {
    let reports = family
        .iter()
        .map(|(name, shape)| {
            verify_stability(name, shape, s, grid, gamma_param, c4, false, methods)
        })
        .collect::<Result<Vec<_>>>()?;
    fit_exponent(&reports)
}

/// The far field of a direct-solver potential, for callers that compute
/// superlevel statistics themselves.
pub fn direct_far_field(shape: &Shape, s: f64, grid: &GridSpec) -> Result<Option<Monopole>> {
    Ok(frac_capacity_direct(shape, s, grid)?.potential.exterior)
}
