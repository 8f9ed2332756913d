//! Closed-form constants of the fractional isocapacitary problem.
//!
//! Everything here is a Gamma-function ratio or elementary arithmetic and is
//! therefore exact to about 1e-14 relative.

use crate::error::{domain, Error, Result};
use crate::special::{gamma, unit_ball_volume};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Default value of the level-set parameter γ.
pub const DEFAULT_GAMMA: f64 = 0.1;

fn check_ns(n: usize, s: f64) -> Result<()> {
    if n == 0 {
        return domain("dimension must be at least 1");
    }
    if !(s > 0.0 && s < 1.0) {
        return domain(format!("order s must lie in (0, 1), got {s}"));
    }
    Ok(())
}

fn check_gamma(g: f64) -> Result<()> {
    if !(g > 0.0 && g < 1.0 / 9.0) {
        return domain(format!("γ must lie in (0, 1/9), got {g}"));
    }
    Ok(())
}

/// Normalisation c_{n,s} = π^{−n/2} Γ((n+2s)/2) / Γ(s) of the Poisson
/// kernel `P_z(x) = c_{n,s} z^{2s} / (|x|² + z²)^{(n+2s)/2}` of the
/// extension problem, chosen so that every `P_z` has unit mass.
///
/// ```
/// let c = fracap::constants::poisson_normalization(1, 0.5).unwrap();
/// assert!((c - 1.0 / std::f64::consts::PI).abs() < 1e-15);
/// ```
pub fn poisson_normalization(n: usize, s: f64) -> Result<f64> {
    check_ns(n, s)?;
    Ok(PI.powf(-(n as f64) / 2.0) * gamma((n as f64 + 2.0 * s) / 2.0) / gamma(s))
}

/// α_{n,s} = s(1−s) π^{−n/2} Γ(1−s) Γ((n+2s)/2) / (Γ(s) Γ(2−s)), the factor
/// relating the weighted half-space energy of an extension to the Gagliardo
/// energy of its trace.
pub fn extension_constant(n: usize, s: f64) -> Result<f64> {
    check_ns(n, s)?;
    Ok(s * (1.0 - s)
        * PI.powf(-(n as f64) / 2.0)
        * gamma(1.0 - s)
        * gamma((n as f64 + 2.0 * s) / 2.0)
        / (gamma(s) * gamma(2.0 - s)))
}

/// Common limit π^{−n/2} Γ((n+2)/2) of α_{n,s} and c_{n,s} as s → 1⁻.
pub fn limit_constant(n: usize) -> f64 {
    PI.powf(-(n as f64) / 2.0) * gamma((n as f64 + 2.0) / 2.0)
}

/// Constant of the quantitative isoperimetric inequality,
/// c_n = 2 ω_n^{2/n} (2 − 2^{(n−1)/n})³ / (181² n¹²).
pub fn isoperimetric_constant(n: usize) -> Result<f64> {
    if n < 2 {
        return domain("the quantitative isoperimetric constant needs n ≥ 2");
    }
    let nf = n as f64;
    Ok(
        2.0 * unit_ball_volume(n).powf(2.0 / nf) * (2.0 - 2f64.powf((nf - 1.0) / nf)).powi(3)
            / (181.0 * 181.0 * nf.powi(12)),
    )
}

/// λ = ((n − 2s)/n) γ.
pub fn lambda(n: usize, s: f64, gamma_param: f64) -> f64 {
    (n as f64 - 2.0 * s) / n as f64 * gamma_param
}

/// κ = λ / (4(1 + 2λ)).
pub fn kappa_of(lambda: f64) -> f64 {
    lambda / (4.0 * (1.0 + 2.0 * lambda))
}

/// C_3 = 5 (3ω_n)^{2/n} (1 − 2^{−1/n})³ / (3⁵ · 181² · n¹²).
pub fn c3(n: usize) -> f64 {
    let nf = n as f64;
    5.0 / (243.0 * 181.0 * 181.0) * (3.0 * unit_ball_volume(n)).powf(2.0 / nf) / nf.powi(12)
        * (1.0 - 2f64.powf(-1.0 / nf)).powi(3)
}

/// C_δ = (3 − 2δ)/(3 + 2δ): the factor by which the asymmetry can drop
/// under a perturbation of relative size (δ/3)·A.
pub fn asymmetry_transfer(delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return domain(format!("δ must lie in [0, 1), got {delta}"));
    }
    Ok((3.0 - 2.0 * delta) / (3.0 + 2.0 * delta))
}

/// C_5 = 2^{−3/s} λ.
pub fn c5(n: usize, s: f64, gamma_param: f64) -> f64 {
    2f64.powf(-3.0 / s) * lambda(n, s, gamma_param)
}

/// Which branch of the maximum defines C_{n,s}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ConstantBranch {
    /// 2^{−3/s}: the unconditional branch.
    Unconditional,
    /// The branch involving C_3, C_4 and cap_s(B); depends on the configured C_4.
    Conditional,
}

/// The stability constant and its active branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstant {
    pub value: f64,
    pub unconditional: f64,
    pub conditional: f64,
    pub branch: ConstantBranch,
}

/// C_{n,s} = max{2^{−3/s}, κ^{2/s} C_3 α⁻¹ (C_4/c_{n,s})^{1/s−1} / ((1−s) cap_s(B)^{1/s})}
/// where `B` is the unit-volume ball and `cap_s(B)` is supplied through
/// `one_minus_s_cap_ball = (1−s)·cap_s(B)`. γ enters only through κ.
pub fn stability_constant(
    n: usize,
    s: f64,
    gamma_param: f64,
    c4: f64,
    one_minus_s_cap_ball: Option<f64>,
) -> Result<StabilityConstant> {
    check_ns(n, s)?;
    check_gamma(gamma_param)?;
    if !(c4 > 0.0) {
        return domain("C_4 must be positive");
    }
    let m = one_minus_s_cap_ball.ok_or(Error::BallCapacityRequired)?;
    if !(m > 0.0) {
        return domain("ball capacity must be positive");
    }
    let cap_b = m / (1.0 - s);
    let kappa = kappa_of(lambda(n, s, gamma_param));
    let alpha = extension_constant(n, s)?;
    let c = poisson_normalization(n, s)?;
    let unconditional = 2f64.powf(-3.0 / s);
    let conditional = kappa.powf(2.0 / s) * c3(n) / alpha * (c4 / c).powf(1.0 / s - 1.0)
        / ((1.0 - s) * cap_b.powf(1.0 / s));
    let (value, branch) = if unconditional >= conditional {
        (unconditional, ConstantBranch::Unconditional)
    } else {
        (conditional, ConstantBranch::Conditional)
    };
    Ok(StabilityConstant {
        value,
        unconditional,
        conditional,
        branch,
    })
}

/// C_n = max{1/8, κ₁² C_3 π^{n/2} / Γ((n+2)/2) · 2 / (n(n−2) ω_n²)} with
/// κ₁ = λ₁/(4(1+2λ₁)), λ₁ = (n−2)/(10n): the s → 1⁻ limit of C_{n,s}.
pub fn limit_stability_constant(n: usize) -> Result<f64> {
    if n < 3 {
        return domain("the limit constant needs n ≥ 3");
    }
    let nf = n as f64;
    let lambda1 = (nf - 2.0) / (10.0 * nf);
    let kappa1 = kappa_of(lambda1);
    let w = unit_ball_volume(n);
    let second = kappa1 * kappa1 * c3(n) * PI.powf(nf / 2.0) / gamma((nf + 2.0) / 2.0) * 2.0
        / (nf * (nf - 2.0) * w * w);
    Ok(second.max(0.125))
}

/// Newtonian capacity n(n−2)ω_n of the unit ball, n ≥ 3.
///
/// ```
/// let c = fracap::constants::classical_ball_capacity(3).unwrap();
/// assert!((c - 4.0 * std::f64::consts::PI).abs() < 1e-12);
/// ```
pub fn classical_ball_capacity(n: usize) -> Result<f64> {
    if n < 3 {
        return domain("the Newtonian capacity is defined for n ≥ 3");
    }
    Ok((n * (n - 2)) as f64 * unit_ball_volume(n))
}

/// Exact s-capacity of the ball of radius `r` in ℝⁿ (n > 2s), with the
/// Gagliardo energy normalised without constants:
/// cap_s(B_r) = r^{n−2s} · 2πⁿ Γ(1−s) Γ(n/2) / (s Γ(n/2+s) Γ(n/2+1−s) Γ(n/2−s)).
pub fn fractional_ball_capacity(n: usize, s: f64, r: f64) -> Result<f64> {
    check_ns(n, s)?;
    let nf = n as f64;
    if nf <= 2.0 * s {
        return domain("the s-capacity of points is zero unless n > 2s");
    }
    let h = nf / 2.0;
    Ok(
        r.powf(nf - 2.0 * s) * 2.0 * PI.powf(nf) * gamma(1.0 - s) * gamma(h)
            / (s * gamma(h + s) * gamma(h + 1.0 - s) * gamma(h - s)),
    )
}

/// Coefficient `g` in the far-field law `u(x) ≈ g · cap_s(Ω) · |x|^{2s−n}`
/// of the s-capacitary potential:
/// g = s Γ(n/2+s) Γ(n/2−s) / (2πⁿ Γ(1−s) Γ(s)).
pub fn far_field_coefficient(n: usize, s: f64) -> Result<f64> {
    check_ns(n, s)?;
    let h = n as f64 / 2.0;
    Ok(s * gamma(h + s) * gamma(h - s) / (2.0 * PI.powf(n as f64) * gamma(1.0 - s) * gamma(s)))
}

/// All constants at `(n, s, γ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsTable {
    pub n: usize,
    pub s: f64,
    pub gamma: f64,
    pub omega_n: f64,
    pub c_ns: f64,
    pub alpha_ns: f64,
    pub c_n_iso: Option<f64>,
    pub lambda: f64,
    pub kappa: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c_gamma: f64,
    /// (1−s)·cap_s of the unit-volume ball (closed form).
    pub one_minus_s_cap_unit_volume_ball: Option<f64>,
    pub c_ns_stability: Option<StabilityConstant>,
    pub c_n_limit: Option<f64>,
    pub cap_b_unit_classical: Option<f64>,
}

impl ConstantsTable {
    pub fn new(n: usize, s: f64, gamma_param: f64, c4: f64) -> Result<Self> {
        check_ns(n, s)?;
        check_gamma(gamma_param)?;
        let omega = unit_ball_volume(n);
        let lam = lambda(n, s, gamma_param);
        let unit_volume_radius = omega.powf(-1.0 / n as f64);
        let cap_b = fractional_ball_capacity(n, s, unit_volume_radius).ok();
        let one_minus_s = cap_b.map(|c| (1.0 - s) * c);
        Ok(ConstantsTable {
            n,
            s,
            gamma: gamma_param,
            omega_n: omega,
            c_ns: poisson_normalization(n, s)?,
            alpha_ns: extension_constant(n, s)?,
            c_n_iso: isoperimetric_constant(n).ok(),
            lambda: lam,
            kappa: kappa_of(lam),
            c3: c3(n),
            c4,
            c5: c5(n, s, gamma_param),
            c_gamma: asymmetry_transfer(3.0 * gamma_param)?,
            one_minus_s_cap_unit_volume_ball: one_minus_s,
            c_ns_stability: match one_minus_s {
                Some(m) => Some(stability_constant(n, s, gamma_param, c4, Some(m))?),
                None => None,
            },
            c_n_limit: limit_stability_constant(n).ok(),
            cap_b_unit_classical: classical_ball_capacity(n).ok(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert!((poisson_normalization(2, 0.5).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((extension_constant(1, 0.5).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        let n2 = 2.0 * PI * (2.0 - 2f64.sqrt()).powi(3) / (181.0f64.powi(2) * 2f64.powi(12));
        assert!((isoperimetric_constant(2).unwrap() / n2 - 1.0).abs() < 1e-14);
        assert!(isoperimetric_constant(3).unwrap() < 1e-8);
        assert!(isoperimetric_constant(1).is_err());
    }

    #[test]
    fn kappa_arithmetic() {
        let l = lambda(3, 0.5, 0.1);
        assert!((l - 1.0 / 15.0).abs() < 1e-15);
        assert!((kappa_of(l) - 1.0 / 68.0).abs() < 1e-15);
    }

    #[test]
    fn asymmetry_transfer_range() {
        assert_eq!(asymmetry_transfer(0.0).unwrap(), 1.0);
        for d in [0.1, 0.5, 0.99] {
            let c = asymmetry_transfer(d).unwrap();
            assert!(c > 0.0 && c <= 1.0);
        }
        assert!(asymmetry_transfer(1.0).is_err());
    }

    #[test]
    fn stability_constant_needs_ball_capacity() {
        assert_eq!(
            stability_constant(2, 0.5, 0.1, 1.0, None),
            Err(Error::BallCapacityRequired)
        );
        let c = stability_constant(2, 0.5, 0.1, 1.0, Some(10.0)).unwrap();
        assert_eq!(c.unconditional, 1.0 / 64.0);
        assert_eq!(c.branch, ConstantBranch::Unconditional);
    }

    #[test]
    fn classical_capacities() {
        assert!((classical_ball_capacity(4).unwrap() - 4.0 * PI * PI).abs() < 1e-12);
        assert!(classical_ball_capacity(2).is_err());
    }

    #[test]
    fn ball_capacity_limits() {
        // (1−s)·cap_s(B_1) → (ω_n/2)·cap(B_1) = 8π²/3 in three dimensions.
        let v = (1e-5) * fractional_ball_capacity(3, 1.0 - 1e-5, 1.0).unwrap();
        assert!((v / (8.0 * PI * PI / 3.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn out_of_range_parameters() {
        assert!(poisson_normalization(2, 1.0).is_err());
        assert!(extension_constant(2, 0.0).is_err());
        assert!(ConstantsTable::new(2, 0.5, 0.2, 1.0).is_err());
    }
}
