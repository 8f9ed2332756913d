// Frozen reference values keep every digit they were computed with.
#![allow(clippy::excessive_precision)]

use fracap::constants::*;
use fracap::special::{gamma, unit_ball_volume};
use proptest::prelude::*;
use std::f64::consts::PI;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn poisson_normalization_closed_forms() {
    assert!(rel(poisson_normalization(1, 0.5).unwrap(), 1.0 / PI) < 1e-14);
    assert!(rel(poisson_normalization(2, 0.5).unwrap(), 1.0 / (2.0 * PI)) < 1e-14);
}

/// `1 / ∫(1+|x|²)^{−(n+2s)/2} dx`, evaluated by 30-digit adaptive radial
/// quadrature (independent of any Gamma function) and frozen here.
const QUADRATURE_ORACLE: [(usize, f64, f64); 9] = [
    (1, 0.25, 0.1906899408754533),
    (1, 0.5, std::f64::consts::FRAC_1_PI),
    (1, 0.75, 0.41731342083703659),
    (2, 0.25, 0.079577471545947669),
    (2, 0.5, 0.15915494309189534),
    (2, 0.75, 0.238732414637843),
    (3, 0.25, 0.045523870032344484),
    (3, 0.5, 0.10132118364233777),
    (3, 0.75, 0.16604373436200682),
];

#[test]
fn poisson_normalization_matches_quadrature_grid() {
    for (n, s, oracle) in QUADRATURE_ORACLE {
        let c = poisson_normalization(n, s).unwrap();
        assert!(rel(c, oracle) < 1e-6, "n={n} s={s}: {c} vs {oracle}");
    }
}

#[test]
fn extension_constant_values() {
    assert!(rel(extension_constant(1, 0.5).unwrap(), 1.0 / (2.0 * PI)) < 1e-14);
    // 30-digit Gamma evaluation of the same formula.
    assert!(rel(extension_constant(2, 0.6).unwrap(), 0.11459155902616464175) < 1e-10);
}

#[test]
fn constants_approach_their_limit_as_s_tends_to_one() {
    let s = 1.0 - 1e-4;
    for n in 1..=3 {
        let limit = PI.powf(-(n as f64) / 2.0) * gamma((n as f64 + 2.0) / 2.0);
        assert!(
            rel(extension_constant(n, s).unwrap(), limit) < 1e-3,
            "alpha, n={n}"
        );
        assert!(
            rel(poisson_normalization(n, s).unwrap(), limit) < 1e-3,
            "c, n={n}"
        );
    }
    let limit3 = PI.powf(-1.5) * gamma(2.5);
    assert!(rel(limit3, 3.0 / (4.0 * PI)) < 1e-14);
}

#[test]
fn out_of_range_orders_are_rejected() {
    assert!(poisson_normalization(2, 0.0).is_err());
    assert!(poisson_normalization(2, 1.0).is_err());
    assert!(extension_constant(0, 0.5).is_err());
    assert!(isoperimetric_constant(1).is_err());
    assert!(classical_ball_capacity(2).is_err());
}

#[test]
fn isoperimetric_constant_values() {
    let c2 = isoperimetric_constant(2).unwrap();
    let expected = 2.0 * PI * (2.0 - 2f64.sqrt()).powi(3) / (181.0f64.powi(2) * 2f64.powi(12));
    assert!(rel(c2, expected) < 1e-14);
    let c3 = isoperimetric_constant(3).unwrap();
    assert!(c3 > 0.0 && c3 < 1e-8);
    let values: Vec<f64> = (2..=6)
        .map(|n| isoperimetric_constant(n).unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
}

#[test]
fn lambda_and_kappa() {
    let l = lambda(3, 0.5, 0.1);
    assert!(rel(l, 1.0 / 15.0) < 1e-14);
    assert!(rel(kappa_of(l), 1.0 / 68.0) < 1e-14);
}

#[test]
fn stability_constant_first_branch_at_one_half() {
    let cap = fractional_ball_capacity(2, 0.5, unit_ball_volume(2).powf(-0.5)).unwrap();
    let c = stability_constant(2, 0.5, 0.1, 1.0, Some(0.5 * cap)).unwrap();
    assert_eq!(c.unconditional, 1.0 / 64.0);
    assert_eq!(c.branch, ConstantBranch::Unconditional);
    assert_eq!(c.value, 1.0 / 64.0);
    assert!(matches!(
        stability_constant(2, 0.5, 0.1, 1.0, None),
        Err(fracap::Error::BallCapacityRequired)
    ));
}

#[test]
fn limit_stability_constant_in_three_dimensions() {
    let lambda1: f64 = 1.0 / 30.0;
    let kappa1 = lambda1 / (4.0 * (1.0 + 2.0 * lambda1));
    let w = unit_ball_volume(3);
    let second = kappa1 * kappa1 * c3(3) * PI.powf(1.5) / gamma(2.5) * 2.0 / (3.0 * w * w);
    assert!(rel(limit_stability_constant(3).unwrap(), second.max(0.125)) < 1e-14);
    assert!(limit_stability_constant(2).is_err());
}

#[test]
fn classical_ball_capacities() {
    assert!(rel(classical_ball_capacity(3).unwrap(), 4.0 * PI) < 1e-14);
    assert!(rel(classical_ball_capacity(4).unwrap(), 4.0 * PI * PI) < 1e-14);
}

#[test]
fn asymmetry_transfer_range() {
    assert_eq!(asymmetry_transfer(0.0).unwrap(), 1.0);
    for d in [0.1, 0.3, 0.6, 0.9, 0.99] {
        let c = asymmetry_transfer(d).unwrap();
        assert!(c > 0.0 && c <= 1.0);
        assert!(rel(c, (3.0 - 2.0 * d) / (3.0 + 2.0 * d)) < 1e-15);
    }
}

#[test]
fn c5_is_the_scaled_lambda() {
    let (n, s, g) = (3, 0.6, 0.1);
    assert!(rel(c5(n, s, g), 2f64.powf(-3.0 / s) * lambda(n, s, g)) < 1e-15);
}

#[test]
fn stability_constant_is_continuous_in_s() {
    for n in 2..=3 {
        let at = |s: f64| {
            let r = unit_ball_volume(n).powf(-1.0 / n as f64);
            let cap = fractional_ball_capacity(n, s, r).unwrap();
            stability_constant(n, s, 0.1, 1.0, Some((1.0 - s) * cap)).unwrap()
        };
        let mut prev = at(0.3);
        let mut s = 0.3;
        while s < 0.95 {
            s += 1e-3;
            let cur = at(s);
            if cur.branch == prev.branch {
                assert!(rel(cur.value, prev.value) < 0.1, "jump at n={n}, s={s}");
            }
            prev = cur;
        }
    }
}

#[test]
fn fractional_ball_capacity_scales() {
    let a = fractional_ball_capacity(3, 0.7, 1.0).unwrap();
    let b = fractional_ball_capacity(3, 0.7, 2.0).unwrap();
    assert!(rel(b, 2f64.powf(3.0 - 1.4) * a) < 1e-13);
    assert!(fractional_ball_capacity(1, 0.5, 1.0).is_err());
}

#[test]
fn table_serialises_every_entry() {
    let t = ConstantsTable::new(3, 0.5, 0.1, 1.0).unwrap();
    let v = serde_json::to_value(&t).unwrap();
    for key in [
        "omega_n",
        "c_ns",
        "alpha_ns",
        "c_n_iso",
        "lambda",
        "kappa",
        "c3",
        "c4",
        "c_ns_stability",
        "c_n_limit",
    ] {
        assert!(v.get(key).is_some_and(|x| !x.is_null()), "{key}");
    }
    assert!(rel(t.cap_b_unit_classical.unwrap(), 4.0 * PI) < 1e-14);
}

proptest! {
    #[test]
    fn table_entries_are_positive(n in 1usize..=3, s in 0.02f64..0.98, g in 0.001f64..0.111) {
        prop_assume!(n as f64 > 2.0 * s);
        let t = ConstantsTable::new(n, s, g, 1.0).unwrap();
        let mut all = vec![t.omega_n, t.c_ns, t.alpha_ns, t.lambda, t.kappa, t.c3, t.c4, t.c5, t.c_gamma];
        all.extend(t.c_n_iso);
        all.extend(t.c_ns_stability.map(|c| c.value));
        all.extend(t.c_n_limit);
        all.extend(t.cap_b_unit_classical);
        prop_assert!(all.iter().all(|&v| v > 0.0 && v.is_finite()));
        prop_assert!(rel(t.lambda, (n as f64 - 2.0 * s) / n as f64 * g) < 1e-14);
        prop_assert!(rel(t.kappa, t.lambda / (4.0 * (1.0 + 2.0 * t.lambda))) < 1e-14);
    }

    #[test]
    fn constants_stay_bounded_near_one(n in 1usize..=3, eps in 1e-6f64..0.05) {
        let s = 1.0 - eps;
        let limit = PI.powf(-(n as f64) / 2.0) * gamma((n as f64 + 2.0) / 2.0);
        let a = extension_constant(n, s).unwrap();
        let c = poisson_normalization(n, s).unwrap();
        prop_assert!(a > 0.5 * limit && a < 2.0 * limit);
        prop_assert!(c > 0.5 * limit && c < 2.0 * limit);
    }

    #[test]
    fn asymmetry_transfer_is_decreasing(a in 0.0f64..0.99, b in 0.0f64..0.99) {
        prop_assume!(a < b);
        prop_assert!(asymmetry_transfer(a).unwrap() > asymmetry_transfer(b).unwrap());
    }
}
