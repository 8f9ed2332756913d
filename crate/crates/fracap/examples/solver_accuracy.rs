//! Compare both fractional solvers with the closed-form capacity of a ball.
//!
//! Usage: `cargo run --release --example solver_accuracy -- <n> <s> <cells> [direct|extension|both] [R]`

use fracap::constants::fractional_ball_capacity;
use fracap::extension::frac_capacity_extension;
use fracap::nonlocal::frac_capacity_direct;
use fracap::special::unit_ball_volume;
use fracap::{GridSpec, Shape};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map_or(2, |a| a.parse().expect("n"));
    let s: f64 = args.get(2).map_or(0.5, |a| a.parse().expect("s"));
    let cells: usize = args.get(3).map_or(32, |a| a.parse().expect("cells"));
    let which = args.get(4).map_or("both", |a| a.as_str());
    let r: f64 = args.get(5).map_or(2.0, |a| a.parse().expect("R"));
    let grid = GridSpec::with_cells(r, cells);
    let ball = Shape::ball(&vec![0.0; n], 1.0);
    if which != "extension" {
        let t = Instant::now();
        let sol = frac_capacity_direct(&ball, s, &grid).expect("direct solve");
        let req = (sol.result.volume / unit_ball_volume(n)).powf(1.0 / n as f64);
        let exact = fractional_ball_capacity(n, s, req).expect("closed form");
        println!(
            "direct    n={n} s={s} h=R/{cells}: cap={:.6} exact={:.6} rel={:+.4}% its={} min={:.2e} max={:.6} {:.1}s",
            sol.result.value,
            exact,
            100.0 * (sol.result.value / exact - 1.0),
            sol.result.iterations,
            sol.result.min_potential,
            sol.result.max_potential,
            t.elapsed().as_secs_f64()
        );
    }
    if which != "direct" {
        let t = Instant::now();
        let sol = frac_capacity_extension(&ball, s, &grid).expect("extension solve");
        let req = (sol.result.volume / unit_ball_volume(n)).powf(1.0 / n as f64);
        let exact = fractional_ball_capacity(n, s, req).expect("closed form");
        println!(
            "extension n={n} s={s} h=R/{cells}: cap={:.6} exact={:.6} rel={:+.4}% its={} nz={} {:.1}s",
            sol.result.value,
            exact,
            100.0 * (sol.result.value / exact - 1.0),
            sol.result.iterations,
            sol.field.nz(),
            t.elapsed().as_secs_f64()
        );
    }
}
