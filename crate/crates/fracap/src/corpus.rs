//! A reference corpus of planar shapes used by the stability checks: balls,
//! boxes, dumbbells and perturbed balls, all inside `[−2, 2]²`.

use crate::geometry::Shape;

/// Two equal disjoint balls of radius `r` centred at `(±a, 0)`.
pub fn dumbbell(r: f64, a: f64) -> Shape {
    Shape::union(vec![Shape::ball(&[-a, 0.0], r), Shape::ball(&[a, 0.0], r)])
}

/// Two balls of radius `r` at `(±a, 0)` joined by a bar of half-thickness
/// `neck`.
pub fn necked_dumbbell(r: f64, a: f64, neck: f64) -> Shape {
    Shape::union(vec![
        Shape::ball(&[-a, 0.0], r),
        Shape::ball(&[a, 0.0], r),
        Shape::cuboid(&[-a, -neck], &[a, neck]),
    ])
}

/// Nine balls of radius `r` on the 3×3 lattice of spacing `spacing`. Spread
/// enough that its s-capacity (s = ½) exceeds twice that of the ball of
/// equal volume.
pub fn cluster(r: f64, spacing: f64) -> Shape {
    let mut parts = Vec::with_capacity(9);
    for i in -1..=1 {
        for j in -1..=1 {
            parts.push(Shape::ball(&[i as f64 * spacing, j as f64 * spacing], r));
        }
    }
    Shape::union(parts)
}

/// The unit disc with `bumps` discs of radius `rho` centred on its boundary,
/// evenly spaced starting at angle 0.
pub fn perturbed_ball(bumps: usize, rho: f64) -> Shape {
    let mut parts = vec![Shape::ball(&[0.0, 0.0], 1.0)];
    for k in 0..bumps {
        let th = 2.0 * std::f64::consts::PI * k as f64 / bumps as f64;
        parts.push(Shape::ball(&[th.cos(), th.sin()], rho));
    }
    Shape::union(parts)
}

/// Ten named planar shapes: two balls, three boxes, three dumbbell-like
/// sets (two dumbbells and a nine-ball cluster) and two perturbed balls.
/// Suitable for the grid `R = 4`.
pub fn planar_corpus() -> Vec<(String, Shape)> {
    let named = |name: &str, shape: Shape| (name.to_string(), shape);
    vec![
        named("ball", Shape::ball(&[0.0, 0.0], 1.0)),
        named("ball-offset", Shape::ball(&[0.3, -0.2], 0.7)),
        named("square", Shape::cuboid(&[-1.0, -1.0], &[1.0, 1.0])),
        named("rectangle", Shape::cuboid(&[-1.5, -0.5], &[1.5, 0.5])),
        named("needle", Shape::cuboid(&[-1.8, -0.1], &[1.8, 0.1])),
        named("dumbbell", dumbbell(0.5, 1.5)),
        named("dumbbell-neck", necked_dumbbell(0.6, 1.2, 0.15)),
        named("cluster", cluster(0.15, 1.6)),
        named("perturbed-1", perturbed_ball(1, 0.25)),
        named("perturbed-4", perturbed_ball(4, 0.15)),
    ]
}
