//! Shared test oracles, independent of the library implementations they
//! check.

use pathset::geometry::OrientedBox;
use pathset::scene::Pose2D;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Grid resolution of the rasterization oracle (1 mm).
pub const RASTER_STEP: f64 = 1e-3;

fn point_in_box(px: f64, py: f64, b: &OrientedBox) -> bool {
    let dx = px - b.center.x;
    let dy = py - b.center.y;
    let (s, c) = (b.center.theta.sin(), b.center.theta.cos());
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.abs() <= b.half_length && v.abs() <= b.half_width
}

fn aabb(b: &OrientedBox) -> (f64, f64, f64, f64) {
    let corners = b.corners();
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in corners {
        min.0 = min.0.min(x);
        min.1 = min.1.min(y);
        max.0 = max.0.max(x);
        max.1 = max.1.max(y);
    }
    (min.0, min.1, max.0, max.1)
}

fn grid_hits(a: &OrientedBox, b: &OrientedBox) -> bool {
    let (s, c) = (a.center.theta.sin(), a.center.theta.cos());
    let mut u = -a.half_length;
    while u <= a.half_length {
        let mut v = -a.half_width;
        while v <= a.half_width {
            let px = a.center.x + c * u - s * v;
            let py = a.center.y + s * u + c * v;
            if point_in_box(px, py, b) {
                return true;
            }
            v += RASTER_STEP;
        }
        u += RASTER_STEP;
    }
    false
}

/// Dense-sampling overlap oracle: rasterizes each box at 1 mm and checks
/// whether any cell center of one lies inside the other. Decisive for box
/// pairs whose signed separation magnitude exceeds a couple of grid steps.
pub fn raster_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let (a0, a1, a2, a3) = aabb(a);
    let (b0, b1, b2, b3) = aabb(b);
    if a2 < b0 || b2 < a0 || a3 < b1 || b3 < a1 {
        return false;
    }
    grid_hits(a, b) || grid_hits(b, a)
}

/// Signed separation from face-axis projections: positive is a lower bound
/// on the true distance between disjoint rectangles; negative is the exact
/// penetration depth. Used only to filter out borderline pairs.
pub fn signed_separation(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let axes = |bb: &OrientedBox| {
        let (s, c) = (bb.center.theta.sin(), bb.center.theta.cos());
        [(c, s), (-s, c)]
    };
    let radius = |bb: &OrientedBox, axis: (f64, f64)| {
        let [ax, ay] = axes(bb);
        bb.half_length * (axis.0 * ax.0 + axis.1 * ax.1).abs()
            + bb.half_width * (axis.0 * ay.0 + axis.1 * ay.1).abs()
    };
    let dx = b.center.x - a.center.x;
    let dy = b.center.y - a.center.y;
    let [a0, a1] = axes(a);
    let [b0, b1] = axes(b);
    let mut sep = f64::NEG_INFINITY;
    for axis in [a0, a1, b0, b1] {
        let dist = (dx * axis.0 + dy * axis.1).abs();
        sep = sep.max(dist - radius(a, axis) - radius(b, axis));
    }
    sep
}

/// Random near-contact box pairs whose |signed separation| exceeds
/// `clearance`; deterministic under the seed.
pub fn random_box_pairs(count: usize, clearance: f64, seed: u64) -> Vec<(OrientedBox, OrientedBox)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let a = OrientedBox::new(
            Pose2D::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-3.2..3.2),
            ),
            rng.gen_range(0.3..1.5),
            rng.gen_range(0.2..1.0),
        );
        // place the second box near contact range
        let angle = rng.gen_range(0.0..core::f64::consts::TAU);
        let reach = rng.gen_range(0.0..3.0);
        let b = OrientedBox::new(
            Pose2D::new(
                a.center.x + reach * angle.cos(),
                a.center.y + reach * angle.sin(),
                rng.gen_range(-3.2..3.2),
            ),
            rng.gen_range(0.3..1.5),
            rng.gen_range(0.2..1.0),
        );
        if signed_separation(&a, &b).abs() > clearance {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Finite-difference tolerance check: relative 1e-3 with a 1e-5 floor.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let tol = 1e-5 + 1e-3 * analytic.abs().max(numeric.abs());
    (analytic - numeric).abs() <= tol
}
