//! Exact validation targets for the volume estimator.
//!
//! [`ToyBasin`] is a two-parameter loss |xy - 1| whose sublevel set at s is
//! the band between the hyperbolas y = (1 +/- s)/x. Measured from the anchor
//! (b, 1/b), the star-convex region has a closed-form area that is
//! independent of the scale factor b, which makes it a sharp test of both
//! the Monte Carlo estimator and its filter-normalized scale robustness.
//! [`grid_volume`] is an independent brute-force 2D integrator for
//! cross-checking.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::Objective;

/// The two-parameter product loss |x y - 1|.
pub fn toy_loss(x: f64, y: f64) -> f64 {
    (x * y - 1.0).abs()
}

fn check_domain(s: f64, b: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "basin half-width s must be in (0, 1), got {s}"
        )));
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "scale factor b must be positive and finite, got {b}"
        )));
    }
    Ok(())
}

/// Where the rays from the anchor become tangent to the upper boundary
/// y = (1 + s)/x: x_c = b (1 + s) (1 -/+ sqrt(s / (1 + s))).
/// Returns (x_c1, x_c2) with x_c1 < b < x_c2.
pub fn toy_critical_points(s: f64, b: f64) -> Result<(f64, f64)> {
    check_domain(s, b)?;
    let root = (s / (1.0 + s)).sqrt();
    let xc1 = b * (1.0 + s) * (1.0 - root);
    let xc2 = b * (1.0 + s) * (1.0 + root);
    Ok((xc1, xc2))
}

/// Smallest and largest x reachable in the star-convex region:
/// x_i = x_c1 (1 - sqrt(2s / (1 + s))), x_f = x_c2 (1 + sqrt(2s / (1 + s))).
pub fn toy_extent(s: f64, b: f64) -> Result<(f64, f64)> {
    let (xc1, xc2) = toy_critical_points(s, b)?;
    let root = (2.0 * s / (1.0 + s)).sqrt();
    Ok((xc1 * (1.0 - root), xc2 * (1.0 + root)))
}

/// Closed-form area of the star-convex region seen from (b, 1/b); the b
/// dependence cancels, so the scale factor is not a parameter.
pub fn toy_volume_closed_form(s: f64) -> Result<f64> {
    check_domain(s, 0.5)?;
    let r1 = (s / (1.0 + s)).sqrt();
    let r2 = (2.0 * s / (1.0 + s)).sqrt();
    Ok(2.0 * (2.0 * s * (1.0 + s)).sqrt() + 2.0 * s * ((1.0 + r1) / (1.0 - r1)).ln()
        - (1.0 - s) * ((1.0 + r2) / (1.0 - r2)).ln())
}

/// The toy basin as a loss landscape the shared estimator can measure.
///
/// Each of the two parameters is its own filter group, so the filter norms
/// at the anchor are (b, 1/b); that is exactly what makes measured radii
/// independent of b.
#[derive(Debug, Clone, Copy)]
pub struct ToyBasin {
    s: f64,
    b: f64,
}

impl ToyBasin {
    pub fn new(s: f64, b: f64) -> Result<Self> {
        check_domain(s, b)?;
        Ok(ToyBasin { s, b })
    }

    /// The measurement anchor (b, 1/b).
    pub fn anchor(&self) -> Vec<f64> {
        vec![self.b, 1.0 / self.b]
    }

    /// Loss threshold at which this basin's closed form applies.
    pub fn threshold(&self) -> f64 {
        self.s
    }

    pub fn scale(&self) -> f64 {
        self.b
    }
}

impl Objective for ToyBasin {
    fn dim(&self) -> usize {
        2
    }

    fn loss(&self, params: &[f64]) -> f64 {
        toy_loss(params[0], params[1])
    }

    fn filter_norms(&self, anchor: &[f64]) -> Vec<f64> {
        vec![anchor[0].abs(), anchor[1].abs()]
    }

    fn landscape_id(&self) -> String {
        format!("toy-basin(s={},b={})", self.s, self.b)
    }
}

/// Axis-aligned integration bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Bounds {
    pub fn contains(&self, p: (f64, f64)) -> bool {
        self.x.0 <= p.0 && p.0 <= self.x.1 && self.y.0 <= p.1 && p.1 <= self.y.1
    }
}

/// Brute-force 2D area of the sublevel set {loss <= threshold} by counting
/// cell centers on a resolution x resolution grid.
///
/// With `star_convex` set, a cell counts only if the whole segment from the
/// anchor to its center stays inside the sublevel set, sampled at
/// cell-diagonal spacing. The star-convex area can never exceed the plain
/// sublevel-set area.
pub fn grid_volume<F>(
    loss_fn: F,
    threshold: f64,
    bounds: Bounds,
    resolution: usize,
    anchor: (f64, f64),
    star_convex: bool,
) -> Result<f64>
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    if resolution < 10 {
        return Err(Error::InvalidArgument(format!(
            "resolution must be >= 10, got {resolution}"
        )));
    }
    if !bounds.contains(anchor) {
        return Err(Error::InvalidArgument(
            "bounds must contain the anchor".into(),
        ));
    }
    let dx = (bounds.x.1 - bounds.x.0) / resolution as f64;
    let dy = (bounds.y.1 - bounds.y.0) / resolution as f64;
    if !(dx > 0.0 && dy > 0.0) {
        return Err(Error::InvalidArgument("bounds must have positive area".into()));
    }
    let diag = dx.hypot(dy);

    let count: usize = (0..resolution)
        .into_par_iter()
        .map(|i| {
            let x = bounds.x.0 + (i as f64 + 0.5) * dx;
            let mut row_count = 0usize;
            for j in 0..resolution {
                let y = bounds.y.0 + (j as f64 + 0.5) * dy;
                if !(loss_fn(x, y) <= threshold) {
                    continue;
                }
                if star_convex {
                    let (ex, ey) = (x - anchor.0, y - anchor.1);
                    let dist = ex.hypot(ey);
                    let samples = (dist / diag).ceil() as usize;
                    let mut inside = true;
                    for k in 1..samples {
                        let t = k as f64 / samples as f64;
                        let l = loss_fn(anchor.0 + t * ex, anchor.1 + t * ey);
                        if !(l <= threshold) {
                            inside = false;
                            break;
                        }
                    }
                    if !inside {
                        continue;
                    }
                }
                row_count += 1;
            }
            row_count
        })
        .sum();
    Ok(count as f64 * dx * dy)
}

/// Bounds that comfortably cover the star-convex region of a toy basin.
pub fn toy_bounds(s: f64, b: f64) -> Result<Bounds> {
    let (xi, xf) = toy_extent(s, b)?;
    // by the x <-> y symmetry of |xy - 1| about the anchor, the y extent is
    // the x extent of the basin at scale 1/b
    let (yi, yf) = toy_extent(s, 1.0 / b)?;
    Ok(Bounds {
        x: (0.9 * xi, 1.05 * xf),
        y: (0.9 * yi, 1.05 * yf),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_loss_values() {
        assert_eq!(toy_loss(1.0, 1.0), 0.0);
        assert_eq!(toy_loss(2.0, 0.5), 0.0);
        assert!((toy_loss(1.0, 1.2) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn critical_points_match_closed_form() {
        let (x1, x2) = toy_critical_points(0.2, 1.0).unwrap();
        assert!((x1 - 0.7101020514433644).abs() < 1e-12);
        assert!((x2 - 1.6898979485566356).abs() < 1e-12);
        // linear in b
        let (y1, y2) = toy_critical_points(0.2, 3.0).unwrap();
        assert!((y1 - 3.0 * x1).abs() < 1e-12);
        assert!((y2 - 3.0 * x2).abs() < 1e-12);
        // s -> 0 pulls both towards b
        let (z1, z2) = toy_critical_points(1e-9, 1.0).unwrap();
        assert!((z1 - 1.0).abs() < 1e-4);
        assert!((z2 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn extent_matches_closed_form_and_ordering() {
        let (xi, xf) = toy_extent(0.2, 1.0).unwrap();
        assert!((xi - 0.30012444089043247).abs() < 1e-12);
        assert!((xf - 2.6655609840588055).abs() < 1e-12);
        let (x1, x2) = toy_critical_points(0.2, 1.0).unwrap();
        assert!(xi < x1 && x1 < x2 && x2 < xf);
        // proportional to b
        let (xi3, xf3) = toy_extent(0.2, 3.0).unwrap();
        assert!((xi3 - 3.0 * xi).abs() < 1e-12);
        assert!((xf3 - 3.0 * xf).abs() < 1e-12);
    }

    #[test]
    fn closed_form_volume_values() {
        let v = toy_volume_closed_form(0.2).unwrap();
        assert!((v - 0.6788802191114746).abs() < 1e-12);
        // shrinks to zero with s
        assert!(toy_volume_closed_form(1e-6).unwrap() < 1e-3);
        // monotone increasing on (0, 1)
        let mut prev = 0.0;
        for i in 1..100 {
            let s = i as f64 / 100.0;
            let v = toy_volume_closed_form(s).unwrap();
            assert!(v > prev, "not monotone at s = {s}");
            prev = v;
        }
        // domain violations
        assert!(toy_volume_closed_form(0.0).is_err());
        assert!(toy_volume_closed_form(1.0).is_err());
        assert!(toy_critical_points(0.2, 0.0).is_err());
    }

    #[test]
    fn grid_volume_unit_disk() {
        let area = grid_volume(
            |x, y| x * x + y * y,
            1.0,
            Bounds {
                x: (-1.2, 1.2),
                y: (-1.2, 1.2),
            },
            2000,
            (0.0, 0.0),
            false,
        )
        .unwrap();
        let pi = std::f64::consts::PI;
        assert!((area - pi).abs() / pi < 0.005, "area {area}");
    }

    #[test]
    fn grid_volume_empty_and_validation() {
        let bounds = Bounds {
            x: (-1.0, 1.0),
            y: (-1.0, 1.0),
        };
        // threshold 0 on a strictly positive loss
        let area = grid_volume(|x, y| x * x + y * y + 1.0, 0.0, bounds, 100, (0.0, 0.0), false)
            .unwrap();
        assert_eq!(area, 0.0);
        assert!(grid_volume(|_, _| 0.0, 1.0, bounds, 5, (0.0, 0.0), false).is_err());
        assert!(grid_volume(|_, _| 0.0, 1.0, bounds, 100, (5.0, 0.0), false).is_err());
    }

    #[test]
    fn star_convex_grid_at_most_plain() {
        let s = 0.2;
        let bounds = toy_bounds(s, 1.0).unwrap();
        let plain = grid_volume(toy_loss, s, bounds, 400, (1.0, 1.0), false).unwrap();
        let star = grid_volume(toy_loss, s, bounds, 400, (1.0, 1.0), true).unwrap();
        assert!(star <= plain);
        // and the star region is strictly smaller for this geometry
        assert!(star < plain * 0.95);
    }

    #[test]
    fn star_grid_matches_closed_form_coarsely() {
        // the acceptance suite runs the full-resolution version; keep the
        // unit test cheap
        let s = 0.2;
        let v = toy_volume_closed_form(s).unwrap();
        let star = grid_volume(toy_loss, s, toy_bounds(s, 1.0).unwrap(), 600, (1.0, 1.0), true)
            .unwrap();
        assert!((star - v).abs() / v < 0.02, "star {star} vs closed {v}");
    }
}
