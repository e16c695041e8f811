//! Exact average of the bilinear interpolant over rectangular cells.
//!
//! Sample `(i, j)` of a channel sits at the point `(x = j, y = i)`. Between
//! samples the channel is bilinearly interpolated; outside the sample hull
//! the nearest border sample is replicated. The interpolant is a sum of
//! separable hat functions, so its integral over any axis-aligned rectangle
//! factors into per-axis hat integrals with closed forms.

use crate::error::{Error, Result};
use crate::features::FeatureStack;
use crate::geometry::BoundingBox;

/// Antiderivative of the unit hat `max(0, 1 - |t|)`, zero at `-inf`.
#[inline]
fn hat_cdf(t: f64) -> f64 {
    if t <= -1.0 {
        0.0
    } else if t <= 0.0 {
        0.5 * (t + 1.0) * (t + 1.0)
    } else if t <= 1.0 {
        1.0 - 0.5 * (1.0 - t) * (1.0 - t)
    } else {
        1.0
    }
}

/// Sparse per-axis integration weights: `weights[m]` belongs to sample
/// `start + m`.
#[derive(Debug, Clone)]
struct AxisWeights {
    start: usize,
    weights: Vec<f64>,
}

/// Weights `∫_{a}^{b} φ_j(x) dx` for the clamped hat basis on `n` samples.
fn axis_weights(a: f64, b: f64, n: usize) -> AxisWeights {
    let last = (n - 1) as f64;
    if n == 1 {
        return AxisWeights {
            start: 0,
            weights: vec![b - a],
        };
    }
    let lo = a.max(0.0).min(last);
    let hi = b.min(last).max(0.0);
    let first = (lo.floor() as usize).saturating_sub(1).min(n - 1);
    let end = ((hi.ceil() as usize) + 1).min(n - 1);
    let mut weights: Vec<f64> = (first..=end)
        .map(|j| {
            let jf = j as f64;
            if hi > lo {
                hat_cdf(hi - jf) - hat_cdf(lo - jf)
            } else {
                0.0
            }
        })
        .collect();
    // In the hull the hats at 0 and n-1 are halves; the clamped extension
    // adds the replicated segments beyond the border.
    if a < 0.0 {
        weights[0] += (b.min(0.0) - a).max(0.0);
    }
    if b > last {
        let k = weights.len() - 1;
        weights[k] += (b - a.max(last)).max(0.0);
    }
    AxisWeights {
        start: first,
        weights,
    }
}

fn check_pool(bbox: &BoundingBox, k: usize, h: usize, w: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "pool size must be at least 1".into(),
        ));
    }
    let outside = bbox.right() <= -0.5
        || bbox.x() >= w as f64 - 0.5
        || bbox.bottom() <= -0.5
        || bbox.y() >= h as f64 - 0.5;
    if outside {
        return Err(Error::BoxOutsideGrid {
            width: w,
            height: h,
        });
    }
    Ok(())
}

/// Per-axis weights of the `k` cells subdividing `bbox`: (columns, rows).
fn cell_weights(
    bbox: &BoundingBox,
    k: usize,
    h: usize,
    w: usize,
) -> (Vec<AxisWeights>, Vec<AxisWeights>) {
    let bw = bbox.width() / k as f64;
    let bh = bbox.height() / k as f64;
    let cols = (0..k)
        .map(|q| axis_weights(bbox.x() + q as f64 * bw, bbox.x() + (q + 1) as f64 * bw, w))
        .collect();
    let rows = (0..k)
        .map(|p| axis_weights(bbox.y() + p as f64 * bh, bbox.y() + (p + 1) as f64 * bh, h))
        .collect();
    (cols, rows)
}

/// Pools each channel of `stack` over a `k`×`k` subdivision of `bbox`
/// (feature-grid coordinates). Output layout is channel-major, row-major
/// within a channel.
pub fn proi_pool(stack: &FeatureStack, bbox: &BoundingBox, k: usize) -> Result<Vec<f64>> {
    let (c, h, w) = stack.dims();
    check_pool(bbox, k, h, w)?;
    let (cols, rows) = cell_weights(bbox, k, h, w);
    let area = bbox.width() * bbox.height() / (k * k) as f64;

    let mut out = Vec::with_capacity(c * k * k);
    for ch in 0..c {
        let plane = stack.channel(ch);
        for ry in &rows {
            for cx in &cols {
                let mut acc = 0.0;
                for (m, wy) in ry.weights.iter().enumerate() {
                    if *wy == 0.0 {
                        continue;
                    }
                    let row = &plane[(ry.start + m) * w..][..w];
                    let s: f64 = cx
                        .weights
                        .iter()
                        .zip(&row[cx.start..])
                        .map(|(wx, v)| wx * v)
                        .sum();
                    acc += wy * s;
                }
                out.push(acc / area);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Clamped bilinear interpolant evaluated pointwise.
    fn interp(stack: &FeatureStack, c: usize, x: f64, y: f64) -> f64 {
        let (_, h, w) = stack.dims();
        let xc = x.clamp(0.0, (w - 1) as f64);
        let yc = y.clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (tx, ty) = (xc - x0 as f64, yc - y0 as f64);
        let top = stack.get(c, y0, x0) * (1.0 - tx) + stack.get(c, y0, x1) * tx;
        let bot = stack.get(c, y1, x0) * (1.0 - tx) + stack.get(c, y1, x1) * tx;
        top * (1.0 - ty) + bot * ty
    }

    /// Midpoint-rule average with `n`×`n` samples per output cell.
    pub(crate) fn supersampled(
        stack: &FeatureStack,
        b: &BoundingBox,
        k: usize,
        n: usize,
    ) -> Vec<f64> {
        let (c, _, _) = stack.dims();
        let (bw, bh) = (b.width() / k as f64, b.height() / k as f64);
        let mut out = Vec::new();
        for ch in 0..c {
            for p in 0..k {
                for q in 0..k {
                    let mut acc = 0.0;
                    for sy in 0..n {
                        for sx in 0..n {
                            let x = b.x() + (q as f64 + (sx as f64 + 0.5) / n as f64) * bw;
                            let y = b.y() + (p as f64 + (sy as f64 + 0.5) / n as f64) * bh;
                            acc += interp(stack, ch, x, y);
                        }
                    }
                    out.push(acc / (n * n) as f64);
                }
            }
        }
        out
    }

    fn random_stack(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureStack {
        FeatureStack::from_vec(
            c,
            h,
            w,
            (0..c * h * w)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_channel_pools_to_constant() {
        let s = FeatureStack::from_vec(1, 6, 7, vec![2.5; 42]).unwrap();
        for b in [
            BoundingBox::new(0.3, 0.7, 4.1, 3.3).unwrap(),
            BoundingBox::new(-2.0, -1.0, 12.0, 9.0).unwrap(),
            BoundingBox::new(5.5, 4.9, 0.2, 0.1).unwrap(),
        ] {
            for k in [1, 3, 5] {
                for v in proi_pool(&s, &b, k).unwrap() {
                    assert!((v - 2.5).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn unit_aligned_box_is_plain_average_of_corners() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_stack(&mut rng, 2, 6, 6);
        let b = BoundingBox::new(2.0, 3.0, 1.0, 1.0).unwrap();
        let got = proi_pool(&s, &b, 1).unwrap();
        for c in 0..2 {
            let plain = (s.get(c, 3, 2) + s.get(c, 3, 3) + s.get(c, 4, 2) + s.get(c, 4, 3)) / 4.0;
            assert!((got[c] - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn integer_aligned_box_is_trapezoid_average() {
        // Exact for a piecewise-bilinear surface: half weight on the box edges.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_stack(&mut rng, 1, 8, 8);
        let (x0, y0, x1, y1) = (1usize, 2usize, 5usize, 4usize);
        let b = BoundingBox::from_corners(x0 as f64, y0 as f64, x1 as f64, y1 as f64).unwrap();
        let edge = |i: usize, lo: usize, hi: usize| if i == lo || i == hi { 0.5 } else { 1.0 };
        let mut acc = 0.0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                acc += edge(x, x0, x1) * edge(y, y0, y1) * s.get(0, y, x);
            }
        }
        let expected = acc / ((x1 - x0) * (y1 - y0)) as f64;
        assert!((proi_pool(&s, &b, 1).unwrap()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn matches_supersampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let s = random_stack(&mut rng, 2, 9, 11);
            let b = BoundingBox::new(
                rng.random_range(-2.0..8.0),
                rng.random_range(-2.0..6.0),
                rng.random_range(0.5..6.0),
                rng.random_range(0.5..6.0),
            )
            .unwrap();
            let k = [1, 3, 5][rng.random_range(0..3)];
            let got = proi_pool(&s, &b, k).unwrap();
            let want = supersampled(&s, &b, k, 100);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-3, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn box_outside_grid_rejected() {
        let s = FeatureStack::zeros(1, 4, 4);
        assert!(matches!(
            proi_pool(&s, &BoundingBox::new(10.0, 0.0, 2.0, 2.0).unwrap(), 3),
            Err(Error::BoxOutsideGrid { .. })
        ));
        assert!(proi_pool(&s, &BoundingBox::new(-5.0, -5.0, 3.0, 3.0).unwrap(), 1).is_err());
        assert!(proi_pool(&s, &BoundingBox::new(0.0, 0.0, 3.0, 3.0).unwrap(), 0).is_err());
    }

    proptest! {
        #[test]
        fn pooling_is_linear(seed in 0u64..5000, a in -3.0..3.0f64, b in -3.0..3.0f64,
                             x in -0.4..5.0f64, y in -0.4..5.0f64, w in 0.2..4.0f64, h in 0.2..4.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s1 = random_stack(&mut rng, 2, 6, 6);
            let s2 = random_stack(&mut rng, 2, 6, 6);
            let mix: Vec<f64> = s1.data().iter().zip(s2.data()).map(|(u, v)| a * u + b * v).collect();
            let sm = FeatureStack::from_vec(2, 6, 6, mix).unwrap();
            let bb = BoundingBox::new(x, y, w, h).unwrap();
            let (p1, p2, pm) = (proi_pool(&s1, &bb, 3).unwrap(), proi_pool(&s2, &bb, 3).unwrap(), proi_pool(&sm, &bb, 3).unwrap());
            for i in 0..pm.len() {
                prop_assert!((pm[i] - (a * p1[i] + b * p2[i])).abs() < 1e-10);
            }
        }

        #[test]
        fn whole_cell_shift_on_periodic_channel(seed in 0u64..5000, x in 3.0..6.0f64, y in 3.0..6.0f64) {
            // Channel periodic along x with period 1 cell shift: v(j) = base(j mod 4).
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<f64> = (0..4 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let data: Vec<f64> = (0..16 * 16).map(|i| base[(i / 16) * 4 % 64 + (i % 16) % 4]).collect();
            let s = FeatureStack::from_vec(1, 16, 16, data.clone()).unwrap();
            let b0 = BoundingBox::new(x, y, 4.0, 3.0).unwrap();
            let b1 = b0.translated(4.0, 0.0).unwrap();
            // A 4-cell shift equals a whole period: pooled grids coincide.
            let (p0, p1) = (proi_pool(&s, &b0, 4).unwrap(), proi_pool(&s, &b1, 4).unwrap());
            for (u, v) in p0.iter().zip(&p1) {
                prop_assert!((u - v).abs() < 1e-10);
            }
            // A shift by exactly one output cell (1 grid unit here) cyclically shifts
            // the pooled columns on this period-4 channel.
            let b2 = b0.translated(1.0, 0.0).unwrap();
            let p2 = proi_pool(&s, &b2, 4).unwrap();
            for r in 0..4 {
                for c in 0..3 {
                    prop_assert!((p2[r * 4 + c] - p0[r * 4 + c + 1]).abs() < 1e-10);
                }
                prop_assert!((p2[r * 4 + 3] - p0[r * 4]).abs() < 1e-10);
            }
        }
    }
}
