//! Classic joint bilateral upsampling with an isotropic spatial Gaussian.
//! Bilinear upsampling lives in `tensor`.

use crate::error::{Error, Result};
use crate::tensor::{center_hr, downsample_bilinear, PlanarMap, ScaleFactor};

/// Upsamples `lr` to the size of `guidance_hr`.
///
/// Each HR pixel averages the LR pixels in a `(2 * window_radius + 1)^2`
/// square around its nearest LR pixel, weighted by a spatial Gaussian on the
/// distance to the LR pixel centre and a range Gaussian on the difference
/// between the HR guidance and the downsampled guidance.
pub fn jbu_classic(
    lr: &PlanarMap,
    guidance_hr: &PlanarMap,
    sigma_s: f64,
    sigma_r: f64,
    window_radius: usize,
) -> Result<PlanarMap> {
    if !(sigma_s > 0.0 && sigma_s.is_finite() && sigma_r > 0.0 && sigma_r.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigmas must be positive and finite (sigma_s {sigma_s}, sigma_r {sigma_r})"
        )));
    }
    let (lh, lw) = (lr.height(), lr.width());
    let (hh, hw) = (guidance_hr.height(), guidance_hr.width());
    let scale = ScaleFactor::between((lh, lw), (hh, hw))?;
    let s = scale.get();
    let guidance_lr = downsample_bilinear(guidance_hr, scale)?;
    let gc = guidance_hr.channels();
    let c = lr.channels();

    let mut out = vec![0f32; c * hh * hw];
    let mut terms: Vec<(usize, usize, f64)> = Vec::new();
    for py in 0..hh {
        for px in 0..hw {
            let (ay, ax) = (py / s, px / s);
            terms.clear();
            for qy in ay.saturating_sub(window_radius)..=(ay + window_radius).min(lh - 1) {
                for qx in ax.saturating_sub(window_radius)..=(ax + window_radius).min(lw - 1) {
                    let (cy, cx) = center_hr((qy, qx), (lh, lw), scale)?;
                    let dist2 = (py as f64 - cy).powi(2) + (px as f64 - cx).powi(2);
                    let mut range2 = 0.0;
                    for ch in 0..gc {
                        let d = guidance_hr.get(ch, py, px) as f64 - guidance_lr.get(ch, qy, qx) as f64;
                        range2 += d * d;
                    }
                    let logw = -dist2 / (2.0 * sigma_s * sigma_s) - range2 / (2.0 * sigma_r * sigma_r);
                    terms.push((qy, qx, logw));
                }
            }
            let max = terms.iter().map(|t| t.2).fold(f64::NEG_INFINITY, f64::max);
            let norm: f64 = terms.iter().map(|t| (t.2 - max).exp()).sum();
            for ch in 0..c {
                let acc: f64 = terms
                    .iter()
                    .map(|&(qy, qx, lw_)| (lw_ - max).exp() * lr.get(ch, qy, qx) as f64)
                    .sum();
                out[(ch * hh + py) * hw + px] = (acc / norm) as f32;
            }
        }
    }
    PlanarMap::new(c, hh, hw, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::bilinear_upsample;
    use proptest::prelude::*;

    fn nearest(lr: &PlanarMap, s: usize) -> PlanarMap {
        PlanarMap::from_fn(lr.channels(), lr.height() * s, lr.width() * s, |c, y, x| lr.get(c, y / s, x / s)).unwrap()
    }

    #[test]
    fn radius_zero_is_nearest_assignment() {
        let lr = PlanarMap::from_fn(2, 3, 4, |c, y, x| (c * 12 + y * 4 + x) as f32).unwrap();
        let g = PlanarMap::from_fn(3, 9, 12, |c, y, x| ((c + y * x) % 5) as f32 / 5.0).unwrap();
        assert_eq!(jbu_classic(&lr, &g, 1.0, 0.1, 0).unwrap(), nearest(&lr, 3));
    }

    #[test]
    fn uniform_guidance_is_spatial_smoothing() {
        let lr = PlanarMap::from_fn(1, 4, 4, |_, y, x| (y * 4 + x) as f32).unwrap();
        let g = PlanarMap::filled(1, 16, 16, 0.3).unwrap();
        let out = jbu_classic(&lr, &g, 3.0, 1e-3, 1).unwrap();
        // spatial-only Gaussian on the same window, evaluated independently
        let (py, px) = (6usize, 9usize);
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for qy in 0..3 {
            for qx in 1..4 {
                let (cy, cx) = ((qy as f64 + 0.5) * 4.0 - 0.5, (qx as f64 + 0.5) * 4.0 - 0.5);
                let w = (-((py as f64 - cy).powi(2) + (px as f64 - cx).powi(2)) / 18.0).exp();
                num += w * (qy * 4 + qx) as f64;
                den += w;
            }
        }
        assert!((out.get(0, py, px) as f64 - num / den).abs() < 1e-5);
    }

    #[test]
    fn tiny_range_sigma_does_not_bleed() {
        // two-tone guidance, edge on an LR boundary
        let g = PlanarMap::from_fn(1, 16, 16, |_, _, x| if x < 8 { 0.1 } else { 0.9 }).unwrap();
        let lr = PlanarMap::from_fn(1, 4, 4, |_, y, x| if x < 2 { 1.0 + y as f32 } else { -5.0 - y as f32 }).unwrap();
        let out = jbu_classic(&lr, &g, 4.0, 1e-3, 2).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let v = out.get(0, y, x);
                if x < 8 {
                    assert!((1.0..=4.0).contains(&v));
                } else {
                    assert!((-8.0..=-5.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let lr = PlanarMap::filled(1, 2, 2, 0.0).unwrap();
        let g = PlanarMap::filled(1, 8, 8, 0.0).unwrap();
        assert!(matches!(jbu_classic(&lr, &g, 0.0, 0.1, 1), Err(Error::InvalidParameter(_))));
        assert!(matches!(jbu_classic(&lr, &g, 1.0, -1.0, 1), Err(Error::InvalidParameter(_))));
        let g = PlanarMap::filled(1, 8, 7, 0.0).unwrap();
        assert!(matches!(jbu_classic(&lr, &g, 1.0, 0.1, 1), Err(Error::NonIntegralRatio { .. })));
        let _ = bilinear_upsample(&lr, ScaleFactor::new(4).unwrap());
    }

    proptest! {
        #[test]
        fn output_is_convex(seed in any::<u64>(), r in 0usize..3) {
            let lr = PlanarMap::from_fn(1, 3, 3, |_, y, x| ((seed >> ((y * 3 + x) % 60)) & 15) as f32).unwrap();
            let g = PlanarMap::from_fn(3, 6, 6, |c, y, x| ((seed >> ((c + y * 6 + x) % 60)) & 7) as f32 / 7.0).unwrap();
            let out = jbu_classic(&lr, &g, 1.5, 0.2, r).unwrap();
            let (lo, hi) = lr.channel_ranges()[0];
            prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-4 && v <= hi + 1e-4));
        }
    }
}
