//! Image and depth error metrics.

use crate::error::{Error, Result};
use crate::tensor::PlanarMap;

/// Ratio threshold for the delta-1 accuracy.
pub const DELTA1_THRESHOLD: f64 = 1.25;

fn same_dims(a: &PlanarMap, b: &PlanarMap) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            what: "metric operands",
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(())
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical inputs.
pub fn psnr(a: &PlanarMap, b: &PlanarMap, peak: f64) -> Result<f64> {
    same_dims(a, b)?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::InvalidParameter(format!("peak must be positive, got {peak}")));
    }
    Ok(psnr_from_mse(mse(a.data(), b.data()), peak))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// `f64::INFINITY` when prediction and reference agree exactly.
    pub psnr_db: f64,
    pub rmse: f64,
    pub delta1: f64,
    pub mae: f64,
}

/// Depth metrics over the valid pixels, with PSNR at peak 1.
pub fn depth_metrics(pred: &PlanarMap, gt: &PlanarMap, valid_mask: Option<&[bool]>) -> Result<MetricReport> {
    depth_metrics_with_peak(pred, gt, valid_mask, 1.0)
}

pub fn depth_metrics_with_peak(
    pred: &PlanarMap,
    gt: &PlanarMap,
    valid_mask: Option<&[bool]>,
    peak: f64,
) -> Result<MetricReport> {
    same_dims(pred, gt)?;
    if pred.channels() != 1 {
        return Err(Error::InvalidParameter(format!(
            "depth metrics need single-channel maps, got {}",
            pred.channels()
        )));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::InvalidParameter(format!("peak must be positive, got {peak}")));
    }
    let n = pred.data().len();
    if let Some(mask) = valid_mask {
        if mask.len() != n {
            return Err(Error::DimensionMismatch {
                what: "valid mask and depth map",
                left: (1, 1, mask.len()),
                right: pred.dims(),
            });
        }
    }
    let (mut count, mut se, mut ae, mut good) = (0usize, 0.0f64, 0.0f64, 0usize);
    for i in 0..n {
        if valid_mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let (p, g) = (pred.data()[i] as f64, gt.data()[i] as f64);
        if g <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "ground truth must be positive on valid pixels (index {i} holds {g})"
            )));
        }
        count += 1;
        se += (p - g).powi(2);
        ae += (p - g).abs();
        if p > 0.0 && (p / g).max(g / p) < DELTA1_THRESHOLD {
            good += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let mse = se / count as f64;
    Ok(MetricReport {
        psnr_db: psnr_from_mse(mse, peak),
        rmse: mse.sqrt(),
        delta1: good as f64 / count as f64,
        mae: ae / count as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(v: Vec<f32>) -> PlanarMap {
        let n = v.len();
        PlanarMap::new(1, 1, n, v).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = map(vec![0.2, 0.4, 0.6, 0.8]);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        // errors of 0.1 everywhere: MSE 0.01
        let b = PlanarMap::new(1, 1, 4, vec![0.0; 4]).unwrap();
        let c = PlanarMap::new(1, 1, 4, vec![0.1; 4]).unwrap();
        assert!((psnr(&b, &c, 1.0).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&a, &map(vec![0.0; 3]), 1.0).is_err());
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn depth_examples() {
        let gt = map(vec![1.0, 2.0, 3.0, 4.0]);
        let r = depth_metrics(&gt, &gt, None).unwrap();
        assert_eq!((r.rmse, r.delta1, r.mae), (0.0, 1.0, 0.0));
        assert_eq!(r.psnr_db, f64::INFINITY);
        let r = depth_metrics(&gt.map_values(|v| 1.3 * v).unwrap(), &gt, None).unwrap();
        assert_eq!(r.delta1, 0.0);

        let pred = map(vec![1.0, 2.0, 100.0, 4.0]);
        let r = depth_metrics(&pred, &gt, Some(&[true, true, false, true])).unwrap();
        assert_eq!(r.rmse, 0.0);
        assert!(matches!(depth_metrics(&pred, &gt, Some(&[false; 4])), Err(Error::EmptyMask)));
        assert!(depth_metrics(&pred, &map(vec![1.0, 0.0, 1.0, 1.0]), None).is_err());
        let two = PlanarMap::filled(2, 1, 2, 1.0).unwrap();
        assert!(depth_metrics(&two, &two, None).is_err());
    }

    proptest! {
        #[test]
        fn psnr_symmetric(a in prop::collection::vec(0.0f32..1.0, 8), b in prop::collection::vec(0.0f32..1.0, 8)) {
            let (a, b) = (map(a), map(b));
            prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        }

        #[test]
        fn psnr_falls_with_noise(base in prop::collection::vec(0.0f32..1.0, 16), amp in 0.01f32..0.4) {
            let a = map(base);
            let noisy = |k: f32| a.map_values(|v| v + k).unwrap();
            prop_assert!(psnr(&a, &noisy(amp), 1.0).unwrap() > psnr(&a, &noisy(amp * 1.5), 1.0).unwrap());
        }

        #[test]
        fn report_invariants(p in prop::collection::vec(0.01f32..10.0, 12), g in prop::collection::vec(0.01f32..10.0, 12)) {
            let r = depth_metrics(&map(p), &map(g), None).unwrap();
            prop_assert!(r.rmse >= r.mae - 1e-12 && r.mae >= 0.0);
            prop_assert!((0.0..=1.0).contains(&r.delta1));
        }

        #[test]
        fn rescaling(p in prop::collection::vec(0.1f32..10.0, 12), g in prop::collection::vec(0.1f32..10.0, 12), k in 2.0f32..4.0) {
            let (pm, gm) = (map(p), map(g));
            let a = depth_metrics(&pm, &gm, None).unwrap();
            let b = depth_metrics(&pm.map_values(|v| v * k).unwrap(), &gm.map_values(|v| v * k).unwrap(), None).unwrap();
            // ratios survive up to f32 rounding of the scaled values
            prop_assert!((a.delta1 - b.delta1).abs() <= 1.0 / 12.0 + 1e-12);
            if a.rmse > 1e-3 {
                prop_assert!((b.rmse - k as f64 * a.rmse).abs() < 1e-3 * b.rmse);
                prop_assert!(b.rmse > a.rmse);
            }
        }
    }
}
