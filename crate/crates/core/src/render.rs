//! Splatting an LR map through a kernel field: every HR value is a convex
//! combination of LR values, so nothing is synthesised.

use std::time::{Duration, Instant};

use crate::engine::{interleave, KernelCache, Prepared};
use crate::error::{Error, Result};
use crate::field::{KernelField, RenderConfig};
use crate::par;
use crate::tensor::{downsample_bilinear, PlanarMap};

/// Probability payload tolerance on the per-pixel channel sum.
pub const SIMPLEX_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderStats {
    /// Per-channel `(min, max)` of the output.
    pub channel_ranges: Vec<(f32, f32)>,
    pub duration: Duration,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub map: PlanarMap,
    pub stats: RenderStats,
}

pub fn render(
    lr: &PlanarMap,
    field: &KernelField,
    guidance_hr: &PlanarMap,
    config: &RenderConfig,
) -> Result<RenderOutput> {
    check_payload(lr, field)?;
    field.check_hr(guidance_hr)?;
    let guidance_lr = downsample_bilinear(guidance_hr, field.scale())?;
    render_with(lr, field, &guidance_lr, guidance_hr, config)
}

/// `render` for probability maps. Every LR pixel must lie on the simplex;
/// the output is not renormalised.
pub fn render_probability(
    lr_probs: &PlanarMap,
    field: &KernelField,
    guidance_hr: &PlanarMap,
    config: &RenderConfig,
) -> Result<RenderOutput> {
    check_simplex(lr_probs)?;
    render(lr_probs, field, guidance_hr, config)
}

/// Reconstructs the HR guidance from its own downsampled version.
pub fn reconstruct_guidance(
    field: &KernelField,
    guidance_lr: &PlanarMap,
    guidance_hr: &PlanarMap,
    config: &RenderConfig,
) -> Result<RenderOutput> {
    render_with(guidance_lr, field, guidance_lr, guidance_hr, config)
}

pub fn check_simplex(probs: &PlanarMap) -> Result<()> {
    let (c, h, w) = probs.dims();
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0f64;
            let mut min = f64::INFINITY;
            for ch in 0..c {
                let v = probs.get(ch, y, x) as f64;
                sum += v;
                min = min.min(v);
            }
            if min < 0.0 || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::SimplexViolation { y, x, sum, min });
            }
        }
    }
    Ok(())
}

fn check_payload(lr: &PlanarMap, field: &KernelField) -> Result<()> {
    if (lr.height(), lr.width()) != field.lr_dims() {
        return Err(Error::DimensionMismatch {
            what: "LR payload and kernel field",
            left: lr.dims(),
            right: (4, field.lr_height(), field.lr_width()),
        });
    }
    Ok(())
}

pub(crate) fn render_with(
    lr: &PlanarMap,
    field: &KernelField,
    guidance_lr: &PlanarMap,
    guidance_hr: &PlanarMap,
    config: &RenderConfig,
) -> Result<RenderOutput> {
    let start = Instant::now();
    check_payload(lr, field)?;
    let prepared = Prepared::new(field, guidance_lr, guidance_hr, config)?;
    let cache = KernelCache::new(field, config, None);
    let channels = lr.channels();
    let payload = interleave(lr);
    let (hh, hw) = (prepared.hr_h(), prepared.hr_w());

    // each row is pixel-interleaved: [x * channels + c]
    let rows: Vec<Vec<f32>> = par::map_range(hh, |py| {
        let mut buf = Vec::new();
        let mut acc = vec![0f64; channels];
        let mut row = Vec::with_capacity(hw * channels);
        for px in 0..hw {
            let anchor = prepared.stencil_into(&cache, py, px, &mut buf);
            Prepared::mix(&buf, anchor, &payload, channels, &mut acc);
            row.extend(acc.iter().map(|&a| a as f32));
        }
        row
    });

    let plane = hh * hw;
    let mut data = vec![0f32; channels * plane];
    for (py, row) in rows.iter().enumerate() {
        for px in 0..hw {
            for c in 0..channels {
                data[c * plane + py * hw + px] = row[px * channels + c];
            }
        }
    }
    let map = PlanarMap::from_parts(channels, hh, hw, data);
    let channel_ranges = map.channel_ranges();
    Ok(RenderOutput {
        map,
        stats: RenderStats {
            channel_ranges,
            duration: start.elapsed(),
        },
    })
}
