//! Shared forward evaluation of stencils. Renderer, loss and gradients all go
//! through `Prepared::stencil_into` so they see identical weights.

use crate::error::{Error, Result};
use crate::field::{radius_for, KernelField, RenderConfig};
use crate::tensor::{center_coord, nearest_lr, PlanarMap};

/// Per-LR-pixel quantities derived from the field once per pass.
pub(crate) struct KernelCache {
    pub(crate) inv_sx2: Vec<f64>,
    pub(crate) inv_sy2: Vec<f64>,
    pub(crate) cos: Vec<f64>,
    pub(crate) sin: Vec<f64>,
    pub(crate) inv_sr2: Vec<f64>,
    pub(crate) radius: Vec<usize>,
}

impl KernelCache {
    /// `frozen_radius` pins the neighborhood, e.g. while probing with finite differences.
    pub(crate) fn new(field: &KernelField, config: &RenderConfig, frozen_radius: Option<&[usize]>) -> Self {
        let s = field.scale().get();
        let n = field.len();
        let mut cache = KernelCache {
            inv_sx2: Vec::with_capacity(n),
            inv_sy2: Vec::with_capacity(n),
            cos: Vec::with_capacity(n),
            sin: Vec::with_capacity(n),
            inv_sr2: Vec::with_capacity(n),
            radius: Vec::with_capacity(n),
        };
        for i in 0..n {
            let (lx, ly) = (field.log_sigma_x[i], field.log_sigma_y[i]);
            cache.inv_sx2.push((-2.0 * lx).exp());
            cache.inv_sy2.push((-2.0 * ly).exp());
            let (sn, cs) = field.theta[i].sin_cos();
            cache.cos.push(cs);
            cache.sin.push(sn);
            cache.inv_sr2.push((-2.0 * field.log_sigma_r[i]).exp());
            cache.radius.push(match frozen_radius {
                Some(r) => r[i],
                None => radius_for(lx.max(ly).exp(), s, config),
            });
        }
        cache
    }
}

/// One contributing LR pixel with the intermediates the backward pass needs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contributor {
    /// Flat LR index.
    pub(crate) q: usize,
    /// Normalised weight.
    pub(crate) w: f64,
    /// Displacement rotated into the kernel frame.
    pub(crate) u1: f64,
    pub(crate) u2: f64,
    /// Squared guidance distance.
    pub(crate) d2: f64,
}

/// Guidance pair in pixel-interleaved `f64` layout.
pub(crate) struct Prepared {
    pub(crate) lr_h: usize,
    pub(crate) lr_w: usize,
    pub(crate) s: usize,
    pub(crate) gc: usize,
    pub(crate) eps: f64,
    g_lr: Vec<f64>,
    g_hr: Vec<f64>,
}

pub(crate) fn interleave(map: &PlanarMap) -> Vec<f64> {
    let (c, h, w) = map.dims();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for (i, &v) in map.plane(ch).iter().enumerate() {
            out[i * c + ch] = v as f64;
        }
    }
    out
}

impl Prepared {
    pub(crate) fn new(
        field: &KernelField,
        guidance_lr: &PlanarMap,
        guidance_hr: &PlanarMap,
        config: &RenderConfig,
    ) -> Result<Self> {
        config.validate()?;
        let (lh, lw) = field.lr_dims();
        if (guidance_lr.height(), guidance_lr.width()) != (lh, lw) {
            return Err(Error::DimensionMismatch {
                what: "kernel field and LR guidance",
                left: (1, lh, lw),
                right: guidance_lr.dims(),
            });
        }
        field.check_hr(guidance_hr)?;
        if guidance_lr.channels() != guidance_hr.channels() {
            return Err(Error::DimensionMismatch {
                what: "LR and HR guidance channels",
                left: guidance_lr.dims(),
                right: guidance_hr.dims(),
            });
        }
        Ok(Self {
            lr_h: lh,
            lr_w: lw,
            s: field.scale().get(),
            gc: guidance_hr.channels(),
            eps: config.eps_denominator,
            g_lr: interleave(guidance_lr),
            g_hr: interleave(guidance_hr),
        })
    }

    pub(crate) fn hr_w(&self) -> usize {
        self.lr_w * self.s
    }

    pub(crate) fn hr_h(&self) -> usize {
        self.lr_h * self.s
    }

    /// Fills `out` with the normalised stencil of HR pixel `(py, px)`, in
    /// row-major window order, and returns the flat index of the anchor.
    pub(crate) fn stencil_into(&self, cache: &KernelCache, py: usize, px: usize, out: &mut Vec<Contributor>) -> usize {
        out.clear();
        let (ay, ax) = (nearest_lr(py, self.s), nearest_lr(px, self.s));
        let anchor = ay * self.lr_w + ax;
        let r = cache.radius[anchor];
        let gc = self.gc;
        let hr_off = (py * self.hr_w() + px) * gc;
        let gp = &self.g_hr[hr_off..hr_off + gc];
        let (pyf, pxf) = (py as f64, px as f64);

        let mut max = f64::NEG_INFINITY;
        for qy in ay.saturating_sub(r)..=(ay + r).min(self.lr_h - 1) {
            let dy = pyf - center_coord(qy, self.s);
            for qx in ax.saturating_sub(r)..=(ax + r).min(self.lr_w - 1) {
                let q = qy * self.lr_w + qx;
                let dx = pxf - center_coord(qx, self.s);
                let (cs, sn) = (cache.cos[q], cache.sin[q]);
                let u1 = cs * dx + sn * dy;
                let u2 = -sn * dx + cs * dy;
                let gq = &self.g_lr[q * gc..(q + 1) * gc];
                let d2: f64 = gp.iter().zip(gq).map(|(a, b)| (a - b) * (a - b)).sum();
                let logw = -0.5 * (u1 * u1 * cache.inv_sx2[q] + u2 * u2 * cache.inv_sy2[q] + d2 * cache.inv_sr2[q]);
                if logw > max {
                    max = logw;
                }
                // log-weight parked in `w` until normalisation
                out.push(Contributor { q, w: logw, u1, u2, d2 });
            }
        }

        if !max.is_finite() {
            for c in out.iter_mut() {
                c.w = if c.q == anchor { 1.0 } else { 0.0 };
            }
            return anchor;
        }
        let mut z = 0.0;
        for c in out.iter_mut() {
            c.w = (c.w - max).exp();
            z += c.w;
        }
        let inv = 1.0 / z.max(self.eps);
        for c in out.iter_mut() {
            c.w *= inv;
        }
        anchor
    }

    /// `F(anchor) + sum_q w_q (F(q) - F(anchor))` for a pixel-interleaved payload.
    ///
    /// Equal to `sum_q w_q F(q)` when the weights sum to one, and exact for
    /// constant payloads even when they sum to `1 +- ulp`.
    #[inline]
    pub(crate) fn mix(stencil: &[Contributor], anchor: usize, payload: &[f64], channels: usize, out: &mut [f64]) {
        let base = &payload[anchor * channels..(anchor + 1) * channels];
        out.copy_from_slice(base);
        for c in stencil {
            if c.q == anchor {
                continue;
            }
            let f = &payload[c.q * channels..(c.q + 1) * channels];
            for ((o, v), b) in out.iter_mut().zip(f).zip(base) {
                *o += c.w * (v - b);
            }
        }
    }
}
