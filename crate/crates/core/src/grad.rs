//! Reconstruction loss and its analytic gradient with respect to every
//! per-pixel kernel parameter.
//!
//! With combined log-weights `l_q = ls_q + lr_q` and `w = softmax(l)`, the
//! output is `r(p) = sum_q w_q F(q)`. For the mean-absolute loss with
//! upstream `g_c = sign(r_c - I_c) / (N C)`:
//!
//! ```text
//! a_q      = sum_c g_c F(q, c)
//! dL/dl_q  = w_q (a_q - sum_q' w_q' a_q')
//! dl/dlog_sigma_x = u1^2 / sigma_x^2       dl/dlog_sigma_y = u2^2 / sigma_y^2
//! dl/dtheta       = -u1 u2 (1/sigma_x^2 - 1/sigma_y^2)
//! dl/dlog_sigma_r = ||I(p) - I_lr(q)||^2 / sigma_r^2
//! ```
//!
//! where `(u1, u2)` is the displacement `p - mu_q` rotated into the kernel
//! frame. The window radius is integer-valued and held fixed.

use crate::engine::{interleave, KernelCache, Prepared};
use crate::error::Result;
use crate::field::{KernelField, RenderConfig};
use crate::par;
use crate::tensor::PlanarMap;

/// Loss gradient, one entry per LR pixel for each parameter plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GradField {
    pub d_log_sigma_x: Vec<f64>,
    pub d_log_sigma_y: Vec<f64>,
    pub d_theta: Vec<f64>,
    pub d_log_sigma_r: Vec<f64>,
}

impl GradField {
    pub(crate) fn zeros(n: usize) -> Self {
        Self {
            d_log_sigma_x: vec![0.0; n],
            d_log_sigma_y: vec![0.0; n],
            d_theta: vec![0.0; n],
            d_log_sigma_r: vec![0.0; n],
        }
    }

    /// Planes in the same order as the field's parameters.
    pub fn planes(&self) -> [&[f64]; 4] {
        [
            &self.d_log_sigma_x,
            &self.d_log_sigma_y,
            &self.d_theta,
            &self.d_log_sigma_r,
        ]
    }

    pub fn max_abs(&self) -> f64 {
        self.planes()
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// Everything needed to evaluate the objective repeatedly on one image pair.
pub(crate) struct Objective {
    prepared: Prepared,
    payload: Vec<f64>,
    target: Vec<f64>,
}

struct RowBand {
    loss: f64,
    first_lr_row: usize,
    grads: [Vec<f64>; 4],
}

impl Objective {
    pub(crate) fn new(
        field: &KernelField,
        guidance_lr: &PlanarMap,
        guidance_hr: &PlanarMap,
        config: &RenderConfig,
    ) -> Result<Self> {
        let prepared = Prepared::new(field, guidance_lr, guidance_hr, config)?;
        Ok(Self {
            prepared,
            payload: interleave(guidance_lr),
            target: interleave(guidance_hr),
        })
    }

    /// Loss and, if requested, gradient. Work is split per anchor LR row and
    /// reduced in row order, so the result is independent of thread count.
    pub(crate) fn evaluate(&self, field: &KernelField, cache: &KernelCache, want_grad: bool) -> (f64, Option<GradField>) {
        let pr = &self.prepared;
        let (s, lw, lh) = (pr.s, pr.lr_w, pr.lr_h);
        let hw = pr.hr_w();
        let c = pr.gc;
        let norm = 1.0 / (pr.hr_h() * hw * c) as f64;

        let bands: Vec<RowBand> = par::map_range(lh, |ay| {
            let band_r = (0..lw).map(|ax| cache.radius[ay * lw + ax]).max().unwrap_or(1);
            let first = ay.saturating_sub(band_r);
            let last = (ay + band_r).min(lh - 1);
            let band_len = if want_grad { (last - first + 1) * lw } else { 0 };
            let mut band = RowBand {
                loss: 0.0,
                first_lr_row: first,
                grads: std::array::from_fn(|_| vec![0.0; band_len]),
            };
            let mut buf = Vec::new();
            let mut recon = vec![0.0; c];
            let mut upstream = vec![0.0; c];
            for py in ay * s..(ay + 1) * s {
                for px in 0..hw {
                    let anchor = pr.stencil_into(cache, py, px, &mut buf);
                    Prepared::mix(&buf, anchor, &self.payload, c, &mut recon);
                    let t = &self.target[(py * hw + px) * c..(py * hw + px + 1) * c];
                    for ch in 0..c {
                        let resid = recon[ch] - t[ch];
                        band.loss += resid.abs();
                        upstream[ch] = if resid > 0.0 {
                            norm
                        } else if resid < 0.0 {
                            -norm
                        } else {
                            0.0
                        };
                    }
                    if !want_grad || buf.len() < 2 {
                        continue;
                    }
                    // a_q against the anchor value, matching the forward mix
                    let base = &self.payload[anchor * c..(anchor + 1) * c];
                    let upstream_dot = |q: usize| -> f64 {
                        let f = &self.payload[q * c..(q + 1) * c];
                        (0..c).map(|ch| upstream[ch] * (f[ch] - base[ch])).sum()
                    };
                    let abar: f64 = buf.iter().map(|ct| ct.w * upstream_dot(ct.q)).sum();
                    for ct in &buf {
                        let a = upstream_dot(ct.q);
                        let dl = ct.w * (a - abar);
                        if dl == 0.0 {
                            continue;
                        }
                        let q = ct.q;
                        let local = q - first * lw;
                        let (isx, isy) = (cache.inv_sx2[q], cache.inv_sy2[q]);
                        band.grads[0][local] += dl * ct.u1 * ct.u1 * isx;
                        band.grads[1][local] += dl * ct.u2 * ct.u2 * isy;
                        band.grads[2][local] -= dl * ct.u1 * ct.u2 * (isx - isy);
                        band.grads[3][local] += dl * ct.d2 * cache.inv_sr2[q];
                    }
                }
            }
            band
        });

        let mut loss = 0.0;
        let mut grads = want_grad.then(|| GradField::zeros(field.len()));
        for band in &bands {
            loss += band.loss;
            if let Some(g) = grads.as_mut() {
                let off = band.first_lr_row * lw;
                let dst = [
                    &mut g.d_log_sigma_x,
                    &mut g.d_log_sigma_y,
                    &mut g.d_theta,
                    &mut g.d_log_sigma_r,
                ];
                for (d, src) in dst.into_iter().zip(&band.grads) {
                    for (i, v) in src.iter().enumerate() {
                        d[off + i] += v;
                    }
                }
            }
        }
        (loss * norm, grads)
    }
}

/// Mean absolute reconstruction error of `guidance_hr` from `guidance_lr`,
/// and its gradient.
pub fn loss_and_grad(
    field: &KernelField,
    guidance_lr: &PlanarMap,
    guidance_hr: &PlanarMap,
    config: &RenderConfig,
) -> Result<(f64, GradField)> {
    let objective = Objective::new(field, guidance_lr, guidance_hr, config)?;
    let cache = KernelCache::new(field, config, None);
    let (loss, grads) = objective.evaluate(field, &cache, true);
    Ok((loss, grads.expect("gradient requested")))
}

/// Worst relative disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(plane, lr_index)` of the worst parameter; planes are ordered
    /// log sigma_x, log sigma_y, theta, log sigma_r.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares analytic gradients against central differences with step `h`
/// (in log/angle space). The window radii are frozen at the unperturbed
/// field's values so both sides differentiate the same function.
pub fn check_gradients(
    field: &KernelField,
    guidance_lr: &PlanarMap,
    guidance_hr: &PlanarMap,
    config: &RenderConfig,
    h: f64,
) -> Result<f64> {
    check_gradients_detailed(field, guidance_lr, guidance_hr, config, h).map(|r| r.max_rel_error)
}

pub fn check_gradients_detailed(
    field: &KernelField,
    guidance_lr: &PlanarMap,
    guidance_hr: &PlanarMap,
    config: &RenderConfig,
    h: f64,
) -> Result<GradCheck> {
    let objective = Objective::new(field, guidance_lr, guidance_hr, config)?;
    let base_cache = KernelCache::new(field, config, None);
    let radius = base_cache.radius.clone();
    let (_, grads) = objective.evaluate(field, &base_cache, true);
    let grads = grads.expect("gradient requested");

    let mut probe = field.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let eval = |f: &KernelField| {
        let cache = KernelCache::new(f, config, Some(&radius));
        objective.evaluate(f, &cache, false).0
    };
    for plane in 0..4 {
        for i in 0..field.len() {
            let orig = field.planes()[plane][i];
            probe.planes_mut()[plane][i] = orig + h;
            let up = eval(&probe);
            probe.planes_mut()[plane][i] = orig - h;
            let down = eval(&probe);
            probe.planes_mut()[plane][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.planes()[plane][i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            if rel > report.max_rel_error {
                report = GradCheck {
                    max_rel_error: rel,
                    worst: (plane, i),
                    analytic,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
