//! Per-image test-time optimisation: downsample the guidance, then fit the
//! kernel field with Adam so that splatting the LR guidance reconstructs the
//! HR guidance under a mean absolute error.

use crate::engine::KernelCache;
use crate::error::{Error, Result};
use crate::field::{init_field, KernelField, RenderConfig, SpatialInit, DEFAULT_SIGMA_R};
use crate::grad::{GradField, Objective};
use crate::render::{render, RenderOutput};
use crate::tensor::{downsample_bilinear, PlanarMap, ScaleFactor};

pub const DEFAULT_ITERATIONS: usize = 50;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// Coordinates in which Adam takes its steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParamSpace {
    /// Steps on `sigma` directly (and `theta`), floored at `LINEAR_SIGMA_FLOOR`.
    /// The field still stores `log sigma`.
    #[default]
    Linear,
    /// Steps on `log sigma` (and `theta`).
    Log,
}

/// Smallest sigma a linear-space step may produce.
pub const LINEAR_SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Unused: the optimisation is deterministic. Kept for harness bookkeeping.
    pub seed: u64,
    pub init_sigma_spatial: SpatialInit,
    pub init_sigma_r: f64,
    pub param_space: ParamSpace,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            learning_rate: DEFAULT_LEARNING_RATE,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            init_sigma_spatial: SpatialInit::Auto,
            init_sigma_r: DEFAULT_SIGMA_R,
            param_space: ParamSpace::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.iterations < 1 {
            return bad("iterations must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0) {
            return bad("adam beta1 must lie in (0, 1)");
        }
        if !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return bad("adam beta2 must lie in (0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam eps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimState {
    /// First and second Adam moments, planes concatenated in parameter order.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Adam steps taken.
    pub t: usize,
    pub best_loss: f64,
    pub best_iteration: usize,
    pub best_field: KernelField,
    /// Loss of the field evaluated at the start of each iteration.
    pub loss_history: Vec<f64>,
}

/// Sanity bounds on fitted parameters, relative to the scale.
const MAX_SIGMA_SPATIAL_PER_SCALE: f64 = 8.0;
const MAX_SIGMA_R: f64 = 4.0;

fn check_guidance(guidance: &PlanarMap) -> Result<()> {
    match guidance
        .data()
        .iter()
        .position(|v| !(0.0..=1.0).contains(v))
    {
        Some(index) => Err(Error::GuidanceRange {
            index,
            value: guidance.data()[index],
        }),
        None => Ok(()),
    }
}

fn check_sanity(field: &KernelField) -> Result<()> {
    let cap = MAX_SIGMA_SPATIAL_PER_SCALE * field.scale().get() as f64;
    for i in 0..field.len() {
        let (sx, sy, sr) = (field.sigma_x(i), field.sigma_y(i), field.sigma_r(i));
        let ok = |v: f64, hi: f64| v > 0.0 && v <= hi && v.is_finite();
        if !(ok(sx, cap) && ok(sy, cap) && ok(sr, MAX_SIGMA_R) && field.theta()[i].is_finite()) {
            return Err(Error::ParameterEscape {
                index: i,
                detail: format!("sigma_x {sx}, sigma_y {sy}, sigma_r {sr}, theta {}", field.theta()[i]),
            });
        }
    }
    Ok(())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &OptimConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.adam_beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.adam_beta2.powi(self.t as i32);
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            self.m[i] = cfg.adam_beta1 * self.m[i] + (1.0 - cfg.adam_beta1) * g;
            self.v[i] = cfg.adam_beta2 * self.v[i] + (1.0 - cfg.adam_beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Flattens the field into the optimiser's coordinates and the gradient accordingly.
fn to_space(field: &KernelField, grads: &GradField, space: ParamSpace) -> (Vec<f64>, Vec<f64>) {
    let n = field.len();
    let mut params = Vec::with_capacity(4 * n);
    let mut flat = Vec::with_capacity(4 * n);
    for (plane, (values, g)) in field.planes().iter().zip(grads.planes()).enumerate() {
        let is_sigma = plane != 2;
        for (&v, &gv) in values.iter().zip(g) {
            match space {
                ParamSpace::Linear if is_sigma => {
                    let sigma = v.exp();
                    params.push(sigma);
                    flat.push(gv / sigma);
                }
                _ => {
                    params.push(v);
                    flat.push(gv);
                }
            }
        }
    }
    (params, flat)
}

fn from_space(field: &mut KernelField, before: &[f64], params: &[f64], space: ParamSpace) {
    let n = field.len();
    for (plane, values) in field.planes_mut().into_iter().enumerate() {
        let is_sigma = plane != 2;
        for (i, v) in values.iter_mut().enumerate() {
            let p = params[plane * n + i];
            if p == before[plane * n + i] {
                // keeps exp/ln round-off out of untouched parameters
                continue;
            }
            *v = match space {
                ParamSpace::Linear if is_sigma => p.max(LINEAR_SIGMA_FLOOR).ln(),
                _ => p,
            };
        }
    }
}

/// Fits a kernel field to `guidance_hr` at stride `scale` and returns the
/// lowest-loss iterate together with the optimiser state.
pub fn fit(
    guidance_hr: &PlanarMap,
    scale: ScaleFactor,
    render_config: &RenderConfig,
    optim_config: &OptimConfig,
) -> Result<(KernelField, OptimState)> {
    fit_with_progress(guidance_hr, scale, render_config, optim_config, |_, _| {})
}

/// `fit`, reporting `(iteration, loss)` after every evaluation.
pub fn fit_with_progress(
    guidance_hr: &PlanarMap,
    scale: ScaleFactor,
    render_config: &RenderConfig,
    optim_config: &OptimConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(KernelField, OptimState)> {
    render_config.validate()?;
    optim_config.validate()?;
    let guidance_lr = downsample_bilinear(guidance_hr, scale)?;
    check_guidance(guidance_hr)?;
    let mut field = init_field(
        (guidance_lr.height(), guidance_lr.width()),
        scale,
        optim_config.init_sigma_spatial,
        optim_config.init_sigma_r,
    )?;
    let objective = Objective::new(&field, &guidance_lr, guidance_hr, render_config)?;
    let mut adam = Adam::new(4 * field.len());
    let mut history = Vec::with_capacity(optim_config.iterations);
    let mut best = (f64::INFINITY, 0, field.clone());

    for it in 0..optim_config.iterations {
        let cache = KernelCache::new(&field, render_config, None);
        let (loss, grads) = objective.evaluate(&field, &cache, true);
        let grads = grads.expect("gradient requested");
        if !loss.is_finite() || grads.planes().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        history.push(loss);
        progress(it, loss);
        if loss < best.0 {
            best = (loss, it, field.clone());
        }
        let (mut params, flat) = to_space(&field, &grads, optim_config.param_space);
        let before = params.clone();
        adam.step(&mut params, &flat, optim_config);
        from_space(&mut field, &before, &params, optim_config.param_space);
    }

    let (best_loss, best_iteration, best_field) = best;
    check_sanity(&best_field)?;
    let state = OptimState {
        m: adam.m,
        v: adam.v,
        t: adam.t,
        best_loss,
        best_iteration,
        best_field: best_field.clone(),
        loss_history: history,
    };
    Ok((best_field, state))
}

/// One-shot pipeline: fit on `guidance_hr`, then render `lr_payload` with the fitted field.
pub fn upsample(
    guidance_hr: &PlanarMap,
    lr_payload: &PlanarMap,
    render_config: &RenderConfig,
    optim_config: &OptimConfig,
) -> Result<RenderOutput> {
    let scale = ScaleFactor::between(
        (lr_payload.height(), lr_payload.width()),
        (guidance_hr.height(), guidance_hr.width()),
    )?;
    let (field, _) = fit(guidance_hr, scale, render_config, optim_config)?;
    render(lr_payload, &field, guidance_hr, render_config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::loss_and_grad;
    use crate::render::reconstruct_guidance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sf(s: usize) -> ScaleFactor {
        ScaleFactor::new(s).unwrap()
    }

    /// Smooth blobs plus an edge, values in [0, 1].
    fn synthetic(h: usize, w: usize, seed: u64) -> PlanarMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs: Vec<(f32, f32, f32, [f32; 3])> = (0..6)
            .map(|_| {
                (
                    rng.gen_range(0.0..h as f32),
                    rng.gen_range(0.0..w as f32),
                    rng.gen_range(2.0..6.0),
                    [rng.gen(), rng.gen(), rng.gen()],
                )
            })
            .collect();
        PlanarMap::from_fn(3, h, w, |c, y, x| {
            let mut v = if x * 3 > w + y { 0.8 } else { 0.2 };
            for (by, bx, r, col) in &blobs {
                let d2 = (y as f32 - by).powi(2) + (x as f32 - bx).powi(2);
                v = v * (1.0 - (-d2 / (r * r)).exp()) + col[c] * (-d2 / (r * r)).exp();
            }
            v.clamp(0.0, 1.0)
        })
        .unwrap()
    }

    #[test]
    fn constant_image_keeps_initial_field() {
        let g = PlanarMap::filled(3, 16, 16, 0.5).unwrap();
        let (field, state) = fit(&g, sf(4), &RenderConfig::default(), &OptimConfig::default()).unwrap();
        assert_eq!(state.loss_history.len(), 50);
        assert!(state.loss_history.iter().all(|&l| l == 0.0));
        let init = init_field((4, 4), sf(4), SpatialInit::Auto, DEFAULT_SIGMA_R).unwrap();
        assert_eq!(field, init);
    }

    #[test]
    fn history_and_best_bookkeeping() {
        let g = synthetic(24, 24, 1);
        let cfg = OptimConfig {
            iterations: 12,
            learning_rate: 0.05,
            ..OptimConfig::default()
        };
        let (field, state) = fit(&g, sf(4), &RenderConfig::default(), &cfg).unwrap();
        assert_eq!(state.loss_history.len(), 12);
        assert_eq!(state.t, 12);
        let min = state.loss_history.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(state.best_loss, min);
        assert_eq!(state.loss_history[state.best_iteration], min);
        assert!(state.best_loss < state.loss_history[0]);
        assert_eq!(field, state.best_field);

        let gl = downsample_bilinear(&g, sf(4)).unwrap();
        let (loss, _) = loss_and_grad(&field, &gl, &g, &RenderConfig::default()).unwrap();
        assert_eq!(loss, state.best_loss);
    }

    #[test]
    fn best_iterate_beats_every_replayed_iterate() {
        let g = synthetic(16, 20, 2);
        let gl = downsample_bilinear(&g, sf(4)).unwrap();
        let rc = RenderConfig::default();
        let (best, _) = fit(&g, sf(4), &rc, &OptimConfig { iterations: 8, learning_rate: 0.05, ..Default::default() }).unwrap();
        let best_loss = loss_and_grad(&best, &gl, &g, &rc).unwrap().0;
        for k in 1..=8 {
            let (_, st) = fit(&g, sf(4), &rc, &OptimConfig { iterations: k, learning_rate: 0.05, ..Default::default() }).unwrap();
            let last = *st.loss_history.last().unwrap();
            assert!(best_loss <= last);
        }
        let recon = reconstruct_guidance(&best, &gl, &g, &rc).unwrap();
        assert_eq!(recon.map.dims(), g.dims());
    }

    #[test]
    fn deterministic() {
        let g = synthetic(20, 16, 3);
        let cfg = OptimConfig { iterations: 5, ..Default::default() };
        let (_, a) = fit(&g, sf(4), &RenderConfig::default(), &cfg).unwrap();
        let (_, b) = fit(&g, sf(4), &RenderConfig::default(), &cfg).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn log_space_also_descends() {
        let g = synthetic(24, 24, 4);
        let cfg = OptimConfig { iterations: 10, learning_rate: 0.05, param_space: ParamSpace::Log, ..Default::default() };
        let (_, st) = fit(&g, sf(4), &RenderConfig::default(), &cfg).unwrap();
        assert!(st.best_loss < st.loss_history[0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = PlanarMap::filled(1, 10, 12, 0.5).unwrap();
        assert!(matches!(
            fit(&g, sf(4), &RenderConfig::default(), &OptimConfig::default()),
            Err(Error::NotDivisible { .. })
        ));
        let g = PlanarMap::filled(1, 8, 8, 1.5).unwrap();
        assert!(matches!(
            fit(&g, sf(4), &RenderConfig::default(), &OptimConfig::default()),
            Err(Error::GuidanceRange { .. })
        ));
        let g = PlanarMap::filled(1, 8, 8, 0.5).unwrap();
        let cfg = OptimConfig { iterations: 0, ..Default::default() };
        assert!(fit(&g, sf(4), &RenderConfig::default(), &cfg).is_err());
        let cfg = OptimConfig { adam_beta1: 1.0, ..Default::default() };
        assert!(fit(&g, sf(4), &RenderConfig::default(), &cfg).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let g = synthetic(16, 16, 5);
        let cfg = OptimConfig { iterations: 30, learning_rate: 5.0, ..Default::default() };
        match fit(&g, sf(4), &RenderConfig::default(), &cfg) {
            Err(e) => assert!(e.is_numerical(), "{e}"),
            Ok((f, _)) => check_sanity(&f).unwrap(),
        }
        let huge = init_field((2, 2), sf(2), SpatialInit::Value(100.0), 0.1).unwrap();
        assert!(matches!(check_sanity(&huge), Err(Error::ParameterEscape { .. })));
    }

    #[test]
    fn upsample_pipeline() {
        let g = synthetic(16, 16, 6);
        let cfg = OptimConfig { iterations: 3, ..Default::default() };
        let rc = RenderConfig::default();
        let payload = PlanarMap::filled(5, 4, 4, -2.5).unwrap();
        let out = upsample(&g, &payload, &rc, &cfg).unwrap();
        assert_eq!(out.map.dims(), (5, 16, 16));
        assert!(out.map.data().iter().all(|&v| v == -2.5));

        let gl = downsample_bilinear(&g, sf(4)).unwrap();
        let via_pipeline = upsample(&g, &gl, &rc, &cfg).unwrap();
        let (field, _) = fit(&g, sf(4), &rc, &cfg).unwrap();
        let manual = reconstruct_guidance(&field, &gl, &g, &rc).unwrap();
        assert_eq!(via_pipeline.map, manual.map);

        let bad = PlanarMap::filled(1, 5, 4, 0.0).unwrap();
        assert!(matches!(upsample(&g, &bad, &rc, &cfg), Err(Error::NonIntegralRatio { .. })));
    }
}
