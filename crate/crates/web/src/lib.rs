//! Browser demo: fit a kernel field to an image, compare the reconstruction
//! against bilinear and classic JBU, and export kernel ellipses for drawing.

use gsjbu_core::{
    bilinear_upsample, downsample_bilinear, fit, init_field, jbu_classic, psnr, reconstruct_guidance, Error,
    KernelField, OptimConfig, PlanarMap, RenderConfig, ScaleFactor, SpatialInit,
};
use wasm_bindgen::prelude::*;

/// Converts RGBA bytes to a 3-channel map, cropping to a multiple of `scale`.
fn rgba_to_map(rgba: &[u8], width: usize, height: usize, scale: usize) -> Result<PlanarMap, Error> {
    if rgba.len() != width * height * 4 {
        return Err(Error::InvalidMap(format!(
            "expected {} RGBA bytes for {width}x{height}, got {}",
            width * height * 4,
            rgba.len()
        )));
    }
    let full = PlanarMap::from_fn(3, height, width, |c, y, x| rgba[(y * width + x) * 4 + c] as f32 / 255.0)?;
    full.center_crop(height / scale * scale, width / scale * scale)
}

fn map_to_rgba(map: &PlanarMap) -> Vec<u8> {
    let (c, h, w) = map.dims();
    let mut out = vec![255u8; h * w * 4];
    for i in 0..h * w {
        for k in 0..3 {
            let v = map.data()[k.min(c - 1) * h * w + i];
            out[i * 4 + k] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    out
}

#[wasm_bindgen]
pub struct Demo {
    scale: ScaleFactor,
    guidance: PlanarMap,
    guidance_lr: PlanarMap,
    field: KernelField,
    render_config: RenderConfig,
}

impl Demo {
    pub fn try_new(rgba: &[u8], width: usize, height: usize, scale: usize) -> Result<Demo, Error> {
        let scale = ScaleFactor::new(scale)?;
        let guidance = rgba_to_map(rgba, width, height, scale.get())?;
        let guidance_lr = downsample_bilinear(&guidance, scale)?;
        let field = init_field((guidance_lr.height(), guidance_lr.width()), scale, SpatialInit::Auto, 0.12)?;
        Ok(Demo {
            scale,
            guidance,
            guidance_lr,
            field,
            render_config: RenderConfig::default(),
        })
    }

    pub fn try_fit(&mut self, iterations: usize, learning_rate: f64) -> Result<Vec<f64>, Error> {
        let cfg = OptimConfig {
            iterations,
            learning_rate,
            ..OptimConfig::default()
        };
        let (field, state) = fit(&self.guidance, self.scale, &self.render_config, &cfg)?;
        self.field = field;
        Ok(state.loss_history)
    }

    fn reconstruction_map(&self) -> Result<PlanarMap, Error> {
        Ok(reconstruct_guidance(&self.field, &self.guidance_lr, &self.guidance, &self.render_config)?.map)
    }

    /// `[learned, bilinear, jbu]` PSNR in dB against the guidance.
    pub fn try_compare(&self) -> Result<Vec<f64>, Error> {
        let s = self.scale.get() as f64;
        let ours = self.reconstruction_map()?;
        let bilinear = bilinear_upsample(&self.guidance_lr, self.scale);
        let jbu = jbu_classic(&self.guidance_lr, &self.guidance, s, 0.12, 2)?;
        [ours, bilinear, jbu].iter().map(|m| psnr(m, &self.guidance, 1.0)).collect()
    }

    pub fn try_view(&self, which: &str) -> Result<Vec<u8>, Error> {
        let map = match which {
            "bilinear" => bilinear_upsample(&self.guidance_lr, self.scale),
            "jbu" => jbu_classic(&self.guidance_lr, &self.guidance, self.scale.get() as f64, 0.12, 2)?,
            "learned" => self.reconstruction_map()?,
            "input" => self.guidance.clone(),
            "lowres" => {
                let s = self.scale.get();
                let lr = &self.guidance_lr;
                PlanarMap::from_fn(3, lr.height() * s, lr.width() * s, |c, y, x| lr.get(c, y / s, x / s))?
            }
            other => return Err(Error::InvalidParameter(format!("unknown view {other:?}"))),
        };
        Ok(map_to_rgba(&map))
    }
}

#[wasm_bindgen]
impl Demo {
    /// Takes canvas RGBA pixels; the image is centre-cropped to a multiple of `scale`.
    #[wasm_bindgen(constructor)]
    pub fn new(rgba: &[u8], width: usize, height: usize, scale: usize) -> Result<Demo, JsError> {
        Self::try_new(rgba, width, height, scale).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn width(&self) -> usize {
        self.guidance.width()
    }

    pub fn height(&self) -> usize {
        self.guidance.height()
    }

    /// Runs the optimiser from a fresh field and returns the loss per iteration.
    #[wasm_bindgen(js_name = fit)]
    pub fn fit_js(&mut self, iterations: usize, learning_rate: f64) -> Result<Vec<f64>, JsError> {
        self.try_fit(iterations, learning_rate).map_err(|e| JsError::new(&e.to_string()))
    }

    /// RGBA pixels of one view: "learned", "bilinear", "jbu", "input" or "lowres".
    pub fn view(&self, which: &str) -> Result<Vec<u8>, JsError> {
        self.try_view(which).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn compare(&self) -> Result<Vec<f64>, JsError> {
        self.try_compare().map_err(|e| JsError::new(&e.to_string()))
    }

    /// Per LR pixel: centre x, centre y, sigma_x, sigma_y, theta, sigma_r.
    pub fn ellipses(&self) -> Vec<f32> {
        let (h, w) = self.field.lr_dims();
        let s = self.scale.get() as f32;
        let mut out = Vec::with_capacity(h * w * 6);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                out.extend_from_slice(&[
                    (x as f32 + 0.5) * s - 0.5,
                    (y as f32 + 0.5) * s - 0.5,
                    self.field.sigma_x(i) as f32,
                    self.field.sigma_y(i) as f32,
                    self.field.theta()[i] as f32,
                    self.field.sigma_r(i) as f32,
                ]);
            }
        }
        out
    }
}
