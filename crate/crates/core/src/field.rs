//! Per-LR-pixel anisotropic Gaussian parameters and the per-pair weight math.
//!
//! Each LR pixel `q` owns `(sigma_x, sigma_y, theta, sigma_r)`. The spatial
//! covariance is `R(theta) diag(sigma_x^2, sigma_y^2) R(theta)^T`, expressed in
//! `(x, y)` = (column, row) HR pixel coordinates. The sigmas are stored in log
//! space so any real parameter vector is a valid field.

use crate::engine::{KernelCache, Prepared};
use crate::error::{Error, Result};
use crate::tensor::{center_hr, PlanarMap, ScaleFactor};

/// Range sigma used to initialise fields.
pub const DEFAULT_SIGMA_R: f64 = 0.12;
pub const DEFAULT_R_MAX: usize = 4;
pub const DEFAULT_ALPHA_DYN: f64 = 2.0;
pub const DEFAULT_EPS_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelField {
    lr_height: usize,
    lr_width: usize,
    scale: ScaleFactor,
    pub(crate) log_sigma_x: Vec<f64>,
    pub(crate) log_sigma_y: Vec<f64>,
    pub(crate) theta: Vec<f64>,
    pub(crate) log_sigma_r: Vec<f64>,
}

/// Initial spatial sigma: `Auto` uses the numeric scale factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpatialInit {
    Auto,
    Value(f64),
}

/// Builds a uniform field: `sigma_x = sigma_y = spatial`, `theta = 0`, `sigma_r = init_sigma_r`.
pub fn init_field(
    lr_dims: (usize, usize),
    scale: ScaleFactor,
    spatial: SpatialInit,
    init_sigma_r: f64,
) -> Result<KernelField> {
    let sigma_s = match spatial {
        SpatialInit::Auto => scale.get() as f64,
        SpatialInit::Value(v) => v,
    };
    if !(sigma_s > 0.0 && sigma_s.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "initial spatial sigma must be positive, got {sigma_s}"
        )));
    }
    if !(init_sigma_r > 0.0 && init_sigma_r.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "initial range sigma must be positive, got {init_sigma_r}"
        )));
    }
    let (h, w) = lr_dims;
    if h == 0 || w == 0 {
        return Err(Error::InvalidParameter("LR grid must be non-empty".into()));
    }
    let n = h * w;
    Ok(KernelField {
        lr_height: h,
        lr_width: w,
        scale,
        log_sigma_x: vec![sigma_s.ln(); n],
        log_sigma_y: vec![sigma_s.ln(); n],
        theta: vec![0.0; n],
        log_sigma_r: vec![init_sigma_r.ln(); n],
    })
}

impl KernelField {
    /// Builds a field from per-pixel `sigma_x, sigma_y, theta, sigma_r` (sigmas in linear units).
    pub fn from_params(
        lr_dims: (usize, usize),
        scale: ScaleFactor,
        sigma_x: &[f64],
        sigma_y: &[f64],
        theta: &[f64],
        sigma_r: &[f64],
    ) -> Result<Self> {
        let (h, w) = lr_dims;
        let n = h * w;
        if n == 0 {
            return Err(Error::InvalidParameter("LR grid must be non-empty".into()));
        }
        for (name, v) in [
            ("sigma_x", sigma_x),
            ("sigma_y", sigma_y),
            ("theta", theta),
            ("sigma_r", sigma_r),
        ] {
            if v.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "{name} has {} entries, expected {n}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} has non-finite entries")));
            }
        }
        for (name, v) in [("sigma_x", sigma_x), ("sigma_y", sigma_y), ("sigma_r", sigma_r)] {
            if let Some(i) = v.iter().position(|&x| x <= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name}[{i}] = {} is not positive",
                    v[i]
                )));
            }
        }
        let ln = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
        Ok(Self {
            lr_height: h,
            lr_width: w,
            scale,
            log_sigma_x: ln(sigma_x),
            log_sigma_y: ln(sigma_y),
            theta: theta.to_vec(),
            log_sigma_r: ln(sigma_r),
        })
    }

    pub fn lr_height(&self) -> usize {
        self.lr_height
    }

    pub fn lr_width(&self) -> usize {
        self.lr_width
    }

    pub fn lr_dims(&self) -> (usize, usize) {
        (self.lr_height, self.lr_width)
    }

    /// HR grid size this field renders to.
    pub fn hr_dims(&self) -> (usize, usize) {
        let s = self.scale.get();
        (self.lr_height * s, self.lr_width * s)
    }

    pub fn scale(&self) -> ScaleFactor {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.lr_height * self.lr_width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn log_sigma_x(&self) -> &[f64] {
        &self.log_sigma_x
    }

    pub fn log_sigma_y(&self) -> &[f64] {
        &self.log_sigma_y
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn log_sigma_r(&self) -> &[f64] {
        &self.log_sigma_r
    }

    pub fn sigma_x(&self, i: usize) -> f64 {
        self.log_sigma_x[i].exp()
    }

    pub fn sigma_y(&self, i: usize) -> f64 {
        self.log_sigma_y[i].exp()
    }

    pub fn sigma_r(&self, i: usize) -> f64 {
        self.log_sigma_r[i].exp()
    }

    /// The four raw parameter planes in `(log sigma_x, log sigma_y, theta, log sigma_r)` order.
    pub(crate) fn planes_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.log_sigma_x,
            &mut self.log_sigma_y,
            &mut self.theta,
            &mut self.log_sigma_r,
        ]
    }

    pub(crate) fn planes(&self) -> [&Vec<f64>; 4] {
        [
            &self.log_sigma_x,
            &self.log_sigma_y,
            &self.theta,
            &self.log_sigma_r,
        ]
    }

    pub(crate) fn index(&self, q: (usize, usize)) -> Result<usize> {
        let (qy, qx) = q;
        if qy >= self.lr_height || qx >= self.lr_width {
            return Err(Error::OutOfBounds {
                y: qy,
                x: qx,
                height: self.lr_height,
                width: self.lr_width,
            });
        }
        Ok(qy * self.lr_width + qx)
    }

    /// Checks that `guidance_hr` (and the LR map, if any) match this field's grids.
    pub fn check_hr(&self, guidance_hr: &PlanarMap) -> Result<()> {
        let (hh, hw) = self.hr_dims();
        if (guidance_hr.height(), guidance_hr.width()) != (hh, hw) {
            if let Ok(s) = ScaleFactor::between(self.lr_dims(), (guidance_hr.height(), guidance_hr.width())) {
                return Err(Error::ScaleMismatch {
                    field: self.scale.get(),
                    render: s.get(),
                });
            }
            return Err(Error::DimensionMismatch {
                what: "kernel field HR grid and guidance image",
                left: (1, hh, hw),
                right: guidance_hr.dims(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CenterMode {
    /// Each HR pixel is anchored at its nearest LR center.
    #[default]
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuidanceSource {
    /// The range term compares `I_hr(p)` with the bilinearly downsampled guidance at `q`.
    #[default]
    DownsampledHr,
}

/// Neighborhood and numerical policy shared by rendering and optimisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Upper bound on the window radius, in LR pixels.
    pub r_max: usize,
    /// Multiplier turning `sigma_eff` into a support radius.
    pub alpha_dyn: f64,
    pub center_mode: CenterMode,
    pub eps_denominator: f64,
    pub guidance_source: GuidanceSource,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            r_max: DEFAULT_R_MAX,
            alpha_dyn: DEFAULT_ALPHA_DYN,
            center_mode: CenterMode::Nearest,
            eps_denominator: DEFAULT_EPS_DENOMINATOR,
            guidance_source: GuidanceSource::DownsampledHr,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_max < 1 {
            return Err(Error::InvalidParameter("r_max must be >= 1".into()));
        }
        if !(self.alpha_dyn > 0.0 && self.alpha_dyn.is_finite()) {
            return Err(Error::InvalidParameter("alpha_dyn must be positive".into()));
        }
        if !(self.eps_denominator > 0.0) {
            return Err(Error::InvalidParameter("eps_denominator must be positive".into()));
        }
        Ok(())
    }
}

/// Contributing LR pixels of one HR pixel and their normalised weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStencil {
    /// HR `(y, x)`.
    pub hr_index: (usize, usize),
    /// `((y, x), weight)` in row-major window order.
    pub contributors: Vec<((usize, usize), f64)>,
}

impl WeightStencil {
    pub fn weight_sum(&self) -> f64 {
        self.contributors.iter().map(|c| c.1).sum()
    }
}

/// `Sigma_q` as `[[xx, xy], [xy, yy]]`.
pub fn covariance(q: (usize, usize), field: &KernelField) -> Result<[[f64; 2]; 2]> {
    let i = field.index(q)?;
    Ok(covariance_matrix(
        field.sigma_x(i),
        field.sigma_y(i),
        field.theta[i],
    ))
}

pub(crate) fn covariance_matrix(sigma_x: f64, sigma_y: f64, theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    let (a, b) = (sigma_x * sigma_x, sigma_y * sigma_y);
    let xx = a * c * c + b * s * s;
    let yy = a * s * s + b * c * c;
    let xy = (a - b) * s * c;
    [[xx, xy], [xy, yy]]
}

/// `-1/2 (p - mu_q)^T Sigma_q^{-1} (p - mu_q)` for HR coordinate `p = (y, x)`.
pub fn spatial_log_weight(p: (f64, f64), q: (usize, usize), field: &KernelField) -> Result<f64> {
    let i = field.index(q)?;
    let (my, mx) = center_hr(q, field.lr_dims(), field.scale)?;
    let (dy, dx) = (p.0 - my, p.1 - mx);
    let (sn, cs) = field.theta[i].sin_cos();
    let u1 = cs * dx + sn * dy;
    let u2 = -sn * dx + cs * dy;
    let (sx, sy) = (field.sigma_x(i), field.sigma_y(i));
    Ok(-0.5 * (u1 * u1 / (sx * sx) + u2 * u2 / (sy * sy)))
}

/// `-||g_p - g_q||^2 / (2 sigma_r^2)`.
pub fn range_log_weight(g_p: &[f32], g_q: &[f32], sigma_r: f64) -> Result<f64> {
    if g_p.len() != g_q.len() {
        return Err(Error::InvalidParameter(format!(
            "guidance vectors differ in length: {} vs {}",
            g_p.len(),
            g_q.len()
        )));
    }
    if !(sigma_r > 0.0) {
        return Err(Error::InvalidParameter("sigma_r must be positive".into()));
    }
    let d2: f64 = g_p
        .iter()
        .zip(g_q)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(-d2 / (2.0 * sigma_r * sigma_r))
}

/// `clamp(ceil(alpha_dyn * sigma_eff / s), 1, r_max)` with `sigma_eff = max(sigma_x, sigma_y)`.
pub fn support_radius(q: (usize, usize), field: &KernelField, config: &RenderConfig) -> Result<usize> {
    let i = field.index(q)?;
    Ok(radius_for(
        field.log_sigma_x[i].max(field.log_sigma_y[i]).exp(),
        field.scale.get(),
        config,
    ))
}

pub(crate) fn radius_for(sigma_eff: f64, s: usize, config: &RenderConfig) -> usize {
    let r = (config.alpha_dyn * sigma_eff / s as f64).ceil();
    if r.is_nan() || r < 1.0 {
        1
    } else if r >= config.r_max as f64 {
        config.r_max
    } else {
        r as usize
    }
}

/// Normalised mixing weights of HR pixel `p = (y, x)`.
pub fn stencil(
    p: (usize, usize),
    field: &KernelField,
    guidance_lr: &PlanarMap,
    guidance_hr: &PlanarMap,
    config: &RenderConfig,
) -> Result<WeightStencil> {
    let prepared = Prepared::new(field, guidance_lr, guidance_hr, config)?;
    let (hh, hw) = field.hr_dims();
    if p.0 >= hh || p.1 >= hw {
        return Err(Error::OutOfBounds {
            y: p.0,
            x: p.1,
            height: hh,
            width: hw,
        });
    }
    let cache = KernelCache::new(field, config, None);
    let mut buf = Vec::new();
    prepared.stencil_into(&cache, p.0, p.1, &mut buf);
    let w = field.lr_width();
    Ok(WeightStencil {
        hr_index: p,
        contributors: buf.iter().map(|c| ((c.q / w, c.q % w), c.w)).collect(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tensor::downsample_bilinear;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn sf(s: usize) -> ScaleFactor {
        ScaleFactor::new(s).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn init_defaults() {
        let f = init_field((14, 14), sf(16), SpatialInit::Auto, DEFAULT_SIGMA_R).unwrap();
        for i in 0..f.len() {
            assert!(close(f.sigma_x(i), 16.0, 1e-12));
            assert!(close(f.sigma_y(i), 16.0, 1e-12));
            assert_eq!(f.theta[i], 0.0);
            assert!(close(f.sigma_r(i), 0.12, 1e-12));
        }
        let f = init_field((2, 3), sf(4), SpatialInit::Value(1.0), 1.0).unwrap();
        assert_eq!(f.len(), 6);
        assert!(f.log_sigma_x.iter().chain(&f.log_sigma_y).all(|&v| v == 0.0));
        assert!(init_field((2, 2), sf(2), SpatialInit::Value(0.0), 0.1).is_err());
        assert!(init_field((2, 2), sf(2), SpatialInit::Auto, -0.1).is_err());
    }

    fn one(sx: f64, sy: f64, theta: f64) -> KernelField {
        KernelField::from_params((1, 1), sf(1), &[sx], &[sy], &[theta], &[0.1]).unwrap()
    }

    #[test]
    fn covariance_examples() {
        for theta in [0.0, 0.3, 1.7, -2.2] {
            let c = covariance((0, 0), &one(16.0, 16.0, theta)).unwrap();
            assert!(close(c[0][0], 256.0, 1e-9) && close(c[1][1], 256.0, 1e-9) && close(c[0][1], 0.0, 1e-9));
        }
        let c = covariance((0, 0), &one(2.0, 1.0, FRAC_PI_2)).unwrap();
        assert!(close(c[0][0], 1.0, 1e-12) && close(c[1][1], 4.0, 1e-12) && close(c[0][1], 0.0, 1e-12));
        let c = covariance((0, 0), &one(2.0, 1.0, FRAC_PI_4)).unwrap();
        assert!(close(c[0][0], 2.5, 1e-12) && close(c[1][1], 2.5, 1e-12));
        assert!(close(c[0][1], 1.5, 1e-12) && close(c[1][0], 1.5, 1e-12));
    }

    #[test]
    fn spatial_examples() {
        let f = KernelField::from_params((2, 2), sf(16), &[16.0; 4], &[16.0; 4], &[0.0; 4], &[0.12; 4]).unwrap();
        let mu = center_hr((1, 0), (2, 2), sf(16)).unwrap();
        assert_eq!(spatial_log_weight(mu, (1, 0), &f).unwrap(), 0.0);
        let p = (mu.0 + 16.0 * 0.6, mu.1 + 16.0 * 0.8);
        assert!(close(spatial_log_weight(p, (1, 0), &f).unwrap(), -0.5, 1e-12));

        let f = one(2.0, 1.0, FRAC_PI_4);
        assert!(close(spatial_log_weight((1.0, 1.0), (0, 0), &f).unwrap(), -0.25, 1e-12));
        assert!(spatial_log_weight((0.0, 0.0), (1, 0), &f).is_err());
    }

    #[test]
    fn range_examples() {
        assert_eq!(range_log_weight(&[0.2, 0.4, 0.9], &[0.2, 0.4, 0.9], 0.12).unwrap(), 0.0);
        let d = 0.12 / 3f64.sqrt();
        let g = [0.5f32, 0.5, 0.5];
        let h = [(0.5 + d) as f32, (0.5 + d) as f32, (0.5 + d) as f32];
        assert!(close(range_log_weight(&g, &h, 0.12).unwrap(), -0.5, 1e-5));
        assert!(close(range_log_weight(&[0.5], &[0.74], 0.12).unwrap(), -2.0, 1e-5));
        assert!(range_log_weight(&[0.5], &[0.5, 0.1], 0.12).is_err());
        assert!(range_log_weight(&[0.5], &[0.5], 0.0).is_err());
    }

    #[test]
    fn radius_examples() {
        let cfg = RenderConfig::default();
        let f = init_field((3, 3), sf(16), SpatialInit::Auto, 0.12).unwrap();
        assert_eq!(support_radius((1, 1), &f, &cfg).unwrap(), 2);
        let tiny = init_field((3, 3), sf(16), SpatialInit::Value(1e-30), 0.12).unwrap();
        assert_eq!(support_radius((0, 0), &tiny, &cfg).unwrap(), 1);
        let huge = init_field((3, 3), sf(16), SpatialInit::Value(1e30), 0.12).unwrap();
        assert_eq!(support_radius((0, 0), &huge, &cfg).unwrap(), cfg.r_max);
        let mut last = 0;
        for k in 1..200 {
            let r = radius_for(k as f64 * 0.5, 16, &cfg);
            assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn single_pixel_stencil() {
        let g = PlanarMap::from_fn(3, 4, 4, |c, y, x| ((c + y * 3 + x * 5) % 7) as f32 / 7.0).unwrap();
        let gl = downsample_bilinear(&g, sf(4)).unwrap();
        let f = init_field((1, 1), sf(4), SpatialInit::Auto, 0.12).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let st = stencil((y, x), &f, &gl, &g, &RenderConfig::default()).unwrap();
                assert_eq!(st.contributors, vec![((0, 0), 1.0)]);
            }
        }
    }

    #[test]
    fn uniform_guidance_gives_spatial_kernel() {
        let s = 3;
        let g = PlanarMap::filled(1, 5 * s, 4 * s, 0.4).unwrap();
        let gl = downsample_bilinear(&g, sf(s)).unwrap();
        let f = init_field((5, 4), sf(s), SpatialInit::Value(2.5), 0.12).unwrap();
        let cfg = RenderConfig::default();
        let p = (7, 5);
        let st = stencil(p, &f, &gl, &g, &cfg).unwrap();
        let raw: Vec<f64> = st
            .contributors
            .iter()
            .map(|&(q, _)| {
                let (my, mx) = center_hr(q, (5, 4), sf(s)).unwrap();
                let d2 = (p.0 as f64 - my).powi(2) + (p.1 as f64 - mx).powi(2);
                (-d2 / (2.0 * 2.5 * 2.5)).exp()
            })
            .collect();
        let z: f64 = raw.iter().sum();
        for (c, r) in st.contributors.iter().zip(&raw) {
            assert!(close(c.1, r / z, 1e-12));
        }
    }

    /// Direct evaluation: build Sigma, invert it with the 2x2 adjugate and
    /// sum over the whole window without any shared code path.
    pub(crate) fn brute_force_weights(
        p: (usize, usize),
        field: &KernelField,
        guidance_lr: &PlanarMap,
        guidance_hr: &PlanarMap,
        radius: usize,
    ) -> Vec<((usize, usize), f64)> {
        let s = field.scale().get() as f64;
        let (lh, lw) = field.lr_dims();
        let ay = p.0 / field.scale().get();
        let ax = p.1 / field.scale().get();
        let mut raw = Vec::new();
        for qy in ay.saturating_sub(radius)..=(ay + radius).min(lh - 1) {
            for qx in ax.saturating_sub(radius)..=(ax + radius).min(lw - 1) {
                let i = qy * lw + qx;
                let sx = field.log_sigma_x()[i].exp();
                let sy = field.log_sigma_y()[i].exp();
                let th = field.theta()[i];
                let (c, sn) = (th.cos(), th.sin());
                let r = [[c, -sn], [sn, c]];
                let d = [[sx * sx, 0.0], [0.0, sy * sy]];
                let mut rd = [[0.0; 2]; 2];
                let mut cov = [[0.0; 2]; 2];
                for a in 0..2 {
                    for b in 0..2 {
                        for k in 0..2 {
                            rd[a][b] += r[a][k] * d[k][b];
                        }
                    }
                }
                for a in 0..2 {
                    for b in 0..2 {
                        for k in 0..2 {
                            cov[a][b] += rd[a][k] * r[b][k];
                        }
                    }
                }
                let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
                let inv = [
                    [cov[1][1] / det, -cov[0][1] / det],
                    [-cov[1][0] / det, cov[0][0] / det],
                ];
                let mu = ((qx as f64 + 0.5) * s - 0.5, (qy as f64 + 0.5) * s - 0.5);
                let v = [p.1 as f64 - mu.0, p.0 as f64 - mu.1];
                let quad = v[0] * (inv[0][0] * v[0] + inv[0][1] * v[1])
                    + v[1] * (inv[1][0] * v[0] + inv[1][1] * v[1]);
                let mut d2 = 0.0;
                for ch in 0..guidance_hr.channels() {
                    let diff = guidance_hr.get(ch, p.0, p.1) as f64 - guidance_lr.get(ch, qy, qx) as f64;
                    d2 += diff * diff;
                }
                let sr = field.log_sigma_r()[i].exp();
                raw.push(((qy, qx), (-0.5 * quad - d2 / (2.0 * sr * sr)).exp()));
            }
        }
        let z: f64 = raw.iter().map(|r| r.1).sum();
        raw.into_iter().map(|(q, v)| (q, v / z)).collect()
    }

    pub(crate) fn corner_fixture() -> (KernelField, PlanarMap, PlanarMap) {
        let s = sf(2);
        let colors = [[0.9f32, 0.1, 0.1], [0.1, 0.8, 0.2], [0.2, 0.3, 0.9], [0.7, 0.7, 0.1]];
        let g = PlanarMap::from_fn(3, 4, 4, |c, y, x| colors[(y / 2) * 2 + x / 2][c]).unwrap();
        let gl = downsample_bilinear(&g, s).unwrap();
        let f = KernelField::from_params((2, 2), s, &[2.0; 4], &[2.0; 4], &[0.0; 4], &[0.12; 4]).unwrap();
        (f, gl, g)
    }

    #[test]
    fn corner_fixture_matches_brute_force() {
        let (f, gl, g) = corner_fixture();
        let cfg = RenderConfig::default();
        for y in 0..4 {
            for x in 0..4 {
                let st = stencil((y, x), &f, &gl, &g, &cfg).unwrap();
                let r = support_radius((y / 2, x / 2), &f, &cfg).unwrap();
                let oracle = brute_force_weights((y, x), &f, &gl, &g, r);
                assert_eq!(st.contributors.len(), oracle.len());
                for (a, b) in st.contributors.iter().zip(&oracle) {
                    assert_eq!(a.0, b.0);
                    assert!(close(a.1, b.1, 1e-12), "{a:?} vs {b:?}");
                }
            }
        }
    }

    #[test]
    fn anisotropic_random_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let s = sf(3);
        let (lh, lw) = (4, 5);
        let g = PlanarMap::from_fn(2, lh * 3, lw * 3, |_, _, _| rng.gen()).unwrap();
        let gl = downsample_bilinear(&g, s).unwrap();
        let n = lh * lw;
        let sx: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..7.0)).collect();
        let sy: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..7.0)).collect();
        let th: Vec<f64> = (0..n).map(|_| rng.gen_range(-PI..PI)).collect();
        let sr: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.5)).collect();
        let f = KernelField::from_params((lh, lw), s, &sx, &sy, &th, &sr).unwrap();
        let cfg = RenderConfig::default();
        for y in 0..lh * 3 {
            for x in 0..lw * 3 {
                let st = stencil((y, x), &f, &gl, &g, &cfg).unwrap();
                let r = support_radius((y / 3, x / 3), &f, &cfg).unwrap();
                let oracle = brute_force_weights((y, x), &f, &gl, &g, r);
                for (a, b) in st.contributors.iter().zip(&oracle) {
                    assert_eq!(a.0, b.0);
                    assert!(close(a.1, b.1, 1e-10));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn rotation_has_period_pi(sx in 0.1f64..50.0, sy in 0.1f64..50.0, theta in -10f64..10.0) {
            let a = covariance_matrix(sx, sy, theta);
            let b = covariance_matrix(sx, sy, theta + PI);
            for i in 0..2 { for j in 0..2 {
                prop_assert!((a[i][j] - b[i][j]).abs() <= 1e-12 * (sx * sx + sy * sy));
            }}
        }

        #[test]
        fn swapping_axes_and_quarter_turn(sx in 0.1f64..50.0, sy in 0.1f64..50.0, theta in -10f64..10.0) {
            let a = covariance_matrix(sx, sy, theta);
            let b = covariance_matrix(sy, sx, theta + FRAC_PI_2);
            let scale = sx * sx + sy * sy;
            for i in 0..2 { for j in 0..2 {
                prop_assert!((a[i][j] - b[i][j]).abs() <= 1e-12 * scale.max(1.0));
            }}
        }

        #[test]
        fn eigenvalues_are_axis_variances(sx in 0.1f64..50.0, sy in 0.1f64..50.0, theta in -10f64..10.0) {
            let c = covariance_matrix(sx, sy, theta);
            let tr = c[0][0] + c[1][1];
            let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
            let scale = (sx * sx + sy * sy).powi(2);
            prop_assert!((tr - (sx * sx + sy * sy)).abs() <= 1e-10 * tr);
            prop_assert!((det - sx * sx * sy * sy).abs() <= 1e-10 * scale);
        }

        #[test]
        fn range_weight_contrast_invariance(a in prop::collection::vec(0f32..0.5, 3), b in prop::collection::vec(0f32..0.5, 3), sr in 0.05f64..1.0) {
            let base = range_log_weight(&a, &b, sr).unwrap();
            let a2: Vec<f32> = a.iter().map(|v| v * 2.0).collect();
            let b2: Vec<f32> = b.iter().map(|v| v * 2.0).collect();
            let doubled = range_log_weight(&a2, &b2, 2.0 * sr).unwrap();
            prop_assert!((base - doubled).abs() <= 1e-9 * base.abs().max(1.0));
            prop_assert!(base <= 0.0);
        }

        #[test]
        fn range_weight_decreases_with_distance(d1 in 0f32..0.4, extra in 0.001f32..0.4, sr in 0.05f64..1.0) {
            let near = range_log_weight(&[0.1], &[0.1 + d1], sr).unwrap();
            let far = range_log_weight(&[0.1], &[0.1 + d1 + extra], sr).unwrap();
            prop_assert!(far < near);
        }
    }
}
