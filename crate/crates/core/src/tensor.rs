//! Dense planar grids and the two resamplers shared by everything else.
//!
//! Coordinates follow the half-pixel-center convention: LR pixel `q` covers
//! HR pixels `q*s .. q*s + s` and its center sits at `(q + 0.5) * s - 0.5` in
//! HR pixel coordinates. Both resamplers and the kernel centers use it.

use crate::error::{Axis, Error, Result};
use crate::par;

/// A `channels x height x width` grid of finite `f32` values, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl PlanarMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidMap(format!(
                "dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::InvalidMap(format!(
                "data length {} does not match {channels}x{height}x{width} = {expected}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMap(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a map from values already known to be finite and correctly sized.
    pub(crate) fn from_parts(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Evaluates `f(c, y, x)` for every element.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Per-channel `(min, max)`.
    pub fn channel_ranges(&self) -> Vec<(f32, f32)> {
        (0..self.channels)
            .map(|c| {
                self.plane(c)
                    .iter()
                    .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .collect()
    }

    /// Single-channel copy of channel `c`.
    pub fn channel(&self, c: usize) -> PlanarMap {
        PlanarMap::from_parts(1, self.height, self.width, self.plane(c).to_vec())
    }

    /// Concatenates maps of equal spatial size along the channel axis.
    pub fn stack(maps: &[PlanarMap]) -> Result<PlanarMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::InvalidMap("cannot stack zero maps".into()))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for m in maps {
            if (m.height, m.width) != (first.height, first.width) {
                return Err(Error::DimensionMismatch {
                    what: "stacked maps",
                    left: first.dims(),
                    right: m.dims(),
                });
            }
            channels += m.channels;
            data.extend_from_slice(&m.data);
        }
        Ok(PlanarMap::from_parts(channels, first.height, first.width, data))
    }

    /// Crops the centered `height x width` window.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<PlanarMap> {
        if height == 0 || width == 0 || height > self.height || width > self.width {
            return Err(Error::InvalidParameter(format!(
                "crop {height}x{width} does not fit in {}x{}",
                self.height, self.width
            )));
        }
        let y0 = (self.height - height) / 2;
        let x0 = (self.width - width) / 2;
        let mut data = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            for y in y0..y0 + height {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + width]);
            }
        }
        Ok(PlanarMap::from_parts(self.channels, height, width, data))
    }

    /// Elementwise `f`, rejecting non-finite results.
    pub fn map_values(&self, f: impl Fn(f32) -> f32) -> Result<PlanarMap> {
        PlanarMap::new(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// Integer upsampling stride: HR pixels per LR pixel along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScaleFactor(usize);

impl ScaleFactor {
    pub fn new(s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidParameter("scale factor must be >= 1".into()));
        }
        Ok(Self(s))
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// Infers the stride between an LR grid and an HR grid; both axes must agree.
    pub fn between(lr: (usize, usize), hr: (usize, usize)) -> Result<Self> {
        let (lh, lw) = lr;
        let (hh, hw) = hr;
        if lh == 0 || lw == 0 || hh % lh != 0 || hw % lw != 0 || hh / lh != hw / lw {
            return Err(Error::NonIntegralRatio { lr, hr });
        }
        Self::new(hh / lh)
    }
}

impl std::fmt::Display for ScaleFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// HR coordinate of the center of LR index `i` along one axis.
#[inline]
pub(crate) fn center_coord(i: usize, s: usize) -> f64 {
    (i as f64 + 0.5) * s as f64 - 0.5
}

/// Nearest LR index to integer HR index `p` under the half-pixel convention.
#[inline]
pub(crate) fn nearest_lr(p: usize, s: usize) -> usize {
    p / s
}

/// HR `(y, x)` coordinate of LR pixel `q = (y, x)`'s center.
pub fn center_hr(q: (usize, usize), lr_dims: (usize, usize), scale: ScaleFactor) -> Result<(f64, f64)> {
    let (qy, qx) = q;
    let (h, w) = lr_dims;
    if qy >= h || qx >= w {
        return Err(Error::OutOfBounds {
            y: qy,
            x: qx,
            height: h,
            width: w,
        });
    }
    Ok((center_coord(qy, scale.get()), center_coord(qx, scale.get())))
}

/// Two-tap linear interpolation table for one axis, with edge clamping.
#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

fn tap(coord: f64, len: usize) -> Tap {
    let max = (len - 1) as f64;
    let c = coord.clamp(0.0, max);
    let i0 = c.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    Tap {
        i0,
        i1,
        frac: c - i0 as f64,
    }
}

fn resample(src: &PlanarMap, out_h: usize, out_w: usize, ys: &[Tap], xs: &[Tap]) -> PlanarMap {
    let w = src.width;
    let mut data = vec![0f32; src.channels * out_h * out_w];
    par::for_each_row(&mut data, out_w, |row, out| {
        let c = row / out_h;
        let ty = ys[row % out_h];
        let plane = src.plane(c);
        let r0 = &plane[ty.i0 * w..(ty.i0 + 1) * w];
        let r1 = &plane[ty.i1 * w..(ty.i1 + 1) * w];
        for (o, tx) in out.iter_mut().zip(xs) {
            let top = r0[tx.i0] as f64 * (1.0 - tx.frac) + r0[tx.i1] as f64 * tx.frac;
            let bot = r1[tx.i0] as f64 * (1.0 - tx.frac) + r1[tx.i1] as f64 * tx.frac;
            *o = (top * (1.0 - ty.frac) + bot * ty.frac) as f32;
        }
    });
    PlanarMap::from_parts(src.channels, out_h, out_w, data)
}

/// Samples `hr` at every LR center. HR dims must be multiples of `scale`.
pub fn downsample_bilinear(hr: &PlanarMap, scale: ScaleFactor) -> Result<PlanarMap> {
    let s = scale.get();
    if !hr.height.is_multiple_of(s) {
        return Err(Error::NotDivisible {
            axis: Axis::Height,
            len: hr.height,
            scale: s,
        });
    }
    if !hr.width.is_multiple_of(s) {
        return Err(Error::NotDivisible {
            axis: Axis::Width,
            len: hr.width,
            scale: s,
        });
    }
    if s == 1 {
        return Ok(hr.clone());
    }
    let (lh, lw) = (hr.height / s, hr.width / s);
    let ys: Vec<Tap> = (0..lh).map(|i| tap(center_coord(i, s), hr.height)).collect();
    let xs: Vec<Tap> = (0..lw).map(|j| tap(center_coord(j, s), hr.width)).collect();
    Ok(resample(hr, lh, lw, &ys, &xs))
}

/// Center-aligned bilinear upsampling by `scale`, clamping at the borders.
pub fn bilinear_upsample(lr: &PlanarMap, scale: ScaleFactor) -> PlanarMap {
    let s = scale.get();
    let (hh, hw) = (lr.height * s, lr.width * s);
    let inv = 1.0 / s as f64;
    let ys: Vec<Tap> = (0..hh)
        .map(|y| tap((y as f64 + 0.5) * inv - 0.5, lr.height))
        .collect();
    let xs: Vec<Tap> = (0..hw)
        .map(|x| tap((x as f64 + 0.5) * inv - 0.5, lr.width))
        .collect();
    resample(lr, hh, hw, &ys, &xs)
}
