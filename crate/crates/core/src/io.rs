//! PNG rasters, `.npy` float32 arrays and kernel-field files.
//!
//! Readers reject anything they cannot represent exactly; nothing is truncated.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{KernelField, RenderConfig};
use crate::tensor::{PlanarMap, ScaleFactor};

fn decode_err(path: &Path, reason: impl ToString) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Reads an 8- or 16-bit grayscale or RGB PNG into `[0, 1]`. Alpha is dropped.
pub fn read_image(path: impl AsRef<Path>) -> Result<PlanarMap> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| decode_err(path, e))?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    let depth = info.bit_depth;
    let color = info.color_type;
    if info.palette.is_some() || color == png::ColorType::Indexed {
        return Err(Error::UnsupportedLayout("indexed colour".into()));
    }
    let bits = match depth {
        png::BitDepth::Eight => 8u8,
        png::BitDepth::Sixteen => 16,
        other => return Err(Error::UnsupportedBitDepth(other as u8)),
    };
    let (stored, keep) = match color {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => unreachable!(),
    };
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| decode_err(path, e))?;
    let buf = &buf[..frame.buffer_size()];

    let n = width * height;
    let mut data = vec![0f32; keep * n];
    for i in 0..n {
        for c in 0..keep {
            let k = i * stored + c;
            data[c * n + i] = if bits == 8 {
                buf[k] as f32 / 255.0
            } else {
                u16::from_be_bytes([buf[2 * k], buf[2 * k + 1]]) as f32 / 65535.0
            };
        }
    }
    PlanarMap::new(keep, height, width, data)
}

/// Writes a 1- or 3-channel map as PNG at 8 or 16 bits, clamping to `[0, 1]`.
/// Returns how many values had to be clamped.
pub fn write_image(map: &PlanarMap, path: impl AsRef<Path>, bit_depth: u8) -> Result<usize> {
    let path = path.as_ref();
    let (c, h, w) = map.dims();
    let color = match c {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(Error::UnsupportedLayout(format!("{c} channels; images need 1 or 3"))),
    };
    let depth = match bit_depth {
        8 => png::BitDepth::Eight,
        16 => png::BitDepth::Sixteen,
        other => return Err(Error::UnsupportedBitDepth(other)),
    };
    let n = h * w;
    let mut clamped = 0;
    let mut bytes = Vec::with_capacity(n * c * (bit_depth as usize / 8));
    for i in 0..n {
        for ch in 0..c {
            let v = map.data()[ch * n + i];
            if !(0.0..=1.0).contains(&v) {
                clamped += 1;
            }
            let v = v.clamp(0.0, 1.0);
            if bit_depth == 8 {
                bytes.push((v * 255.0).round() as u8);
            } else {
                bytes.extend_from_slice(&((v * 65535.0).round() as u16).to_be_bytes());
            }
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header().map_err(|e| encode_err(path, e))?;
    writer.write_image_data(&bytes).map_err(|e| encode_err(path, e))?;
    writer.finish().map_err(|e| encode_err(path, e))?;
    Ok(clamped)
}

fn encode_err(path: &Path, e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(source) => Error::io(path, source),
        other => decode_err(path, other),
    }
}

const NPY_MAGIC: &[u8] = b"\x93NUMPY";

/// Parses the header dictionary of an `.npy` file into its shape.
fn parse_npy_header(text: &str) -> Result<Vec<usize>> {
    let malformed = |m: &str| Error::MalformedHeader(m.to_string());
    let body = text.trim_end_matches(['\n', ' ', '\0']).trim();
    let body = body
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or_else(|| malformed("header is not a dict literal"))?;

    let value_of = |key: &str| -> Result<&str> {
        let pat_a = format!("'{key}'");
        let pat_b = format!("\"{key}\"");
        let at = body
            .find(&pat_a)
            .map(|i| i + pat_a.len())
            .or_else(|| body.find(&pat_b).map(|i| i + pat_b.len()))
            .ok_or_else(|| malformed(&format!("missing key {key}")))?;
        let rest = body[at..].trim_start();
        rest.strip_prefix(':')
            .map(str::trim_start)
            .ok_or_else(|| malformed(&format!("no value for {key}")))
    };

    let descr = value_of("descr")?;
    let quote = descr.chars().next().ok_or_else(|| malformed("empty descr"))?;
    if quote != '\'' && quote != '"' {
        return Err(malformed("descr is not a string"));
    }
    let end = descr[1..].find(quote).ok_or_else(|| malformed("unterminated descr"))?;
    let dtype = &descr[1..1 + end];
    if dtype != "<f4" {
        return Err(Error::DtypeMismatch(dtype.to_string()));
    }

    let fortran = value_of("fortran_order")?;
    if fortran.starts_with("True") {
        return Err(Error::UnsupportedLayout("Fortran-ordered array".into()));
    } else if !fortran.starts_with("False") {
        return Err(malformed("fortran_order is not a bool"));
    }

    let shape = value_of("shape")?;
    let shape = shape.strip_prefix('(').ok_or_else(|| malformed("shape is not a tuple"))?;
    let close = shape.find(')').ok_or_else(|| malformed("unterminated shape"))?;
    shape[..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| malformed("non-integer dimension")))
        .collect()
}

/// Interprets an `.npy` shape as `(C, H, W)`.
fn shape_to_chw(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        [1, c, h, w] => Ok((c, h, w)),
        _ => Err(Error::ShapeRank(shape.len())),
    }
}

/// Reads a little-endian float32 C-ordered `.npy` file (format 1.x, 2.x or 3.x).
pub fn read_array(path: impl AsRef<Path>) -> Result<PlanarMap> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_array(&bytes)
}

/// Decodes an in-memory `.npy` image.
pub fn decode_array(bytes: &[u8]) -> Result<PlanarMap> {
    let malformed = |m: &str| Error::MalformedHeader(m.to_string());
    if bytes.len() < 10 || &bytes[..6] != NPY_MAGIC {
        return Err(malformed("missing magic string"));
    }
    let (header_len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(malformed("truncated preamble"));
            }
            (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12)
        }
        v => return Err(malformed(&format!("unknown format version {v}"))),
    };
    let header = bytes
        .get(start..start + header_len)
        .ok_or_else(|| malformed("truncated header"))?;
    let header = std::str::from_utf8(header).map_err(|_| malformed("header is not text"))?;
    let shape = parse_npy_header(header)?;
    let (c, h, w) = shape_to_chw(&shape)?;
    let payload = &bytes[start + header_len..];
    let count = c * h * w;
    if payload.len() != count * 4 {
        return Err(malformed(&format!(
            "payload holds {} bytes, shape needs {}",
            payload.len(),
            count * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    PlanarMap::new(c, h, w, data)
}

/// Encodes a map as an `.npy` 1.0 file of shape `(C, H, W)`.
pub fn encode_array(map: &PlanarMap) -> Vec<u8> {
    let (c, h, w) = map.dims();
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': ({c}, {h}, {w}), }}");
    // preamble + header + newline padded to a multiple of 64
    let total = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - total % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + map.data().len() * 4);
    out.extend_from_slice(NPY_MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_array(map: &PlanarMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    File::create(path)
        .and_then(|mut f| f.write_all(&encode_array(map)))
        .map_err(|e| Error::io(path, e))
}

/// Sidecar record stored next to a kernel-field array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub scale: usize,
    pub r_max: usize,
    pub alpha_dyn: f64,
    pub lr_height: usize,
    pub lr_width: usize,
}

impl FieldMeta {
    /// Render configuration recorded at fit time.
    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            r_max: self.r_max,
            alpha_dyn: self.alpha_dyn,
            ..RenderConfig::default()
        }
    }

    /// Fails unless the field was fit at `scale`.
    pub fn expect_scale(&self, scale: ScaleFactor) -> Result<()> {
        if self.scale != scale.get() {
            return Err(Error::ScaleMismatch {
                field: self.scale,
                render: scale.get(),
            });
        }
        Ok(())
    }
}

/// Path of the sidecar belonging to a kernel-field array.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Converts a field into its 4-channel storage form: sigma_x, sigma_y, theta, sigma_r.
pub fn field_to_map(field: &KernelField) -> PlanarMap {
    let (h, w) = field.lr_dims();
    let n = field.len();
    let mut data = Vec::with_capacity(4 * n);
    data.extend((0..n).map(|i| field.sigma_x(i) as f32));
    data.extend((0..n).map(|i| field.sigma_y(i) as f32));
    data.extend(field.theta().iter().map(|&t| t as f32));
    data.extend((0..n).map(|i| field.sigma_r(i) as f32));
    PlanarMap::from_parts(4, h, w, data)
}

pub fn map_to_field(map: &PlanarMap, scale: ScaleFactor) -> Result<KernelField> {
    let (c, h, w) = map.dims();
    if c != 4 {
        return Err(Error::DimensionMismatch {
            what: "kernel-field array (expects 4 channels)",
            left: (4, h, w),
            right: map.dims(),
        });
    }
    let plane = |k: usize| map.plane(k).iter().map(|&v| v as f64).collect::<Vec<_>>();
    KernelField::from_params((h, w), scale, &plane(0), &plane(1), &plane(2), &plane(3))
}

pub fn write_kernel_field(field: &KernelField, config: &RenderConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_array(&field_to_map(field), path)?;
    let (lr_height, lr_width) = field.lr_dims();
    let meta = FieldMeta {
        scale: field.scale().get(),
        r_max: config.r_max,
        alpha_dyn: config.alpha_dyn,
        lr_height,
        lr_width,
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("plain struct serialises");
    std::fs::write(&side, text + "\n").map_err(|e| Error::io(side, e))
}

pub fn read_kernel_field(path: impl AsRef<Path>) -> Result<(KernelField, FieldMeta)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let missing = |reason: String| Error::MissingSidecar {
        path: side.clone(),
        reason,
    };
    let text = std::fs::read_to_string(&side).map_err(|e| missing(e.to_string()))?;
    let meta: FieldMeta = serde_json::from_str(&text).map_err(|e| missing(e.to_string()))?;
    let scale = ScaleFactor::new(meta.scale).map_err(|e| missing(e.to_string()))?;
    meta.render_config().validate().map_err(|e| missing(e.to_string()))?;
    let map = read_array(path)?;
    if (map.height(), map.width()) != (meta.lr_height, meta.lr_width) {
        return Err(Error::DimensionMismatch {
            what: "kernel-field array and its sidecar",
            left: (4, meta.lr_height, meta.lr_width),
            right: map.dims(),
        });
    }
    Ok((map_to_field(&map, scale)?, meta))
}
