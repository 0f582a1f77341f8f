//! Binary PPM (`P6`, maxval 255) images and their conversion to tensors.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Interleaved 8-bit RGB, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    /// `height×width×3` tensor with values scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = self.data.iter().map(|&b| b as f32 / 255.0).collect();
        Tensor::new([self.height, self.width, 3], data).expect("extents checked on construction")
    }

    /// Inverse of [`to_tensor`](Self::to_tensor): values are clamped to
    /// `[0, 1]`, scaled by 255 and rounded half up.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let (h, w, c) = t.dims3("image")?;
        if c != 3 {
            return Err(Error::shape("image", "channels", format!("expected 3 channels, got {c}")));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("image tensor".into()));
        }
        let data = t.data().iter().map(|&v| quantise(v)).collect();
        RgbImage::new(w, h, data)
    }

    /// Square `n×n` copy. Each axis is shrunk by area averaging or enlarged
    /// by nearest neighbour; the result is returned as a `[0, 1]` tensor.
    pub fn resize_to(&self, n: usize) -> Result<Tensor<f32>> {
        if n == 0 {
            return Err(Error::InvalidArgument("target size must be positive".into()));
        }
        let rows = axis_weights(self.height, n);
        let cols = axis_weights(self.width, n);
        let mut out = Vec::with_capacity(n * n * 3);
        for rw in &rows {
            for cw in &cols {
                let mut acc = [0.0f64; 3];
                for &(y, wy) in rw {
                    for &(x, wx) in cw {
                        let p = (y * self.width + x) * 3;
                        for (ch, a) in acc.iter_mut().enumerate() {
                            *a += wy * wx * self.data[p + ch] as f64;
                        }
                    }
                }
                out.extend(acc.iter().map(|a| (a / 255.0).clamp(0.0, 1.0) as f32));
            }
        }
        Tensor::new([n, n, 3], out)
    }
}

fn quantise(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

/// Source indices and weights for every output position along one axis.
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    if dst >= src {
        return (0..dst).map(|i| vec![(i * src / dst, 1.0)]).collect();
    }
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            if src % dst == 0 {
                let f = src / dst;
                return (i * f..(i + 1) * f).map(|s| (s, 1.0 / f as f64)).collect();
            }
            let (lo, hi) = (i as f64 * ratio, (i + 1) as f64 * ratio);
            (lo.floor() as usize..(hi.ceil() as usize).min(src))
                .map(|s| {
                    let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                    (s, overlap / ratio)
                })
                .filter(|&(_, w)| w > 0.0)
                .collect()
        })
        .collect()
}

pub fn write_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::format("PPM", self.pos as u64, detail)
    }

    /// Skips whitespace and `#` comments.
    fn skip_blank(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_blank();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("PPM", start as u64, format!("{what} out of range")))
    }
}

pub fn read_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut c = Cursor { bytes, pos: 0 };
    if !bytes.starts_with(b"P6") {
        return Err(c.err("missing P6 magic"));
    }
    c.pos = 2;
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(c.err("expected whitespace after magic"));
    }
    let width = c.number("width")?;
    let height = c.number("height")?;
    c.skip_blank();
    let maxval_at = c.pos;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format("PPM", maxval_at as u64, format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::format("PPM", maxval_at as u64, format!("maxval {maxval} unsupported, need 255")));
    }
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(c.err("expected a single whitespace byte before pixel data"));
    }
    c.pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| c.err("image dimensions overflow"))?;
    let have = bytes.len() - c.pos;
    if have < need {
        c.pos = bytes.len();
        return Err(c.err(format!("pixel data truncated: {have} of {need} bytes")));
    }
    RgbImage::new(width, height, bytes[c.pos..c.pos + need].to_vec())
}

pub fn load_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_ppm(&bytes)
}

pub fn save_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, write_ppm(img)).map_err(|e| Error::io(path, e))
}
