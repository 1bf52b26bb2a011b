//! Grayscale rasters and the geometric operations applied to them.
//!
//! Pixels are `f32` intensities in `[0, 1]`; 8-bit quantization only
//! happens at the PNG boundary. Pixel centers sit on integer coordinates.

use std::f64::consts::PI;
use std::io::Cursor;

use crate::error::{Error, Result};

/// Row-major single-channel image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    /// Builds an image, validating dimensions and the intensity range.
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image dimensions {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::shape(width * height, pixels.len()));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("intensity {p} outside [0,1]")));
        }
        Ok(Self { width, height, pixels })
    }

    /// Builds an image from arbitrary values, clamping into `[0, 1]`.
    /// NaN maps to 0.
    pub fn from_clamped(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        let pixels = pixels.into_iter().map(clamp01).collect();
        Self::new(width, height, pixels)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Self {
            width,
            height,
            pixels: vec![clamp01(value); width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(clamp01(f(x, y)));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Writes a pixel, clamping into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.pixels[y * self.width + x] = clamp01(value);
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Copies the half-open rectangle `[x0,x1) x [y0,y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x1 <= x0 || y1 <= y0 || x1 > self.width || y1 > self.height {
            return Err(Error::invalid(format!(
                "crop ({x0},{y0},{x1},{y1}) outside {}x{}",
                self.width, self.height
            )));
        }
        let w = x1 - x0;
        let mut pixels = Vec::with_capacity(w * (y1 - y0));
        for y in y0..y1 {
            pixels.extend_from_slice(&self.row(y)[x0..x1]);
        }
        Ok(Self { width: w, height: y1 - y0, pixels })
    }

    /// Pastes `src` with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, src: &GrayImage, x0: usize, y0: usize) -> Result<()> {
        if x0 + src.width > self.width || y0 + src.height > self.height {
            return Err(Error::invalid(format!(
                "paste of {}x{} at ({x0},{y0}) exceeds {}x{}",
                src.width, src.height, self.width, self.height
            )));
        }
        for y in 0..src.height {
            let dst = (y0 + y) * self.width + x0;
            self.pixels[dst..dst + src.width].copy_from_slice(src.row(y));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| f64::from(p)).sum::<f64>() / self.pixels.len() as f64
    }

    /// 8-bit quantization used by the PNG encoder.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| quantize(p)).collect()
    }
}

#[inline]
fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
fn quantize(p: f32) -> u8 {
    // round-half-up of p*255
    (f64::from(p) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Rec. 601 luma.
#[inline]
fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Decodes an 8- or 16-bit grayscale/RGB PNG (alpha ignored).
pub fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    use png::{BitDepth, ColorType, Transformations};

    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::PngDecode(e.to_string()))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    let channels = match color {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => {
            return Err(Error::UnsupportedFormat("indexed-color PNG".into()));
        }
    };
    let sample_bytes = match depth {
        BitDepth::Eight => 1,
        BitDepth::Sixteen => 2,
        other => {
            return Err(Error::UnsupportedFormat(format!("PNG bit depth {other:?}")));
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::PngDecode("IHDR: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::PngDecode(e.to_string()))?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let stride = frame.line_size;

    let max = if sample_bytes == 1 { 255.0 } else { 65535.0 };
    let sample = |row: &[u8], idx: usize| -> f64 {
        let v = if sample_bytes == 1 {
            f64::from(row[idx])
        } else {
            f64::from(u16::from_be_bytes([row[2 * idx], row[2 * idx + 1]]))
        };
        v / max
    };

    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = &buf[y * stride..(y + 1) * stride];
        for x in 0..width {
            let base = x * channels;
            let v = if channels >= 3 {
                luma(sample(row, base), sample(row, base + 1), sample(row, base + 2))
            } else {
                sample(row, base)
            };
            pixels.push(v as f32);
        }
    }
    GrayImage::from_clamped(width, height, pixels)
}

/// Encodes as an 8-bit grayscale PNG, storing `round(p * 255)`.
pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        writer
            .write_image_data(&img.to_u8())
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    Ok(out)
}

pub fn read_png(path: &std::path::Path) -> Result<GrayImage> {
    decode_png(&std::fs::read(path)?)
}

pub fn write_png(path: &std::path::Path, img: &GrayImage) -> Result<()> {
    std::fs::write(path, encode_png(img)?)?;
    Ok(())
}

/// Lanczos window radius.
pub const LANCZOS_A: f64 = 3.0;

#[inline]
fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Lanczos-3 kernel `sinc(x) * sinc(x/3)` on `|x| < 3`.
#[inline]
pub fn lanczos3(x: f64) -> f64 {
    if x.abs() < LANCZOS_A {
        sinc(x) * sinc(x / LANCZOS_A)
    } else {
        0.0
    }
}

/// Normalized taps of one output sample.
#[derive(Clone, Debug)]
pub struct Taps {
    /// Source indices, already clamped to the valid range.
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Lanczos-3 taps for every output sample along one axis.
///
/// Output sample `i` is centered at source coordinate
/// `(i + 0.5) * in_len / out_len - 0.5`. When shrinking, the kernel is
/// stretched by the scale factor so it acts as a low-pass filter.
pub fn lanczos_taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    let filter_scale = scale.max(1.0);
    let support = LANCZOS_A * filter_scale;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let lo = (center - support).floor() as i64;
            let hi = (center + support).ceil() as i64;
            let mut indices = Vec::with_capacity((hi - lo + 1) as usize);
            let mut weights = Vec::with_capacity((hi - lo + 1) as usize);
            for j in lo..=hi {
                let w = lanczos3((j as f64 - center) / filter_scale);
                if w != 0.0 {
                    indices.push(j.clamp(0, in_len as i64 - 1) as usize);
                    weights.push(w);
                }
            }
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            Taps { indices, weights }
        })
        .collect()
}

/// Separable Lanczos-3 resize with clamp-to-edge borders.
///
/// An axis whose length is unchanged is copied verbatim.
pub fn resize_lanczos(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!("resize target {out_w}x{out_h}")));
    }
    let (in_w, in_h) = img.dims();

    // Horizontal pass into an f64 buffer of in_h x out_w.
    let mut tmp = vec![0f64; in_h * out_w];
    if in_w == out_w {
        for (t, &p) in tmp.iter_mut().zip(&img.pixels) {
            *t = f64::from(p);
        }
    } else {
        let taps = lanczos_taps(in_w, out_w);
        for y in 0..in_h {
            let row = img.row(y);
            let dst = &mut tmp[y * out_w..(y + 1) * out_w];
            for (d, t) in dst.iter_mut().zip(&taps) {
                *d = t
                    .indices
                    .iter()
                    .zip(&t.weights)
                    .map(|(&j, &w)| w * f64::from(row[j]))
                    .sum();
            }
        }
    }

    let mut out = vec![0f32; out_w * out_h];
    if in_h == out_h {
        for (o, &t) in out.iter_mut().zip(&tmp) {
            *o = t as f32;
        }
    } else {
        let taps = lanczos_taps(in_h, out_h);
        let mut acc = vec![0f64; out_w];
        for (y, t) in taps.iter().enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (&j, &w) in t.indices.iter().zip(&t.weights) {
                let src = &tmp[j * out_w..(j + 1) * out_w];
                for (a, &s) in acc.iter_mut().zip(src) {
                    *a += w * s;
                }
            }
            for (o, &a) in out[y * out_w..(y + 1) * out_w].iter_mut().zip(&acc) {
                *o = a as f32;
            }
        }
    }
    GrayImage::from_clamped(out_w, out_h, out)
}

/// Mirrors columns: column `j` moves to `width - 1 - j`.
pub fn flip_horizontal(img: &GrayImage) -> GrayImage {
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for y in 0..img.height {
        pixels.extend(img.row(y).iter().rev());
    }
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// Maps output coordinates `(x, y)` to source coordinates
/// `(a*x + b*y + c, d*x + e*y + f)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl AffineTransform {
    pub const IDENTITY: Self = Self {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 0.0,
        e: 1.0,
        f: 0.0,
    };

    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Self {
        Self { a, b, c, d, e, f }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new(1.0, 0.0, tx, 0.0, 1.0, ty)
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.e - self.b * self.d
    }

    pub fn is_invertible(&self) -> bool {
        self.determinant().abs() > 1e-12
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.c,
            self.d * x + self.e * y + self.f,
        )
    }

    /// `self ∘ other`: applies `other` first.
    pub fn then_after(&self, other: &Self) -> Self {
        Self {
            a: self.a * other.a + self.b * other.d,
            b: self.a * other.b + self.b * other.e,
            c: self.a * other.c + self.b * other.f + self.c,
            d: self.d * other.a + self.e * other.d,
            e: self.d * other.b + self.e * other.e,
            f: self.d * other.c + self.e * other.f + self.f,
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if det.abs() <= 1e-12 {
            return Err(Error::invalid("singular affine transform"));
        }
        let a = self.e / det;
        let b = -self.b / det;
        let d = -self.d / det;
        let e = self.a / det;
        Ok(Self {
            a,
            b,
            c: -(a * self.c + b * self.f),
            d,
            e,
            f: -(d * self.c + e * self.f),
        })
    }
}

/// Source coordinates within this distance outside the raster still count
/// as inside; absorbs trig round-off for full turns.
const EDGE_EPS: f64 = 1e-6;

/// Bilinear sample at `(sx, sy)`, or `None` outside the raster.
#[inline]
fn bilinear(img: &GrayImage, sx: f64, sy: f64) -> Option<f64> {
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    if sx < -EDGE_EPS || sy < -EDGE_EPS || sx > max_x + EDGE_EPS || sy > max_y + EDGE_EPS {
        return None;
    }
    let sx = sx.clamp(0.0, max_x);
    let sy = sy.clamp(0.0, max_y);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let p = |x, y| f64::from(img.get(x, y));
    let top = if fx == 0.0 { p(x0, y0) } else { p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx };
    let bot = if fx == 0.0 { p(x0, y1) } else { p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx };
    Some(if fy == 0.0 { top } else { top * (1.0 - fy) + bot * fy })
}

/// Resamples `img` through `t` (output to source), bilinearly, with `fill`
/// outside the source.
pub fn warp_affine(img: &GrayImage, t: &AffineTransform, fill: f32) -> Result<GrayImage> {
    if !t.is_invertible() {
        return Err(Error::invalid("singular affine transform"));
    }
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for y in 0..img.height {
        for x in 0..img.width {
            let (sx, sy) = t.apply(x as f64, y as f64);
            let v = bilinear(img, sx, sy).map_or(fill, |v| v as f32);
            pixels.push(v);
        }
    }
    GrayImage::from_clamped(img.width, img.height, pixels)
}

/// Output-to-source transform rotating content by `degrees` about the
/// image center. With the y axis pointing down, positive angles turn the
/// content clockwise on screen.
pub fn rotation_about_center(width: usize, height: usize, degrees: f64) -> AffineTransform {
    let (s, c) = degrees.to_radians().sin_cos();
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    // src = R(-θ) (dst - center) + center
    AffineTransform::new(c, s, cx - c * cx - s * cy, -s, c, cy + s * cx - c * cy)
}

/// Rotation about the center with black fill.
pub fn rotate_about_center(img: &GrayImage, degrees: f64) -> GrayImage {
    let t = rotation_about_center(img.width, img.height, degrees);
    warp_affine(img, &t, 0.0).expect("rotations are invertible")
}
