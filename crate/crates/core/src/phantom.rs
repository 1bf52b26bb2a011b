//! Procedural VCUS-like frames with ground-truth ROIs.
//!
//! A frame shows a medium-gray laryngeal wedge on a dark background, two
//! hypoechoic cord bands fanning down from the anterior commissure near the
//! top center, bright arytenoid blobs at the cord ends with reverberation
//! stripes below them, and optionally a band of bright glyph rectangles
//! standing in for burned-in text. Speckle is multiplicative and clamped.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::labels::{BBox, PixelRect};
use crate::pipeline::{write_y4m, Colorspace};
use crate::rng::keyed_rng;
use crate::synthesis::Side;

const GEOMETRY_STREAM: u64 = 0x67;
const SPECKLE_STREAM: u64 = 0x73;
const TEXT_STREAM: u64 = 0x74;

/// Reverberation stripes under the arytenoids.
const REVERB_STRIPES: usize = 3;
const REVERB_SPACING: f64 = 12.0;
/// Horizontal ROI padding beyond the outermost band edge.
const ROI_MARGIN: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Asymmetry {
    pub side: Side,
    /// Fractional shortening of that side's cord, in `[0, 1)`.
    pub fraction: f64,
}

/// Generator settings. Pairs are inclusive `(lo, hi)` ranges sampled
/// uniformly per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub width: usize,
    pub height: usize,
    pub background: f32,
    pub tissue: (f32, f32),
    pub cord_intensity: (f32, f32),
    pub cord_width: (f64, f64),
    /// Angle of each cord from the vertical, degrees.
    pub cord_angle: (f64, f64),
    pub cord_length: (f64, f64),
    /// Anterior commissure x is the frame center plus `U(-j, j)`.
    pub apex_x_jitter: f64,
    pub apex_y: (f64, f64),
    pub blob_intensity: (f32, f32),
    pub blob_radius: (f64, f64),
    /// Standard deviation of the multiplicative speckle.
    pub speckle: f64,
    pub text_band: Option<PixelRect>,
    pub asymmetry: Option<Asymmetry>,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            width: 512,
            height: 448,
            background: 0.06,
            tissue: (0.38, 0.5),
            cord_intensity: (0.08, 0.16),
            cord_width: (10.0, 14.0),
            cord_angle: (22.0, 30.0),
            cord_length: (150.0, 180.0),
            apex_x_jitter: 16.0,
            apex_y: (70.0, 95.0),
            blob_intensity: (0.75, 0.92),
            blob_radius: (10.0, 14.0),
            speckle: 0.2,
            text_band: Some(PixelRect::new(10, 6, 230, 26)),
            asymmetry: None,
        }
    }
}

fn range_ok<T: PartialOrd + Copy>(r: (T, T), lo: T, hi: T) -> bool {
    lo <= r.0 && r.0 <= r.1 && r.1 <= hi
}

impl PhantomParams {
    pub fn with_asymmetry(mut self, side: Side, fraction: f64) -> Self {
        self.asymmetry = Some(Asymmetry { side, fraction });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |r: (f32, f32)| range_ok(r, 0.0, 1.0);
        let intensities = (0.0..=1.0).contains(&self.background)
            && unit(self.tissue)
            && unit(self.cord_intensity)
            && unit(self.blob_intensity);
        if !intensities {
            return Err(Error::invalid("phantom intensities must lie in [0, 1]"));
        }
        let positive = range_ok(self.cord_width, f64::MIN_POSITIVE, f64::MAX)
            && range_ok(self.cord_angle, 0.0, 80.0)
            && range_ok(self.cord_length, 1.0, f64::MAX)
            && range_ok(self.blob_radius, 1.0, f64::MAX)
            && range_ok(self.apex_y, 0.0, f64::MAX)
            && self.apex_x_jitter >= 0.0
            && self.speckle >= 0.0;
        if !positive {
            return Err(Error::invalid(format!("phantom ranges {self:?}")));
        }
        if let Some(a) = self.asymmetry {
            if !(0.0..1.0).contains(&a.fraction) {
                return Err(Error::invalid(format!("asymmetry fraction {} outside [0, 1)", a.fraction)));
            }
        }
        let (w, h) = (self.width as f64, self.height as f64);
        let reach_x = self.cord_length.1 * self.cord_angle.1.to_radians().sin() + self.cord_width.1 + self.blob_radius.1;
        let reach_y = self.cord_length.1 * self.cord_angle.0.to_radians().cos()
            + self.blob_radius.1
            + REVERB_SPACING * (REVERB_STRIPES as f64 + 1.0);
        let fits = w / 2.0 - self.apex_x_jitter - reach_x - ROI_MARGIN >= 0.0
            && w / 2.0 + self.apex_x_jitter + reach_x + ROI_MARGIN <= w
            && self.apex_y.1 + reach_y <= h;
        if !fits {
            return Err(Error::invalid(format!(
                "cord geometry does not fit a {}x{} frame",
                self.width, self.height
            )));
        }
        if let Some(t) = self.text_band {
            if !t.fits_in(self.width, self.height) || t.y1 as f64 > self.apex_y.0 {
                return Err(Error::invalid(format!("text band {t:?} must sit above the cords")));
            }
        }
        Ok(())
    }
}

/// Analytic geometry of one rendered frame, in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CordGeometry {
    pub apex: (f64, f64),
    pub left_end: (f64, f64),
    pub right_end: (f64, f64),
    pub band_width: f64,
    pub blob_radius: f64,
    pub tissue: f32,
    pub cord_intensity: f32,
    pub blob_intensity: f32,
}

impl CordGeometry {
    pub fn end(&self, side: Side) -> (f64, f64) {
        match side {
            Side::Left => self.left_end,
            Side::Right => self.right_end,
        }
    }

    /// Length of one cord band from the commissure to its end.
    pub fn cord_length(&self, side: Side) -> f64 {
        let (x, y) = self.end(side);
        (x - self.apex.0).hypot(y - self.apex.1)
    }

    /// Anterior commissure on top; arytenoid blobs (the start of the
    /// reverberation artifacts) at the bottom; both band edges inside.
    pub fn roi_pixels(&self) -> (f64, f64, f64, f64) {
        let pad = self.band_width / 2.0 + ROI_MARGIN;
        let x0 = (self.left_end.0 - self.blob_radius).min(self.left_end.0 - pad);
        let x1 = (self.right_end.0 + self.blob_radius).max(self.right_end.0 + pad);
        let y0 = self.apex.1 - self.band_width / 2.0;
        let y1 = self.left_end.1.max(self.right_end.1) + self.blob_radius;
        (x0, y0, x1, y1)
    }

    /// Moves the whole figure by `(dx, dy)` and opens both cords outward
    /// by `spread` radians.
    fn shifted(mut self, dx: f64, dy: f64, spread: f64) -> Self {
        let apex = self.apex;
        let open = |(x, y): (f64, f64)| {
            let (vx, vy) = (x - apex.0, y - apex.1);
            let len = vx.hypot(vy);
            let angle = vx.abs().atan2(vy) + spread;
            (apex.0 + vx.signum() * len * angle.sin() + dx, apex.1 + len * angle.cos() + dy)
        };
        self.left_end = open(self.left_end);
        self.right_end = open(self.right_end);
        self.apex = (apex.0 + dx, apex.1 + dy);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomFrame {
    pub image: GrayImage,
    pub roi: BBox,
    pub geometry: CordGeometry,
    pub params: PhantomParams,
    pub seed: u64,
    pub source_id: String,
}

impl PhantomFrame {
    /// ROI in this frame's pixel grid.
    pub fn roi_rect(&self) -> Result<PixelRect> {
        crate::labels::to_pixel_rect(&self.roi, self.image.width(), self.image.height())
    }
}

fn uniform<T: Into<f64> + Copy>(rng: &mut impl Rng, r: (T, T)) -> f64 {
    let (lo, hi) = (r.0.into(), r.1.into());
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn sample_geometry(p: &PhantomParams, seed: u64) -> CordGeometry {
    let mut rng = keyed_rng(seed, &[GEOMETRY_STREAM]);
    let apex = (
        p.width as f64 / 2.0 + uniform(&mut rng, (-p.apex_x_jitter, p.apex_x_jitter)),
        uniform(&mut rng, p.apex_y),
    );
    let length = uniform(&mut rng, p.cord_length);
    let angle = uniform(&mut rng, p.cord_angle);
    // each side deviates slightly from the shared angle
    let tilt = |rng: &mut _| (angle + uniform(rng, (-1.5, 1.5))).clamp(p.cord_angle.0, p.cord_angle.1).to_radians();
    let (la, ra) = (tilt(&mut rng), tilt(&mut rng));
    let (mut ll, mut rl) = (length, length);
    if let Some(a) = p.asymmetry {
        match a.side {
            Side::Left => ll *= 1.0 - a.fraction,
            Side::Right => rl *= 1.0 - a.fraction,
        }
    }
    CordGeometry {
        apex,
        left_end: (apex.0 - ll * la.sin(), apex.1 + ll * la.cos()),
        right_end: (apex.0 + rl * ra.sin(), apex.1 + rl * ra.cos()),
        band_width: uniform(&mut rng, p.cord_width),
        blob_radius: uniform(&mut rng, p.blob_radius),
        tissue: uniform(&mut rng, p.tissue) as f32,
        cord_intensity: uniform(&mut rng, p.cord_intensity) as f32,
        blob_intensity: uniform(&mut rng, p.blob_intensity) as f32,
    }
}

/// Distance from `q` to segment `a-b` and the position along it in `[0, 1]`.
fn segment_distance(q: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((q.0 - a.0) * dx + (q.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (px, py) = (a.0 + t * dx, a.1 + t * dy);
    ((q.0 - px).hypot(q.1 - py), t)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn render(p: &PhantomParams, g: &CordGeometry, speckle: &[f64], glyphs: &[PixelRect]) -> GrayImage {
    let bg = f64::from(p.background);
    let tissue = f64::from(g.tissue);
    let cord = f64::from(g.cord_intensity);
    let blob = f64::from(g.blob_intensity);
    let half = g.band_width / 2.0;
    let wedge = 3.2 * g.band_width;
    let stripe_x0 = g.left_end.0 - g.blob_radius;
    let stripe_x1 = g.right_end.0 + g.blob_radius;
    let stripe_top = g.left_end.1.max(g.right_end.1) + g.blob_radius;
    GrayImage::from_fn(p.width, p.height, |x, y| {
        let q = (x as f64, y as f64);
        let (dl, tl) = segment_distance(q, g.apex, g.left_end);
        let (dr, tr) = segment_distance(q, g.apex, g.right_end);
        let d = dl.min(dr);
        let t = if dl <= dr { tl } else { tr };

        // laryngeal wedge around and between the cords
        let inside = {
            let below = q.1 >= g.apex.1;
            let lx = g.apex.0 + (g.left_end.0 - g.apex.0) * ((q.1 - g.apex.1) / (g.left_end.1 - g.apex.1));
            let rx = g.apex.0 + (g.right_end.0 - g.apex.0) * ((q.1 - g.apex.1) / (g.right_end.1 - g.apex.1));
            below && q.0 > lx && q.0 < rx && q.1 <= g.left_end.1.max(g.right_end.1)
        };
        let mut v = if inside {
            0.5 * (bg + tissue)
        } else {
            bg + (tissue - bg) * (1.0 - smoothstep(wedge * 0.6, wedge, d))
        };

        // hypoechoic band with a bright rim along the ligament
        let core = 1.0 - smoothstep(half * 0.7, half, d);
        v += (cord - v) * core;
        let rim = (-((d - half) / 1.5).powi(2)).exp() * (0.35 + 0.65 * t);
        v += (0.85 - v).max(0.0) * 0.7 * rim;

        for &(ex, ey) in [g.left_end, g.right_end].iter() {
            let r = ((q.0 - ex) / g.blob_radius).hypot((q.1 - ey) / (0.75 * g.blob_radius));
            v += (blob - v).max(0.0) * (-(r * r) * 1.5).exp();
        }

        if q.0 >= stripe_x0 && q.0 <= stripe_x1 {
            for k in 1..=REVERB_STRIPES {
                let sy = stripe_top + REVERB_SPACING * k as f64;
                let strength = 0.55 * 0.7f64.powi(k as i32 - 1);
                v += (0.9 - v).max(0.0) * strength * (-((q.1 - sy) / 1.6).powi(2)).exp();
            }
        }

        v *= 1.0 + speckle[y * p.width + x];
        if glyphs.iter().any(|r| r.contains(x, y)) {
            v = 0.95;
        }
        v.clamp(0.0, 1.0) as f32
    })
}

fn speckle_field(p: &PhantomParams, seed: u64) -> Vec<f64> {
    let n = p.width * p.height;
    if p.speckle == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, p.speckle).expect("non-negative std");
    let mut rng = keyed_rng(seed, &[SPECKLE_STREAM]);
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

/// Glyph-like rectangles filling the text band, like a line of
/// burned-in characters.
fn glyphs(p: &PhantomParams, seed: u64) -> Vec<PixelRect> {
    let Some(band) = p.text_band else {
        return Vec::new();
    };
    let mut rng = keyed_rng(seed, &[TEXT_STREAM]);
    let mut out = Vec::new();
    let mut x = band.x0;
    while x + 3 <= band.x1 {
        let w = rng.random_range(3..=8).min(band.x1 - x);
        if rng.random_bool(0.85) {
            let top = band.y0 + rng.random_range(0..=band.height() / 4);
            out.push(PixelRect::new(x, top, x + w, band.y1));
        }
        x += w + rng.random_range(2..=5);
    }
    out
}

fn frame_from(p: &PhantomParams, g: CordGeometry, seed: u64, speckle: &[f64], glyphs: &[PixelRect], source_id: &str) -> Result<PhantomFrame> {
    let image = render(p, &g, speckle, glyphs);
    let (x0, y0, x1, y1) = g.roi_pixels();
    let (w, h) = (p.width as f64, p.height as f64);
    let roi = BBox::from_corners(0, (x0 / w).max(0.0), (y0 / h).max(0.0), (x1 / w).min(1.0), (y1 / h).min(1.0))?;
    Ok(PhantomFrame {
        image,
        roi,
        geometry: g,
        params: p.clone(),
        seed,
        source_id: source_id.to_string(),
    })
}

pub fn default_source_id(seed: u64) -> String {
    format!("phantom_{seed:016x}")
}

/// One frame, deterministic in `(params, seed)`.
pub fn generate_phantom(params: &PhantomParams, seed: u64) -> Result<PhantomFrame> {
    params.validate()?;
    let g = sample_geometry(params, seed);
    frame_from(params, g, seed, &speckle_field(params, seed), &glyphs(params, seed), &default_source_id(seed))
}

/// `n` frames of one simulated video. Frame `k` shifts the geometry by
/// `jitter * (W, H) * sin(...)` and rotates each cord outward by up to
/// `jitter` radians, all following slow sinusoids that vanish at `k = 0`.
/// Speckle and text stay fixed.
pub fn generate_sequence(params: &PhantomParams, seed: u64, n: usize, jitter: f64) -> Result<Vec<PhantomFrame>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::invalid("a sequence needs at least one frame"));
    }
    if !(0.0..=0.05).contains(&jitter) {
        return Err(Error::invalid(format!("jitter {jitter} outside [0, 0.05]")));
    }
    let base = sample_geometry(params, seed);
    let speckle = speckle_field(params, seed);
    let text = glyphs(params, seed);
    let source = default_source_id(seed);
    let (w, h) = (params.width as f64, params.height as f64);
    (0..n)
        .map(|k| {
            let k = k as f64;
            let dx = jitter * w * (2.0 * PI * k / 47.0).sin();
            let dy = jitter * h * (2.0 * PI * k / 71.0).sin();
            let spread = jitter * (2.0 * PI * k / 29.0).sin();
            let g = if dx == 0.0 && dy == 0.0 && spread == 0.0 { base } else { base.shifted(dx, dy, spread) };
            frame_from(params, g, seed, &speckle, &text, &source)
        })
        .collect()
}

/// Writes the frames as an 8-bit 4:2:0 Y4M stream.
pub fn write_sequence_y4m(out: &mut impl Write, frames: &[PhantomFrame], fps: u32) -> Result<()> {
    let images: Vec<GrayImage> = frames.iter().map(|f| f.image.clone()).collect();
    write_y4m(out, &images, Colorspace::C420, fps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let p = PhantomParams::default();
        let a = generate_phantom(&p, 42).unwrap();
        let b = generate_phantom(&p, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.image.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        a.roi.validate().unwrap();
        assert!(a.roi.area() > 0.0);
        assert_ne!(generate_phantom(&p, 43).unwrap().image, a.image);
    }

    #[test]
    fn roi_encloses_both_bands() {
        for seed in 0..20 {
            let f = generate_phantom(&PhantomParams::default(), seed).unwrap();
            let g = f.geometry;
            let (w, h) = (f.image.width() as f64, f.image.height() as f64);
            let (x0, x1, y0, y1) = (f.roi.x0() * w, f.roi.x1() * w, f.roi.y0() * h, f.roi.y1() * h);
            for (x, y) in [g.apex, g.left_end, g.right_end] {
                for (ox, oy) in [(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)] {
                    let (px, py) = (x + ox * g.band_width / 2.0, y + oy * g.band_width / 2.0);
                    assert!(px >= x0 && px <= x1 && py >= y0 - 1e-9 && py <= y1, "seed {seed}");
                }
            }
            // room below the ROI for gap filling
            assert!(f.roi_rect().unwrap().y1 + 20 < f.image.height());
        }
    }

    #[test]
    fn asymmetry_shortens_one_cord() {
        let p = PhantomParams::default().with_asymmetry(Side::Right, 0.25);
        for seed in 0..10 {
            let g = generate_phantom(&p, seed).unwrap().geometry;
            let ratio = g.cord_length(Side::Right) / g.cord_length(Side::Left);
            assert!((g.cord_length(Side::Right) - 0.75 * g.cord_length(Side::Left)).abs() < 2.0, "{ratio}");
        }
    }

    #[test]
    fn cords_are_darker_than_tissue() {
        let p = PhantomParams { speckle: 0.0, ..Default::default() };
        let f = generate_phantom(&p, 1).unwrap();
        let g = f.geometry;
        let mid = |a: (f64, f64), b: (f64, f64)| ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
        let (cx, cy) = mid(g.apex, g.left_end);
        let on_cord = f.image.get(cx.round() as usize, cy.round() as usize);
        let off = f.image.get((cx - 2.0 * g.band_width).round() as usize, cy.round() as usize);
        assert!(on_cord + 0.15 < off, "{on_cord} {off}");
        let (bx, by) = g.right_end;
        assert!(f.image.get(bx.round() as usize, by.round() as usize) > 0.7);
        assert!(f.image.get(5, 440) < 0.1);
    }

    #[test]
    fn sequences() {
        let p = PhantomParams::default();
        let one = generate_sequence(&p, 5, 1, 0.02).unwrap();
        assert_eq!(one[0], generate_phantom(&p, 5).unwrap());
        let still = generate_sequence(&p, 5, 4, 0.0).unwrap();
        assert!(still.iter().all(|f| f.image == still[0].image));
        let moving = generate_sequence(&p, 5, 12, 0.02).unwrap();
        assert_ne!(moving[5].image, moving[0].image);
        assert!(moving.iter().all(|f| f.source_id == moving[0].source_id));
        for f in &moving {
            assert!((f.geometry.apex.0 - moving[0].geometry.apex.0).abs() <= 0.02 * 512.0 + 1e-9);
            f.roi.validate().unwrap();
        }
    }

    #[test]
    fn rejects_impossible_geometry() {
        let p = PhantomParams { width: 200, ..Default::default() };
        assert!(matches!(generate_phantom(&p, 0), Err(Error::InvalidArgument(_))));
        let p = PhantomParams::default().with_asymmetry(Side::Left, 1.0);
        assert!(generate_phantom(&p, 0).is_err());
    }
}
