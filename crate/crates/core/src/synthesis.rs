//! Synthetic vocal-cord-paralysis images.
//!
//! A 256x256 ROI crop is split down the middle; one half is compressed
//! vertically (top edge kept aligned), the vacated band under it is filled
//! with tissue sampled below the ROI in the original frame, and the seam
//! between the halves is repaired by per-row linear interpolation. Every
//! input yields four samples: the untouched crop, a seam-only control, and
//! left- and right-compressed variants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_lanczos, GrayImage};
use crate::labels::PixelRect;
use crate::par;
use crate::rng::fnv1a64;

pub const DEFAULT_FACTOR: f64 = 0.75;
pub const DEFAULT_STRIP: usize = 6;

/// Rows below the ROI needed before falling back to mirroring.
const MIN_BAND_ROWS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Self {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            _ => Err(Error::invalid(format!("side must be left or right, got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupTag {
    #[serde(rename = "healthy")]
    Healthy,
    #[serde(rename = "healthy2")]
    Healthy2,
    #[serde(rename = "leftpar")]
    LeftPar,
    #[serde(rename = "rightpar")]
    RightPar,
}

impl GroupTag {
    pub const ALL: [GroupTag; 4] = [
        GroupTag::Healthy,
        GroupTag::Healthy2,
        GroupTag::LeftPar,
        GroupTag::RightPar,
    ];

    pub fn label(self) -> ClassLabel {
        match self {
            GroupTag::Healthy | GroupTag::Healthy2 => ClassLabel::Healthy,
            GroupTag::LeftPar | GroupTag::RightPar => ClassLabel::Paralyzed,
        }
    }

    pub fn paralyzed(side: Side) -> Self {
        match side {
            Side::Left => GroupTag::LeftPar,
            Side::Right => GroupTag::RightPar,
        }
    }

    /// Group after a horizontal mirror.
    pub fn mirrored(self) -> Self {
        match self {
            GroupTag::LeftPar => GroupTag::RightPar,
            GroupTag::RightPar => GroupTag::LeftPar,
            g => g,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupTag::Healthy => "healthy",
            GroupTag::Healthy2 => "healthy2",
            GroupTag::LeftPar => "leftpar",
            GroupTag::RightPar => "rightpar",
        }
    }
}

impl std::fmt::Display for GroupTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ClassLabel {
    Healthy = 0,
    Paralyzed = 1,
}

impl ClassLabel {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(ClassLabel::Healthy),
            1 => Ok(ClassLabel::Paralyzed),
            _ => Err(Error::invalid(format!("class label {v} is not binary"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SquishParams {
    pub factor: f64,
    pub strip: usize,
}

impl Default for SquishParams {
    fn default() -> Self {
        Self {
            factor: DEFAULT_FACTOR,
            strip: DEFAULT_STRIP,
        }
    }
}

impl SquishParams {
    pub fn validate(&self, width: usize) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::invalid(format!("squish factor {} outside (0,1)", self.factor)));
        }
        if self.strip < 1 || 4 * self.strip >= width {
            return Err(Error::invalid(format!("seam strip {} for width {width}", self.strip)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub image: GrayImage,
    pub label: ClassLabel,
    pub group: GroupTag,
    pub source_frame: String,
    pub seed: u64,
}

impl SynthSample {
    pub fn new(image: GrayImage, group: GroupTag, source_frame: impl Into<String>, seed: u64) -> Self {
        Self {
            image,
            label: group.label(),
            group,
            source_frame: source_frame.into(),
            seed,
        }
    }

    /// Stable identifier of `(source_frame, group)`.
    pub fn id(&self) -> u64 {
        fnv1a64(format!("{}/{}", self.source_frame, self.group).as_bytes())
    }
}

/// Left half `[0, W/2)` and right half `[W/2, W)`.
pub fn split_halves(img: &GrayImage) -> Result<(GrayImage, GrayImage)> {
    let (w, h) = img.dims();
    if w < 2 {
        return Err(Error::invalid("cannot split an image narrower than 2 columns"));
    }
    let mid = w / 2;
    Ok((img.crop(0, 0, mid, h)?, img.crop(mid, 0, w, h)?))
}

/// Inverse of [`split_halves`].
pub fn recompose(left: &GrayImage, right: &GrayImage) -> Result<GrayImage> {
    if left.height() != right.height() {
        return Err(Error::shape(left.height(), right.height()));
    }
    let mut out = GrayImage::filled(left.width() + right.width(), left.height(), 0.0);
    out.paste(left, 0, 0)?;
    out.paste(right, left.width(), 0)?;
    Ok(out)
}

/// Vertical compression to `round(factor * H)` rows, width unchanged.
pub fn compress_half(half: &GrayImage, factor: f64) -> Result<GrayImage> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::invalid(format!("compression factor {factor} outside (0,1)")));
    }
    let new_h = (factor * half.height() as f64).round() as usize;
    if new_h == 0 {
        return Err(Error::invalid("compressed height rounds to zero"));
    }
    resize_lanczos(half, half.width(), new_h)
}

/// Fills `gap` in `canvas` with tissue from below `roi` in `source_frame`.
///
/// The band spans the ROI columns that correspond to the gap's columns,
/// starts at the ROI's bottom edge and has the gap's aspect ratio (clipped
/// at the frame bottom). With fewer than four rows available, the gap is
/// instead a vertical mirror of the canvas rows directly above it.
pub fn fill_gap(canvas: &GrayImage, gap: PixelRect, source_frame: &GrayImage, roi: PixelRect) -> Result<GrayImage> {
    let (cw, ch) = canvas.dims();
    if !gap.fits_in(cw, ch) {
        return Err(Error::invalid(format!("gap {gap:?} outside {cw}x{ch} canvas")));
    }
    let (fw, fh) = source_frame.dims();
    if !roi.fits_in(fw, fh) {
        return Err(Error::invalid(format!("roi {roi:?} outside {fw}x{fh} frame")));
    }
    let mut out = canvas.clone();

    let scale_x = roi.width() as f64 / cw as f64;
    let bx0 = roi.x0 + (gap.x0 as f64 * scale_x).round() as usize;
    let bx1 = (roi.x0 + (gap.x1 as f64 * scale_x).round() as usize).clamp(bx0 + 1, fw);
    let band_w = bx1 - bx0;
    let want_rows = ((band_w as f64 * gap.height() as f64 / gap.width() as f64).round() as usize).max(1);
    let avail = fh - roi.y1;

    if avail >= MIN_BAND_ROWS {
        let rows = want_rows.min(avail);
        let band = source_frame.crop(bx0, roi.y1, bx1, roi.y1 + rows)?;
        let patch = resize_lanczos(&band, gap.width(), gap.height())?;
        out.paste(&patch, gap.x0, gap.y0)?;
    } else {
        if gap.y0 == 0 {
            return Err(Error::invalid("mirror fill needs rows above the gap"));
        }
        for k in 0..gap.height() {
            // Reflect about the gap's top edge, bouncing off the canvas top.
            let period = 2 * gap.y0;
            let m = k % period;
            let src_y = if m < gap.y0 { gap.y0 - 1 - m } else { m - gap.y0 };
            for x in gap.x0..gap.x1 {
                out.set(x, gap.y0 + k, canvas.get(x, src_y));
            }
        }
    }
    Ok(out)
}

/// Replaces columns `[seam_col - strip, seam_col + strip)` with the per-row
/// linear interpolation between anchor columns `seam_col - strip - 1` and
/// `seam_col + strip`.
pub fn seam_fill(img: &GrayImage, seam_col: usize, strip: usize) -> Result<GrayImage> {
    let w = img.width();
    if strip == 0 || seam_col < strip + 1 || seam_col + strip >= w {
        return Err(Error::invalid(format!(
            "seam at column {seam_col} with strip {strip} does not fit width {w}"
        )));
    }
    let left = seam_col - strip - 1;
    let right = seam_col + strip;
    let span = (right - left) as f64;
    let mut out = img.clone();
    for y in 0..img.height() {
        let a = f64::from(img.get(left, y));
        let b = f64::from(img.get(right, y));
        for x in left + 1..right {
            let t = (x - left) as f64 / span;
            out.set(x, y, (a + (b - a) * t) as f32);
        }
    }
    Ok(out)
}

/// Compresses one half of `roi_img`, fills the vacated band and repairs the
/// center seam.
pub fn make_paralyzed_with(
    roi_img: &GrayImage,
    side: Side,
    source_frame: &GrayImage,
    roi: PixelRect,
    params: SquishParams,
) -> Result<GrayImage> {
    let (w, h) = roi_img.dims();
    params.validate(w)?;
    let (left, right) = split_halves(roi_img)?;
    let mid = left.width();
    let (target, x_off) = match side {
        Side::Left => (&left, 0),
        Side::Right => (&right, mid),
    };
    let squished = compress_half(target, params.factor)?;
    let mut canvas = recompose(&left, &right)?;
    canvas.paste(&squished, x_off, 0)?;
    let gap = PixelRect::new(x_off, squished.height(), x_off + target.width(), h);
    let filled = if gap.is_empty() {
        canvas
    } else {
        fill_gap(&canvas, gap, source_frame, roi)?
    };
    seam_fill(&filled, mid, params.strip)
}

pub fn make_paralyzed(
    roi_img: &GrayImage,
    side: Side,
    source_frame: &GrayImage,
    roi: PixelRect,
    source_id: &str,
    seed: u64,
) -> Result<SynthSample> {
    let image = make_paralyzed_with(roi_img, side, source_frame, roi, SquishParams::default())?;
    Ok(SynthSample::new(image, GroupTag::paralyzed(side), source_id, seed))
}

/// Split-and-rejoin control: the seam repair without any compression.
pub fn make_healthy2(roi_img: &GrayImage, source_id: &str, seed: u64) -> Result<SynthSample> {
    let image = seam_fill(roi_img, roi_img.width() / 2, DEFAULT_STRIP)?;
    Ok(SynthSample::new(image, GroupTag::Healthy2, source_id, seed))
}

/// One labeled ROI crop together with the frame it came from.
#[derive(Clone, Debug)]
pub struct SynthInput {
    /// Identifier of the originating frame (file stem or similar).
    pub id: String,
    pub roi_img: GrayImage,
    pub source_frame: GrayImage,
    /// ROI in `source_frame` pixel coordinates.
    pub roi: PixelRect,
}

/// Per-input seed: `seed ^ FNV-1a(id)`.
pub fn item_seed(seed: u64, id: &str) -> u64 {
    seed ^ fnv1a64(id.as_bytes())
}

/// The four groups for one input, in `GroupTag::ALL` order.
pub fn synthesize_one(input: &SynthInput, seed: u64) -> Result<[SynthSample; 4]> {
    let s = item_seed(seed, &input.id);
    Ok([
        SynthSample::new(input.roi_img.clone(), GroupTag::Healthy, &input.id, s),
        make_healthy2(&input.roi_img, &input.id, s)?,
        make_paralyzed(&input.roi_img, Side::Left, &input.source_frame, input.roi, &input.id, s)?,
        make_paralyzed(&input.roi_img, Side::Right, &input.source_frame, input.roi, &input.id, s)?,
    ])
}

/// Four samples per input (healthy, healthy2, leftpar, rightpar), in input
/// order.
pub fn build_groups(inputs: &[SynthInput], seed: u64) -> Result<Vec<SynthSample>> {
    if inputs.is_empty() {
        return Err(Error::invalid("build_groups needs at least one input"));
    }
    let per_item = par::map_slice(inputs, |inp| synthesize_one(inp, seed));
    let mut out = Vec::with_capacity(inputs.len() * 4);
    for r in per_item {
        out.extend(r?);
    }
    Ok(out)
}
