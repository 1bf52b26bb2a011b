//! ROI labels in YOLO text form, pixel rectangles, and dataset manifests.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_lanczos, GrayImage};
use crate::synthesis::GroupTag;
use crate::STANDARD_SIZE;

const EDGE_TOL: f64 = 1e-6;

/// Normalized, center-format bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(class_id: u32, cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { class_id, cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    /// Box from corner coordinates, all normalized.
    pub fn from_corners(class_id: u32, x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(class_id, (x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    /// The box covering the whole image.
    pub fn full(class_id: u32) -> Self {
        Self { class_id, cx: 0.5, cy: 0.5, w: 1.0, h: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        let ok = in_unit(self.cx)
            && in_unit(self.cy)
            && self.w > 0.0
            && self.w <= 1.0
            && self.h > 0.0
            && self.h <= 1.0
            && self.cx - self.w / 2.0 >= -EDGE_TOL
            && self.cx + self.w / 2.0 <= 1.0 + EDGE_TOL
            && self.cy - self.h / 2.0 >= -EDGE_TOL
            && self.cy + self.h / 2.0 <= 1.0 + EDGE_TOL;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("box out of range: {self:?}")))
        }
    }

    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Parses YOLO label text: one `class cx cy w h` line per box.
pub fn parse_yolo_label(text: &str) -> Result<Vec<BBox>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: line_no, message };
        if tokens.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", tokens.len())));
        }
        let class_id: u32 = tokens[0]
            .parse()
            .map_err(|_| err(format!("bad class id {:?}", tokens[0])))?;
        let mut coords = [0f64; 4];
        for (c, tok) in coords.iter_mut().zip(&tokens[1..]) {
            *c = tok
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| err(format!("bad coordinate {tok:?}")))?;
        }
        let b = BBox::new(class_id, coords[0], coords[1], coords[2], coords[3])
            .map_err(|e| err(e.to_string()))?;
        boxes.push(b);
    }
    Ok(boxes)
}

pub fn serialize_yolo_label(boxes: &[BBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        let _ = writeln!(out, "{} {:.6} {:.6} {:.6} {:.6}", b.class_id, b.cx, b.cy, b.w, b.h);
    }
    out
}

/// Half-open integer rectangle `[x0,x1) x [y0,y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        !self.is_empty() && self.x1 <= width && self.y1 <= height
    }
}

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Converts a normalized box to pixels, rounding each edge half-up and
/// clamping to the image.
pub fn to_pixel_rect(b: &BBox, width: usize, height: usize) -> Result<PixelRect> {
    let edge = |v: f64, dim: usize| round_half_up(v * dim as f64).clamp(0, dim as i64) as usize;
    let rect = PixelRect {
        x0: edge(b.x0(), width),
        y0: edge(b.y0(), height),
        x1: edge(b.x1(), width),
        y1: edge(b.y1(), height),
    };
    if rect.is_empty() {
        return Err(Error::DegenerateRoi(format!("{b:?} on {width}x{height} -> {rect:?}")));
    }
    Ok(rect)
}

/// Crops the ROI and resamples it to the standard square size.
pub fn crop_to_roi(img: &GrayImage, b: &BBox) -> Result<GrayImage> {
    let r = to_pixel_rect(b, img.width(), img.height())?;
    let crop = img.crop(r.x0, r.y0, r.x1, r.y1)?;
    resize_lanczos(&crop, STANDARD_SIZE, STANDARD_SIZE)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

/// One manifest line. The optional trailing fields are written by the
/// synthesis and augmentation stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub image_path: String,
    #[serde(default)]
    pub label_path: Option<String>,
    pub source_id: String,
    pub split: Split,
    #[serde(default)]
    pub group: Option<GroupTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_frame: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl FrameRecord {
    pub fn new(image_path: impl Into<String>, source_id: impl Into<String>, split: Split) -> Self {
        Self {
            image_path: image_path.into(),
            label_path: None,
            source_id: source_id.into(),
            split,
            group: None,
            label: None,
            source_frame: None,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<FrameRecord>,
}

impl Manifest {
    pub fn new(records: Vec<FrameRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct source ids in first-appearance order.
    pub fn sources(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.source_id.as_str()))
            .map(|r| r.source_id.as_str())
            .collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &FrameRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Checks that no source appears in both splits and ids are nonempty.
    pub fn validate(&self) -> Result<()> {
        let mut splits: HashMap<&str, Split> = HashMap::new();
        for r in &self.records {
            if r.source_id.is_empty() {
                return Err(Error::Validation(format!("empty source_id for {}", r.image_path)));
            }
            match splits.insert(&r.source_id, r.split) {
                Some(prev) if prev != r.split => {
                    return Err(Error::Validation(format!(
                        "source {} appears in both train and val",
                        r.source_id
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Reads a JSON Lines manifest and validates the leakage guard.
pub fn read_manifest(bytes: &[u8]) -> Result<Manifest> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        message: format!("manifest is not UTF-8: {e}"),
    })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    let m = Manifest { records };
    m.validate()?;
    Ok(m)
}

pub fn write_manifest(m: &Manifest) -> Result<Vec<u8>> {
    m.validate()?;
    let mut out = Vec::new();
    for r in &m.records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Io(e.into()))?;
        out.push(b'\n');
    }
    Ok(out)
}
