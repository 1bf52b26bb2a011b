//! Frame sources and the per-frame preparation stages: Y4M luma
//! decoding, striding, anonymization masks, standardization and
//! source-level train/val assignment.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::image::{resize_lanczos, GrayImage};
use crate::labels::{Manifest, Split};
use crate::rng::seeded_hash;
use crate::STANDARD_SIZE;

/// Chroma layout of a Y4M stream. Only the luma plane is ever decoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Colorspace {
    C420,
    C422,
    C444,
    Mono,
}

impl Colorspace {
    fn parse(tag: &str) -> Option<Self> {
        match tag {
            "420" | "420jpeg" | "420paldv" | "420mpeg2" => Some(Self::C420),
            "422" => Some(Self::C422),
            "444" => Some(Self::C444),
            "mono" => Some(Self::Mono),
            _ => None,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Self::C420 => "420jpeg",
            Self::C422 => "422",
            Self::C444 => "444",
            Self::Mono => "mono",
        }
    }

    /// Bytes of both chroma planes for a `w x h` frame.
    fn chroma_len(self, w: usize, h: usize) -> usize {
        match self {
            Self::C420 => 2 * w.div_ceil(2) * h.div_ceil(2),
            Self::C422 => 2 * w.div_ceil(2) * h,
            Self::C444 => 2 * w * h,
            Self::Mono => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Y4mHeader {
    pub width: usize,
    pub height: usize,
    pub colorspace: Colorspace,
}

fn read_line(r: &mut impl BufRead, offset: &mut usize) -> Result<Option<Vec<u8>>> {
    let mut line = Vec::new();
    let n = r.read_until(b'\n', &mut line)?;
    if n == 0 {
        return Ok(None);
    }
    *offset += n;
    if line.last() != Some(&b'\n') {
        return Err(Error::Y4m(format!("unterminated line ending at offset {offset}")));
    }
    line.pop();
    Ok(Some(line))
}

/// Streaming reader yielding the luma plane of each frame.
pub struct Y4mReader<R> {
    inner: BufReader<R>,
    header: Y4mHeader,
    offset: usize,
    frame_buf: Vec<u8>,
}

impl<R: Read> Y4mReader<R> {
    pub fn new(stream: R) -> Result<Self> {
        let mut inner = BufReader::new(stream);
        let mut offset = 0;
        let line = read_line(&mut inner, &mut offset)?
            .ok_or_else(|| Error::Y4m("empty stream, missing YUV4MPEG2 magic".into()))?;
        let text = String::from_utf8(line).map_err(|_| Error::Y4m("header is not ASCII".into()))?;
        let mut tokens = text.split(' ').filter(|t| !t.is_empty());
        if tokens.next() != Some("YUV4MPEG2") {
            return Err(Error::Y4m("missing YUV4MPEG2 magic at offset 0".into()));
        }
        let (mut width, mut height, mut colorspace) = (None, None, Colorspace::C420);
        for tok in tokens {
            let (key, val) = tok.split_at(1);
            match key {
                "W" => width = Some(parse_dim(tok, val)?),
                "H" => height = Some(parse_dim(tok, val)?),
                "C" => {
                    colorspace = Colorspace::parse(val)
                        .ok_or_else(|| Error::Y4m(format!("unsupported colorspace token {tok:?}")))?;
                }
                // Frame rate, interlacing, aspect and extensions don't affect decoding.
                "F" | "I" | "A" | "X" => {}
                _ => return Err(Error::Y4m(format!("unknown header token {tok:?}"))),
            }
        }
        let width = width.ok_or_else(|| Error::Y4m("header lacks W token".into()))?;
        let height = height.ok_or_else(|| Error::Y4m("header lacks H token".into()))?;
        Ok(Self {
            inner,
            header: Y4mHeader { width, height, colorspace },
            offset,
            frame_buf: Vec::new(),
        })
    }

    pub fn header(&self) -> Y4mHeader {
        self.header
    }

    /// Next frame's luma plane, or `None` at a clean end of stream.
    pub fn next_frame(&mut self) -> Result<Option<GrayImage>> {
        let start = self.offset;
        let Some(line) = read_line(&mut self.inner, &mut self.offset)? else {
            return Ok(None);
        };
        if !line.starts_with(b"FRAME") || (line.len() > 5 && line[5] != b' ') {
            return Err(Error::Y4m(format!("expected FRAME marker at offset {start}")));
        }
        let Y4mHeader { width, height, colorspace } = self.header;
        let luma = width * height;
        let total = luma + colorspace.chroma_len(width, height);
        self.frame_buf.resize(total, 0);
        let mut filled = 0;
        while filled < total {
            match self.inner.read(&mut self.frame_buf[filled..])? {
                0 => {
                    return Err(Error::Y4m(format!(
                        "truncated frame payload at offset {}: {filled} of {total} bytes",
                        self.offset + filled
                    )))
                }
                n => filled += n,
            }
        }
        self.offset += total;
        let pixels = self.frame_buf[..luma].iter().map(|&b| f32::from(b) / 255.0).collect();
        GrayImage::new(width, height, pixels).map(Some)
    }
}

impl<R: Read> Iterator for Y4mReader<R> {
    type Item = Result<GrayImage>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

fn parse_dim(tok: &str, val: &str) -> Result<usize> {
    val.parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::Y4m(format!("bad dimension token {tok:?}")))
}

/// Decodes every frame's luma plane, normalized to `[0, 1]`.
pub fn read_y4m_luma(stream: impl Read) -> Result<Vec<GrayImage>> {
    Y4mReader::new(stream)?.collect()
}

/// Writes frames as 8-bit Y4M. Chroma planes, when the colorspace has
/// them, are neutral gray.
pub fn write_y4m(out: &mut impl Write, frames: &[GrayImage], colorspace: Colorspace, fps: u32) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("cannot infer Y4M dimensions from zero frames"))?;
    let (w, h) = first.dims();
    writeln!(out, "YUV4MPEG2 W{w} H{h} F{fps}:1 Ip A1:1 C{}", colorspace.tag())?;
    let chroma = vec![128u8; colorspace.chroma_len(w, h)];
    for f in frames {
        if f.dims() != (w, h) {
            return Err(Error::shape((w, h), f.dims()));
        }
        out.write_all(b"FRAME\n")?;
        out.write_all(&f.to_u8())?;
        out.write_all(&chroma)?;
    }
    Ok(())
}

/// Frame striding: keep indices `i` with `i >= offset` and
/// `(i - offset) % stride == 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExtractionConfig {
    pub stride: usize,
    pub offset: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self { stride: 20, offset: 0 }
    }
}

/// Yields `(source_index, frame)` for every kept frame, in order.
pub fn extract_every_nth<I>(frames: I, cfg: ExtractionConfig) -> Result<impl Iterator<Item = (usize, I::Item)>>
where
    I: IntoIterator,
{
    if cfg.stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    Ok(frames
        .into_iter()
        .enumerate()
        .skip(cfg.offset)
        .step_by(cfg.stride))
}

/// Number of frames [`extract_every_nth`] keeps from `n` inputs.
pub fn extracted_count(n: usize, cfg: ExtractionConfig) -> usize {
    n.saturating_sub(cfg.offset).div_ceil(cfg.stride)
}

/// Half-open rectangle zeroed by [`anonymize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskRegion {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// Zeroes every pixel inside any mask; masks are clamped to the frame.
pub fn anonymize(img: &GrayImage, masks: &[MaskRegion]) -> GrayImage {
    let (w, h) = img.dims();
    let mut pixels = img.pixels().to_vec();
    for m in masks {
        let (x0, x1) = (m.x0.min(w), m.x1.min(w));
        let (y0, y1) = (m.y0.min(h), m.y1.min(h));
        for y in y0..y1 {
            pixels[y * w + x0..y * w + x1.max(x0)].fill(0.0);
        }
    }
    GrayImage::new(w, h, pixels).expect("masking keeps values in range")
}

/// Per-device mask configuration.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskConfig {
    pub device: Option<String>,
    pub masks: Vec<MaskRegion>,
}

/// Parses a mask file:
///
/// ```text
/// # GE probe overlay
/// device = logiq-s7
/// mask = 0,0,512,40
/// mask = 470,40,512,448
/// ```
pub fn parse_mask_config(text: &str) -> Result<MaskConfig> {
    let mut cfg = MaskConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: i + 1, message };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
        match key.trim() {
            "device" => cfg.device = Some(value.trim().to_string()),
            "mask" => {
                let nums: Vec<usize> = value
                    .split(',')
                    .map(|t| t.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(format!("bad rectangle {value:?}: {e}")))?;
                let [x0, y0, x1, y1] = nums[..] else {
                    return Err(err(format!("rectangle needs 4 values, got {}", nums.len())));
                };
                if x1 <= x0 || y1 <= y0 {
                    return Err(err(format!("empty rectangle {value:?}")));
                }
                cfg.masks.push(MaskRegion { x0, y0, x1, y1 });
            }
            other => return Err(err(format!("unknown key {other:?}"))),
        }
    }
    Ok(cfg)
}

/// Lanczos resample to the standard 256x256 frame.
pub fn standardize(img: &GrayImage) -> GrayImage {
    resize_lanczos(img, STANDARD_SIZE, STANDARD_SIZE).expect("standard size is nonzero")
}

/// Assigns whole sources to train or val.
///
/// With `holdout`, exactly those sources become val. Otherwise sources are
/// ranked by `FNV-1a(seed_le_bytes ++ source_id)` (ties by id) and the
/// first `ceil(val_fraction * n_sources)` become val.
pub fn assign_splits(
    m: &Manifest,
    holdout: Option<&BTreeSet<String>>,
    val_fraction: f64,
    seed: u64,
) -> Result<Manifest> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::invalid(format!("val_fraction {val_fraction} outside [0,1)")));
    }
    let sources = m.sources();
    let val: BTreeSet<String> = match holdout {
        Some(h) => {
            if let Some(missing) = h.iter().find(|s| !sources.contains(&s.as_str())) {
                return Err(Error::Validation(format!("holdout source {missing} not in manifest")));
            }
            h.clone()
        }
        None => {
            // Guard against products like 0.1 * 30 = 3.0000000000000004.
            let n_val = (val_fraction * sources.len() as f64 - 1e-9).ceil().max(0.0) as usize;
            let mut ranked: Vec<(u64, &str)> = sources.iter().map(|s| (seeded_hash(seed, s), *s)).collect();
            ranked.sort_unstable();
            ranked.into_iter().take(n_val).map(|(_, s)| s.to_string()).collect()
        }
    };
    let mut out = m.clone();
    for r in &mut out.records {
        r.split = if val.contains(&r.source_id) { Split::Val } else { Split::Train };
    }
    out.validate()?;
    Ok(out)
}

/// Count of records per split.
pub fn split_counts(m: &Manifest) -> HashMap<Split, usize> {
    let mut counts = HashMap::new();
    for r in &m.records {
        *counts.entry(r.split).or_default() += 1;
    }
    counts
}
