//! One function per subcommand. Stages talk to each other only through
//! PNG files, YOLO label files and `manifest.jsonl`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use clap::Args;
use vipr::augment::{expand_dataset, AugmentParams, AugmentRecipe};
use vipr::image::{read_png, write_png};
use vipr::labels::{crop_to_roi, parse_yolo_label, serialize_yolo_label, to_pixel_rect};
use vipr::metrics::{
    classification_report, confidence_curves, confusion_csv, curve_rows_csv, detection_confusion, map_range,
    ConfusionMatrix, CurveRow, Detection, ImageEval,
};
use vipr::nn::{
    grad_check, history_csv, load_checkpoint, save_checkpoint, train_with_observer, Classifier, NetConfig,
    OptimizerKind, Precision, TrainConfig,
};
use vipr::phantom::{generate_sequence, write_sequence_y4m, PhantomParams};
use vipr::pipeline::{anonymize as mask_frame, assign_splits, parse_mask_config, ExtractionConfig, Y4mReader};
use vipr::rng::seeded_hash;
use vipr::synthesis::{build_groups, ClassLabel, SynthInput};
use vipr::{BBox, FrameRecord, GrayImage, Manifest, PixelRect, Side, Split, SynthSample};

use crate::config::Resolver;
use crate::error::{CliError, Context};
use crate::files::{
    create_dir, file_stem, load_manifest, path_string, record_config, relative_path, save_manifest, Located,
    PngDataset, RUN_CONFIG,
};
use crate::svg::{confusion_heatmap, line_plot, Series};

/// Inputs processed per chunk by the in-memory stages.
const CHUNK: usize = 64;
/// Labels file written next to each phantom video's per-frame labels.
const CLASS_FILE: &str = "class.txt";

fn read_image(stage: &str, path: &Path) -> Result<GrayImage, CliError> {
    read_png(path).at(stage, path)
}

fn write_image(stage: &str, path: &Path, img: &GrayImage) -> Result<(), CliError> {
    write_png(path, img).at(stage, path)
}

fn write_text(stage: &str, path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).at(stage, path)
}

fn read_roi(stage: &str, path: &Path) -> Result<BBox, CliError> {
    let text = std::fs::read_to_string(path).at(stage, path)?;
    let boxes = parse_yolo_label(&text).at(stage, path)?;
    boxes
        .first()
        .copied()
        .ok_or_else(|| CliError::data(format!("{stage}: {}: label file has no box", path.display())))
}

fn rel(dir: &Path, target: &Path) -> String {
    path_string(&relative_path(dir, target))
}

// ---------------------------------------------------------------- phantom-gen

#[derive(Args, Debug)]
pub struct PhantomGenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of videos.
    #[arg(long)]
    videos: Option<usize>,
    /// Frames per video.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Shorten one cord in every video, e.g. `left:0.25`.
    #[arg(long)]
    asymmetry: Option<String>,
    /// Frame-to-frame geometry jitter in [0, 0.05].
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    fps: Option<u32>,
    /// Also write every frame as PNG plus a manifest.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    png: Option<bool>,
}

fn parse_asymmetry(s: &str) -> Result<(Side, f64), CliError> {
    let bad = || CliError::usage(format!("asymmetry must look like left:0.25 or right:0.3, got {s:?}"));
    let (side, frac) = s.split_once(':').ok_or_else(bad)?;
    let side: Side = side.trim().parse().map_err(|_| bad())?;
    let frac: f64 = frac.trim().parse().map_err(|_| bad())?;
    Ok((side, frac))
}

pub fn phantom_gen(a: PhantomGenArgs) -> Result<(), CliError> {
    const STAGE: &str = "phantom-gen";
    let mut r = Resolver::new(
        STAGE,
        a.config.as_deref(),
        &["out", "videos", "frames", "seed", "asymmetry", "jitter", "fps", "png"],
    )?;
    let out = r.path("out", a.out)?;
    let videos: usize = r.value("videos", a.videos, 1)?;
    let frames: usize = r.value("frames", a.frames, 200)?;
    let seed = r.seed(a.seed)?;
    let asymmetry: Option<String> = r.optional("asymmetry", a.asymmetry)?;
    let jitter: f64 = r.value("jitter", a.jitter, 0.01)?;
    let fps: u32 = r.value("fps", a.fps, 25)?;
    let png: bool = r.value("png", a.png, false)?;
    if videos == 0 || frames == 0 {
        return Err(CliError::usage("phantom-gen: --videos and --frames must be at least 1"));
    }

    let mut params = PhantomParams::default();
    let class = match &asymmetry {
        Some(s) => {
            let (side, frac) = parse_asymmetry(s)?;
            params = params.with_asymmetry(side, frac);
            ClassLabel::Paralyzed
        }
        None => ClassLabel::Healthy,
    };
    params.validate().in_stage(STAGE).map_err(|e| CliError::usage(e.message))?;

    create_dir(STAGE, &out)?;
    record_config(STAGE, &out.join(RUN_CONFIG), &r)?;
    if png {
        create_dir(STAGE, &out.join("frames"))?;
        create_dir(STAGE, &out.join("labels"))?;
    }
    let mut records = Vec::new();
    for v in 0..videos {
        let source = format!("video_{v:03}");
        let video_seed = seeded_hash(seed, &format!("video{v}"));
        let seq = generate_sequence(&params, video_seed, frames, jitter).in_stage(STAGE)?;

        let y4m = out.join(format!("{source}.y4m"));
        let mut w = BufWriter::new(File::create(&y4m).at(STAGE, &y4m)?);
        write_sequence_y4m(&mut w, &seq, fps).at(STAGE, &y4m)?;
        w.flush().at(STAGE, &y4m)?;

        let label_dir = out.join(format!("{source}.labels"));
        create_dir(STAGE, &label_dir)?;
        write_text(STAGE, &label_dir.join(CLASS_FILE), &format!("{}\n", class.as_u8()))?;
        for (i, f) in seq.iter().enumerate() {
            let label = serialize_yolo_label(&[f.roi]);
            write_text(STAGE, &label_dir.join(format!("{i:05}.txt")), &label)?;
            if png {
                let name = format!("{source}_{i:05}");
                let img_path = out.join("frames").join(format!("{name}.png"));
                let lbl_path = out.join("labels").join(format!("{name}.txt"));
                write_image(STAGE, &img_path, &f.image)?;
                write_text(STAGE, &lbl_path, &label)?;
                let mut rec = FrameRecord::new(format!("frames/{name}.png"), source.clone(), Split::Train);
                rec.label_path = Some(format!("labels/{name}.txt"));
                rec.label = Some(class.as_u8());
                rec.seed = Some(video_seed);
                records.push(rec);
            }
        }
        eprintln!("{STAGE}: wrote {} ({} frames)", y4m.display(), seq.len());
    }
    if png {
        save_manifest(STAGE, &out, &Manifest::new(records))?;
    }
    Ok(())
}

// -------------------------------------------------------------------- extract

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// A Y4M file or a directory of them.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep every n-th frame.
    #[arg(long)]
    stride: Option<usize>,
    /// Index of the first kept frame.
    #[arg(long)]
    offset: Option<usize>,
    /// Fraction of sources assigned to validation.
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn y4m_inputs(stage: &str, input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .at(stage, input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "y4m"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::data(format!("{stage}: {}: no .y4m files", input.display())));
    }
    Ok(files)
}

pub fn extract(a: ExtractArgs) -> Result<(), CliError> {
    const STAGE: &str = "extract";
    let mut r = Resolver::new(
        STAGE,
        a.config.as_deref(),
        &["in", "out", "stride", "offset", "val_fraction", "seed"],
    )?;
    let input = r.path("in", a.input)?;
    let out = r.path("out", a.out)?;
    let stride: usize = r.value("stride", a.stride, 20)?;
    let offset: usize = r.value("offset", a.offset, 0)?;
    let val_fraction: f64 = r.value("val_fraction", a.val_fraction, 0.2)?;
    let seed = r.seed(a.seed)?;
    if stride == 0 {
        return Err(CliError::usage("extract: --stride must be at least 1"));
    }
    let cfg = ExtractionConfig { stride, offset };

    let videos = y4m_inputs(STAGE, &input)?;
    create_dir(STAGE, &out.join("frames"))?;
    create_dir(STAGE, &out.join("labels"))?;
    record_config(STAGE, &out.join(RUN_CONFIG), &r)?;

    let mut records = Vec::new();
    for video in &videos {
        let source = file_stem(&video.to_string_lossy());
        let label_dir = video.with_file_name(format!("{source}.labels"));
        let class = match std::fs::read_to_string(label_dir.join(CLASS_FILE)) {
            Ok(t) => Some(t.trim().parse::<u8>().map_err(|e| {
                CliError::data(format!("{STAGE}: {}: {e}", label_dir.join(CLASS_FILE).display()))
            })?),
            Err(_) => None,
        };
        let mut reader = Y4mReader::new(File::open(video).at(STAGE, video)?).at(STAGE, video)?;
        let mut idx = 0usize;
        let mut kept = 0usize;
        while let Some(frame) = reader.next_frame().at(STAGE, video)? {
            if idx >= offset && (idx - offset) % cfg.stride == 0 {
                let name = format!("{source}_{idx:05}");
                write_image(STAGE, &out.join("frames").join(format!("{name}.png")), &frame)?;
                let mut rec = FrameRecord::new(format!("frames/{name}.png"), source.clone(), Split::Train);
                let src_label = label_dir.join(format!("{idx:05}.txt"));
                if src_label.is_file() {
                    let dst = out.join("labels").join(format!("{name}.txt"));
                    std::fs::copy(&src_label, &dst).at(STAGE, &src_label)?;
                    rec.label_path = Some(format!("labels/{name}.txt"));
                }
                rec.label = class;
                records.push(rec);
                kept += 1;
            }
            idx += 1;
        }
        eprintln!("{STAGE}: {}: {idx} frames, kept {kept}", video.display());
    }
    let m = assign_splits(&Manifest::new(records), None, val_fraction, seed).in_stage(STAGE)?;
    save_manifest(STAGE, &out, &m)
}

// ------------------------------------------------------------------ anonymize

#[derive(Args, Debug)]
pub struct AnonymizeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory (or manifest file) of frames.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Mask rectangles file (`mask = x0,y0,x1,y1` lines).
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Copies a record's label file into `out/labels` and rewrites its path.
fn carry_label(stage: &str, src: &Located, rec: &mut FrameRecord, out: &Path, name: &str) -> Result<(), CliError> {
    if let Some(lp) = &rec.label_path {
        let from = src.resolve(lp);
        let to = out.join("labels").join(format!("{name}.txt"));
        std::fs::copy(&from, &to).at(stage, &from)?;
        rec.label_path = Some(format!("labels/{name}.txt"));
    }
    Ok(())
}

pub fn anonymize(a: AnonymizeArgs) -> Result<(), CliError> {
    const STAGE: &str = "anonymize";
    let mut r = Resolver::new(STAGE, a.config.as_deref(), &["in", "masks", "out"])?;
    let input = r.path("in", a.input)?;
    let masks_path = r.path("masks", a.masks)?;
    let out = r.path("out", a.out)?;

    let src = load_manifest(STAGE, &input)?;
    let mask_text = std::fs::read_to_string(&masks_path).at(STAGE, &masks_path)?;
    let masks = parse_mask_config(&mask_text).at(STAGE, &masks_path)?;
    create_dir(STAGE, &out.join("frames"))?;
    create_dir(STAGE, &out.join("labels"))?;
    record_config(STAGE, &out.join(RUN_CONFIG), &r)?;
    if let Some(d) = &masks.device {
        eprintln!("{STAGE}: device {d}, {} mask(s)", masks.masks.len());
    }

    let mut records = Vec::with_capacity(src.manifest.len());
    for rec in &src.manifest.records {
        let path = src.resolve(&rec.image_path);
        let img = read_image(STAGE, &path)?;
        let name = file_stem(&rec.image_path);
        write_image(STAGE, &out.join("frames").join(format!("{name}.png")), &mask_frame(&img, &masks.masks))?;
        let mut rec = rec.clone();
        rec.image_path = format!("frames/{name}.png");
        carry_label(STAGE, &src, &mut rec, &out, &name)?;
        records.push(rec);
    }
    save_manifest(STAGE, &out, &Manifest::new(records))
}

// ---------------------------------------------------------------- standardize

#[derive(Args, Debug)]
pub struct StandardizeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Labeled frames are cropped to their ROI before resampling; the output
/// record then points back at the full frame (`source_frame`) and keeps
/// its label so synthesis can fill the compressed band from below the ROI.
pub fn standardize(a: StandardizeArgs) -> Result<(), CliError> {
    const STAGE: &str = "standardize";
    let mut r = Resolver::new(STAGE, a.config.as_deref(), &["in", "out"])?;
    let input = r.path("in", a.input)?;
    let out = r.path("out", a.out)?;

    let src = load_manifest(STAGE, &input)?;
    create_dir(STAGE, &out.join("images"))?;
    record_config(STAGE, &out.join(RUN_CONFIG), &r)?;

    let mut records = Vec::with_capacity(src.manifest.len());
    for rec in &src.manifest.records {
        let path = src.resolve(&rec.image_path);
        let img = read_image(STAGE, &path)?;
        let name = file_stem(&rec.image_path);
        let mut new = rec.clone();
        new.image_path = format!("images/{name}.png");
        let std_img = match &rec.label_path {
            Some(lp) => {
                let label = src.resolve(lp);
                let roi = read_roi(STAGE, &label)?;
                new.label_path = Some(rel(&out, &label));
                new.source_frame = Some(rel(&out, &path));
                crop_to_roi(&img, &roi).at(STAGE, &path)?
            }
            None => vipr::pipeline::standardize(&img),
        };
        write_image(STAGE, &out.join(&new.image_path), &std_img)?;
        records.push(new);
    }
    save_manifest(STAGE, &out, &Manifest::new(records))
}

// ---------------------------------------------------------------------- synth

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest of ROI images (or of labeled full frames).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn synth_input(stage: &str, src: &Located, rec: &FrameRecord) -> Result<SynthInput, CliError> {
    let path = src.resolve(&rec.image_path);
    let img = read_image(stage, &path)?;
    let id = file_stem(&rec.image_path);
    let input = match (&rec.label_path, &rec.source_frame) {
        (Some(lp), Some(sf)) => {
            let frame_path = src.resolve(sf);
            let frame = read_image(stage, &frame_path)?;
            let roi_box = read_roi(stage, &src.resolve(lp))?;
            let roi = to_pixel_rect(&roi_box, frame.width(), frame.height()).at(stage, &frame_path)?;
            SynthInput {
                id,
                roi_img: img,
                source_frame: frame,
                roi,
            }
        }
        (Some(lp), None) => {
            let roi_box = read_roi(stage, &src.resolve(lp))?;
            let roi = to_pixel_rect(&roi_box, img.width(), img.height()).at(stage, &path)?;
            SynthInput {
                id,
                roi_img: crop_to_roi(&img, &roi_box).at(stage, &path)?,
                source_frame: img,
                roi,
            }
        }
        _ => {
            let roi = PixelRect::new(0, 0, img.width(), img.height());
            SynthInput {
                id,
                roi_img: img.clone(),
                source_frame: img,
                roi,
            }
        }
    };
    Ok(input)
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    const STAGE: &str = "synth";
    let mut r = Resolver::new(STAGE, a.config.as_deref(), &["manifest", "out", "seed"])?;
    let manifest = r.path("manifest", a.manifest)?;
    let out = r.path("out", a.out)?;
    let seed = r.seed(a.seed)?;

    let src = load_manifest(STAGE, &manifest)?;
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = src.manifest.records.iter().find(|r| !seen.insert(file_stem(&r.image_path))) {
        return Err(CliError::data(format!(
            "{STAGE}: {}: duplicate image name {}",
            manifest.display(),
            dup.image_path
        )));
    }
    create_dir(STAGE, &out.join("images"))?;
    record_config(STAGE, &out.join(RUN_CONFIG), &r)?;

    let mut records = Vec::with_capacity(4 * src.manifest.len());
    for chunk in src.manifest.records.chunks(CHUNK) {
        let inputs = chunk
            .iter()
            .map(|rec| synth_input(STAGE, &src, rec))
            .collect::<Result<Vec<_>, _>>()?;
        let samples = build_groups(&inputs, seed).in_stage(STAGE)?;
        for (s, rec) in samples.iter().zip(chunk.iter().flat_map(|r| std::iter::repeat_n(r, 4))) {
            let image_path = format!("images/{}_{}.png", s.source_frame, s.group);
            write_image(STAGE, &out.join(&image_path), &s.image)?;
            records.push(sample_record(image_path, rec, s));
        }
    }
    eprintln!("{STAGE}: {} inputs -> {} samples", src.manifest.len(), records.len());
    save_manifest(STAGE, &out, &Manifest::new(records))
}

fn sample_record(image_path: String, parent: &FrameRecord, s: &SynthSample) -> FrameRecord {
    let mut rec = FrameRecord::new(image_path, parent.source_id.clone(), parent.split);
    rec.group = Some(s.group);
    rec.label = Some(s.label.as_u8());
    rec.source_frame = Some(s.source_frame.clone());
    rec.seed = Some(s.seed);
    rec
}

// -------------------------------------------------------------------- augment

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest written by `synth`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Rotation bound in degrees.
    #[arg(long)]
    max_rotation: Option<f64>,
    /// Translation bound as a fraction of the image size.
    #[arg(long)]
    translate_frac: Option<f64>,
    #[arg(long)]
    scale_min: Option<f64>,
    #[arg(long)]
    scale_max: Option<f64>,
    /// Shear bound in degrees.
    #[arg(long)]
    shear_max: Option<f64>,
}

pub fn augment(a: AugmentArgs) -> Result<(), CliError> {
    const STAGE: &str = "augment";
    let mut r = Resolver::new(
        STAGE,
        a.config.as_deref(),
        &[
            "manifest",
            "out",
            "seed",
            "max_rotation",
            "translate_frac",
            "scale_min",
            "scale_max",
            "shear_max",
        ],
    )?;
    let manifest = r.path("manifest", a.manifest)?;
    let out = r.path("out", a.out)?;
    let seed = r.seed(a.seed)?;
    let d = AugmentParams::default();
    let params = AugmentParams {
        max_rotation: r.value("max_rotation", a.max_rotation, d.max_rotation)?,
        translate_frac: r.value("translate_frac", a.translate_frac, d.translate_frac)?,
        scale_range: (
            r.value("scale_min", a.scale_min, d.scale_range.0)?,
            r.value("scale_max", a.scale_max, d.scale_range.1)?,
        ),
        shear_max: r.value("shear_max", a.shear_max, d.shear_max)?,
    };
    params.validate().in_stage(STAGE)?;

    let src = load_manifest(STAGE, &manifest)?;
    create_dir(STAGE, &out.join("images"))?;
    record_config(STAGE, &out.join(RUN_CONFIG), &r)?;

    let n_recipes = AugmentRecipe::ALL.len();
    let mut records = Vec::with_capacity(n_recipes * src.manifest.len());
    for chunk in src.manifest.records.chunks(CHUNK) {
        let samples = chunk
            .iter()
            .map(|rec| {
                let (Some(group), Some(source_frame), Some(s_seed)) = (rec.group, &rec.source_frame, rec.seed) else {
                    return Err(CliError::data(format!(
                        "{STAGE}: {}: record {} lacks group/source_frame/seed (run synth first)",
                        manifest.display(),
                        rec.image_path
                    )));
                };
                let img = read_image(STAGE, &src.resolve(&rec.image_path))?;
                Ok(SynthSample::new(img, group, source_frame.clone(), s_seed))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let expanded = expand_dataset(&samples, &params, seed);
        for (i, s) in expanded.iter().enumerate() {
            let parent = &chunk[i / n_recipes];
            let original = samples[i / n_recipes].group;
            let recipe = AugmentRecipe::ALL[i % n_recipes];
            let image_path = format!("images/{}_{}_{}.png", s.source_frame, original, recipe.name());
            write_image(STAGE, &out.join(&image_path), &s.image)?;
            records.push(sample_record(image_path, parent, s));
        }
    }
    eprintln!("{STAGE}: {} samples -> {}", src.manifest.len(), records.len());
    save_manifest(STAGE, &out, &Manifest::new(records))
}

// ---------------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Checkpoint file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// adam or sgd.
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<Precision>,
    /// Images per forward/backward pass inside a batch.
    #[arg(long)]
    micro_batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn labeled_dataset(stage: &str, src: &Located, split: Option<Split>, size: usize) -> Result<PngDataset, CliError> {
    let mut ds = PngDataset {
        paths: Vec::new(),
        labels: Vec::new(),
        size,
    };
    for rec in &src.manifest.records {
        if split.is_some_and(|s| s != rec.split) {
            continue;
        }
        let label = rec.label.or(rec.group.map(|g| g.label().as_u8())).ok_or_else(|| {
            CliError::data(format!("{stage}: record {} has no class label", rec.image_path))
        })?;
        if label > 1 {
            return Err(CliError::data(format!("{stage}: record {} has label {label}", rec.image_path)));
        }
        ds.paths.push(src.resolve(&rec.image_path));
        ds.labels.push(label);
    }
    Ok(ds)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    const STAGE: &str = "train";
    let mut r = Resolver::new(
        STAGE,
        a.config.as_deref(),
        &[
            "manifest",
            "out",
            "epochs",
            "batch",
            "lr",
            "optimizer",
            "precision",
            "micro_batch",
            "seed",
        ],
    )?;
    let d = TrainConfig::default();
    let manifest = r.path("manifest", a.manifest)?;
    let out = r.path("out", a.out)?;
    let cfg = TrainConfig {
        epochs: r.value("epochs", a.epochs, d.epochs)?,
        batch_size: r.value("batch", a.batch, d.batch_size)?,
        learning_rate: r.value("lr", a.lr, d.learning_rate)?,
        optimizer: r.value("optimizer", a.optimizer, d.optimizer)?,
        precision: r.value("precision", a.precision, d.precision)?,
        micro_batch: r.value("micro_batch", a.micro_batch, d.micro_batch)?,
        seed: r.seed(a.seed)?,
    };
    cfg.validate().in_stage(STAGE)?;
    let net = NetConfig::viprnet();

    let src = load_manifest(STAGE, &manifest)?;
    let train_set = labeled_dataset(STAGE, &src, Some(Split::Train), net.input_size)?;
    let val_set = labeled_dataset(STAGE, &src, Some(Split::Val), net.input_size)?;
    if train_set.paths.is_empty() {
        return Err(CliError::data(format!("{STAGE}: {}: no train records", manifest.display())));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(STAGE, parent)?;
    }
    record_config(STAGE, &sidecar(&out, ".run_config.txt"), &r)?;
    eprintln!(
        "{STAGE}: {} train / {} val images, {} parameters",
        train_set.paths.len(),
        val_set.paths.len(),
        net.parameter_count()
    );

    let val: Option<&dyn vipr::nn::Dataset> = if val_set.paths.is_empty() { None } else { Some(&val_set) };
    let (ckpt, history) = train_with_observer(&net, &cfg, &train_set, val, &mut |e| {
        let mut line = format!("{STAGE}: epoch {} train_loss {:.6}", e.epoch, e.train_loss);
        if let (Some(l), Some(acc)) = (e.val_loss, e.val_acc) {
            let _ = write!(line, " val_loss {l:.6} val_acc {acc:.4}");
        }
        eprintln!("{line}");
    })
    .in_stage(STAGE)?;
    save_checkpoint(&out, &ckpt).at(STAGE, &out)?;
    write_text(STAGE, &sidecar(&out, ".history.csv"), &history_csv(&history))
}

// ------------------------------------------------------------------- eval-cls

#[derive(Args, Debug)]
pub struct EvalClsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// train, val or all.
    #[arg(long)]
    split: Option<String>,
    /// Probability at or above which an image counts as paralyzed.
    #[arg(long)]
    threshold: Option<f64>,
}

fn confusion_svg(title: &str, m: &ConfusionMatrix) -> String {
    confusion_heatmap(title, &m.labels.clone(), &m.normalized())
}

pub fn eval_cls(a: EvalClsArgs) -> Result<(), CliError> {
    const STAGE: &str = "eval-cls";
    let mut r = Resolver::new(
        STAGE,
        a.config.as_deref(),
        &["ckpt", "manifest", "out", "split", "threshold"],
    )?;
    let ckpt_path = r.path("ckpt", a.ckpt)?;
    let manifest = r.path("manifest", a.manifest)?;
    let out = r.path("out", a.out)?;
    let split_name: String = r.value("split", a.split, "val".to_string())?;
    let threshold: f64 = r.value("threshold", a.threshold, 0.5)?;
    let split = match split_name.as_str() {
        "train" => Some(Split::Train),
        "val" => Some(Split::Val),
        "all" => None,
        s => return Err(CliError::usage(format!("{STAGE}: --split must be train, val or all, got {s:?}"))),
    };
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::usage(format!("{STAGE}: --threshold {threshold} outside [0,1]")));
    }

    let ckpt = load_checkpoint(&ckpt_path).at(STAGE, &ckpt_path)?;
    let clf = Classifier::new(&ckpt).at(STAGE, &ckpt_path)?;
    let src = load_manifest(STAGE, &manifest)?;
    let ds = labeled_dataset(STAGE, &src, split, clf.config().input_size)?;
    if ds.paths.is_empty() {
        return Err(CliError::data(format!(
            "{STAGE}: {}: no records in split {split_name}",
            manifest.display()
        )));
    }
    create_dir(STAGE, &out)?;
    record_config(STAGE, &out.join(RUN_CONFIG), &r)?;

    let mut probs = Vec::with_capacity(ds.paths.len());
    for chunk in ds.paths.chunks(16) {
        let images = chunk.iter().map(|p| read_image(STAGE, p)).collect::<Result<Vec<_>, _>>()?;
        probs.extend(clf.predict_batch(&images).in_stage(STAGE)?);
    }
    let report = classification_report(&probs, &ds.labels, threshold).in_stage(STAGE)?;

    let mut preds = String::from("image_path,label,probability,predicted\n");
    for ((p, &y), &prob) in ds.paths.iter().zip(&ds.labels).zip(&probs) {
        let _ = writeln!(preds, "{},{y},{prob:.6},{}", rel(&out, p), u8::from(prob >= threshold));
    }
    write_text(STAGE, &out.join("predictions.csv"), &preds)?;
    write_text(STAGE, &out.join("confusion.csv"), &confusion_csv(&report.confusion))?;
    write_text(STAGE, &out.join("pr_curve.csv"), &curve_rows_csv(&report.pr_curve))?;
    write_text(
        STAGE,
        &out.join("confusion.svg"),
        &confusion_svg("Classification confusion (row-normalized)", &report.confusion),
    )?;
    write_text(STAGE, &out.join("pr_curve.svg"), &pr_svg("Precision-recall", &report.pr_curve))?;

    let summary = format!(
        "checkpoint = {}\nsplit = {split_name}\nimages = {}\nthreshold = {threshold}\naccuracy = {:.6}\nprecision = {:.6}\nrecall = {:.6}\nf1 = {:.6}\n",
        ckpt_path.display(),
        probs.len(),
        report.accuracy,
        report.precision,
        report.recall,
        report.f1
    );
    write_text(STAGE, &out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn pr_svg(title: &str, rows: &[CurveRow]) -> String {
    let mut pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.recall, r.precision)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    line_plot(
        title,
        "recall",
        "precision",
        &[Series {
            name: "precision",
            points: pts,
        }],
        Some((0.0, 1.0, 0.0, 1.0)),
        None,
    )
}

// ------------------------------------------------------------------- eval-det

#[derive(Args, Debug)]
pub struct EvalDetArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV with header image_id,cx,cy,w,h,confidence.
    #[arg(long)]
    dets: Option<PathBuf>,
    /// Directory of `{image_id}.txt` YOLO ground-truth labels.
    #[arg(long)]
    gts: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// IoU threshold for the curves and confusion matrix.
    #[arg(long)]
    iou: Option<f64>,
}

const DET_HEADER: &str = "image_id,cx,cy,w,h,confidence";

pub fn parse_detections_csv(text: &str) -> Result<BTreeMap<String, Vec<Detection>>, String> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == DET_HEADER => {}
        Some((_, h)) => return Err(format!("line 1: expected header {DET_HEADER:?}, got {:?}", h.trim())),
        None => return Err("empty detections file".into()),
    }
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [id, rest @ ..] = fields.as_slice() else { unreachable!() };
        if rest.len() != 5 || id.is_empty() {
            return Err(format!("line {}: expected 6 fields, got {}", i + 1, fields.len()));
        }
        let nums = rest
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("line {}: {e}", i + 1))?;
        let bbox = BBox::new(0, nums[0], nums[1], nums[2], nums[3]).map_err(|e| format!("line {}: {e}", i + 1))?;
        let det = Detection::new(bbox, nums[4]).map_err(|e| format!("line {}: {e}", i + 1))?;
        out.entry(id.to_string()).or_default().push(det);
    }
    Ok(out)
}

pub fn eval_det(a: EvalDetArgs) -> Result<(), CliError> {
    const STAGE: &str = "eval-det";
    let mut r = Resolver::new(STAGE, a.config.as_deref(), &["dets", "gts", "out", "iou"])?;
    let dets_path = r.path("dets", a.dets)?;
    let gts_dir = r.path("gts", a.gts)?;
    let out = r.path("out", a.out)?;
    let iou_thr: f64 = r.value("iou", a.iou, 0.5)?;
    if !(0.0..=1.0).contains(&iou_thr) {
        return Err(CliError::usage(format!("{STAGE}: --iou {iou_thr} outside [0,1]")));
    }

    let text = std::fs::read_to_string(&dets_path).at(STAGE, &dets_path)?;
    let mut dets = parse_detections_csv(&text)
        .map_err(|e| CliError::data(format!("{STAGE}: {}: {e}", dets_path.display())))?;
    let mut gts: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
    for entry in std::fs::read_dir(&gts_dir).at(STAGE, &gts_dir)? {
        let p = entry.at(STAGE, &gts_dir)?.path();
        if p.extension().is_some_and(|x| x == "txt") {
            let t = std::fs::read_to_string(&p).at(STAGE, &p)?;
            gts.insert(file_stem(&p.to_string_lossy()), parse_yolo_label(&t).at(STAGE, &p)?);
        }
    }
    let mut ids: Vec<String> = gts.keys().chain(dets.keys()).cloned().collect();
    ids.sort();
    ids.dedup();
    let images: Vec<ImageEval> = ids
        .iter()
        .map(|id| ImageEval::new(dets.remove(id).unwrap_or_default(), gts.get(id).cloned().unwrap_or_default()))
        .collect();

    let (map50, map50_95) = map_range(&images).at(STAGE, &gts_dir)?;
    let curves = confidence_curves(&images, iou_thr);
    let confusion = detection_confusion(&images, curves.best_threshold, iou_thr);

    create_dir(STAGE, &out)?;
    record_config(STAGE, &out.join(RUN_CONFIG), &r)?;
    write_text(STAGE, &out.join("curves.csv"), &curve_rows_csv(&curves.rows))?;
    write_text(STAGE, &out.join("confusion.csv"), &confusion_csv(&confusion))?;
    write_text(
        STAGE,
        &out.join("confusion.svg"),
        &confusion_svg("Detection confusion at the F1-optimal threshold", &confusion),
    )?;
    let fixed = Some((0.0, 1.0, 0.0, 1.0));
    let plot = |title: &str, y: &str, c: vipr::metrics::Curve| {
        line_plot(
            title,
            "confidence",
            y,
            &[Series { name: y, points: c.points }],
            fixed,
            c.argmax,
        )
    };
    write_text(STAGE, &out.join("f1_curve.svg"), &plot("F1-confidence", "F1", curves.f1()))?;
    write_text(
        STAGE,
        &out.join("precision_curve.svg"),
        &plot("Precision-confidence", "precision", curves.precision()),
    )?;
    write_text(
        STAGE,
        &out.join("recall_curve.svg"),
        &plot("Recall-confidence", "recall", curves.recall()),
    )?;
    write_text(STAGE, &out.join("pr_curve.svg"), &pr_svg("Precision-recall", &curves.rows))?;

    let summary = format!(
        "images = {}\nground_truths = {}\ndetections = {}\nmap50 = {map50:.6}\nmap50_95 = {map50_95:.6}\niou_threshold = {iou_thr}\nbest_threshold = {:.6}\nbest_f1 = {:.6}\n",
        images.len(),
        images.iter().map(|i| i.ground_truths.len()).sum::<usize>(),
        images.iter().map(|i| i.detections.len()).sum::<usize>(),
        curves.best_threshold,
        curves.best_f1
    );
    write_text(STAGE, &out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

// ------------------------------------------------------------------ gradcheck

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Central-difference step.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Maximum relative error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    const STAGE: &str = "gradcheck";
    let mut r = Resolver::new(STAGE, a.config.as_deref(), &["eps", "seed"])?;
    let eps: f64 = r.value("eps", a.eps, 1e-5)?;
    let seed = r.seed(a.seed)?;
    r.log();
    if !(eps > 0.0) {
        return Err(CliError::usage(format!("{STAGE}: --eps must be positive")));
    }
    let report = grad_check(&NetConfig::tiny(), seed, eps).in_stage(STAGE)?;
    println!(
        "max_rel_error = {:e}\nl2_rel_error = {:e}\nworst_param = {}\nchecked = {}",
        report.max_rel_error, report.l2_rel_error, report.worst_param, report.checked
    );
    if report.max_rel_error >= GRADCHECK_TOLERANCE || !report.max_rel_error.is_finite() {
        return Err(CliError::internal(format!(
            "{STAGE}: max relative error {:e} is not below {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detections_csv() {
        let m = parse_detections_csv("image_id,cx,cy,w,h,confidence\na,0.5,0.5,0.2,0.2,0.9\nb,0.4,0.4,0.1,0.1,0.3\na,0.1,0.1,0.1,0.1,0.2\n")
            .unwrap();
        assert_eq!(m["a"].len(), 2);
        assert_eq!(m["b"][0].confidence, 0.3);
        assert!(parse_detections_csv("id,cx\n").is_err());
        assert!(parse_detections_csv("image_id,cx,cy,w,h,confidence\na,0.5,0.5,0.2\n").is_err());
        assert!(parse_detections_csv("image_id,cx,cy,w,h,confidence\na,0.5,0.5,0.2,0.2,1.5\n").is_err());
    }

    #[test]
    fn asymmetry_flag() {
        assert_eq!(parse_asymmetry("left:0.25").unwrap(), (Side::Left, 0.25));
        assert!(parse_asymmetry("up:0.2").is_err());
        assert!(parse_asymmetry("left").is_err());
    }
}
