//! Desk-scale vocal-cord ultrasound (VCUS) machine-learning pipeline.
//!
//! The crate covers every stage between raw frames and evaluation reports:
//!
//! * [`image`]: grayscale rasters, PNG boundary, Lanczos-3 resampling and
//!   geometric warps.
//! * [`labels`]: YOLO-format ROI labels, dataset manifests, ROI cropping.
//! * [`pipeline`]: Y4M luma decoding, frame striding, anonymization masks,
//!   standardization and source-level train/val splits.
//! * [`synthesis`]: synthetic vocal-cord-paralysis images by asymmetric
//!   vertical compression of one ROI half.
//! * [`augment`]: the deterministic eight-recipe dataset expansion.
//! * [`nn`]: a small CNN engine and the VIPRnet binary classifier.
//! * [`metrics`]: IoU/CIoU, COCO-style AP, confidence curves and confusion
//!   matrices.
//! * [`phantom`]: procedural VCUS-like frames with ground-truth ROIs.
//!
//! With the default `parallel` feature, batch-level loops run on rayon.
//! Disabling it yields a strictly sequential build with identical results.

pub mod augment;
pub mod error;
pub mod image;
pub mod labels;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod synthesis;

mod par;

pub use error::{Error, Result};
pub use par::is_parallel;
pub use image::{AffineTransform, GrayImage};
pub use labels::{BBox, FrameRecord, Manifest, PixelRect, Split};
pub use synthesis::{GroupTag, Side, SynthSample};

/// Edge length of the standardized square frame.
pub const STANDARD_SIZE: usize = 256;
