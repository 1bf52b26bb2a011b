//! Eight-fold deterministic augmentation.
//!
//! Each sample is emitted untouched plus under seven compositions of
//! rotation, horizontal flip and a mild affine warp. All random draws come
//! from a stream keyed by `(seed, sample id, recipe index)`.

use rand::Rng;

use crate::image::{flip_horizontal, rotate_about_center, warp_affine, AffineTransform, GrayImage};
use crate::par;
use crate::rng::keyed_rng;
use crate::synthesis::SynthSample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugmentRecipe {
    Identity,
    Rot,
    Flip,
    Affine,
    RotFlip,
    AffineRot,
    AffineFlip,
    AffineRotFlip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Affine,
    Rot,
    Flip,
}

impl AugmentRecipe {
    pub const ALL: [AugmentRecipe; 8] = [
        AugmentRecipe::Identity,
        AugmentRecipe::Rot,
        AugmentRecipe::Flip,
        AugmentRecipe::Affine,
        AugmentRecipe::RotFlip,
        AugmentRecipe::AffineRot,
        AugmentRecipe::AffineFlip,
        AugmentRecipe::AffineRotFlip,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&r| r == self).expect("listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            AugmentRecipe::Identity => "identity",
            AugmentRecipe::Rot => "rot",
            AugmentRecipe::Flip => "flip",
            AugmentRecipe::Affine => "affine",
            AugmentRecipe::RotFlip => "rotflip",
            AugmentRecipe::AffineRot => "affinerot",
            AugmentRecipe::AffineFlip => "affineflip",
            AugmentRecipe::AffineRotFlip => "affinerotflip",
        }
    }

    /// Steps in application order (the order of the recipe's name).
    fn steps(self) -> &'static [Step] {
        use Step::*;
        match self {
            AugmentRecipe::Identity => &[],
            AugmentRecipe::Rot => &[Rot],
            AugmentRecipe::Flip => &[Flip],
            AugmentRecipe::Affine => &[Affine],
            AugmentRecipe::RotFlip => &[Rot, Flip],
            AugmentRecipe::AffineRot => &[Affine, Rot],
            AugmentRecipe::AffineFlip => &[Affine, Flip],
            AugmentRecipe::AffineRotFlip => &[Affine, Rot, Flip],
        }
    }

    pub fn flips(self) -> bool {
        self.steps().contains(&Step::Flip)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    /// Rotation angle is drawn from `U(-max_rotation, max_rotation)` degrees.
    pub max_rotation: f64,
    /// Translation per axis as a fraction of that axis' length.
    pub translate_frac: f64,
    pub scale_range: (f64, f64),
    /// Shear angle bound in degrees.
    pub shear_max: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            max_rotation: 10.0,
            translate_frac: 0.05,
            scale_range: (0.95, 1.05),
            shear_max: 5.0,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> crate::Result<()> {
        let (lo, hi) = self.scale_range;
        let ok = self.max_rotation >= 0.0
            && self.translate_frac >= 0.0
            && self.shear_max >= 0.0
            && lo > 0.0
            && lo <= 1.0
            && hi >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::invalid(format!("augmentation parameters {self:?}")))
        }
    }
}

/// Sampled affine parameters, kept for inspection and tests.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineDraw {
    pub tx: f64,
    pub ty: f64,
    pub scale: f64,
    pub shear_deg: f64,
}

impl AffineDraw {
    /// Output-to-source transform: scale and x-shear about the center,
    /// followed by a translation.
    pub fn to_transform(self, width: usize, height: usize) -> AffineTransform {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        let k = self.shear_deg.to_radians().tan();
        // forward: dst = C + T + S * [[1, k], [0, 1]] (src - C)
        let forward = AffineTransform::translation(cx + self.tx, cy + self.ty)
            .then_after(&AffineTransform::new(self.scale, self.scale * k, 0.0, 0.0, self.scale, 0.0))
            .then_after(&AffineTransform::translation(-cx, -cy));
        forward.inverse().expect("scale > 0 keeps the warp invertible")
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Applies `recipe` to one sample. The binary label never changes; a flip
/// swaps `leftpar` and `rightpar`.
pub fn augment_one(s: &SynthSample, recipe: AugmentRecipe, params: &AugmentParams, seed: u64) -> SynthSample {
    let mut rng = keyed_rng(seed, &[s.id(), recipe.index() as u64]);
    let (w, h) = s.image.dims();
    let mut img: GrayImage = s.image.clone();
    let mut group = s.group;
    for step in recipe.steps() {
        img = match step {
            Step::Affine => {
                let draw = AffineDraw {
                    tx: uniform(&mut rng, -params.translate_frac, params.translate_frac) * w as f64,
                    ty: uniform(&mut rng, -params.translate_frac, params.translate_frac) * h as f64,
                    scale: uniform(&mut rng, params.scale_range.0, params.scale_range.1),
                    shear_deg: uniform(&mut rng, -params.shear_max, params.shear_max),
                };
                warp_affine(&img, &draw.to_transform(w, h), 0.0).expect("invertible by construction")
            }
            Step::Rot => {
                let deg = uniform(&mut rng, -params.max_rotation, params.max_rotation);
                rotate_about_center(&img, deg)
            }
            Step::Flip => {
                group = group.mirrored();
                flip_horizontal(&img)
            }
        };
    }
    SynthSample {
        image: img,
        label: s.label,
        group,
        source_frame: s.source_frame.clone(),
        seed: s.seed,
    }
}

/// All eight recipes of one sample, in [`AugmentRecipe::ALL`] order.
pub fn augment_all(s: &SynthSample, params: &AugmentParams, seed: u64) -> Vec<(AugmentRecipe, SynthSample)> {
    AugmentRecipe::ALL
        .iter()
        .map(|&r| (r, augment_one(s, r, params, seed)))
        .collect()
}

/// Every sample under every recipe: `8 * N` outputs, sample-major order.
pub fn expand_dataset(samples: &[SynthSample], params: &AugmentParams, seed: u64) -> Vec<SynthSample> {
    let n = AugmentRecipe::ALL.len();
    par::map_range(samples.len() * n, |i| {
        augment_one(&samples[i / n], AugmentRecipe::ALL[i % n], params, seed)
    })
}
