use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng::keyed_rng;

use super::layers::{bce_with_logits_scaled, sigmoid};
use super::model::DropoutKeys;
use super::{init_weights, Checkpoint, CheckpointMeta, NetConfig, Optimizer, OptimizerKind, Scalar, Tensor, Viprnet};

const SHUFFLE_STREAM: u64 = 0x5348;
const DROPOUT_STREAM: u64 = 0x4450;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "32" | "f32" => Ok(Precision::F32),
            "64" | "f64" => Ok(Precision::F64),
            other => Err(Error::invalid(format!("unknown precision {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Samples per forward/backward pass inside a batch. Only bounds
    /// memory; the update is the same full-batch gradient, though the
    /// floating-point summation order depends on it.
    pub micro_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            optimizer: OptimizerKind::adam(),
            learning_rate: 1e-3,
            seed: 0,
            precision: Precision::F32,
            micro_batch: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.micro_batch == 0 {
            return Err(Error::invalid("epochs, batch size and micro batch must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Random-access source of labeled single-channel images.
pub trait Dataset: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn image(&self, i: usize) -> Result<GrayImage>;

    fn label(&self, i: usize) -> u8;
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: GrayImage,
    pub label: u8,
}

impl Dataset for [LabeledImage] {
    fn len(&self) -> usize {
        <[LabeledImage]>::len(self)
    }

    fn image(&self, i: usize) -> Result<GrayImage> {
        Ok(self[i].image.clone())
    }

    fn label(&self, i: usize) -> u8 {
        self[i].label
    }
}

impl Dataset for Vec<LabeledImage> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn image(&self, i: usize) -> Result<GrayImage> {
        Ok(self[i].image.clone())
    }

    fn label(&self, i: usize) -> u8 {
        self[i].label
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// `epoch,train_loss,val_loss,val_acc`; missing validation values are empty.
pub fn history_csv(h: &TrainHistory) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_acc\n");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for e in &h.epochs {
        let _ = writeln!(s, "{},{:.6},{},{}", e.epoch, e.train_loss, opt(e.val_loss), opt(e.val_acc));
    }
    s
}

fn batch_tensor<T: Scalar>(data: &dyn Dataset, idx: &[usize], size: usize) -> Result<(Tensor<T>, Vec<u8>)> {
    let mut values = Vec::with_capacity(idx.len() * size * size);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let img = data.image(i)?;
        if img.dims() != (size, size) {
            return Err(Error::shape((size, size), img.dims()));
        }
        values.extend(img.pixels().iter().map(|&p| T::of(f64::from(p))));
        labels.push(data.label(i));
    }
    Ok((Tensor::new(vec![idx.len(), 1, size, size], values)?, labels))
}

fn check_dataset(cfg: &NetConfig, data: &dyn Dataset, what: &str) -> Result<()> {
    let size = cfg.input_size;
    for i in 0..data.len() {
        let img = data.image(i)?;
        if img.dims() != (size, size) {
            return Err(Error::Shape {
                expected: format!("{what} image {i} of {size}x{size}"),
                got: format!("{}x{}", img.width(), img.height()),
            });
        }
        if data.label(i) > 1 {
            return Err(Error::Validation(format!("{what} label {} at {i} is not binary", data.label(i))));
        }
    }
    Ok(())
}

/// Evaluation-mode loss, accuracy at probability 0.5 and per-sample
/// probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub probabilities: Vec<f64>,
}

pub fn evaluate<T: Scalar>(net: &Viprnet<T>, data: &dyn Dataset, micro_batch: usize) -> Result<Evaluation> {
    let n = data.len();
    if n == 0 {
        return Err(Error::invalid("empty evaluation set"));
    }
    let idx: Vec<usize> = (0..n).collect();
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut probabilities = Vec::with_capacity(n);
    for chunk in idx.chunks(micro_batch.max(1)) {
        let (x, labels) = batch_tensor::<T>(data, chunk, net.config.input_size)?;
        let logits = net.logits(&x)?;
        let (l, _) = bce_with_logits_scaled(&logits.values, &labels, n as f64);
        loss += l;
        for (z, &y) in logits.values.iter().zip(&labels) {
            let p = sigmoid(z.f64());
            correct += usize::from((p >= 0.5) == (y == 1));
            probabilities.push(p);
        }
    }
    Ok(Evaluation {
        loss,
        accuracy: correct as f64 / n as f64,
        probabilities,
    })
}

fn train_impl<T: Scalar>(
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    train_set: &dyn Dataset,
    val_set: Option<&dyn Dataset>,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<(Checkpoint, TrainHistory)> {
    let mut net: Viprnet<T> = init_weights(net_cfg, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &net.params);
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut keyed_rng(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let dropout_seed = keyed_rng(cfg.seed, &[DROPOUT_STREAM, epoch as u64]).next_u64();
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<T>> = net.params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            for micro in batch.chunks(cfg.micro_batch) {
                let (x, labels) = batch_tensor::<T>(train_set, micro, net_cfg.input_size)?;
                let keys: Vec<u64> = micro.iter().map(|&i| i as u64).collect();
                let (logits, cache) = net.forward(
                    &x,
                    Some(DropoutKeys {
                        seed: dropout_seed,
                        keys: &keys,
                    }),
                )?;
                let (loss, dz) = bce_with_logits_scaled(&logits.values, &labels, batch.len() as f64);
                epoch_loss += loss * batch.len() as f64;
                let g = net.backward(&cache, &Tensor::new(logits.shape().to_vec(), dz)?)?;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
                }
            }
            opt.step(&mut net.params, &grads);
        }
        let (val_loss, val_acc) = match val_set {
            Some(v) if !v.is_empty() => {
                let e = evaluate(&net, v, cfg.micro_batch)?;
                (Some(e.loss), Some(e.accuracy))
            }
            _ => (None, None),
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: epoch_loss / n as f64,
            val_loss,
            val_acc,
        };
        observer(&stats);
        history.epochs.push(stats);
    }
    let last = history.epochs.last().expect("epochs >= 1");
    let meta = CheckpointMeta {
        epoch: last.epoch,
        seed: cfg.seed,
        train_loss: Some(last.train_loss),
        val_loss: last.val_loss,
        precision: T::NAME.into(),
    };
    Ok((Checkpoint::from_net(&net, meta), history))
}

pub fn train(
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    train_set: &dyn Dataset,
    val_set: Option<&dyn Dataset>,
) -> Result<(Checkpoint, TrainHistory)> {
    train_with_observer(net_cfg, cfg, train_set, val_set, &mut |_| {})
}

/// Like [`train`], calling `observer` after every epoch.
pub fn train_with_observer(
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    train_set: &dyn Dataset,
    val_set: Option<&dyn Dataset>,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<(Checkpoint, TrainHistory)> {
    cfg.validate()?;
    net_cfg.validate()?;
    if net_cfg.outputs != 1 || net_cfg.in_channels != 1 {
        return Err(Error::invalid("binary training needs one input channel and one logit"));
    }
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    check_dataset(net_cfg, train_set, "training")?;
    if let Some(v) = val_set {
        check_dataset(net_cfg, v, "validation")?;
    }
    match cfg.precision {
        Precision::F32 => train_impl::<f32>(net_cfg, cfg, train_set, val_set, observer),
        Precision::F64 => train_impl::<f64>(net_cfg, cfg, train_set, val_set, observer),
    }
}

/// Evaluation-mode classifier over a loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Classifier {
    net: Viprnet<f32>,
    micro_batch: usize,
}

impl Classifier {
    pub fn new(ckpt: &Checkpoint) -> Result<Self> {
        let net = ckpt.to_net()?;
        if net.config.outputs != 1 || net.config.in_channels != 1 {
            return Err(Error::invalid("classifier needs one input channel and one logit"));
        }
        Ok(Self { net, micro_batch: 16 })
    }

    pub fn config(&self) -> &NetConfig {
        &self.net.config
    }

    /// Probability of the paralyzed class for each image.
    pub fn predict_batch(&self, images: &[GrayImage]) -> Result<Vec<f64>> {
        let size = self.net.config.input_size;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.micro_batch) {
            let mut values = Vec::with_capacity(chunk.len() * size * size);
            for img in chunk {
                if img.dims() != (size, size) {
                    return Err(Error::shape((size, size), img.dims()));
                }
                values.extend_from_slice(img.pixels());
            }
            let x = Tensor::new(vec![chunk.len(), 1, size, size], values)?;
            out.extend(self.net.logits(&x)?.values.iter().map(|&z| sigmoid(f64::from(z))));
        }
        Ok(out)
    }

    pub fn predict(&self, img: &GrayImage) -> Result<f64> {
        Ok(self.predict_batch(std::slice::from_ref(img))?[0])
    }
}

/// Sigmoid of the single logit for one image, dropout disabled.
pub fn predict(ckpt: &Checkpoint, img: &GrayImage) -> Result<f64> {
    Classifier::new(ckpt)?.predict(img)
}
