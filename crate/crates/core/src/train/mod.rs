//! Training loop, optimizer, inference helpers and checkpoints.

mod checkpoint;
mod sgd;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedArray};
pub use sgd::{sgd_update, SgdState};

use ndarray::{s, Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::preprocess::{ceil32, letterbox_image, unletterbox_mask, Letterbox};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::nn::param::zero_grads;
use crate::nn::{composite_loss_with_grad, sigmoid};

/// Optimization hyperparameters. The defaults are the training recipe this
/// toolkit ships with: SGD, momentum 0.937, learning rate 0.01, weight decay
/// 0.0005, 50 epochs, batch size 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub bce_weight: f64,
    pub dice_weight: f64,
    /// Probability at or above which a pixel classifies as sky.
    pub binarize_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.937,
            weight_decay: 0.0005,
            epochs: 50,
            batch_size: 4,
            seed: 0,
            bce_weight: 1.0,
            dice_weight: 1.0,
            binarize_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        if self.bce_weight < 0.0 || self.dice_weight < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_iou: Option<f64>,
    pub val_dice: Option<f64>,
    pub val_accuracy: Option<f64>,
}

/// Per-epoch training log; serializes to CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn total_steps(&self) -> usize {
        self.epochs.iter().map(|e| e.steps).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,steps,train_loss,val_iou,val_dice,val_accuracy\n");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{:.9},{},{},{}\n",
                e.epoch,
                e.steps,
                e.train_loss,
                fmt(e.val_iou),
                fmt(e.val_dice),
                fmt(e.val_accuracy)
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<TrainHistory> {
        let mut epochs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Data(format!(
                    "history line {i} has {} fields, expected 6",
                    fields.len()
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|e| Error::Data(format!("history line {i}: {e}")))
            };
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    num(s).map(Some)
                }
            };
            epochs.push(EpochRecord {
                epoch: num(fields[0])? as usize,
                steps: num(fields[1])? as usize,
                train_loss: num(fields[2])?,
                val_iou: opt(fields[3])?,
                val_dice: opt(fields[4])?,
                val_accuracy: opt(fields[5])?,
            });
        }
        Ok(TrainHistory { epochs })
    }
}

/// Everything `fit` produces.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// State after the final epoch.
    pub checkpoint: Checkpoint,
    /// Best-validation-IoU state, when a validation set was given.
    pub best: Option<Checkpoint>,
    pub history: TrainHistory,
}

fn batch_tensors(
    data: &Dataset,
    indices: &[usize],
    flips: &[bool],
) -> (Array4<f32>, Array4<f32>) {
    let (h, w) = data.samples[indices[0]].mask.dim();
    let b = indices.len();
    let mut x = Array4::<f32>::zeros((b, 3, h, w));
    let mut t = Array4::<f32>::zeros((b, 1, h, w));
    for (bi, (&si, &flip)) in indices.iter().zip(flips).enumerate() {
        let sample = &data.samples[si];
        let mut img = x.slice_mut(s![bi, .., .., ..]);
        let mut tgt = t.slice_mut(s![bi, 0, .., ..]);
        if flip {
            img.assign(&sample.image.slice(s![.., .., ..;-1]));
            ndarray::Zip::from(&mut tgt)
                .and(&sample.mask.slice(s![.., ..;-1]))
                .for_each(|o, &m| *o = m as f32);
        } else {
            img.assign(&sample.image);
            ndarray::Zip::from(&mut tgt)
                .and(&sample.mask)
                .for_each(|o, &m| *o = m as f32);
        }
    }
    (x, t)
}

/// Trains the network. Runs `epochs * ceil(N / batch_size)` optimizer steps
/// in a seed-determined order; a fixed seed reproduces the history bitwise.
/// A non-finite loss aborts with [`Error::Diverged`] carrying the parameters
/// of the last completed step.
pub fn fit(
    net: &mut Network<f32>,
    train_data: &Dataset,
    val_data: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    let (h, w) = train_data.sample_size()?;
    if h % 32 != 0 || w % 32 != 0 {
        return Err(Error::Shape(format!(
            "training samples are {h}x{w}; letterbox to a multiple of 32"
        )));
    }
    if let Some(val) = val_data {
        val.sample_size()?;
    }

    let n = train_data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng_shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rng_flip = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_flip.set_stream(1);

    let mut state = SgdState::new();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut global_step = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng_shuffle);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let flips: Vec<bool> = chunk
                .iter()
                .map(|_| rng_flip.gen::<f64>() < train_data.flip_prob)
                .collect();
            let (x, t) = batch_tensors(train_data, chunk, &flips);
            zero_grads(net);
            let (logits, cache) = net.forward_train(&x)?;
            let (terms, dlogits) =
                composite_loss_with_grad(&logits, &t, (cfg.bce_weight, cfg.dice_weight))?;
            if !terms.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: global_step,
                    loss: terms.total,
                    last_good: Box::new(Checkpoint::capture(
                        net,
                        epoch as u32 - 1,
                        &history,
                        Some(&state),
                    )),
                });
            }
            net.backward(&cache, &dlogits);
            state.step(net, cfg)?;
            loss_sum += terms.total;
            steps += 1;
            global_step += 1;
        }

        let mut record = EpochRecord {
            epoch,
            steps,
            train_loss: loss_sum / steps as f64,
            val_iou: None,
            val_dice: None,
            val_accuracy: None,
        };
        if let Some(val) = val_data {
            let report =
                crate::metrics::evaluate_segmentation(net, val, cfg.binarize_threshold)?;
            record.val_iou = report.metrics.iou;
            record.val_dice = report.metrics.dice;
            record.val_accuracy = Some(report.metrics.accuracy);
        }
        history.epochs.push(record);

        if let Some(iou) = history.epochs.last().and_then(|r| r.val_iou) {
            let improved = best.as_ref().map(|(b, _)| iou > *b).unwrap_or(true);
            if improved {
                best = Some((
                    iou,
                    Checkpoint::capture(net, epoch as u32, &history, Some(&state)),
                ));
            }
        }
    }

    let checkpoint = Checkpoint::capture(net, cfg.epochs as u32, &history, Some(&state));
    Ok(FitOutcome {
        checkpoint,
        best: best.map(|(_, c)| c),
        history,
    })
}

/// Thresholds sigmoid probabilities: a pixel is sky when `p >= threshold`
/// (ties classify as sky). A threshold above 1 therefore yields an all-zero
/// mask and a threshold at or below 0 an all-one mask.
pub fn mask_from_logits(logits: &Array2<f32>, threshold: f64) -> Array2<u8> {
    logits.mapv(|z| u8::from(sigmoid(z as f64) >= threshold))
}

/// Segments one image of any size: letterbox-pad to a multiple of 32, run
/// the network, threshold, and crop the padding away so the returned mask
/// matches the input resolution.
pub fn predict_mask(
    net: &Network<f32>,
    image: &Array3<f32>,
    threshold: f64,
) -> Result<Array2<u8>> {
    let (ch, h, w) = image.dim();
    if ch != net.spec.in_channels {
        return Err(Error::Shape(format!(
            "expected {} channels, got {ch}",
            net.spec.in_channels
        )));
    }
    let lb = Letterbox::plan((h, w), (ceil32(h), ceil32(w)));
    let padded = letterbox_image(image, &lb, 114.0 / 255.0);
    let mut x = Array4::<f32>::zeros((1, ch, lb.target.0, lb.target.1));
    x.slice_mut(s![0, .., .., ..]).assign(&padded);
    let logits = net.forward(&x)?;
    let full = mask_from_logits(&logits.slice(s![0, 0, .., ..]).to_owned(), threshold);
    Ok(unletterbox_mask(&full, &lb))
}
