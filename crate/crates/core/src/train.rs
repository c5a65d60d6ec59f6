//! Plain SGD on softmax cross-entropy of the consensus logits.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::net::backward::backward;
use crate::net::forward::{forward_offline_impl, forward_recorded, NetParams};
use crate::net::{consensus_average, BlockSpec, HeadSpec, InputSpec, NetworkSpec, Placement, WeightStore};
use crate::nn::{softmax_cross_entropy, ConvDesc};
use crate::scalar::Real;
use crate::shift::ShiftSpec;
use crate::synth::{gen_dataset, SyntheticClip};
use crate::tensor::{Activation, ClipShape, Tensor};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            train_size: 512,
            test_size: 256,
            frames: 8,
            height: 16,
            width: 16,
        }
    }
}

impl TrainConfig {
    /// The learning rate may be zero; every count must be positive.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::spec(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("train_size", self.train_size),
            ("test_size", self.test_size),
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::spec(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Train and test sets drawn from independent seeds derived from `seed`.
    pub fn datasets(&self) -> Result<(Vec<SyntheticClip>, Vec<SyntheticClip>)> {
        let (t, h, w) = (self.frames, self.height, self.width);
        let train = gen_dataset(self.seed, self.train_size, t, h, w)?;
        let test = gen_dataset(self.seed ^ 0x5bd1_e995_7f4a_7c15, self.test_size, t, h, w)?;
        Ok((train, test))
    }
}

/// The demo network: 3x3 stem to 8 channels, two residual blocks with a
/// 1/8 + 1/8 shift, global pooling and a 2-way linear head.
pub fn toy_network(frames: usize, height: usize, width: usize, placement: Placement) -> NetworkSpec {
    NetworkSpec {
        input: InputSpec {
            c: 1,
            h: height,
            w: width,
            t: frames,
        },
        stem: ConvDesc::same(1, 8, 3),
        blocks: (0..2)
            .map(|_| BlockSpec::basic(8, 3, placement, ShiftSpec::partial(8)))
            .collect(),
        head: HeadSpec { classes: 2 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean loss over the epoch's batches, before each update.
    pub train_loss: f64,
    /// Accuracy over the epoch's batches, before each update.
    pub train_acc: f64,
    pub test_acc: f64,
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in history {
        let _ = writeln!(out, "{},{},{},{}", m.epoch, m.train_loss, m.train_acc, m.test_acc);
    }
    out
}

pub fn write_metrics_csv(path: impl AsRef<Path>, history: &[EpochMetrics]) -> Result<()> {
    codec::write_file(path.as_ref(), metrics_csv(history).as_bytes())
}

/// Stacks clips into one `(B, T, C, H, W)` batch.
pub fn batch_clips<F: Real>(clips: &[&SyntheticClip]) -> Result<(Activation<F>, Vec<usize>)> {
    let first = clips.first().ok_or_else(|| Error::shape("empty batch"))?.clip.shape();
    let mut data = Vec::with_capacity(first.len() * clips.len());
    for c in clips {
        if c.clip.shape() != first {
            return Err(Error::shape(format!("clip {:?} in a batch of {first:?}", c.clip.shape())));
        }
        data.extend(c.clip.data().iter().map(|&v| F::lit(v as f64)));
    }
    let s = ClipShape::new(clips.len(), first.t, first.c, first.h, first.w);
    Ok((Activation::from_vec(s, data)?, clips.iter().map(|c| c.label).collect()))
}

fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_classes(spec: &NetworkSpec) -> Result<()> {
    if spec.num_classes() != 2 {
        return Err(Error::spec(format!(
            "the direction task has 2 classes, the network has {}",
            spec.num_classes()
        )));
    }
    Ok(())
}

pub struct BatchResult<F> {
    /// Mean cross-entropy over the batch.
    pub loss: F,
    pub grads: WeightStore<F>,
    pub correct: usize,
}

/// Mean loss over a batch and its gradient with respect to every weight.
pub fn loss_and_grads<F: Real>(
    spec: &NetworkSpec,
    w: &WeightStore<F>,
    clips: &Activation<F>,
    labels: &[usize],
) -> Result<BatchResult<F>> {
    let s = clips.shape();
    if labels.len() != s.n {
        return Err(Error::shape(format!("{} labels for {} clips", labels.len(), s.n)));
    }
    let np = NetParams::resolve(spec, w)?;
    let (logits, tape) = forward_recorded(clips, spec, &np)?;
    let consensus = consensus_average(&logits)?;
    let k = spec.num_classes();
    let scale = F::lit(1.0 / (s.n * s.t) as f64);
    let mut loss = F::zero();
    let mut correct = 0;
    let mut grad_logits = Vec::with_capacity(s.n * s.t * k);
    for (ni, (row, &label)) in consensus.data().chunks_exact(k).zip(labels).enumerate() {
        let (l, g) = softmax_cross_entropy(row, label)?;
        loss += l;
        correct += usize::from(argmax(row) == label);
        debug_assert_eq!(grad_logits.len(), ni * s.t * k);
        for _ in 0..s.t {
            grad_logits.extend(g.iter().map(|&v| v * scale));
        }
    }
    let grads = backward(spec, &np, &tape, &grad_logits)?;
    Ok(BatchResult {
        loss: loss / F::lit(s.n as f64),
        grads,
        correct,
    })
}

/// Mean loss over a batch, forward only.
pub fn clip_loss<F: Real>(spec: &NetworkSpec, w: &WeightStore<F>, clips: &Activation<F>, labels: &[usize]) -> Result<F> {
    let np = NetParams::resolve(spec, w)?;
    let consensus = consensus_average(&forward_offline_impl(clips, spec, &np, None)?)?;
    let k = spec.num_classes();
    let mut loss = F::zero();
    for (row, &label) in consensus.data().chunks_exact(k).zip(labels) {
        loss += softmax_cross_entropy(row, label)?.0;
    }
    Ok(loss / F::lit(labels.len() as f64))
}

/// Clip-level `(N, classes)` consensus logits for a batch of clips.
pub fn predict(spec: &NetworkSpec, w: &WeightStore, clips: &Activation) -> Result<Tensor> {
    let np = NetParams::resolve(spec, w)?;
    consensus_average(&forward_offline_impl(clips, spec, &np, None)?)
}

const EVAL_BATCH: usize = 32;

/// Fraction of clips whose consensus argmax equals the label.
pub fn evaluate(spec: &NetworkSpec, w: &WeightStore, data: &[SyntheticClip]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let np = NetParams::resolve(spec, w)?;
    let k = spec.num_classes();
    let mut correct = 0;
    for chunk in data.chunks(EVAL_BATCH) {
        let refs: Vec<&SyntheticClip> = chunk.iter().collect();
        let (clips, labels) = batch_clips::<f32>(&refs)?;
        let consensus = consensus_average(&forward_offline_impl(&clips, spec, &np, None)?)?;
        correct += consensus
            .data()
            .chunks_exact(k)
            .zip(&labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: WeightStore,
    pub history: Vec<EpochMetrics>,
}

/// Trains from `WeightStore::init(spec, cfg.seed)`.
pub fn train(spec: &NetworkSpec, cfg: &TrainConfig, train: &[SyntheticClip], test: &[SyntheticClip]) -> Result<TrainOutcome> {
    let w = WeightStore::init(spec, cfg.seed)?;
    train_from(spec, cfg, w, train, test)
}

pub fn train_from(
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    mut w: WeightStore,
    train: &[SyntheticClip],
    test: &[SyntheticClip],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_classes(spec)?;
    w.validate(spec)?;
    if train.is_empty() {
        return Err(Error::shape("empty training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let lr = cfg.lr as f32;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&SyntheticClip> = idx.iter().map(|&i| &train[i]).collect();
            let (clips, labels) = batch_clips::<f32>(&refs)?;
            let r = loss_and_grads(spec, &w, &clips, &labels)?;
            if !r.loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    step,
                    loss: r.loss as f64,
                });
            }
            loss_sum += r.loss as f64 * labels.len() as f64;
            correct += r.correct;
            if lr != 0.0 {
                w.sgd_step(&r.grads, lr)?;
            }
        }
        history.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            test_acc: evaluate(spec, &w, test)?,
        });
    }
    Ok(TrainOutcome { weights: w, history })
}
