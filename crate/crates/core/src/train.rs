//! Minibatch SGD over the multi-head loss, with layer freezing.

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    backward_accumulate, forward, multihead_loss, sgd_step, BackwardOptions, FreezeMask, Mode,
    NetworkSpec, Parameters,
};
use crate::tensor::rng;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub freeze: FreezeMask,
    pub seed: u64,
    /// Abort when an epoch's mean loss exceeds this multiple of the first
    /// epoch's.
    pub divergence_factor: f64,
}

impl TrainConfig {
    pub fn new(spec: &NetworkSpec) -> Self {
        TrainConfig {
            epochs: 10,
            lr: 0.05,
            weight_decay: 1e-4,
            batch_size: 16,
            freeze: FreezeMask::none(spec),
            seed: 0,
            divergence_factor: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean minibatch loss over the epoch (train mode, dropout active).
    pub train_loss: f64,
    /// Accuracy per group over labeled examples, measured on the train-mode
    /// passes made during the epoch.
    pub train_accuracy: Vec<f64>,
    pub test: Option<Evaluation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Mean multi-head loss over images with at least one labeled group.
    pub loss: f64,
    /// Accuracy per group over labeled examples (NaN-free: groups without
    /// labeled examples report 0).
    pub per_group_accuracy: Vec<f64>,
}

impl Evaluation {
    pub fn mean_accuracy(&self) -> f64 {
        self.per_group_accuracy.iter().sum::<f64>() / self.per_group_accuracy.len() as f64
    }
}

struct Tally {
    correct: Vec<usize>,
    total: Vec<usize>,
}

impl Tally {
    fn new(groups: usize) -> Self {
        Tally {
            correct: vec![0; groups],
            total: vec![0; groups],
        }
    }

    fn add(&mut self, predictions: &[usize], labels: &[Option<usize>]) {
        for (g, (p, l)) in predictions.iter().zip(labels).enumerate() {
            if let Some(l) = l {
                self.total[g] += 1;
                if p == l {
                    self.correct[g] += 1;
                }
            }
        }
    }

    fn accuracy(&self) -> Vec<f64> {
        self.correct
            .iter()
            .zip(&self.total)
            .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
            .collect()
    }
}

/// Number of real (non-"unlabeled") classes of each head.
pub fn real_classes(dataset: &Dataset) -> Vec<usize> {
    dataset.schema.groups().iter().map(|g| g.labels.len()).collect()
}

/// Eval-mode loss and per-group accuracy; predictions ignore the
/// "unlabeled" class.
pub fn evaluate(spec: &NetworkSpec, params: &Parameters, dataset: &Dataset) -> Result<Evaluation> {
    spec.check_schema(&dataset.schema)?;
    let classes = real_classes(dataset);
    let mut tally = Tally::new(classes.len());
    let mut loss = 0.0;
    let mut counted = 0usize;
    for item in &dataset.images {
        let trace = forward(spec, params, &item.image, Mode::Eval, 0)?;
        if item.labels.iter().any(Option::is_some) {
            loss += multihead_loss(&trace, &item.labels)?.total;
            counted += 1;
        }
        tally.add(&trace.predictions(&classes), &item.labels);
    }
    Ok(Evaluation {
        loss: if counted == 0 { 0.0 } else { loss / counted as f64 },
        per_group_accuracy: tally.accuracy(),
    })
}

/// Per-image dropout seed.
fn mix_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains `params` in place. `on_epoch` sees each epoch's statistics as soon
/// as they are available.
pub fn train(
    spec: &NetworkSpec,
    params: &mut Parameters,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    spec.check_schema(&train_set.schema)?;
    params.check(spec)?;
    cfg.freeze.check(spec)?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", cfg.lr)));
    }
    if train_set.image_shape() != spec.input_shape() {
        return Err(Error::Shape(format!(
            "dataset images are {:?}, network expects {:?}",
            train_set.image_shape(),
            spec.input
        )));
    }
    let classes = real_classes(train_set);
    let opts = BackwardOptions {
        freeze: Some(&cfg.freeze),
        input_grad: false,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grads = params.zeros_like();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut first_loss = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng(cfg.seed.wrapping_add(epoch as u64)));
        let mut tally = Tally::new(classes.len());
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| g.scale_in_place(0.0));
            let mut batch_loss = 0.0;
            for &i in batch {
                let item = &train_set.images[i];
                let trace = forward(spec, params, &item.image, Mode::Train, mix_seed(cfg.seed, epoch, i))?;
                let loss = multihead_loss(&trace, &item.labels)?;
                batch_loss += loss.total;
                tally.add(&trace.predictions(&classes), &item.labels);
                backward_accumulate(spec, params, &trace, &loss.grads, &opts, &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale_in_place(scale));
            sgd_step(params, &grads, cfg.lr, cfg.weight_decay, &cfg.freeze)?;
            loss_sum += batch_loss * scale;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let reference = *first_loss.get_or_insert(train_loss);
        if !train_loss.is_finite() || train_loss > cfg.divergence_factor * reference {
            return Err(Error::Divergence(format!(
                "epoch {epoch} loss {train_loss:.6} vs first-epoch {reference:.6}; lower the learning rate"
            )));
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            train_accuracy: tally.accuracy(),
            test: test_set.map(|t| evaluate(spec, params, t)).transpose()?,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}
