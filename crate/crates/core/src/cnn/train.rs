use std::ops::RangeInclusive;

use super::{adam_step, AdamConfig, CnnError, Model, Scalar};
use crate::dataset::{load_batches, sequential_batches, SampleSet};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Optional cap on optimizer steps per epoch.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            seed: 42,
            adam: AdamConfig::default(),
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        let bad = |m: &str| Err(CnnError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.adam.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.epsilon > 0.0) {
            return bad("Adam betas must lie in [0, 1) and epsilon must be positive");
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps per epoch must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<f32>,
}

/// Mean over the batch of `-sum(y * ln(clamp(p, 1e-12, 1)))`.
pub fn cce_loss<T: Scalar>(probs: &[T], labels: &[T], classes: usize) -> f64 {
    let n = probs.len() / classes.max(1);
    if n == 0 {
        return 0.0;
    }
    let total: f64 = probs
        .chunks(classes)
        .zip(labels.chunks(classes))
        .map(|(p, y)| {
            p.iter()
                .zip(y)
                .filter(|(_, y)| y.as_f64() != 0.0)
                .map(|(p, y)| -y.as_f64() * p.as_f64().clamp(1e-12, 1.0).ln())
                .sum::<f64>()
        })
        .sum();
    total / n as f64
}

fn argmax(p: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn step_seed(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ step.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_set(model: &Model<f32>, set: &SampleSet) -> Result<(), CnnError> {
    let cfg = &model.config;
    if set.is_empty() {
        return Ok(());
    }
    if set.classes != cfg.classes || set.height != cfg.input_h || set.width != cfg.input_w {
        return Err(CnnError::ShapeMismatch {
            expected: format!("{}x{} images, {} classes", cfg.input_h, cfg.input_w, cfg.classes),
            got: format!("{}x{} images, {} classes", set.height, set.width, set.classes),
        });
    }
    Ok(())
}

/// Predicted class (lowest index on ties) and probabilities per image.
pub fn predict(model: &Model<f32>, images: &[f32], batch: usize) -> Result<Vec<Prediction>, CnnError> {
    let cache = model.forward(images, batch, None)?;
    Ok(cache
        .probs
        .chunks(model.config.classes)
        .map(|p| Prediction {
            class: argmax(p),
            probs: p.to_vec(),
        })
        .collect())
}

/// Inference over a whole set in stored order.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEvaluation {
    pub loss: f64,
    pub predictions: Vec<Prediction>,
    pub targets: Vec<usize>,
}

impl SetEvaluation {
    pub fn accuracy(&self) -> f64 {
        let hits = self.predictions.iter().zip(&self.targets).filter(|(p, &t)| p.class == t).count();
        hits as f64 / self.targets.len().max(1) as f64
    }
}

pub fn evaluate_set(model: &Model<f32>, set: &SampleSet, batch_size: usize) -> Result<SetEvaluation, CnnError> {
    check_set(model, set)?;
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(set.len());
    let mut targets = Vec::with_capacity(set.len());
    for batch in sequential_batches(set, batch_size) {
        let batch = batch?;
        let cache = model.forward(&batch.images, batch.size, None)?;
        loss_sum += cce_loss(&cache.probs, &batch.labels, batch.classes) * batch.size as f64;
        predictions.extend(cache.probs.chunks(batch.classes).map(|p| Prediction {
            class: argmax(p),
            probs: p.to_vec(),
        }));
        targets.extend(batch.targets);
    }
    Ok(SetEvaluation {
        loss: loss_sum / set.len().max(1) as f64,
        predictions,
        targets,
    })
}

/// Mini-batch training with Adam for `cfg.epochs` epochs. Deterministic in
/// `cfg.seed`.
pub fn train(
    model: &mut Model<f32>,
    train_set: &SampleSet,
    val_set: &SampleSet,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>, CnnError> {
    train_epochs(model, train_set, val_set, cfg, 1..=cfg.epochs)
}

/// Run only the given epochs. Batch order depends on the epoch number, so
/// training 1..=50 and then 51..=100 equals training 1..=100 in one call.
pub fn train_epochs(
    model: &mut Model<f32>,
    train_set: &SampleSet,
    val_set: &SampleSet,
    cfg: &TrainConfig,
    epochs: RangeInclusive<usize>,
) -> Result<Vec<EpochRecord>, CnnError> {
    cfg.validate()?;
    check_set(model, train_set)?;
    check_set(model, val_set)?;
    if train_set.is_empty() {
        return Err(CnnError::InvalidConfig("training set is empty".into()));
    }
    let last = *epochs.end();
    let mut history = Vec::new();
    for epoch in epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let cap = cfg.steps_per_epoch.unwrap_or(usize::MAX);
        for batch in load_batches(train_set, cfg.batch_size, cfg.seed, epoch as u64)?.take(cap) {
            let batch = batch?;
            let step = model.adam.step;
            let cache = model.forward(&batch.images, batch.size, Some(step_seed(cfg.seed, step)))?;
            let loss = cce_loss(&cache.probs, &batch.labels, batch.classes);
            if !loss.is_finite() {
                return Err(CnnError::DivergedLoss { epoch, step, loss });
            }
            let grads = model.backward(&cache, &batch.labels)?;
            adam_step(model, &grads, &cfg.adam);
            if !model.params.all_finite() {
                return Err(CnnError::DivergedLoss { epoch, step, loss: f64::NAN });
            }
            loss_sum += loss * batch.size as f64;
            seen += batch.size;
        }
        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let ev = evaluate_set(model, val_set, cfg.batch_size)?;
            (Some(ev.loss), Some(ev.accuracy()))
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {}/{}: train_loss={:.4} val_loss={} val_acc={}",
            epoch,
            last,
            rec.train_loss,
            rec.val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            rec.val_accuracy.map_or("-".into(), |v| format!("{v:.4}"))
        );
        history.push(rec);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::super::{init_model, ModelConfig, Params};
    use super::*;

    #[test]
    fn cce_examples() {
        assert_eq!(cce_loss(&[0.0f64, 1.0], &[0.0, 1.0], 2), 0.0);
        let u = vec![1.0 / 18.0; 18];
        let mut y = vec![0.0; 18];
        y[4] = 1.0;
        assert!((cce_loss(&u, &y, 18) - 18f64.ln()).abs() < 1e-12);
        assert!((cce_loss(&[0.0f64, 1.0], &[1.0, 0.0], 2) - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn cce_matches_per_sample_loop() {
        let probs = [0.2f64, 0.5, 0.3, 0.7, 0.1, 0.2, 0.05, 0.05, 0.9];
        let targets = [1usize, 0, 2];
        let mut labels = [0.0; 9];
        let mut oracle = 0.0;
        for (b, &t) in targets.iter().enumerate() {
            labels[b * 3 + t] = 1.0;
            oracle -= f64::ln(probs[b * 3 + t]);
        }
        assert!((cce_loss(&probs, &labels, 3) - oracle / 3.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let cfg = ModelConfig::new(5);
        let mut m: Model<f32> = init_model(&cfg, 0).unwrap();
        m.params = Params::zeros(&cfg);
        let x = vec![0.5f32; cfg.input_len()];
        let p = predict(&m, &x, 1).unwrap();
        assert_eq!(p[0].class, 0);
        assert!(p[0].probs.iter().all(|&v| (v - 0.2).abs() < 1e-7));
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        let mut c = TrainConfig::default();
        c.adam.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn step_seeds_differ() {
        assert_ne!(step_seed(42, 0), step_seed(42, 1));
        assert_ne!(step_seed(42, 0), step_seed(43, 0));
    }
}
