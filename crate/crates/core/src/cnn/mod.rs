//! A small convolutional classifier for EKM images, written from scratch.
//!
//! Layer stack (default shapes):
//!
//! | layer      | output         | parameters      |
//! |------------|----------------|-----------------|
//! | crop 2/2/2/2 | 21 x 33 x 3  | 0               |
//! | conv 3x3, 32, valid, ReLU | 19 x 31 x 32 | 896 |
//! | max-pool 2x2 / 2 | 9 x 15 x 32 | 0           |
//! | dropout    | 9 x 15 x 32    | 0               |
//! | flatten    | 4320           | 0               |
//! | dense, ReLU | 256           | 1,106,176       |
//! | dense, softmax | C          | 257 * C         |
//!
//! Training uses categorical cross-entropy and Adam. All kernels are generic
//! over `f32` (training) and `f64` (gradient checking). Parallel kernels
//! split work over independent outputs and reduce in a fixed order, so
//! results do not depend on the thread count.

mod adam;
mod io;
mod layers;
mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::path::PathBuf;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use adam::{adam_step, AdamConfig};
pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use layers::ForwardCache;
pub use train::{cce_loss, evaluate_set, predict, train, train_epochs, EpochRecord, Prediction, SetEvaluation, TrainConfig};

use crate::dataset::DatasetError;

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("loss diverged at epoch {epoch}, step {step}: {loss}")]
    DivergedLoss { epoch: usize, step: u64, loss: f64 },
    #[error("model file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DatasetError),
}

/// Floating-point type the network can run in.
pub trait Scalar:
    Float + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + Default + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub channels: usize,
    /// Rows/columns removed as (top, bottom, left, right).
    pub crop: (usize, usize, usize, usize),
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub dropout: f64,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelConfig {
    pub fn new(classes: usize) -> Self {
        Self {
            input_h: 25,
            input_w: 37,
            channels: 3,
            crop: (2, 2, 2, 2),
            filters: 32,
            kernel: 3,
            pool: 2,
            dropout: 0.25,
            hidden: 256,
            classes,
        }
    }

    pub fn validate(&self) -> Result<(), CnnError> {
        let bad = |m: &str| Err(CnnError::InvalidConfig(m.to_string()));
        let (t, b, l, r) = self.crop;
        if self.input_h <= t + b || self.input_w <= l + r {
            return bad("crop removes the whole image");
        }
        let (ch, cw, _) = self.cropped_shape();
        if self.kernel == 0 || ch < self.kernel || cw < self.kernel {
            return bad("kernel larger than cropped input");
        }
        let (vh, vw, _) = self.conv_shape();
        if self.pool == 0 || vh < self.pool || vw < self.pool {
            return bad("pool window larger than conv output");
        }
        if self.classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.channels == 0 || self.filters == 0 || self.hidden == 0 {
            return bad("layer widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout rate must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_h * self.input_w * self.channels
    }

    pub fn cropped_shape(&self) -> (usize, usize, usize) {
        let (t, b, l, r) = self.crop;
        (self.input_h - t - b, self.input_w - l - r, self.channels)
    }

    pub fn conv_shape(&self) -> (usize, usize, usize) {
        let (h, w, _) = self.cropped_shape();
        (h + 1 - self.kernel, w + 1 - self.kernel, self.filters)
    }

    pub fn pool_shape(&self) -> (usize, usize, usize) {
        let (h, w, f) = self.conv_shape();
        (h / self.pool, w / self.pool, f)
    }

    pub fn flat_len(&self) -> usize {
        let (h, w, f) = self.pool_shape();
        h * w * f
    }

    /// `(name, output shape)` per layer, batch dimension omitted.
    pub fn layer_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let t3 = |(a, b, c): (usize, usize, usize)| vec![a, b, c];
        vec![
            ("crop", t3(self.cropped_shape())),
            ("conv", t3(self.conv_shape())),
            ("max_pool", t3(self.pool_shape())),
            ("dropout", t3(self.pool_shape())),
            ("flatten", vec![self.flat_len()]),
            ("dense", vec![self.hidden]),
            ("dense_out", vec![self.classes]),
        ]
    }

    pub fn param_counts(&self) -> ParamCounts {
        let k = self.kernel * self.kernel * self.channels;
        ParamCounts {
            conv: (k + 1) * self.filters,
            dense_hidden: (self.flat_len() + 1) * self.hidden,
            dense_out: (self.hidden + 1) * self.classes,
        }
    }

    /// Shapes of the six parameter tensors in declaration order.
    pub fn tensor_shapes(&self) -> [Vec<usize>; 6] {
        [
            vec![self.kernel, self.kernel, self.channels, self.filters],
            vec![self.filters],
            vec![self.flat_len(), self.hidden],
            vec![self.hidden],
            vec![self.hidden, self.classes],
            vec![self.classes],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    pub conv: usize,
    pub dense_hidden: usize,
    pub dense_out: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.conv + self.dense_hidden + self.dense_out
    }
}

pub const TENSOR_NAMES: [&str; 6] = ["conv_w", "conv_b", "dense1_w", "dense1_b", "dense2_w", "dense2_b"];

/// Weights laid out as: conv `[kh][kw][c][f]`, dense `[in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub conv_w: Vec<T>,
    pub conv_b: Vec<T>,
    pub dense1_w: Vec<T>,
    pub dense1_b: Vec<T>,
    pub dense2_w: Vec<T>,
    pub dense2_b: Vec<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let [a, b, c, d, e, f] = cfg.tensor_shapes().map(|s| vec![T::zero(); s.iter().product()]);
        Self {
            conv_w: a,
            conv_b: b,
            dense1_w: c,
            dense1_b: d,
            dense2_w: e,
            dense2_b: f,
        }
    }

    pub fn tensors(&self) -> [&Vec<T>; 6] {
        [&self.conv_w, &self.conv_b, &self.dense1_w, &self.dense1_b, &self.dense2_w, &self.dense2_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 6] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.dense1_w,
            &mut self.dense1_b,
            &mut self.dense2_w,
            &mut self.dense2_b,
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::of(x.as_f64())).collect();
        Params {
            conv_w: c(&self.conv_w),
            conv_b: c(&self.conv_b),
            dense1_w: c(&self.dense1_w),
            dense1_b: c(&self.dense1_b),
            dense2_w: c(&self.dense2_w),
            dense2_b: c(&self.dense2_b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Params<T>,
    pub v: Params<T>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
    pub adam: AdamState<T>,
    /// Class names in label-index order.
    pub vocab: Vec<String>,
    /// Free-form key/value pairs carried in the model file (run config, seed).
    pub metadata: Vec<(String, String)>,
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn init_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>, CnnError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::<T>::zeros(cfg);
    let receptive = cfg.kernel * cfg.kernel;
    let fans = [
        (receptive * cfg.channels, receptive * cfg.filters),
        (cfg.flat_len(), cfg.hidden),
        (cfg.hidden, cfg.classes),
    ];
    let weights = [&mut params.conv_w, &mut params.dense1_w, &mut params.dense2_w];
    for (w, (fan_in, fan_out)) in weights.into_iter().zip(fans) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in w.iter_mut() {
            *v = T::of(rng.random_range(-limit..limit));
        }
    }
    Ok(Model {
        config: cfg.clone(),
        adam: AdamState {
            m: Params::zeros(cfg),
            v: Params::zeros(cfg),
            step: 0,
        },
        params,
        vocab: (0..cfg.classes).map(|i| format!("class_{i}")).collect(),
        metadata: Vec::new(),
    })
}

impl<T: Scalar> Model<T> {
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            adam: AdamState {
                m: self.adam.m.cast(),
                v: self.adam.v.cast(),
                step: self.adam.step,
            },
            vocab: self.vocab.clone(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn set_metadata(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.metadata.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.metadata.push((key.to_string(), value)),
        }
    }

    pub fn metadata(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_chain_for_default_config() {
        let cfg = ModelConfig::new(232);
        let shapes: Vec<Vec<usize>> = cfg.layer_shapes().into_iter().map(|(_, s)| s).collect();
        assert_eq!(
            shapes,
            vec![
                vec![21, 33, 3],
                vec![19, 31, 32],
                vec![9, 15, 32],
                vec![9, 15, 32],
                vec![4320],
                vec![256],
                vec![232]
            ]
        );
    }

    #[test]
    fn parameter_counts() {
        let c = ModelConfig::new(232).param_counts();
        assert_eq!((c.conv, c.dense_hidden, c.dense_out), (896, 1_106_176, 59_624));
        assert_eq!(c.total(), 1_166_696);
        assert_eq!(ModelConfig::new(18).param_counts().dense_out, 4_626);
        let m: Model<f32> = init_model(&ModelConfig::new(232), 0).unwrap();
        assert_eq!(m.params.len(), 1_166_696);
    }

    #[test]
    fn init_is_seeded_glorot_with_zero_bias() {
        let cfg = ModelConfig::new(5);
        let a: Model<f32> = init_model(&cfg, 3).unwrap();
        let b: Model<f32> = init_model(&cfg, 3).unwrap();
        let c: Model<f32> = init_model(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        assert!(a.params.conv_b.iter().all(|&v| v == 0.0));
        let limit = (6.0f32 / (4320.0 + 256.0)).sqrt();
        assert!(a.params.dense1_w.iter().all(|v| v.abs() <= limit));
        // f64 and f32 draws agree up to rounding
        let d: Model<f64> = init_model(&cfg, 3).unwrap();
        assert_eq!(d.params.cast::<f32>(), a.params);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(1).validate().is_err());
        let mut cfg = ModelConfig::new(3);
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::new(3);
        cfg.crop = (13, 12, 0, 0);
        assert!(cfg.validate().is_err());
    }
}
