use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{CnnError, Model, Params, Scalar};

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub batch: usize,
    cropped: Vec<T>,
    /// Offset of each pooled value's argmax inside its sample's conv output.
    pool_idx: Vec<u32>,
    pooled: Vec<T>,
    /// Dropout multipliers (0 or 1/(1-rate)); empty in inference mode.
    dropout_scale: Vec<T>,
    flat: Vec<T>,
    hidden: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

struct SampleOut<T> {
    cropped: Vec<T>,
    pool_idx: Vec<u32>,
    pooled: Vec<T>,
    flat: Vec<T>,
    hidden: Vec<T>,
    logits: Vec<T>,
    probs: Vec<T>,
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with a fixed 8-lane reduction order.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

pub(crate) fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let e: Vec<T> = logits.iter().map(|&v| (v - m).exp()).collect();
    let s = e.iter().fold(T::zero(), |a, &b| a + b);
    e.into_iter().map(|v| v / s).collect()
}

fn shape_err(expected: usize, got: usize, what: &str) -> CnnError {
    CnnError::ShapeMismatch {
        expected: format!("{expected} {what}"),
        got: format!("{got} {what}"),
    }
}

impl<T: Scalar> ForwardCache<T> {
    /// True when both passes took the same piecewise-linear branch: same
    /// max-pool winners and same ReLU on/off states. Finite differences
    /// between two such passes never straddle a kink.
    pub fn same_activation_pattern(&self, other: &Self) -> bool {
        let on = |v: &[T]| v.iter().map(|&x| x > T::zero()).collect::<Vec<_>>();
        self.pool_idx == other.pool_idx && on(&self.pooled) == on(&other.pooled) && on(&self.hidden) == on(&other.hidden)
    }
}

impl<T: Scalar> Model<T> {
    /// Forward pass over `batch` images in `B x H x W x C` order. Dropout is
    /// applied only when `dropout_seed` is given.
    pub fn forward(&self, images: &[T], batch: usize, dropout_seed: Option<u64>) -> Result<ForwardCache<T>, CnnError> {
        let cfg = &self.config;
        let n_in = cfg.input_len();
        if images.len() != batch * n_in {
            return Err(shape_err(batch * n_in, images.len(), "input values"));
        }
        let flat_len = cfg.flat_len();
        let dropout_scale = match dropout_seed {
            Some(seed) if cfg.dropout > 0.0 => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let keep = T::of(1.0 / (1.0 - cfg.dropout));
                (0..batch * flat_len)
                    .map(|_| if rng.random::<f64>() < cfg.dropout { T::zero() } else { keep })
                    .collect()
            }
            _ => Vec::new(),
        };
        let outs: Vec<SampleOut<T>> = (0..batch)
            .into_par_iter()
            .map(|b| {
                let scale = (!dropout_scale.is_empty()).then(|| &dropout_scale[b * flat_len..(b + 1) * flat_len]);
                self.forward_one(&images[b * n_in..(b + 1) * n_in], scale)
            })
            .collect();

        let mut cache = ForwardCache {
            batch,
            cropped: Vec::new(),
            pool_idx: Vec::new(),
            pooled: Vec::new(),
            dropout_scale,
            flat: Vec::new(),
            hidden: Vec::new(),
            logits: Vec::new(),
            probs: Vec::new(),
        };
        for o in outs {
            cache.cropped.extend(o.cropped);
            cache.pool_idx.extend(o.pool_idx);
            cache.pooled.extend(o.pooled);
            cache.flat.extend(o.flat);
            cache.hidden.extend(o.hidden);
            cache.logits.extend(o.logits);
            cache.probs.extend(o.probs);
        }
        Ok(cache)
    }

    fn forward_one(&self, x: &[T], dropout: Option<&[T]>) -> SampleOut<T> {
        let cfg = &self.config;
        let p = &self.params;
        let ch = cfg.channels;
        let (t, _, l, _) = cfg.crop;
        let (h, w, _) = cfg.cropped_shape();

        let mut cropped = Vec::with_capacity(h * w * ch);
        for y in 0..h {
            let start = ((y + t) * cfg.input_w + l) * ch;
            cropped.extend_from_slice(&x[start..start + w * ch]);
        }

        let (vh, vw, nf) = cfg.conv_shape();
        let k = cfg.kernel;
        let mut conv = vec![T::zero(); vh * vw * nf];
        for y in 0..vh {
            for xx in 0..vw {
                let out = &mut conv[(y * vw + xx) * nf..][..nf];
                out.copy_from_slice(&p.conv_b);
                for kh in 0..k {
                    for kw in 0..k {
                        let pix = &cropped[((y + kh) * w + xx + kw) * ch..][..ch];
                        for (c, &v) in pix.iter().enumerate() {
                            if v != T::zero() {
                                axpy(out, v, &p.conv_w[((kh * k + kw) * ch + c) * nf..][..nf]);
                            }
                        }
                    }
                }
                for v in out.iter_mut() {
                    *v = v.max(T::zero());
                }
            }
        }

        let (ph, pw, _) = cfg.pool_shape();
        let s = cfg.pool;
        let mut pooled = Vec::with_capacity(ph * pw * nf);
        let mut pool_idx = Vec::with_capacity(ph * pw * nf);
        for py in 0..ph {
            for px in 0..pw {
                for f in 0..nf {
                    let mut best = (py * s * vw + px * s) * nf + f;
                    for dy in 0..s {
                        for dx in 0..s {
                            let i = ((py * s + dy) * vw + px * s + dx) * nf + f;
                            if conv[i] > conv[best] {
                                best = i;
                            }
                        }
                    }
                    pooled.push(conv[best]);
                    pool_idx.push(best as u32);
                }
            }
        }

        let flat: Vec<T> = match dropout {
            Some(scale) => pooled.iter().zip(scale).map(|(&v, &m)| v * m).collect(),
            None => pooled.clone(),
        };

        let hid = cfg.hidden;
        let mut hidden = p.dense1_b.clone();
        for (i, &v) in flat.iter().enumerate() {
            if v != T::zero() {
                axpy(&mut hidden, v, &p.dense1_w[i * hid..(i + 1) * hid]);
            }
        }
        for v in hidden.iter_mut() {
            *v = v.max(T::zero());
        }

        let nc = cfg.classes;
        let mut logits = p.dense2_b.clone();
        for (j, &v) in hidden.iter().enumerate() {
            if v != T::zero() {
                axpy(&mut logits, v, &p.dense2_w[j * nc..(j + 1) * nc]);
            }
        }
        let probs = softmax(&logits);
        SampleOut {
            cropped,
            pool_idx,
            pooled,
            flat,
            hidden,
            logits,
            probs,
        }
    }

    /// Gradients of the mean cross-entropy over the cached batch with
    /// respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache<T>, labels: &[T]) -> Result<Params<T>, CnnError> {
        let cfg = &self.config;
        let p = &self.params;
        let bsz = cache.batch;
        let nc = cfg.classes;
        if labels.len() != bsz * nc {
            return Err(shape_err(bsz * nc, labels.len(), "label values"));
        }
        let hid = cfg.hidden;
        let flat_len = cfg.flat_len();
        let mut g = Params::zeros(cfg);
        if bsz == 0 {
            return Ok(g);
        }
        let inv_b = T::of(1.0 / bsz as f64);

        let dlogits: Vec<T> = cache.probs.iter().zip(labels).map(|(&q, &y)| (q - y) * inv_b).collect();

        for b in 0..bsz {
            let dl = &dlogits[b * nc..(b + 1) * nc];
            for (j, &hv) in cache.hidden[b * hid..(b + 1) * hid].iter().enumerate() {
                if hv != T::zero() {
                    axpy(&mut g.dense2_w[j * nc..(j + 1) * nc], hv, dl);
                }
            }
            axpy(&mut g.dense2_b, T::one(), dl);
        }

        let mut dh = vec![T::zero(); bsz * hid];
        for b in 0..bsz {
            let dl = &dlogits[b * nc..(b + 1) * nc];
            for j in 0..hid {
                if cache.hidden[b * hid + j] > T::zero() {
                    dh[b * hid + j] = dot(&p.dense2_w[j * nc..(j + 1) * nc], dl);
                }
            }
            axpy(&mut g.dense1_b, T::one(), &dh[b * hid..(b + 1) * hid]);
        }

        g.dense1_w.par_chunks_mut(hid).enumerate().for_each(|(i, row)| {
            for b in 0..bsz {
                let v = cache.flat[b * flat_len + i];
                if v != T::zero() {
                    axpy(row, v, &dh[b * hid..(b + 1) * hid]);
                }
            }
        });

        // gradient at the pooled activations (through dropout and ReLU)
        let dpooled: Vec<Vec<T>> = (0..bsz)
            .into_par_iter()
            .map(|b| {
                let dhb = &dh[b * hid..(b + 1) * hid];
                (0..flat_len)
                    .map(|i| {
                        let k = b * flat_len + i;
                        let scale = cache.dropout_scale.get(k).copied().unwrap_or(T::one());
                        if scale == T::zero() || cache.pooled[k] <= T::zero() {
                            T::zero()
                        } else {
                            dot(&p.dense1_w[i * hid..(i + 1) * hid], dhb) * scale
                        }
                    })
                    .collect()
            })
            .collect();

        let ch = cfg.channels;
        let k = cfg.kernel;
        let (h, w, _) = cfg.cropped_shape();
        let (_, vw, nf) = cfg.conv_shape();
        let crop_len = h * w * ch;
        for (b, dp) in dpooled.iter().enumerate() {
            let img = &cache.cropped[b * crop_len..(b + 1) * crop_len];
            for (i, &gv) in dp.iter().enumerate() {
                if gv == T::zero() {
                    continue;
                }
                let pos = cache.pool_idx[b * flat_len + i] as usize;
                let f = pos % nf;
                let (y, x) = ((pos / nf) / vw, (pos / nf) % vw);
                g.conv_b[f] += gv;
                for kh in 0..k {
                    for kw in 0..k {
                        let pix = &img[((y + kh) * w + x + kw) * ch..][..ch];
                        for (c, &v) in pix.iter().enumerate() {
                            g.conv_w[((kh * k + kw) * ch + c) * nf + f] += v * gv;
                        }
                    }
                }
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{init_model, ModelConfig};
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..19).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..19).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }

    #[test]
    fn softmax_sums_to_one_and_handles_large_logits() {
        let p = softmax(&[1000.0f64, 1000.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn forward_shapes_and_probabilities() {
        let cfg = ModelConfig::new(4);
        let m: Model<f32> = init_model(&cfg, 1).unwrap();
        let x: Vec<f32> = (0..2 * cfg.input_len()).map(|i| (i % 13) as f32 / 13.0).collect();
        let c = m.forward(&x, 2, None).unwrap();
        assert_eq!(c.probs.len(), 8);
        for row in c.probs.chunks(4) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
        assert!(m.forward(&x[1..], 2, None).is_err());
    }

    #[test]
    fn crop_drops_the_border() {
        // changing only border pixels leaves the output unchanged
        let cfg = ModelConfig::new(3);
        let m: Model<f64> = init_model(&cfg, 2).unwrap();
        let x: Vec<f64> = (0..cfg.input_len()).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
        let mut y = x.clone();
        for c in 0..3 {
            y[c] = 0.9;
            y[(24 * 37 + 36) * 3 + c] = 0.1;
            y[(37 + 20) * 3 + c] = 0.5;
        }
        let a = m.forward(&x, 1, None).unwrap().probs;
        let b = m.forward(&y, 1, None).unwrap().probs;
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_is_seeded_and_inactive_in_inference() {
        let cfg = ModelConfig::new(3);
        let m: Model<f32> = init_model(&cfg, 5).unwrap();
        let x: Vec<f32> = (0..cfg.input_len()).map(|i| (i % 5) as f32 / 5.0).collect();
        let a = m.forward(&x, 1, Some(9)).unwrap();
        let b = m.forward(&x, 1, Some(9)).unwrap();
        let c = m.forward(&x, 1, Some(10)).unwrap();
        assert_eq!(a.probs, b.probs);
        assert_ne!(a.probs, c.probs);
        let dropped = a.dropout_scale.iter().filter(|&&s| s == 0.0).count() as f64 / a.dropout_scale.len() as f64;
        assert!((dropped - 0.25).abs() < 0.03, "{dropped}");
        assert!(m.forward(&x, 1, None).unwrap().dropout_scale.is_empty());
    }
}
