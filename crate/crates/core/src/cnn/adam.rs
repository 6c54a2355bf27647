use super::{Model, Params, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<T: Scalar>(model: &mut Model<T>, grads: &Params<T>, cfg: &AdamConfig) {
    model.adam.step += 1;
    let t = model.adam.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (c1, c2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let (inv_bc1, inv_bc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.epsilon);

    let params = model.params.tensors_mut();
    let ms = model.adam.m.tensors_mut();
    let vs = model.adam.v.tensors_mut();
    for (((p, m), v), g) in params.into_iter().zip(ms).zip(vs).zip(grads.tensors()) {
        for (((pi, mi), vi), &gi) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.iter()) {
            *mi = b1 * *mi + c1 * gi;
            *vi = b2 * *vi + c2 * gi * gi;
            let m_hat = *mi * inv_bc1;
            let v_hat = *vi * inv_bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{init_model, ModelConfig};
    use super::*;

    fn model() -> Model<f64> {
        init_model(&ModelConfig::new(2), 0).unwrap()
    }

    fn filled(m: &Model<f64>, v: f64) -> Params<f64> {
        let mut g = Params::zeros(&m.config);
        for t in g.tensors_mut() {
            t.iter_mut().for_each(|x| *x = v);
        }
        g
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut m = model();
        let before = m.params.clone();
        let g = filled(&m, 1.0);
        adam_step(&mut m, &g, &AdamConfig::default());
        let d = before.conv_w[0] - m.params.conv_w[0];
        assert!((d - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15, "{d}");
        assert_eq!(m.adam.step, 1);
    }

    #[test]
    fn zero_gradient_from_fresh_state_changes_nothing() {
        let mut m = model();
        let before = m.params.clone();
        let g = filled(&m, 0.0);
        adam_step(&mut m, &g, &AdamConfig::default());
        assert_eq!(m.params, before);
        assert!(m.adam.m.conv_w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut m = model();
        let cfg = AdamConfig::default();
        let g = filled(&m, 2.0);
        adam_step(&mut m, &g, &cfg);
        let (m1, v1) = (m.adam.m.dense2_b[0], m.adam.v.dense2_b[0]);
        let g = filled(&m, 0.0);
        adam_step(&mut m, &g, &cfg);
        assert!((m.adam.m.dense2_b[0] - 0.9 * m1).abs() < 1e-15);
        assert!((m.adam.v.dense2_b[0] - 0.999 * v1).abs() < 1e-15);
    }

    #[test]
    fn update_is_invariant_to_gradient_scale() {
        let cfg = AdamConfig::default();
        let mut a = model();
        let mut b = model();
        let start = a.params.conv_w[3];
        for _ in 0..20 {
            let g = filled(&a, 1e-2);
            adam_step(&mut a, &g, &cfg);
            let g = filled(&b, 10.0);
            adam_step(&mut b, &g, &cfg);
        }
        let da = start - a.params.conv_w[3];
        let db = start - b.params.conv_w[3];
        assert!((da - db).abs() / db.abs() < 1e-5, "{da} vs {db}");
    }
}
