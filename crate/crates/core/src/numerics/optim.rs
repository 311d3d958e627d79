use super::{Array, NumericsError, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub first_moment: Vec<Array>,
    pub second_moment: Vec<Array>,
    pub step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .entries()
                .iter()
                .map(|e| Array::zeros(e.value.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            first_moment: zeros(),
            second_moment: zeros(),
            step: 0,
        }
    }

    /// One update at learning rate `lr`. A non-finite gradient aborts the
    /// step before any parameter is touched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Array], lr: f64) -> Result<(), NumericsError> {
        if grads.len() != store.len() {
            return Err(NumericsError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.shape() != store.get(id).shape() {
                return Err(NumericsError::Shape(format!("gradient for {}", store.name(id))));
            }
            if !g.is_finite() {
                return Err(NumericsError::NonFiniteGradient(store.name(id).to_string()));
            }
        }
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        let shrink = 1.0 - lr * c.weight_decay;
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grads[i].data()) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p *= shrink;
                *p -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `base_lr` at step 0 to 0 at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64) -> Result<f64, NumericsError> {
    if total_steps == 0 {
        return Err(NumericsError::InvalidArgument("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(NumericsError::InvalidArgument(format!(
            "step {step} beyond schedule of {total_steps}"
        )));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Rescale `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>) -> ParamStore {
        let mut store = ParamStore::new();
        let n = values.len();
        store.add("p", Array::new(vec![n], values).unwrap());
        store
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut store = store_with(vec![1.0, -2.0, 3.5]);
        let before = store.clone();
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            &store,
        );
        opt.step(&mut store, &[Array::zeros(&[3])], 0.01).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn zero_gradient_with_decay_scales_parameters() {
        let mut store = store_with(vec![1.0, -2.0]);
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.1,
                ..Default::default()
            },
            &store,
        );
        opt.step(&mut store, &[Array::zeros(&[2])], 0.01).unwrap();
        let p = store.entries()[0].value.data();
        assert!((p[0] - 0.999).abs() < 1e-15);
        assert!((p[1] + 1.998).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moves_by_lr_times_sign() {
        let mut store = store_with(vec![0.0, 0.0]);
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            &store,
        );
        let g = Array::new(vec![2], vec![3.0, -0.25]).unwrap();
        let lr = 1e-3;
        let mut prev = store.entries()[0].value.data().to_vec();
        for _ in 0..200 {
            opt.step(&mut store, std::slice::from_ref(&g), lr).unwrap();
            let now = store.entries()[0].value.data().to_vec();
            let d0 = now[0] - prev[0];
            let d1 = now[1] - prev[1];
            assert!((d0 + lr).abs() < 1e-9, "{d0}");
            assert!((d1 - lr).abs() < 1e-9, "{d1}");
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut store = store_with(vec![1.0]);
        let before = store.clone();
        let mut opt = AdamW::new(AdamWConfig::default(), &store);
        let err = opt
            .step(&mut store, &[Array::new(vec![1], vec![f64::NAN]).unwrap()], 0.1)
            .unwrap_err();
        assert!(matches!(err, NumericsError::NonFiniteGradient(_)));
        assert_eq!(store, before);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 5e-4).unwrap(), 5e-4);
        assert!(cosine_lr(100, 100, 5e-4).unwrap().abs() < 1e-20);
        assert!((cosine_lr(50, 100, 5e-4).unwrap() - 2.5e-4).abs() < 1e-18);
        assert!(cosine_lr(1, 0, 5e-4).is_err());
        assert!(cosine_lr(101, 100, 5e-4).is_err());
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut grads = vec![
            Array::new(vec![2], vec![3.0, 0.0]).unwrap(),
            Array::new(vec![1], vec![4.0]).unwrap(),
        ];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let after: f64 = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>();
        assert!((after.sqrt() - 1.0).abs() < 1e-12);
    }
}
