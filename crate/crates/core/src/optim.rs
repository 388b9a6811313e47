//! Adam with bias correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub hyper: AdamConfig,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(hyper: AdamConfig) -> Self {
        AdamState {
            step: 0,
            hyper,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update of every trainable parameter in `params`. Every trainable
    /// parameter must have a gradient of matching shape.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        let names: Vec<String> = params.trainable_names().map(str::to_string).collect();
        for name in &names {
            let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
            let p = params.get(name)?;
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("gradient {:?} for parameter `{name}` {:?}", g.shape(), p.shape()),
                ));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.hyper;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);

        for name in names {
            let g = &grads[&name];
            let p = params.get_mut(&name)?;
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn moment(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        Some((self.m.get(name)?, self.v.get(name)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[(&str, f64)]) -> ParamStore {
        let mut s = ParamStore::new();
        for &(n, v) in values {
            s.insert(n, Tensor::scalar(v));
        }
        s
    }

    fn grads(values: &[(&str, f64)]) -> BTreeMap<String, Tensor> {
        values
            .iter()
            .map(|&(n, v)| (n.to_string(), Tensor::scalar(v)))
            .collect()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(&[("a", 1.5)]);
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut p, &grads(&[("a", 0.0)])).unwrap();
        }
        assert_eq!(p.get("a").unwrap().item(), 1.5);
        assert_eq!(adam.step, 5);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // m = 0.1 * 0.5, v = 0.001 * 0.25; bias-corrected m_hat = 0.5, v_hat = 0.25.
        let (g, lr, eps) = (0.5f64, 1e-3, 1e-8);
        let expected = 1.0 - lr * g / ((g * g).sqrt() + eps);
        let mut p = store(&[("a", 1.0)]);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut p, &grads(&[("a", g)])).unwrap();
        let got = p.get("a").unwrap().item();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.999).abs() < 1e-9);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut p = store(&[("a", 0.3), ("b", 0.3)]);
        let mut adam = AdamState::new(AdamConfig::default());
        for k in 0..50 {
            let g = (k as f64 * 0.37).sin();
            adam.step(&mut p, &grads(&[("a", g), ("b", g)])).unwrap();
        }
        assert_eq!(
            p.get("a").unwrap().item().to_bits(),
            p.get("b").unwrap().item().to_bits()
        );
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = store(&[("a", 1.0), ("b", 1.0)]);
        let mut adam = AdamState::new(AdamConfig::default());
        let err = adam.step(&mut p, &grads(&[("a", 1.0)])).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "b"));
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut p = ParamStore::new();
        p.insert_frozen("emb", Tensor::scalar(2.0));
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut p, &BTreeMap::new()).unwrap();
        assert_eq!(p.get("emb").unwrap().item(), 2.0);
    }
}
