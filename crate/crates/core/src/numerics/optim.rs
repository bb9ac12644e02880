use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let m: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        if let Some(max) = self.config.clip_norm {
            let norm = store.grad_norm();
            if norm > max {
                store.scale_grads(max / norm);
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (k, p) in store.iter_mut().enumerate() {
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (i, (w, &g)) in p.value.data_mut().iter_mut().zip(p.grad.data()).enumerate() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *w -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        store.zero_grads();
    }
}

/// Builds one graph per item, backpropagates each into `store`, and returns the
/// summed loss. `loss_fn` may return `None` to skip an item.
pub fn accumulate<T>(
    store: &mut ParamStore,
    items: &[T],
    mut loss_fn: impl FnMut(&ParamStore, &T, &mut Graph) -> Result<Option<Var>>,
) -> Result<f64> {
    let mut total = 0.0;
    for item in items {
        let mut g = Graph::new();
        let Some(loss) = loss_fn(store, item, &mut g)? else {
            continue;
        };
        let l = g.value(loss).data()[0];
        if !l.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        total += l;
        g.backward_into(loss, store);
    }
    Ok(total)
}

/// Minibatch training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct FitConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Runs `cfg.steps` Adam updates over `n` items drawn in shuffled epochs.
/// Gradients are averaged over the batch; returns the mean loss per step.
pub fn fit(
    store: &mut ParamStore,
    n: usize,
    cfg: FitConfig,
    mut loss_fn: impl FnMut(&ParamStore, usize, &mut Graph) -> Result<Option<Var>>,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Empty("training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), store);
    let batch = cfg.batch.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut items = Vec::with_capacity(batch);
        for _ in 0..batch {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            items.push(order[cursor]);
            cursor += 1;
        }
        let total = accumulate(store, &items, |s, &i, g| loss_fn(s, i, g))?;
        store.scale_grads(1.0 / batch as f64);
        opt.step(store);
        let mean = total / batch as f64;
        if step % 50 == 0 {
            debug!("step {step}: loss {mean:.4}");
        }
        curve.push(mean);
    }
    Ok(curve)
}

/// Mean over a centred window of width `window`; used to judge loss curves.
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    if xs.is_empty() || window <= 1 {
        return xs.to_vec();
    }
    xs.windows(window.min(xs.len()))
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::row_vector(vec![3.0, -2.0]));
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &store);
        for _ in 0..500 {
            accumulate(&mut store, &[()], |s, _, g| {
                let x = g.param(s, id);
                let sq = g.mul(x, x);
                Ok(Some(g.sum(sq)))
            })
            .unwrap();
            opt.step(&mut store);
        }
        assert!(store.value(id).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn clipping_bounds_the_update() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(0.0));
        store.get_mut(id).grad = Tensor::scalar(1e6);
        let mut opt = Adam::new(AdamConfig::with_lr(1.0), &store);
        opt.step(&mut store);
        // The first Adam step moves every coordinate by about lr regardless of scale.
        assert!((store.value(id).data()[0] + 1.0).abs() < 1e-6);
        assert_eq!(store.get(id).grad.data(), &[0.0]);
    }

    #[test]
    fn smoothing_window() {
        assert_eq!(smooth(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert_eq!(smooth(&[1.0], 10), vec![1.0]);
    }
}
