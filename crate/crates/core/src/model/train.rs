use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backprop::loss_and_gradient;
use super::{LstmMdl, Weights};
use crate::error::{Error, Result};
use crate::gmm::Point2D;

/// Minibatch Adam with element-wise gradient clipping and a cosine learning
/// rate schedule from `learning_rate` down to `min_learning_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub epochs: usize,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            min_learning_rate: 1.5e-4,
            epochs: 200,
            grad_clip: 1.0,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be finite and >= 0"));
        }
        if !(self.min_learning_rate >= 0.0 && self.min_learning_rate <= self.learning_rate) {
            return Err(Error::invalid("min_learning_rate", "must be in [0, learning_rate]"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::invalid("grad_clip", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        self.min_learning_rate + (self.learning_rate - self.min_learning_rate) * cos
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-trajectory loss observed during each epoch.
    pub loss_trace: Vec<f64>,
    /// Steps whose density was clamped at the floor, summed over training.
    pub degenerate_steps: usize,
}

struct Adam {
    m: Weights,
    v: Weights,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    fn new(like: &Weights) -> Self {
        let mut m = like.clone();
        m.slices_mut().into_iter().for_each(|s| s.fill(0.0));
        Adam { v: m.clone(), m, t: 0 }
    }

    fn update(&mut self, weights: &mut Weights, grad: &Weights, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let params = weights.slices_mut();
        let ms = self.m.slices_mut();
        let vs = self.v.slices_mut();
        for (((p, g), m), v) in params.into_iter().zip(grad.slices()).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let step = (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                p[i] -= lr * step;
            }
        }
    }
}

/// Trains `model` on `dataset` by minimizing the mean offset NLL.
///
/// Trajectories are shuffled each epoch from `config.seed`; per-trajectory
/// gradients may be computed in parallel but are summed in batch order, so a
/// fixed seed reproduces the same weights bit for bit.
pub fn train<T>(mut model: LstmMdl, dataset: &[T], config: &TrainConfig) -> Result<(LstmMdl, TrainReport)>
where
    T: AsRef<[Point2D]> + Sync,
{
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if let Some(i) = dataset.iter().position(|t| t.as_ref().len() < 2) {
        return Err(Error::invalid("dataset", format!("trajectory {i} has fewer than 2 positions")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut adam = Adam::new(model.weights());
    let mut report = TrainReport::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.learning_rate_at(epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| loss_and_gradient(&model, dataset[i].as_ref()))
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::NonFiniteActivation => Error::DivergedTraining { epoch },
                    other => other,
                })?;
            let mut grad = Weights::zeros(model.config());
            let inv = 1.0 / batch.len() as f64;
            for (r, g) in &results {
                epoch_loss += r.loss;
                report.degenerate_steps += r.degenerate_steps;
                grad.add_scaled(g, inv);
            }
            let clip = config.grad_clip;
            for s in grad.slices_mut() {
                s.iter_mut().for_each(|g| *g = g.clamp(-clip, clip));
            }
            adam.update(model.weights_mut(), &grad, lr);
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() || !model.weights().all_finite() {
            return Err(Error::DivergedTraining { epoch });
        }
        log::debug!("epoch {epoch}: loss {mean:.5}");
        report.loss_trace.push(mean);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn lines(n: usize) -> Vec<Vec<Point2D>> {
        (0..n)
            .map(|_| (0..20).map(|t| Point2D::new(0.0, 0.15 * t as f64)).collect())
            .collect()
    }

    fn small() -> ModelConfig {
        ModelConfig {
            num_components: 2,
            hidden_size: 8,
            num_layers: 1,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let model = LstmMdl::init(small(), 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            min_learning_rate: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let (trained, report) = train(model.clone(), &lines(4), &cfg).unwrap();
        assert_eq!(trained.weights(), model.weights());
        assert_eq!(report.loss_trace.len(), 3);
    }

    #[test]
    fn same_seed_same_trace() {
        let data = lines(8);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        let (a, ra) = train(LstmMdl::init(small(), 2).unwrap(), &data, &cfg).unwrap();
        let (b, rb) = train(LstmMdl::init(small(), 2).unwrap(), &data, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn straight_lines_halve_the_loss() {
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 4,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let (_, report) = train(LstmMdl::init(small(), 3).unwrap(), &lines(8), &cfg).unwrap();
        let first = report.loss_trace[0];
        let last = *report.loss_trace.last().unwrap();
        assert!(last < first - 0.5 * first.abs(), "{first} -> {last}");
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            min_learning_rate: 1e-3,
            epochs: 11,
            ..TrainConfig::default()
        };
        assert!((cfg.learning_rate_at(0) - 1e-2).abs() < 1e-15);
        assert!((cfg.learning_rate_at(10) - 1e-3).abs() < 1e-15);
        assert!((cfg.learning_rate_at(5) - 5.5e-3).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = LstmMdl::init(small(), 1).unwrap();
        let empty: Vec<Vec<Point2D>> = vec![];
        assert!(train(model.clone(), &empty, &TrainConfig::default()).is_err());
        assert!(train(model, &[vec![Point2D::ORIGIN]], &TrainConfig::default()).is_err());
    }
}
