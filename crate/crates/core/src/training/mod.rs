//! Surrogate-gradient training: losses, BPTT and the mini-batch loop.

mod bptt;
pub mod loss;
mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bptt::{backward, BackwardOptions, Gradients, LayerGradients, SampleGradient, Surrogate};
pub use loss::{
    cumulative_loss, cumulative_output, ct_loss, loss_and_grad, spike_rate_loss, tet_loss,
    CumulativeOutput, CumulativeScoring, LossKind,
};
pub use optim::Adam;

use crate::datasets::ClassBalancedSampler;
use crate::decision::{evaluate, DecisionConfig, EvalSample};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::snn::Network;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Set by the caller; run configurations carry a single top-level seed.
    #[serde(skip)]
    pub seed: u64,
    pub surrogate_width: f64,
    pub loss: LossKind,
    pub scoring: CumulativeScoring,
    /// Weight of the squared mean-spike-rate penalty; 0 disables it.
    pub rate_penalty: f64,
    /// Draw each epoch's samples class-balanced (with replacement) instead of a shuffle.
    pub balanced_sampling: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
            surrogate_width: 1.0,
            loss: LossKind::Ct,
            scoring: CumulativeScoring::Resoftmax,
            rate_penalty: 0.0,
            balanced_sampling: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train: epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "train: learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.surrogate_width > 0.0 && self.surrogate_width.is_finite()) {
            return Err(Error::Config(format!(
                "train: surrogate_width must be positive, got {}",
                self.surrogate_width
            )));
        }
        if !(self.rate_penalty >= 0.0 && self.rate_penalty.is_finite()) {
            return Err(Error::Config("train: rate_penalty must be >= 0".into()));
        }
        Ok(())
    }

    pub fn backward_options(&self) -> BackwardOptions {
        BackwardOptions {
            loss: self.loss,
            scoring: self.scoring,
            surrogate: Surrogate::Boxcar {
                width: self.surrogate_width,
            },
            rate_penalty: self.rate_penalty,
        }
    }
}

/// A feature matrix with its class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: FeatureMatrix,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc_late: f64,
    pub val_acc_early: f64,
    pub mean_spike_rate: f64,
}

/// Samples per parallel work unit. Fixed so the summation tree does not depend on the
/// number of threads.
const CHUNK: usize = 4;

/// Mean loss and mean gradient over `batch`, summed in a fixed order.
pub fn batch_gradient(
    net: &Network,
    examples: &[Example],
    batch: &[usize],
    opts: &BackwardOptions,
) -> Result<(f64, Gradients, usize)> {
    let partials: Vec<Result<(f64, Gradients, usize)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Gradients::zeros_like(net);
            let mut loss = 0.0;
            let mut correct = 0;
            for &i in chunk {
                let ex = &examples[i];
                let sg = backward(net, &ex.features, ex.label, opts)?;
                loss += sg.loss;
                acc.add_assign(&sg.grads);
                if sg.prediction == ex.label {
                    correct += 1;
                }
            }
            Ok((loss, acc, correct))
        })
        .collect();
    let mut total = Gradients::zeros_like(net);
    let mut loss = 0.0;
    let mut correct = 0;
    for part in partials {
        let (l, g, c) = part?;
        loss += l;
        total.add_assign(&g);
        correct += c;
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    Ok((loss * inv, total, correct))
}

/// Mini-batch Adam training. Neuron constants are projected back into their bounds after
/// every step. `on_epoch` sees each epoch's metrics as soon as they are computed.
pub fn train(
    net: &mut Network,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    decision: &DecisionConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if let Some(bad) = train_set.iter().chain(val_set).find(|e| e.label >= net.n_classes()) {
        return Err(Error::InvalidLabel {
            label: bad.label,
            n_classes: net.n_classes(),
        });
    }
    let opts = cfg.backward_options();
    let mut adam = Adam::new(net, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = if cfg.balanced_sampling {
        let labels: Vec<usize> = train_set.iter().map(|e| e.label).collect();
        Some(ClassBalancedSampler::from_labels(&labels, cfg.seed)?)
    } else {
        None
    };
    let monitor = if val_set.is_empty() { train_set } else { val_set };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        match sampler.as_mut() {
            Some(s) => order = s.by_ref().take(train_set.len()).collect(),
            None => order.shuffle(&mut rng),
        }
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads, c) = match batch_gradient(net, train_set, batch, &opts) {
                Err(Error::NonFinite(_)) => (f64::NAN, Gradients::zeros_like(net), 0),
                other => other?,
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            adam.step(net, &grads);
            net.project();
            loss_sum += loss * batch.len() as f64;
            correct += c;
        }
        let eval_samples: Vec<EvalSample<'_>> = monitor
            .iter()
            .map(|e| EvalSample {
                features: &e.features,
                label: e.label,
                t_end: None,
            })
            .collect();
        let report = evaluate(net, &eval_samples, decision, &EnergyModel::default())?.report;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_acc: 100.0 * correct as f64 / order.len() as f64,
            val_acc_late: report.acc_late,
            val_acc_early: report.acc_early,
            mean_spike_rate: report.mean_spike_rate,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::NetworkConfig;
    use ndarray::Array2;
    use rand::Rng;

    fn net(n_inputs: usize, hidden: usize, seed: u64) -> Network {
        let cfg = NetworkConfig {
            n_inputs,
            hidden_sizes: vec![hidden],
            n_classes: 2,
            ..NetworkConfig::default()
        };
        Network::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    /// Class 0 sees a constant (1, 0) input, class 1 a constant (0, 1).
    fn toy(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let label = i % 2;
                let frame = if label == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
                Example {
                    features: FeatureMatrix::new(Array2::from_shape_fn((10, 2), |(_, j)| frame[j])),
                    label,
                }
            })
            .collect()
    }

    fn noisy(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Example {
                features: FeatureMatrix::new(Array2::from_shape_simple_fn((12, 3), || rng.random_range(-1.0..2.0))),
                label: i % 2,
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut n = net(2, 3, 1);
        let before = n.clone();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        train(&mut n, &toy(1), &[], &cfg, &DecisionConfig::default(), |_| {}).unwrap();
        assert_eq!(n, before);
    }

    #[test]
    fn separable_toy_is_learned() {
        let mut n = net(2, 4, 3);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 4,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let data = toy(16);
        let history = train(&mut n, &data, &[], &cfg, &DecisionConfig::default(), |_| {}).unwrap();
        assert!(history.iter().any(|m| m.train_acc == 100.0), "{:?}", history.last());
    }

    #[test]
    fn same_seed_same_history() {
        let data = noisy(24, 4);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 5,
            learning_rate: 0.01,
            seed: 17,
            balanced_sampling: true,
            ..TrainConfig::default()
        };
        let run = || {
            let mut n = net(3, 5, 8);
            let h = train(&mut n, &data, &data[..6], &cfg, &DecisionConfig::default(), |_| {}).unwrap();
            (h, n)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn batch_gradient_ignores_sample_order() {
        let data = noisy(13, 6);
        let n = net(3, 5, 2);
        let opts = BackwardOptions::new(LossKind::Ct);
        let order: Vec<usize> = (0..13).collect();
        let mut reversed = order.clone();
        reversed.reverse();
        let (la, ga, ca) = batch_gradient(&n, &data, &order, &opts).unwrap();
        let (lb, gb, cb) = batch_gradient(&n, &data, &reversed, &opts).unwrap();
        assert!((la - lb).abs() < 1e-6);
        assert_eq!(ca, cb);
        for (a, b) in ga.slices().into_iter().flatten().zip(gb.slices().into_iter().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_empty_set_and_bad_labels() {
        let mut n = net(2, 3, 1);
        let cfg = TrainConfig::default();
        let d = DecisionConfig::default();
        assert!(matches!(train(&mut n, &[], &[], &cfg, &d, |_| {}), Err(Error::Dataset(_))));
        let mut bad = toy(2);
        bad[0].label = 5;
        assert!(matches!(train(&mut n, &bad, &[], &cfg, &d, |_| {}), Err(Error::InvalidLabel { .. })));
    }
}
