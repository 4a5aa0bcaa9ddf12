//! Loss, SGD-with-momentum optimizer, learning-rate schedule, and the
//! epoch loop.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::Grads;
use crate::layers::{LayerError, Mode};
use crate::metrics::confusion_from_predictions;
use crate::models::{ModelError, ModelGraph};
use crate::scalar::Scalar;
use crate::tensor::{Tensor5, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("epoch {0} outside schedule range 1..={1}")]
    EpochOutOfRange(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Optimizer settings. Defaults are momentum 0.9, weight decay 1e-5,
/// batch size 20, 60 epochs, initial rate 0.01 divided by 10 at epoch 50.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-5,
            batch_size: 20,
            epochs: 60,
            lr_drop_epoch: 50,
            lr_drop_factor: 0.1,
            seed: 0,
        }
    }
}

/// Learning rate for a 1-based epoch index: the initial rate before the
/// drop epoch, the dropped rate from it onwards.
pub fn lr_at(epoch: usize, cfg: &OptimizerConfig) -> Result<f64, TrainError> {
    if epoch == 0 || epoch > cfg.epochs {
        return Err(TrainError::EpochOutOfRange(epoch, cfg.epochs));
    }
    Ok(if epoch < cfg.lr_drop_epoch {
        cfg.learning_rate
    } else {
        cfg.learning_rate * cfg.lr_drop_factor
    })
}

/// Mean negative log-likelihood over the batch. Returns the data-term
/// loss and its gradient with respect to the log-probabilities; the L2
/// penalty is reported by the caller from the parameter registry and its
/// gradient is folded into the optimizer step.
pub fn nll_loss<T: Scalar>(
    log_probs: &Tensor5<T>,
    labels: &[usize],
) -> Result<(T, Tensor5<T>), TrainError> {
    let [n, c, _, _, _] = log_probs.shape();
    assert_eq!(n, labels.len());
    let mut grad = Tensor5::zeros(log_probs.shape())?;
    let mut loss = T::zero();
    let scale = T::of_f64(1.0 / n as f64);
    for (i, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(TrainError::LabelOutOfRange { label, classes: c });
        }
        loss -= log_probs.data()[i * c + label];
        grad.data_mut()[i * c + label] = -scale;
    }
    Ok((loss * scale, grad))
}

/// Momentum buffers, one per named parameter.
#[derive(Debug, Default)]
pub struct VelocityState<T> {
    buffers: BTreeMap<String, Vec<T>>,
}

/// One SGD step: g <- grad + lambda*theta; v <- momentum*v + g;
/// theta <- theta - lr*v.
pub fn sgd_step<T: Scalar>(
    model: &mut ModelGraph<T>,
    grads: &Grads<T>,
    vel: &mut VelocityState<T>,
    cfg: &OptimizerConfig,
    lr: f64,
) {
    let momentum = T::of_f64(cfg.momentum);
    let decay = T::of_f64(cfg.weight_decay);
    let rate = T::of_f64(lr);
    model.root.visit_params(&mut |name, _, data| {
        let Some(grad) = grads.get(name) else { return };
        let vbuf = vel
            .buffers
            .entry(name.to_string())
            .or_insert_with(|| vec![T::zero(); data.len()]);
        debug_assert_eq!(vbuf.len(), data.len());
        for ((p, &g), v) in data.iter_mut().zip(grad).zip(vbuf.iter_mut()) {
            let adjusted = g + decay * *p;
            *v = momentum * *v + adjusted;
            *p -= rate * *v;
        }
    });
}

/// A labeled set of sample cubes, all (1, L, S, S)-shaped.
#[derive(Debug, Clone)]
pub struct LabeledSet<T> {
    pub bands: usize,
    pub size: usize,
    /// Flat (L*S*S) voxel data per sample.
    pub cubes: Vec<Vec<T>>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> LabeledSet<T> {
    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    /// Assemble samples `indices` into a (b, 1, L, S, S) batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor5<T>, Vec<usize>), TensorError> {
        let vol = self.bands * self.size * self.size;
        let mut data = Vec::with_capacity(indices.len() * vol);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.cubes[i]);
            labels.push(self.labels[i]);
        }
        let x = Tensor5::from_vec([indices.len(), 1, self.bands, self.size, self.size], data)?;
        Ok((x, labels))
    }
}

/// Per-epoch progress row.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_oa: f64,
    pub seconds: f64,
}

pub fn records_to_csv(records: &[TrainRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_oa,seconds\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_oa, r.seconds
        ));
    }
    out
}

/// Mean NLL and overall accuracy over a set, in eval mode.
pub fn evaluate_loss_oa<T: Scalar>(
    model: &mut ModelGraph<T>,
    set: &LabeledSet<T>,
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    if set.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut total_loss = 0.0;
    let mut predictions = Vec::with_capacity(set.len());
    for chunk in indices.chunks(batch_size) {
        let (x, labels) = set.batch(chunk)?;
        let y = model.forward(&x, Mode::Eval)?;
        let (loss, _) = nll_loss(&y, &labels)?;
        total_loss += loss.to_f64_val() * chunk.len() as f64;
        let c = y.shape()[1];
        for i in 0..chunk.len() {
            predictions.push(argmax(&y.data()[i * c..(i + 1) * c]));
        }
    }
    let cm = confusion_from_predictions(&set.labels, &predictions, model.num_classes);
    Ok((total_loss / set.len() as f64, cm.overall_accuracy()))
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Run one training step on a batch; returns the total loss (data term
/// plus L2 penalty).
pub fn train_step<T: Scalar>(
    model: &mut ModelGraph<T>,
    x: &Tensor5<T>,
    labels: &[usize],
    vel: &mut VelocityState<T>,
    cfg: &OptimizerConfig,
    lr: f64,
) -> Result<f64, TrainError> {
    let (y, cache) = model.forward_cached(x, Mode::Train)?;
    let (data_loss, grad) = nll_loss(&y, labels)?;
    let grads = model.backward(&cache, &grad)?;
    sgd_step(model, &grads, vel, cfg, lr);
    let penalty = cfg.weight_decay * model.l2_norm_squared().to_f64_val();
    Ok(data_loss.to_f64_val() + penalty)
}

/// The epoch loop: seeded shuffling, mini-batches (final short batch
/// kept), train-mode updates, eval-mode validation between epochs.
pub fn train<T: Scalar>(
    model: &mut ModelGraph<T>,
    train_set: &LabeledSet<T>,
    val_set: &LabeledSet<T>,
    cfg: &OptimizerConfig,
) -> Result<Vec<TrainRecord>, TrainError> {
    train_with_callback(model, train_set, val_set, cfg, |_| true)
}

/// As `train`, but the callback sees each completed epoch record and can
/// stop early by returning false.
pub fn train_with_callback<T: Scalar>(
    model: &mut ModelGraph<T>,
    train_set: &LabeledSet<T>,
    val_set: &LabeledSet<T>,
    cfg: &OptimizerConfig,
    mut keep_going: impl FnMut(&TrainRecord) -> bool,
) -> Result<Vec<TrainRecord>, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut vel = VelocityState::default();
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let lr = lr_at(epoch, cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = train_set.batch(chunk)?;
            let loss = train_step(model, &x, &labels, &mut vel, cfg, lr)?;
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let (val_loss, val_oa) = evaluate_loss_oa(model, val_set, cfg.batch_size.max(1))?;
        let record = TrainRecord {
            epoch,
            train_loss: epoch_loss / seen as f64,
            val_loss,
            val_oa,
            seconds: start.elapsed().as_secs_f64(),
        };
        let go_on = keep_going(&record);
        records.push(record);
        if !go_on {
            break;
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_custom, ModelSpec};

    #[test]
    fn lr_schedule() {
        let cfg = OptimizerConfig::default();
        assert_eq!(lr_at(1, &cfg).unwrap(), 0.01);
        assert_eq!(lr_at(49, &cfg).unwrap(), 0.01);
        assert!((lr_at(50, &cfg).unwrap() - 0.001).abs() < 1e-15);
        assert!((lr_at(60, &cfg).unwrap() - 0.001).abs() < 1e-15);
        assert!(lr_at(0, &cfg).is_err());
        assert!(lr_at(61, &cfg).is_err());
    }

    #[test]
    fn nll_uniform_and_perfect() {
        // Perfect prediction: log-prob of the true class is 0.
        let lp = Tensor5::from_vec([1, 2, 1, 1, 1], vec![0.0f64, -30.0]).unwrap();
        let (loss, _) = nll_loss(&lp, &[0]).unwrap();
        assert_eq!(loss, 0.0);

        // Uniform over 9 classes.
        let v = (1.0f64 / 9.0).ln();
        let lp = Tensor5::from_vec([1, 9, 1, 1, 1], vec![v; 9]).unwrap();
        let (loss, _) = nll_loss(&lp, &[4]).unwrap();
        assert!((loss - 9.0f64.ln()).abs() < 1e-9);

        assert!(nll_loss(&lp, &[9]).is_err());
    }

    fn tiny_model() -> ModelGraph<f64> {
        let spec = ModelSpec::miniature();
        build_custom(spec, "mini", 2, 1).unwrap()
    }

    #[test]
    fn sgd_hand_unrolled() {
        let mut model = tiny_model();
        // Plain step, no momentum, no decay.
        let mut cfg = OptimizerConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        };
        let mut vel = VelocityState::default();
        let name = "stem.conv.weight".to_string();
        model.root.visit_params(&mut |n, _, d| {
            if n == name {
                d[0] = 1.0;
            }
        });
        let mut grads = Grads::new();
        let mut len = 0;
        model.root.visit_params(&mut |n, _, d| {
            if n == name {
                len = d.len();
            }
        });
        let mut g = vec![0.0; len];
        g[0] = 0.5;
        grads.insert(name.clone(), g);
        sgd_step(&mut model, &grads, &mut vel, &cfg, 0.1);
        let mut got = 0.0;
        model.root.visit_params(&mut |n, _, d| {
            if n == name {
                got = d[0];
            }
        });
        assert!((got - 0.95).abs() < 1e-12);

        // Pure decay: theta=1, grad=0, lambda=1e-5, lr=0.01.
        cfg.weight_decay = 1e-5;
        let mut grads0 = Grads::new();
        grads0.insert(name.clone(), vec![0.0; len]);
        model.root.visit_params(&mut |n, _, d| {
            if n == name {
                d[0] = 1.0;
            }
        });
        let mut vel = VelocityState::default();
        sgd_step(&mut model, &grads0, &mut vel, &cfg, 0.01);
        model.root.visit_params(&mut |n, _, d| {
            if n == name {
                got = d[0];
            }
        });
        assert!((got - (1.0 - 1e-7)).abs() < 1e-12);

        // Momentum unroll: v1 = 1, v2 = 1.9 at momentum 0.9.
        let cfg = OptimizerConfig { momentum: 0.9, weight_decay: 0.0, ..OptimizerConfig::default() };
        let mut vel = VelocityState::default();
        model.root.visit_params(&mut |n, _, d| {
            if n == name {
                d[0] = 0.0;
            }
        });
        let mut gone = vec![0.0; len];
        gone[0] = 1.0;
        let mut grads1 = Grads::new();
        grads1.insert(name.clone(), gone);
        sgd_step(&mut model, &grads1, &mut vel, &cfg, 0.1);
        model.root.visit_params(&mut |n, _, d| {
            if n == name {
                got = d[0];
            }
        });
        assert!((got - (-0.1)).abs() < 1e-12);
        sgd_step(&mut model, &grads1, &mut vel, &cfg, 0.1);
        model.root.visit_params(&mut |n, _, d| {
            if n == name {
                got = d[0];
            }
        });
        assert!((got - (-0.29)).abs() < 1e-12);
    }
}
