use std::f64::consts::PI;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{nt_xent_loss, nt_xent_loss_grad, Encoder, EncoderArchitecture, EncoderError, Hyperparams};
use crate::dataset::Dataset;
use crate::nn::Sgd;
use crate::pairs::{index_aligned_windows, select_device_pair, AlignmentIndex, AlignmentKey};
use crate::signal::Window;

/// `0.5 · lr₀ · (1 + cos(π·e / max_epochs))`.
pub fn cosine_lr(initial_lr: f64, epoch: usize, max_epochs: usize) -> f64 {
    if epoch >= max_epochs {
        return 0.0;
    }
    0.5 * initial_lr * (1.0 + (PI * epoch as f64 / max_epochs as f64).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_keys: usize,
    pub val_keys: usize,
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "lr", "train_loss", "val_loss"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.lr.to_string(),
                e.train_loss.to_string(),
                e.val_loss.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.train_loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub model: Encoder<f32>,
    pub log: TrainingLog,
}

/// Trains an encoder on the aligned windows of `dataset` and returns the
/// checkpoint with the lowest validation loss.
pub fn train_encoder<R: Rng + ?Sized>(
    dataset: &Dataset,
    arch: &EncoderArchitecture,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<TrainedEncoder, EncoderError> {
    hp.validate()?;
    let index = index_aligned_windows(dataset, &dataset.sensor_set);
    let mut keys: Vec<AlignmentKey> = index.pairable_keys().into_iter().cloned().collect();
    keys.shuffle(rng);
    let n_val = if hp.val_fraction > 0.0 {
        ((keys.len() as f64 * hp.val_fraction).round() as usize).max(2)
    } else {
        0
    };
    if keys.len() < n_val + hp.batch_size {
        return Err(EncoderError::NotEnoughPairs {
            needed: n_val + hp.batch_size,
            available: keys.len(),
        });
    }
    let mut train_keys = keys.split_off(n_val);
    let val_keys = keys;

    let mut model = Encoder::<f32>::new(arch, &dataset.sensor_set, rng)?;
    let val_batches = fixed_batches(&index, &val_keys, hp.batch_size, rng)?;
    let mut opt = Sgd::new(hp.momentum, hp.weight_decay);
    let mut log = TrainingLog {
        train_keys: train_keys.len(),
        val_keys: val_keys.len(),
        ..Default::default()
    };
    let mut best = (f64::INFINITY, model.clone());
    let mut stop_ref = f64::INFINITY;
    let mut since_improved = 0;
    let dim = arch.embedding_dim();

    for epoch in 0..hp.max_epochs {
        let lr = cosine_lr(hp.initial_lr, epoch, hp.max_epochs);
        train_keys.shuffle(rng);
        let mut total = 0.0;
        let mut steps = 0;
        for (step, chunk) in train_keys.chunks_exact(hp.batch_size).enumerate() {
            let windows = pair_windows(&index, chunk, rng)?;
            let mut x = model.stack(&windows)?;
            augment(&mut x, arch.input_len, hp, rng);
            let (z, cache) = model.forward_train(&x, windows.len(), Some(&mut *rng));
            let z64: Vec<f64> = z.iter().map(|v| *v as f64).collect();
            let (loss, dz) = nt_xent_loss_grad(&z64, dim, hp.temperature)?;
            if !loss.is_finite() || dz.iter().any(|g| !g.is_finite()) {
                return Err(EncoderError::NonFiniteLoss { epoch, step });
            }
            model.zero_grad();
            let dz32: Vec<f32> = dz.iter().map(|v| *v as f32).collect();
            model.backward(cache, &dz32);
            opt.step(&mut model.params_mut(), lr);
            total += loss;
            steps += 1;
        }
        let train_loss = total / steps as f64;
        let val_loss = if val_batches.is_empty() {
            None
        } else {
            let mut sum = 0.0;
            for b in &val_batches {
                let z = model.forward_eval(&model.stack(b)?, b.len());
                let z64: Vec<f64> = z.iter().map(|v| *v as f64).collect();
                sum += nt_xent_loss(&z64, dim, hp.temperature)?;
            }
            Some(sum / val_batches.len() as f64)
        };
        let score = val_loss.unwrap_or(train_loss);
        if !score.is_finite() {
            return Err(EncoderError::NonFiniteLoss { epoch, step: steps });
        }
        log::debug!("epoch {epoch} lr {lr:.4} train {train_loss:.4} val {val_loss:?}");
        log.epochs.push(EpochLog { epoch, lr, train_loss, val_loss });
        if score < best.0 {
            best = (score, model.clone());
            log.best_epoch = epoch;
        }
        if score < stop_ref - hp.convergence_tol {
            stop_ref = score;
            since_improved = 0;
        } else {
            since_improved += 1;
            if since_improved >= hp.convergence_window {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainedEncoder { model: best.1, log })
}

/// Random per-channel gain and additive noise, applied in place.
fn augment<R: Rng + ?Sized>(x: &mut [f32], len: usize, hp: &Hyperparams, rng: &mut R) {
    if hp.augment_scale == 0.0 && hp.augment_noise == 0.0 {
        return;
    }
    let noise = Normal::new(0.0, hp.augment_noise).expect("validated noise");
    for channel in x.chunks_mut(len) {
        let gain = 1.0 + hp.augment_scale * rng.random_range(-1.0..=1.0);
        for v in channel.iter_mut() {
            *v = (*v as f64 * gain + noise.sample(rng)) as f32;
        }
    }
}

/// Anchors then positives for the given keys, one random device pair each.
fn pair_windows<'a, R: Rng + ?Sized>(
    index: &AlignmentIndex<'a>,
    keys: &[AlignmentKey],
    rng: &mut R,
) -> Result<Vec<&'a Window>, EncoderError> {
    let mut anchors = Vec::with_capacity(keys.len());
    let mut positives = Vec::with_capacity(keys.len());
    for k in keys {
        let (a, b) = select_device_pair(&index.entries[k], rng)
            .map_err(|e| EncoderError::InvalidConfig(e.to_string()))?;
        anchors.push(a);
        positives.push(b);
    }
    anchors.extend(positives);
    Ok(anchors)
}

/// Validation batches drawn once so the validation loss is comparable
/// across epochs. A short remainder is merged into the last batch.
fn fixed_batches<'a, R: Rng + ?Sized>(
    index: &AlignmentIndex<'a>,
    keys: &[AlignmentKey],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<&'a Window>>, EncoderError> {
    if keys.is_empty() {
        return Ok(Vec::new());
    }
    let n_batches = (keys.len() / batch_size).max(1);
    let per = keys.len() / n_batches;
    let mut out = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let end = if b + 1 == n_batches { keys.len() } else { (b + 1) * per };
        out.push(pair_windows(index, &keys[b * per..end], rng)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 200), 0.1);
        assert_eq!(cosine_lr(0.1, 200, 200), 0.0);
        assert!((cosine_lr(0.1, 100, 200) - 0.05).abs() < 1e-15);
        let lrs: Vec<f64> = (0..=200).map(|e| cosine_lr(0.1, e, 200)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
