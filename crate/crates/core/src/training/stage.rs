use std::collections::HashMap;
use std::io::Write;

use echo_nn::layers::Mode;
use echo_nn::Adam;
use echo_nn::{argmax, Scalar};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_tensor, cross_entropy_with_grad, Hyperparams, SampleSource, TrainError};
use crate::dataset::ClipRecord;
use crate::model::{Model, Stage};

/// A record and its class index in the stage's label space.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub record: ClipRecord,
    pub target: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    #[serde(default)]
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    pub fn val_accs(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_acc).collect()
    }

    pub fn best(&self) -> Option<&EpochStats> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }

    /// First epoch whose validation accuracy reaches `threshold`.
    pub fn epochs_to_accuracy(&self, threshold: f64) -> Option<usize> {
        self.epochs.iter().find(|e| e.val_acc >= threshold).map(|e| e.epoch)
    }
}

/// 1-based index of the first minimum; `0` for an empty series.
pub fn best_epoch_of(val_losses: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in val_losses.iter().enumerate() {
        if best == 0 || l < val_losses[best - 1] {
            best = i + 1;
        }
    }
    best
}

pub struct StageOptions<'a> {
    pub stage: Stage,
    /// Stop once this many epochs pass without a new best validation loss.
    pub patience: Option<usize>,
    /// Receives one line per mini-batch: stage, epoch, batch, clip ids.
    pub audit: Option<&'a mut dyn Write>,
}

impl StageOptions<'_> {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            patience: None,
            audit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitEval {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Inference-mode loss, accuracy and argmax predictions over `examples`.
pub fn evaluate_split<T: Scalar>(
    model: &mut Model<T>,
    examples: &[Example],
    source: &dyn SampleSource,
    batch_size: usize,
) -> Result<SplitEval, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let records: Vec<&ClipRecord> = chunk.iter().map(|e| &e.record).collect();
        let targets: Vec<usize> = chunk.iter().map(|e| e.target).collect();
        let x = batch_tensor::<T>(source, &records)?;
        let out = model.forward(&x, Mode::Eval);
        let (loss, _) = cross_entropy_with_grad(&out.probs, &targets)?;
        loss_sum += loss * chunk.len() as f64;
        for i in 0..chunk.len() {
            predictions.push(argmax(out.probs.outer(i)));
        }
    }
    let correct = predictions.iter().zip(examples).filter(|(p, e)| **p == e.target).count();
    Ok(SplitEval {
        loss: loss_sum / examples.len() as f64,
        accuracy: correct as f64 / examples.len() as f64,
        predictions,
    })
}

fn step<T: Scalar>(model: &mut Model<T>, adam: &mut Adam<T>) {
    adam.begin_step();
    let mut index = 0;
    model.visit_params_mut(&mut |_, p| {
        adam.update(index, p);
        index += 1;
    });
}

/// Mini-batch Adam over `train`, shuffled each epoch with seed
/// `hp.seed + epoch`, validating after every epoch. Returns the model as it
/// was at the best validation epoch.
pub fn train_stage<T: Scalar>(
    mut model: Model<T>,
    train: &[Example],
    val: &[Example],
    source: &dyn SampleSource,
    hp: &Hyperparams,
    mut opts: StageOptions<'_>,
) -> Result<(Model<T>, TrainHistory), TrainError> {
    hp.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let classes = model.num_classes();
    if let Some(e) = train.iter().chain(val).find(|e| e.target >= classes) {
        return Err(TrainError::LabelOutOfRange {
            index: e.target,
            classes,
        });
    }

    let o = hp.optimizer;
    let mut adam = Adam::with_betas(hp.learning_rate, o.beta1, o.beta2, o.eps);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, HashMap<String, echo_nn::Tensor<T>>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=hp.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed.wrapping_add(epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(hp.batch_size).enumerate() {
            let records: Vec<&ClipRecord> = idx.iter().map(|&i| &train[i].record).collect();
            let targets: Vec<usize> = idx.iter().map(|&i| train[i].target).collect();
            if let Some(w) = opts.audit.as_deref_mut() {
                let ids: Vec<&str> = records.iter().map(|r| r.clip_id.as_str()).collect();
                writeln!(w, "{}\t{epoch}\t{}\t{}", opts.stage.as_str(), b + 1, ids.join(","))?;
            }
            let x = batch_tensor::<T>(source, &records)?;
            let out = model.forward(&x, Mode::Train);
            let (loss, grad) = cross_entropy_with_grad(&out.probs, &targets)?;
            if !loss.is_finite() || !out.probs.all_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                    detail: format!("loss {loss}; clips {}", records.iter().map(|r| r.clip_id.as_str()).collect::<Vec<_>>().join(",")),
                });
            }
            loss_sum += loss * idx.len() as f64;
            model.zero_grad();
            model.backward(&grad);
            step(&mut model, &mut adam);
        }

        let eval = evaluate_split(&mut model, val, source, hp.batch_size)?;
        if !eval.loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                batch: 0,
                detail: format!("validation loss {}", eval.loss),
            });
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss: eval.loss,
            val_acc: eval.accuracy,
        };
        log::info!(
            "{} epoch {epoch}/{}: train {:.4} val {:.4} acc {:.4}",
            opts.stage.as_str(),
            hp.epochs,
            stats.train_loss,
            stats.val_loss,
            stats.val_acc
        );
        history.epochs.push(stats);
        if best.as_ref().map_or(true, |(l, _)| eval.loss < *l) {
            best = Some((eval.loss, model.state_dict().into_iter().collect()));
            history.best_epoch = epoch;
        }
        if let Some(p) = opts.patience {
            if epoch - history.best_epoch >= p && epoch < hp.epochs {
                history.stopped_early = true;
                break;
            }
        }
    }
    if let Some(w) = opts.audit.as_deref_mut() {
        w.flush()?;
    }
    let (_, state) = best.expect("at least one epoch ran");
    model.load_state_dict(&state)?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_minimum_wins() {
        assert_eq!(best_epoch_of(&[0.9, 0.4, 0.4, 0.7]), 2);
        assert_eq!(best_epoch_of(&[0.5]), 1);
        assert_eq!(best_epoch_of(&[]), 0);
        assert_eq!(best_epoch_of(&[0.3, 0.2, 0.1]), 3);
    }
}
