use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::ConfusionMatrix;
use super::optim::{adam_step, AdamState, TrainConfig};
use crate::data::{Center, PatchSet, SplitAssignment};
use crate::error::{invalid, shape_err, Result};
use crate::model::{argmax, forward, predict_proba, PyFormerConfig, PyFormerParams};
use crate::tensor::{Tape, Tensor, Var};

/// Probabilities are floored at this value before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean cross-entropy of 1-based `targets` under `probs` (`[batch, K]`), plus
/// the regularization penalty.
pub fn loss(probs: &Tensor, targets: &[u16], l2_penalty: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let pen = tape.constant(Tensor::scalar(l2_penalty));
    let l = loss_on_tape(&mut tape, p, targets, pen)?;
    tape.value(l).item()
}

pub fn loss_on_tape(tape: &mut Tape, probs: Var, targets: &[u16], penalty: Var) -> Result<Var> {
    let k = match *tape.value(probs).dims() {
        [_, k] => k,
        _ => return Err(shape_err!("probabilities must be [batch, K], got {}", tape.value(probs).shape())),
    };
    let idx = targets
        .iter()
        .map(|&t| {
            if t == 0 || t as usize > k {
                Err(invalid!("target class {t} outside 1..={k}"))
            } else {
                Ok(t as usize - 1)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let nll = tape.nll(probs, &idx, PROB_FLOOR)?;
    tape.add(nll, penalty)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_oa: f64,
    /// `None` when the split has no validation centers.
    pub val_oa: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

fn indices_of(patches: &PatchSet, centers: &[Center]) -> Result<Vec<usize>> {
    centers
        .iter()
        .map(|&c| patches.index_of(c).ok_or_else(|| invalid!("center {c:?} is not a labeled patch center")))
        .collect()
}

/// Loss and gradients of one batch; returns (loss, correct predictions).
pub fn batch_gradients(
    params: &PyFormerParams,
    cfg: &PyFormerConfig,
    patches: &[&Tensor],
    targets: &[u16],
) -> Result<(f64, usize, PyFormerParams)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let (probs, penalty) = forward(&mut tape, cfg, &bound, patches)?;
    let l = loss_on_tape(&mut tape, probs, targets, penalty)?;
    let k = cfg.num_classes;
    let correct = tape
        .value(probs)
        .data()
        .chunks(k)
        .zip(targets)
        .filter(|(row, &t)| argmax(row) + 1 == t as usize)
        .count();
    let mut grads = tape.backward(l)?;
    let g = bound.map(|v| grads.take(*v).expect("every parameter is a trainable leaf"));
    Ok((tape.value(l).item()?, correct, g))
}

/// Mini-batch Adam training over the split's training centers.
pub fn train(
    mut params: PyFormerParams,
    cfg: &PyFormerConfig,
    train_cfg: &TrainConfig,
    patches: &PatchSet,
    split: &SplitAssignment,
) -> Result<(PyFormerParams, TrainHistory)> {
    cfg.validate()?;
    train_cfg.validate()?;
    params.check_shapes(cfg)?;
    if split.train.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    if patches.b_star != cfg.b_star || patches.patch_size != cfg.patch_size {
        return Err(shape_err!(
            "patches are {}x{}x{}, model expects {}x{}x{}",
            patches.patch_size,
            patches.patch_size,
            patches.b_star,
            cfg.patch_size,
            cfg.patch_size,
            cfg.b_star
        ));
    }
    if let Some(&bad) = patches.center_labels.iter().find(|&&l| l as usize > cfg.num_classes) {
        return Err(invalid!("label {bad} exceeds the model's {} classes", cfg.num_classes));
    }
    let mut order = indices_of(patches, &split.train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut state = AdamState::for_model(&params);
    let mut history = TrainHistory::default();

    for epoch in 0..train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut correct = 0;
        for batch in order.chunks(train_cfg.batch_size) {
            let xs: Vec<&Tensor> = batch.iter().map(|&i| &patches.patches[i]).collect();
            let ys: Vec<u16> = batch.iter().map(|&i| patches.center_labels[i]).collect();
            let (l, c, grads) = batch_gradients(&params, cfg, &xs, &ys)?;
            if !l.is_finite() {
                return Err(invalid!("non-finite loss {l} at epoch {epoch}"));
            }
            total_loss += l * batch.len() as f64;
            correct += c;
            adam_step(&mut params, &grads, &mut state, train_cfg)?;
        }
        let val_oa = if split.val.is_empty() {
            None
        } else {
            let cm = evaluate(&params, cfg, patches, &split.val)?;
            Some(cm.oa())
        };
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss: total_loss / order.len() as f64,
            train_oa: correct as f64 / order.len() as f64,
            val_oa,
        });
    }
    Ok((params, history))
}

impl ConfusionMatrix {
    pub fn oa(&self) -> f64 {
        let k = self.num_classes();
        let trace: u64 = (0..k).map(|i| self.get(i, i)).sum();
        trace as f64 / self.total().max(1) as f64
    }
}

/// Predicted class (1-based) for one patch.
pub fn predict_class(params: &PyFormerParams, cfg: &PyFormerConfig, patch: &Tensor) -> Result<u16> {
    let probs = predict_proba(cfg, params, patch)?;
    Ok(argmax(&probs) as u16 + 1)
}

/// Confusion counts of argmax predictions over `centers`.
pub fn evaluate(params: &PyFormerParams, cfg: &PyFormerConfig, patches: &PatchSet, centers: &[Center]) -> Result<ConfusionMatrix> {
    if centers.is_empty() {
        return Err(invalid!("evaluation needs at least one center"));
    }
    let idx = indices_of(patches, centers)?;
    let k = cfg.num_classes;
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(idx.len());
    let chunk = idx.len().div_ceil(workers);
    let partials: Vec<Result<ConfusionMatrix>> = std::thread::scope(|s| {
        let handles: Vec<_> = idx
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let mut cm = ConfusionMatrix::new(k);
                    for &i in part {
                        let truth = patches.center_labels[i] as usize;
                        if truth == 0 || truth > k {
                            return Err(invalid!("label {truth} outside 1..={k}"));
                        }
                        let pred = predict_class(params, cfg, &patches.patches[i])? as usize;
                        cm.record(truth - 1, pred - 1);
                    }
                    Ok(cm)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut total = ConfusionMatrix::new(k);
    for p in partials {
        total.merge(&p?)?;
    }
    Ok(total)
}
