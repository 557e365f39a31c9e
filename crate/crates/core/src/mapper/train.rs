use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grad::{gradients, Gradients};
use super::loss::margin_loss;
use super::{init_network, MapperConfig, MapperNetwork};
use crate::corpus::{PairedCorpus, SplitSpec};
use crate::hashing::mix64;
use crate::{Error, Result};

/// Update rule applied once per batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    /// Per-parameter first/second moment estimates with bias correction.
    AdaptiveMoments { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::AdaptiveMoments {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub margin: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 16,
            margin: 1.0,
            max_epochs: 500,
            patience: 10,
            seed: 0,
            optimizer: Optimizer::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch size must be at least 2 for in-batch negatives, got {}",
                self.batch_size
            ));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return bad(format!("margin must be non-negative, got {}", self.margin));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if let Optimizer::AdaptiveMoments { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || epsilon <= 0.0 {
                return bad(format!("invalid optimizer settings {:?}", self.optimizer));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Index into `valid_loss_per_epoch` of the returned weights.
    pub best_epoch: usize,
    /// Validation loss of the initial weights, before any update.
    pub initial_valid_loss: f64,
    pub train_loss_per_epoch: Vec<f64>,
    pub valid_loss_per_epoch: Vec<f64>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn best_valid_loss(&self) -> f64 {
        self.valid_loss_per_epoch[self.best_epoch]
    }
}

/// Fixed chunks of `batch_size`; a trailing single item joins the previous
/// chunk so every chunk has a negative.
fn validation_chunks(rows: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut chunks: Vec<&[usize]> = rows.chunks(batch_size).collect();
    if chunks.len() > 1 && chunks.last().map(|c| c.len()) == Some(1) {
        chunks.pop();
        let n = rows.len();
        let start = n - 1 - chunks.pop().unwrap().len();
        chunks.push(&rows[start..]);
    }
    chunks
}

/// Margin loss over `rows` of `corpus`, evaluated in fixed consecutive
/// chunks of `batch_size` and averaged per item.
pub fn validation_loss(
    net: &MapperNetwork,
    corpus: &PairedCorpus,
    rows: &[usize],
    batch_size: usize,
    margin: f64,
) -> Result<f64> {
    if rows.len() < 2 {
        return Err(Error::BatchTooSmall(rows.len()));
    }
    let nl = corpus.nl_vectors();
    let code = corpus.code_vectors();
    let mut total = 0.0;
    for chunk in validation_chunks(rows, batch_size.max(2)) {
        let preds: Vec<Vec<f64>> = chunk.iter().map(|&r| net.forward_f64(nl.row(r))).collect();
        let targets: Vec<Vec<f64>> = chunk
            .iter()
            .map(|&r| code.row(r).iter().map(|v| *v as f64).collect())
            .collect();
        total += margin_loss(&preds, &targets, margin)?.loss * chunk.len() as f64;
    }
    Ok(total / rows.len() as f64)
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, net: &MapperNetwork) -> Self {
        let sizes: Vec<usize> = net
            .layers()
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .collect();
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        let moments = matches!(kind, Optimizer::AdaptiveMoments { .. });
        Self {
            kind,
            lr,
            step: 0,
            first: if moments { zeros() } else { Vec::new() },
            second: if moments { zeros() } else { Vec::new() },
        }
    }

    fn apply(&mut self, net: &mut MapperNetwork, grads: &Gradients) {
        self.step += 1;
        for (li, (layer, g)) in net.layers_mut().iter_mut().zip(&grads.layers).enumerate() {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let grad = g.weights.iter().chain(&g.bias);
            match self.kind {
                Optimizer::Sgd => {
                    for (p, g) in params.zip(grad) {
                        *p = (*p as f64 - self.lr * g) as f32;
                    }
                }
                Optimizer::AdaptiveMoments { beta1, beta2, epsilon } => {
                    let c1 = 1.0 - beta1.powi(self.step);
                    let c2 = 1.0 - beta2.powi(self.step);
                    let m = self.first[li].iter_mut();
                    let v = self.second[li].iter_mut();
                    for (((p, g), m), v) in params.zip(grad).zip(m).zip(v) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let step = self.lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                        *p = (*p as f64 - step) as f32;
                    }
                }
            }
        }
    }
}

/// Trains a fresh network on the split's train ids with early stopping on
/// the validation margin loss.
///
/// Each epoch shuffles the (sorted) train ids with a generator seeded from
/// `tcfg.seed`, steps the optimizer once per batch (a final batch of one
/// item is skipped), then evaluates [`validation_loss`] on the sorted valid
/// ids. Training stops once `patience` epochs pass without improvement, or
/// after `max_epochs`; the weights from the best validation epoch are
/// returned. Single-threaded and bit-deterministic for a given seed.
pub fn train(
    corpus: &PairedCorpus,
    split: &SplitSpec,
    mcfg: &MapperConfig,
    tcfg: &TrainConfig,
) -> Result<(MapperNetwork, TrainReport)> {
    tcfg.validate()?;
    mcfg.validate()?;
    if corpus.nl_vectors().dim() != mcfg.input_dim {
        return Err(Error::DimMismatch {
            expected: mcfg.input_dim,
            found: corpus.nl_vectors().dim(),
        });
    }
    if corpus.code_vectors().dim() != mcfg.output_dim {
        return Err(Error::DimMismatch {
            expected: mcfg.output_dim,
            found: corpus.code_vectors().dim(),
        });
    }

    let sorted_rows = |ids: &[String]| -> Result<Vec<usize>> {
        let mut ids: Vec<&String> = ids.iter().collect();
        ids.sort_unstable();
        ids.into_iter().map(|id| corpus.require_row(id)).collect()
    };
    let mut train_rows = sorted_rows(&split.train_ids)?;
    let valid_rows = sorted_rows(&split.valid_ids)?;
    if train_rows.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "train split needs at least 2 items, has {}",
            train_rows.len()
        )));
    }
    if valid_rows.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "valid split needs at least 2 items, has {}",
            valid_rows.len()
        )));
    }

    let mut net = init_network(mcfg, tcfg.seed)?;
    let mut optimizer = OptimizerState::new(tcfg.optimizer, tcfg.learning_rate, &net);
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(tcfg.seed ^ 0x5348_5546_464c_4521));
    let nl = corpus.nl_vectors();
    let code = corpus.code_vectors();

    let initial_valid_loss = validation_loss(&net, corpus, &valid_rows, tcfg.batch_size, tcfg.margin)?;
    let mut report = TrainReport {
        epochs_run: 0,
        best_epoch: 0,
        initial_valid_loss,
        train_loss_per_epoch: Vec::new(),
        valid_loss_per_epoch: Vec::new(),
        stopped_early: false,
    };
    let mut best: Option<(f64, MapperNetwork)> = None;
    let mut since_best = 0;

    for epoch in 0..tcfg.max_epochs {
        train_rows.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut items = 0usize;
        for batch in train_rows.chunks(tcfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let xs: Vec<&[f32]> = batch.iter().map(|&r| nl.row(r)).collect();
            let cs: Vec<&[f32]> = batch.iter().map(|&r| code.row(r)).collect();
            let grads = gradients(&net, &xs, &cs, tcfg.margin)?;
            optimizer.apply(&mut net, &grads);
            loss_sum += grads.loss * batch.len() as f64;
            items += batch.len();
        }
        let train_loss = loss_sum / items as f64;
        let valid_loss = validation_loss(&net, corpus, &valid_rows, tcfg.batch_size, tcfg.margin)?;
        if !valid_loss.is_finite() {
            return Err(Error::InvalidInput(format!(
                "training diverged at epoch {epoch} (validation loss {valid_loss})"
            )));
        }
        report.train_loss_per_epoch.push(train_loss);
        report.valid_loss_per_epoch.push(valid_loss);
        report.epochs_run = epoch + 1;
        log::debug!("epoch {epoch}: train {train_loss:.6} valid {valid_loss:.6}");

        if best.as_ref().is_none_or(|(b, _)| valid_loss < *b) {
            best = Some((valid_loss, net.clone()));
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tcfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }

    let (_, best_net) = best.expect("at least one epoch runs");
    log::info!(
        "trained {} epochs, best epoch {} (valid loss {:.6})",
        report.epochs_run,
        report.best_epoch,
        report.best_valid_loss()
    );
    Ok((best_net, report))
}
