use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{to_batch, Patch, PosNegRatio};
use super::layers::cross_entropy;
use super::network::{backward, forward, is_learnable, predict, Architecture, Dropout, Mode, NetworkParams, CELL};
use crate::error::{McdError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub ratio: PosNegRatio,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub dropout_rate: f64,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ratio: PosNegRatio::default(),
            patience: 30,
            batch_size: 128,
            learning_rate: 1e-2,
            momentum: 0.9,
            max_epochs: 500,
            dropout_rate: 0.5,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ratio.validate()?;
        let bad = |what: &str| Err(McdError::InvalidArgument(what.to_string()));
        if self.patience < 1 || self.batch_size < 1 || self.max_epochs < 1 {
            return bad("patience, batch size and max epochs must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout rate must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("batch-norm momentum must be in [0, 1]");
        }
        Ok(())
    }
}

/// Minimum decrease of the validation loss that counts as improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

/// Patience-based stopping on a loss that should decrease.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records one epoch's loss. Returns whether it is the new best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if self.best - loss >= MIN_IMPROVEMENT || (self.best.is_infinite() && loss.is_finite()) {
            self.best = loss;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn stale_epochs(&self) -> usize {
        self.stale
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

impl std::fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{:.8},{:.8}", self.epoch, self.train_loss, self.val_loss)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    /// The training log as `epoch,train_loss,val_loss` lines.
    pub fn log_text(&self) -> String {
        self.log.iter().map(|r| format!("{r}\n")).collect()
    }
}

const EVAL_CHUNK: usize = 512;

/// Mean cross-entropy of `patches` in eval mode.
pub fn evaluate_loss(params: &NetworkParams, patches: &[Patch]) -> Result<f64> {
    let mut total = 0.0;
    let refs: Vec<&Patch> = patches.iter().collect();
    for chunk in refs.chunks(EVAL_CHUNK) {
        let (x, y) = to_batch(chunk, params.architecture())?;
        total += cross_entropy(&predict(params, &x)?, &y) * chunk.len() as f64;
    }
    Ok(total / patches.len() as f64)
}

/// Fraction of patches whose cell probability is on the correct side of 0.5.
pub fn accuracy(params: &NetworkParams, patches: &[Patch]) -> Result<f64> {
    let refs: Vec<&Patch> = patches.iter().collect();
    let mut correct = 0usize;
    for chunk in refs.chunks(EVAL_CHUNK) {
        let (x, y) = to_batch(chunk, params.architecture())?;
        let probs = predict(params, &x)?;
        correct += y
            .iter()
            .enumerate()
            .filter(|&(i, &label)| (probs.data()[i * 2 + CELL] > 0.5) == (label == CELL))
            .count();
    }
    Ok(correct as f64 / patches.len() as f64)
}

/// Mini-batch SGD with momentum (`v ← μv + g`, `θ ← θ − lr·v`) on the mean
/// cross-entropy, validation after every epoch, and early stopping. Returns
/// the parameters of the epoch with the lowest validation loss.
pub fn train(train_set: &[Patch], val_set: &[Patch], arch: Architecture, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(McdError::InvalidArgument(format!(
            "training needs nonempty sets, got {} training and {} validation patches",
            train_set.len(),
            val_set.len()
        )));
    }
    let mut params = NetworkParams::init(arch, cfg.seed);
    let mut velocity = NetworkParams::zeros(arch);
    for t in velocity.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = (params.clone(), 0usize);
    let mut log = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Patch> = idx.iter().map(|&i| &train_set[i]).collect();
            let (x, y) = to_batch(&batch, arch)?;
            let dropout = Dropout {
                rate: cfg.dropout_rate,
                rng: &mut rng,
            };
            let (probs, cache) = forward(&params, &x, Mode::Train(Some(dropout)))?;
            let loss = cross_entropy(&probs, &y);
            if !loss.is_finite() {
                return Err(McdError::Divergence {
                    epoch,
                    detail: format!("training loss {loss}"),
                });
            }
            loss_sum += loss * batch.len() as f64;
            let grads = backward(&params, &cache, &y)?;
            params.update_running_stats(&cache, cfg.bn_momentum);
            for (i, (p, (g, v))) in params
                .tensors_mut()
                .iter_mut()
                .zip(grads.tensors().iter().zip(velocity.tensors_mut()))
                .enumerate()
            {
                if !is_learnable(i) {
                    continue;
                }
                for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                    *v = cfg.momentum * *v + g;
                    *p -= cfg.learning_rate * *v;
                }
            }
        }
        if !params.is_finite() {
            return Err(McdError::Divergence {
                epoch,
                detail: "non-finite parameters".into(),
            });
        }
        let val_loss = evaluate_loss(&params, val_set)?;
        if !val_loss.is_finite() {
            return Err(McdError::Divergence {
                epoch,
                detail: format!("validation loss {val_loss}"),
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
        };
        log::debug!("epoch {record}");
        log.push(record);
        if stopper.observe(val_loss) {
            best = (params.clone(), epoch);
        }
        if stopper.should_stop() {
            log::info!("early stop after epoch {epoch}; best epoch {}", best.1);
            break;
        }
    }
    Ok(TrainOutcome {
        params: best.0,
        log,
        best_epoch: best.1,
    })
}
