//! The self-assignment training loop, its baselines, run logs and checkpoints.
//!
//! Each step draws a batch, augments it into two views, computes the
//! self-assignment from one view's encodings without gradient, embeds both
//! views with the online network, and descends the chosen loss. Labels are
//! only ever passed to the diagnostics.

mod checkpoint;
mod config;
mod log;

pub use checkpoint::{checkpoint, resume, Checkpoint};
pub use config::{AssignmentSource, TrainConfig};
pub use log::{EpochStats, RunLog};

use std::time::Instant;

use crate::assignment::{sinkhorn_self_assignment, AssignmentMatrix};
use crate::datagen::{augment, AugmentSpec};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_features, evaluate_split, EvalOptions, KMeansConfig, MetricsRecord};
use crate::network::{backward, ema_update, encode, forward, sgd_step, NetworkPair, OptimizerState};
use crate::numerics::{cosine_self_similarity, l2_normalize_rows, Matrix, Rng};
use crate::objectives::{loss_for, LossVariant, PrototypeBank};

const INIT_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 4;
const PROTOTYPE_STREAM: u64 = 5;

/// Everything that changes while training. Together with the config and the
/// data this determines the rest of the run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub pair: NetworkPair,
    pub optimizer: OptimizerState,
    pub bank: Option<PrototypeBank>,
    pub rng: Rng,
    /// Epochs completed.
    pub epoch: usize,
    pub log: RunLog,
}

/// Seeded split of the sample indices into training and held-out sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

impl Split {
    pub fn new(n: usize, holdout_fraction: f64, seed: u64) -> Self {
        let mut order = Rng::new(seed).derive(SPLIT_STREAM).permutation(n);
        let n_hold = (n as f64 * holdout_fraction).round() as usize;
        let mut holdout = order.split_off(n - n_hold);
        order.sort_unstable();
        holdout.sort_unstable();
        Self { train: order, holdout }
    }
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a Matrix,
    labels: &'a [usize],
    split: Split,
    train_x: Matrix,
    steps_per_epoch: u64,
    threads: usize,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a Matrix, labels: &'a [usize]) -> Result<Self> {
        let state = Self::initial_state(&cfg, data)?;
        Self::with_state(cfg, data, labels, state)
    }

    /// Continues from a checkpointed state. The data must be the set the state was trained on.
    pub fn from_checkpoint(ckpt: Checkpoint, data: &'a Matrix, labels: &'a [usize]) -> Result<Self> {
        if ckpt.data_hash != data_fingerprint(data) {
            return Err(Error::ConfigMismatch("training data differs from the checkpointed run".into()));
        }
        Self::with_state(ckpt.config, data, labels, ckpt.state)
    }

    fn initial_state(cfg: &TrainConfig, data: &Matrix) -> Result<TrainState> {
        cfg.validate()?;
        let root = Rng::new(cfg.seed);
        let arch = cfg.architecture_for(data.cols());
        let pair = NetworkPair::new(&arch, cfg.use_predictor, cfg.momentum_coeff, &mut root.derive(INIT_STREAM))?;
        let bank = match cfg.loss.variant {
            LossVariant::SwAV => {
                let dim = pair.online.architecture().projector.last().copied().unwrap_or(0);
                let dim = pair.online.predictor.as_ref().map_or(dim, |p| p.output_dim());
                Some(PrototypeBank::random(cfg.prototypes, dim, &mut root.derive(PROTOTYPE_STREAM))?)
            }
            _ => None,
        };
        let n_train = Split::new(data.rows(), cfg.holdout_fraction, cfg.seed).train.len();
        let steps = (n_train / cfg.batch_size.max(1)) as u64;
        let optimizer = OptimizerState::from_config(&cfg.optimizer, cfg.batch_size, steps, cfg.epochs as u64);
        Ok(TrainState { pair, optimizer, bank, rng: root.derive(TRAIN_STREAM), epoch: 0, log: RunLog::new(cfg.clone()) })
    }

    fn with_state(cfg: TrainConfig, data: &'a Matrix, labels: &'a [usize], state: TrainState) -> Result<Self> {
        cfg.validate()?;
        if data.rows() != labels.len() {
            return Err(Error::LengthMismatch(data.rows(), labels.len()));
        }
        let arch = cfg.architecture_for(data.cols());
        if arch.encoder.first() != Some(&data.cols()) {
            return Err(Error::ShapeMismatch(format!(
                "data has {} features, encoder expects {:?}",
                data.cols(),
                arch.encoder.first()
            )));
        }
        let split = Split::new(data.rows(), cfg.holdout_fraction, cfg.seed);
        if split.train.len() < cfg.batch_size {
            return Err(Error::BatchTooSmall { batch: cfg.batch_size, available: split.train.len() });
        }
        let train_x = data.select_rows(&split.train);
        let steps_per_epoch = (split.train.len() / cfg.batch_size) as u64;
        Ok(Self { cfg, data, labels, split, train_x, steps_per_epoch, threads: 1, state })
    }

    /// Worker threads for the silhouette computation; results do not depend on it.
    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn epoch(&self) -> usize {
        self.state.epoch
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    /// Trains until `epoch` epochs are complete (capped at the configured total).
    pub fn run_until(&mut self, epoch: usize) -> Result<()> {
        let target = epoch.min(self.cfg.epochs);
        if self.state.epoch == 0 && target > 0 && self.state.log.records.is_empty() {
            let record = self.evaluate(None)?;
            self.state.log.records.push(record);
        }
        while self.state.epoch < target {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<(NetworkPair, RunLog)> {
        self.run_until(self.cfg.epochs)?;
        Ok(self.into_parts())
    }

    pub fn into_parts(self) -> (NetworkPair, RunLog) {
        (self.state.pair, self.state.log)
    }

    pub fn checkpoint(&self, dir: &std::path::Path) -> Result<()> {
        checkpoint(&self.state, &self.cfg, &data_fingerprint(self.data), dir)
    }

    fn run_epoch(&mut self) -> Result<()> {
        let started = Instant::now();
        let n = self.train_x.rows();
        let order = self.state.rng.permutation(n);
        let m = self.cfg.batch_size;
        let (mut loss_sum, mut diag_sum) = (0.0, 0.0);
        let mut min_std = f64::INFINITY;
        let mut lr = self.state.optimizer.learning_rate();
        for b in 0..self.steps_per_epoch as usize {
            let batch = self.train_x.select_rows(&order[b * m..(b + 1) * m]);
            lr = self.state.optimizer.learning_rate();
            let step = self.state.optimizer.step;
            let stats = self.step(&batch).map_err(|e| match e {
                // a zero encoding or embedding leaves the loss undefined
                Error::ZeroRow(row) => Error::NonFiniteLoss {
                    step,
                    diagnostic: format!("row {row} of a batch encoding or embedding has zero norm"),
                },
                e => e,
            })?;
            loss_sum += stats.loss;
            diag_sum += stats.diag_mass;
            min_std = min_std.min(stats.min_std);
        }
        self.state.epoch += 1;
        let steps = self.steps_per_epoch as f64;
        let stats = EpochStats {
            epoch: self.state.epoch,
            mean_loss: loss_sum / steps,
            diag_mass: diag_sum / steps,
            min_embedding_std: min_std,
            lr,
            wall_clock_secs: 0.0,
        };
        let epoch = self.state.epoch;
        if epoch % self.cfg.eval_every == 0 || epoch == self.cfg.epochs {
            let record = self.evaluate(Some(&stats))?;
            self.state.log.records.push(record);
        }
        self.state.log.epochs.push(EpochStats { wall_clock_secs: started.elapsed().as_secs_f64(), ..stats });
        Ok(())
    }

    fn views(&mut self, batch: &Matrix) -> (Matrix, Matrix, Matrix) {
        let cfg = &self.cfg;
        let rng = &mut self.state.rng;
        let std_spec = &cfg.augment_standard;
        let weak_spec = &cfg.augment_weak;
        let spec_for = |view: u8| -> &AugmentSpec {
            if cfg.weak_view == Some(view) {
                weak_spec
            } else {
                std_spec
            }
        };
        match cfg.loss.variant {
            LossVariant::InfoNCE | LossVariant::SwAV => {
                let x1 = augment(batch, std_spec, rng);
                let x2 = augment(batch, std_spec, rng);
                (x1.clone(), x1, x2)
            }
            LossVariant::ReSA if cfg.weak_view_for_embedding || cfg.weak_view.is_none() => {
                let x1 = augment(batch, spec_for(1), rng);
                let x2 = augment(batch, spec_for(2), rng);
                let assign = if cfg.assignment_view() == 1 { x1.clone() } else { x2.clone() };
                (assign, x1, x2)
            }
            LossVariant::ReSA => {
                let weak = augment(batch, weak_spec, rng);
                let x1 = augment(batch, std_spec, rng);
                let x2 = augment(batch, std_spec, rng);
                (weak, x1, x2)
            }
        }
    }

    fn step(&mut self, batch: &Matrix) -> Result<StepStats> {
        let (x_assign, x1, x2) = self.views(batch);
        let cfg = &self.cfg;
        let st = &mut self.state;

        // assignment branch: no tape, no gradient
        let source = if cfg.use_momentum && cfg.assignment_source == AssignmentSource::MomentumEncoder {
            &st.pair.momentum
        } else {
            &st.pair.online
        };
        let h = encode(source, &x_assign)?;
        let f1 = forward(&st.pair.online, &x1, true)?;
        let f2 = forward(&st.pair.online, &x2, true)?;
        let non_finite = |what: &str, value: f64| Error::NonFiniteLoss {
            step: st.optimizer.step,
            diagnostic: format!(
                "{what}={value} lr={} max|H|={} max|Z1|={} max|Z2|={} epoch={}",
                st.optimizer.learning_rate(),
                h.max_abs(),
                f1.z.max_abs(),
                f2.z.max_abs(),
                st.epoch
            ),
        };
        if !h.is_finite() || !f1.z.is_finite() || !f2.z.is_finite() {
            return Err(non_finite("activations", f64::NAN));
        }
        let a = self_assignment(&h, cfg)?;
        let result = loss_for(&f1.z, &f2.z, Some(&a), st.bank.as_ref(), &cfg.loss, &cfg.sinkhorn)?;
        if !result.value.is_finite() || !result.grad_wrt_z.is_finite() || !result.grad_wrt_zprime.is_finite() {
            return Err(non_finite("loss", result.value));
        }

        let mut grads = backward(&st.pair.online, f1.tape.as_ref(), &result.grad_wrt_z)?;
        grads.accumulate(&backward(&st.pair.online, f2.tape.as_ref(), &result.grad_wrt_zprime)?)?;
        match (&mut st.bank, &result.grad_wrt_prototypes) {
            (Some(bank), Some(gc)) => {
                sgd_step(&mut st.pair.online, &grads, Some((bank.prototypes.data_mut(), gc.data())), &mut st.optimizer)?;
                bank.renormalize()?;
            }
            _ => sgd_step(&mut st.pair.online, &grads, None, &mut st.optimizer)?,
        }
        if cfg.use_momentum {
            ema_update(&mut st.pair)?;
        }

        let min_std = f1.z.column_std().into_iter().chain(f2.z.column_std()).fold(f64::INFINITY, f64::min);
        Ok(StepStats { loss: result.value, diag_mass: a.diag_mass(), min_std })
    }

    /// Diagnostics on the current online encoder. `stats` is `None` for the
    /// record taken before training.
    fn evaluate(&self, stats: Option<&EpochStats>) -> Result<MetricsRecord> {
        let opts = EvalOptions {
            knn: self.cfg.knn,
            kmeans: KMeansConfig::default(),
            linear_probe: self.cfg.linear_probe,
            threads: self.threads,
        };
        let epoch = self.state.epoch;
        let mut rng = Rng::new(self.cfg.seed).derive(EVAL_STREAM).derive(epoch as u64);
        let online = &self.state.pair.online;
        let mut record = if self.split.holdout.is_empty() {
            evaluate_features(&encode(online, self.data)?, self.labels, &opts, &mut rng)?
        } else {
            let train_h = encode(online, &self.train_x)?;
            let train_y: Vec<usize> = self.split.train.iter().map(|&i| self.labels[i]).collect();
            let hold_x = self.data.select_rows(&self.split.holdout);
            let hold_h = encode(online, &hold_x)?;
            let hold_y: Vec<usize> = self.split.holdout.iter().map(|&i| self.labels[i]).collect();
            evaluate_split((&train_h, &train_y), (&hold_h, &hold_y), &opts, &mut rng)?
        };
        record.epoch = epoch;
        match stats {
            Some(s) => {
                record.loss = Some(s.mean_loss);
                record.assignment_diag_mass = Some(s.diag_mass);
                record.lr = Some(s.lr);
                record.collapse_min_std = s.min_embedding_std;
            }
            None => {
                let x = if self.split.holdout.is_empty() { self.data.clone() } else { self.data.select_rows(&self.split.holdout) };
                let z = forward(online, &x, false)?.z;
                record.collapse_min_std = z.column_std().into_iter().fold(f64::INFINITY, f64::min);
            }
        }
        Ok(record)
    }
}

struct StepStats {
    loss: f64,
    diag_mass: f64,
    min_std: f64,
}

/// Self-assignment of a batch from its encodings.
pub fn self_assignment(h: &Matrix, cfg: &TrainConfig) -> Result<AssignmentMatrix> {
    let s = cosine_self_similarity(&l2_normalize_rows(h)?)?;
    sinkhorn_self_assignment(&s, &cfg.sinkhorn)
}

/// SHA-256 over the shape and the exact bits of the data.
pub fn data_fingerprint(data: &Matrix) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update((data.rows() as u64).to_le_bytes());
    hasher.update((data.cols() as u64).to_le_bytes());
    for v in data.data() {
        hasher.update(v.to_bits().to_le_bytes());
    }
    config::hex(&hasher.finalize())
}

/// Runs the configured loss to completion.
pub fn train(data: &Matrix, labels: &[usize], cfg: &TrainConfig) -> Result<(NetworkPair, RunLog)> {
    Trainer::new(cfg.clone(), data, labels)?.run()
}

/// [`train`] with a baseline loss; rejects the ReSA variant.
pub fn train_baseline(data: &Matrix, labels: &[usize], cfg: &TrainConfig) -> Result<(NetworkPair, RunLog)> {
    if cfg.loss.variant == LossVariant::ReSA {
        return Err(Error::Config("train_baseline expects InfoNCE or SwAV".into()));
    }
    train(data, labels, cfg)
}
