use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assignment::SinkhornConfig;
use crate::datagen::AugmentSpec;
use crate::error::{Error, Result};
use crate::metrics::KnnConfig;
use crate::network::{Architecture, OptimizerConfig};
use crate::objectives::LossConfig;

/// Which network encodes the view the self-assignment is computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignmentSource {
    MomentumEncoder,
    OnlineEncoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Metrics are recorded at epoch 0, every `eval_every` epochs and at the last epoch.
    pub eval_every: usize,
    /// Fraction of samples held out from training and used for diagnostics.
    pub holdout_fraction: f64,
    pub loss: LossConfig,
    pub sinkhorn: SinkhornConfig,
    pub optimizer: OptimizerConfig,
    pub momentum_coeff: f64,
    pub use_momentum: bool,
    pub use_predictor: bool,
    /// Falls back to the online encoder when `use_momentum` is off.
    pub assignment_source: AssignmentSource,
    /// View (1 or 2) that gets the weak augmentation; the assignment is computed
    /// from that view, or from view 1 when no view is weak.
    pub weak_view: Option<u8>,
    /// When off, the weak view only feeds the assignment and both embedded views are standard.
    pub weak_view_for_embedding: bool,
    pub augment_standard: AugmentSpec,
    pub augment_weak: AugmentSpec,
    /// `None` uses the desk architecture for the data's input dimension.
    pub architecture: Option<Architecture>,
    /// Prototype count for the SwAV baseline.
    pub prototypes: usize,
    pub knn: KnnConfig,
    pub linear_probe: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            epochs: 200,
            batch_size: 256,
            eval_every: 10,
            holdout_fraction: 0.2,
            loss: LossConfig::resa(),
            sinkhorn: SinkhornConfig::default(),
            optimizer: OptimizerConfig::default(),
            momentum_coeff: 0.99,
            use_momentum: true,
            use_predictor: false,
            assignment_source: AssignmentSource::MomentumEncoder,
            weak_view: Some(1),
            weak_view_for_embedding: true,
            augment_standard: AugmentSpec::standard(),
            augment_weak: AugmentSpec::weak(),
            architecture: None,
            prototypes: 16,
            knn: KnnConfig::default(),
            linear_probe: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall { batch: self.batch_size, available: 0 });
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!("holdout_fraction must lie in [0, 1), got {}", self.holdout_fraction));
        }
        if !(0.0..=1.0).contains(&self.momentum_coeff) {
            return Err(Error::CoefficientOutOfRange(self.momentum_coeff));
        }
        if let Some(v) = self.weak_view {
            if v != 1 && v != 2 {
                return bad(format!("weak_view must be 1, 2 or null, got {v}"));
            }
        }
        if !(self.loss.tau > 0.0 && self.loss.tau.is_finite()) {
            return Err(Error::NonPositiveTau(self.loss.tau));
        }
        if !(self.sinkhorn.epsilon > 0.0 && self.sinkhorn.epsilon.is_finite()) {
            return Err(Error::NonPositiveEpsilon(self.sinkhorn.epsilon));
        }
        let o = &self.optimizer;
        if !(o.base_lr > 0.0 && o.weight_decay >= 0.0 && (0.0..1.0).contains(&o.momentum) && (0.0..=1.0).contains(&o.min_lr_fraction)) {
            return bad("optimizer needs base_lr > 0, weight_decay ≥ 0, momentum in [0, 1), min_lr_fraction in [0, 1]".into());
        }
        if self.prototypes < 2 {
            return Err(Error::TooFewPrototypes(self.prototypes));
        }
        if self.knn.k == 0 {
            return bad("knn.k must be at least 1".into());
        }
        Ok(())
    }

    pub fn architecture_for(&self, input_dim: usize) -> Architecture {
        self.architecture.clone().unwrap_or_else(|| Architecture::desk(input_dim))
    }

    /// Index (1 or 2) of the view the assignment is computed from.
    pub fn assignment_view(&self) -> u8 {
        self.weak_view.unwrap_or(1)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
