//! Checkpoint directory layout:
//!
//! - `manifest.json`: config, config hash, dimensions, step, optimizer scalars,
//!   RNG position, run log and SHA-256 digests of the two blobs.
//! - `params.bin`: online then momentum parameters in declaration order as
//!   little-endian `f32`.
//! - `state.bin`: the same parameters, the optimizer velocity and the
//!   prototypes as little-endian `f64`, which is what resuming reads so the
//!   continued run matches an uninterrupted one bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::hex;
use super::{RunLog, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::network::{Architecture, NetworkPair, OptimizerState};
use crate::numerics::{Matrix, Rng, RngState};
use crate::objectives::PrototypeBank;

const FORMAT: &str = "resa-checkpoint-1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    epoch: usize,
    step: u64,
    config_hash: String,
    data_hash: String,
    architecture: Architecture,
    online_parameters: usize,
    momentum_parameters: usize,
    generation: u64,
    velocity_lengths: Vec<usize>,
    prototype_shape: Option<(usize, usize)>,
    optimizer: OptimizerState,
    rng: RngState,
    params_sha256: String,
    state_sha256: String,
    config: TrainConfig,
    log: RunLog,
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
    /// Fingerprint of the data the run was trained on.
    pub data_hash: String,
}

impl Checkpoint {
    pub fn pair(&self) -> &NetworkPair {
        &self.state.pair
    }

    pub fn step(&self) -> u64 {
        self.state.optimizer.step
    }

    /// Fails with `ConfigMismatch` naming every top-level key that differs from `cfg`.
    pub fn ensure_matches(&self, cfg: &TrainConfig) -> Result<()> {
        let stored = serde_json::to_value(&self.config)?;
        let given = serde_json::to_value(cfg)?;
        let (Some(stored), Some(given)) = (stored.as_object(), given.as_object()) else {
            return Ok(());
        };
        let differing: Vec<&str> =
            stored.iter().filter(|(k, v)| given.get(*k) != Some(v)).map(|(k, _)| k.as_str()).collect();
        if differing.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigMismatch(format!("differs in {}", differing.join(", "))))
        }
    }
}

fn f64_bytes<'a>(values: impl Iterator<Item = &'a f64>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn sha(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn checkpoint(state: &TrainState, cfg: &TrainConfig, data_hash: &str, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let online = state.pair.online.flatten();
    let momentum = state.pair.momentum.flatten();

    let params: Vec<u8> = online.iter().chain(&momentum).flat_map(|&v| (v as f32).to_le_bytes()).collect();
    let velocity = state.optimizer.velocity();
    let prototypes = state.bank.as_ref().map(|b| b.prototypes.data()).unwrap_or(&[]);
    let blob = f64_bytes(online.iter().chain(&momentum).chain(velocity.iter().flatten()).chain(prototypes));

    let mut optimizer = state.optimizer.clone();
    optimizer.set_velocity(Vec::new());
    let manifest = Manifest {
        format: FORMAT.into(),
        epoch: state.epoch,
        step: state.optimizer.step,
        config_hash: cfg.hash(),
        data_hash: data_hash.into(),
        architecture: state.pair.online.architecture(),
        online_parameters: online.len(),
        momentum_parameters: momentum.len(),
        generation: state.pair.online.generation,
        velocity_lengths: velocity.iter().map(Vec::len).collect(),
        prototype_shape: state.bank.as_ref().map(|b| b.prototypes.shape()),
        optimizer,
        rng: state.rng.state(),
        params_sha256: sha(&params),
        state_sha256: sha(&blob),
        config: cfg.clone(),
        log: state.log.clone(),
    };
    fs::write(dir.join("params.bin"), &params)?;
    fs::write(dir.join("state.bin"), &blob)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn resume(dir: &Path) -> Result<Checkpoint> {
    let corrupt = |msg: String| Error::CorruptCheckpoint(msg);
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(corrupt(format!("unknown format {:?}", manifest.format)));
    }
    if manifest.config.hash() != manifest.config_hash {
        return Err(corrupt("config hash does not match the stored config".into()));
    }
    let params = fs::read(dir.join("params.bin"))?;
    if sha(&params) != manifest.params_sha256 {
        return Err(corrupt("params.bin digest mismatch".into()));
    }
    let blob = fs::read(dir.join("state.bin"))?;
    if sha(&blob) != manifest.state_sha256 {
        return Err(corrupt("state.bin digest mismatch".into()));
    }
    if blob.len() % 8 != 0 {
        return Err(corrupt("state.bin is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

    let cfg = manifest.config;
    let arch = manifest.architecture;
    if cfg.architecture.as_ref().is_some_and(|a| a.encoder != arch.encoder || a.projector != arch.projector) {
        return Err(corrupt("stored architecture disagrees with the stored config".into()));
    }
    // initial values are overwritten below
    let mut pair = NetworkPair::new(&arch, cfg.use_predictor, cfg.momentum_coeff, &mut Rng::new(0))?;
    let n_on = manifest.online_parameters;
    let n_mom = manifest.momentum_parameters;
    let n_vel: usize = manifest.velocity_lengths.iter().sum();
    let n_proto = manifest.prototype_shape.map_or(0, |(r, c)| r * c);
    if values.len() != n_on + n_mom + n_vel + n_proto || params.len() != 4 * (n_on + n_mom) {
        return Err(corrupt("blob sizes do not match the manifest".into()));
    }
    let (on, rest) = values.split_at(n_on);
    let (mom, rest) = rest.split_at(n_mom);
    let (vel, proto) = rest.split_at(n_vel);
    pair.online.load_flat(on).map_err(|e| corrupt(format!("online parameters: {e}")))?;
    pair.momentum.load_flat(mom).map_err(|e| corrupt(format!("momentum parameters: {e}")))?;
    pair.online.generation = manifest.generation;

    let mut optimizer = manifest.optimizer;
    let mut velocity = Vec::with_capacity(manifest.velocity_lengths.len());
    let mut offset = 0;
    for len in &manifest.velocity_lengths {
        velocity.push(vel[offset..offset + len].to_vec());
        offset += len;
    }
    optimizer.set_velocity(velocity);

    let bank = match manifest.prototype_shape {
        Some((r, c)) => Some(PrototypeBank::from_matrix(Matrix::new(r, c, proto.to_vec())?)),
        None => None,
    };
    let rng = Rng::from_state(&manifest.rng).ok_or_else(|| corrupt("unreadable rng state".into()))?;
    let state = TrainState { pair, optimizer, bank, rng, epoch: manifest.epoch, log: manifest.log };
    Ok(Checkpoint { config: cfg, state, data_hash: manifest.data_hash })
}
