//! Clustering diagnostics: silhouette coefficient, adjusted Rand index,
//! k-means pseudo-labels, weighted k-NN and a linear probe.

mod ari;
mod kmeans;
mod knn;
mod probe;
mod silhouette;

pub use ari::{adjusted_rand_index, ContingencyTable};
pub use kmeans::{kmeans, KMeansConfig, KMeansResult};
pub use knn::{knn_classify, KnnConfig};
pub use probe::{linear_probe, LinearProbeConfig};
pub use silhouette::{silhouette, silhouette_with, Distance, Silhouette};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{l2_normalize_rows, Matrix, Rng};

/// Diagnostics for one evaluation point of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch; absent before any training.
    pub loss: Option<f64>,
    pub sc_mean: f64,
    pub sc_std: f64,
    pub ari: f64,
    pub knn_accuracy: f64,
    pub linear_accuracy: Option<f64>,
    /// Smallest per-dimension std of the embeddings seen since the previous record.
    pub collapse_min_std: f64,
    /// Mean diagonal entry of the self-assignment over the epoch.
    pub assignment_diag_mass: Option<f64>,
    pub lr: Option<f64>,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str = "epoch,loss,sc_mean,sc_std,ari,knn_acc,collapse_min_std,diag_mass,lr";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        format!(
            "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{}",
            self.epoch,
            opt(self.loss),
            self.sc_mean,
            self.sc_std,
            self.ari,
            self.knn_accuracy,
            self.collapse_min_std,
            opt(self.assignment_diag_mass),
            opt(self.lr)
        )
    }
}

/// Settings for [`evaluate_features`].
#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub knn: KnnConfig,
    pub kmeans: KMeansConfig,
    pub linear_probe: bool,
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { knn: KnnConfig::default(), kmeans: KMeansConfig::default(), linear_probe: false, threads: 1 }
    }
}

/// Number of classes implied by a label vector (max label + 1).
pub fn class_count(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(0, |m| m + 1)
}

/// Clustering and classification diagnostics of a labelled feature matrix.
///
/// SC and ARI are computed on `test` features; ARI compares the true labels with
/// k-means pseudo-labels (`k` = number of distinct test labels). k-NN and the
/// optional linear probe are fit on `train` and scored on `test`.
pub fn evaluate_split(
    train: (&Matrix, &[usize]),
    test: (&Matrix, &[usize]),
    opts: &EvalOptions,
    rng: &mut Rng,
) -> Result<MetricsRecord> {
    let (train_x, train_y) = train;
    let (test_x, test_y) = test;
    if test_x.rows() != test_y.len() {
        return Err(Error::LengthMismatch(test_x.rows(), test_y.len()));
    }
    if train_x.rows() != train_y.len() {
        return Err(Error::LengthMismatch(train_x.rows(), train_y.len()));
    }
    let sc = silhouette_with(test_x, test_y, Distance::Euclidean, opts.threads)?;
    let mut distinct: Vec<usize> = test_y.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let clusters = kmeans(test_x, distinct.len(), &opts.kmeans, &mut rng.derive(1))?;
    let ari = adjusted_rand_index(test_y, &clusters.labels)?;

    let train_n = l2_normalize_rows(train_x)?;
    let test_n = l2_normalize_rows(test_x)?;
    let k = opts.knn.k.min(train_x.rows());
    let preds = knn_classify(&train_n, train_y, &test_n, &KnnConfig { k, ..opts.knn })?;
    let knn_accuracy = accuracy(&preds, test_y);

    let linear_accuracy = if opts.linear_probe {
        Some(linear_probe(train_x, train_y, test_x, test_y, &LinearProbeConfig::default(), &mut rng.derive(2))?)
    } else {
        None
    };
    let collapse_min_std = test_x.column_std().into_iter().fold(f64::INFINITY, f64::min);

    Ok(MetricsRecord {
        epoch: 0,
        loss: None,
        sc_mean: sc.mean,
        sc_std: sc.std,
        ari,
        knn_accuracy,
        linear_accuracy,
        collapse_min_std,
        assignment_diag_mass: None,
        lr: None,
    })
}

/// [`evaluate_split`] on a single labelled set, holding out every fifth sample for k-NN and the probe
/// while SC and ARI use all samples.
pub fn evaluate_features(x: &Matrix, labels: &[usize], opts: &EvalOptions, rng: &mut Rng) -> Result<MetricsRecord> {
    if x.rows() != labels.len() {
        return Err(Error::LengthMismatch(x.rows(), labels.len()));
    }
    if x.rows() < 5 {
        return Err(Error::EmptyInput);
    }
    let test_idx: Vec<usize> = (0..x.rows()).filter(|i| i % 5 == 0).collect();
    let train_idx: Vec<usize> = (0..x.rows()).filter(|i| i % 5 != 0).collect();
    let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let (train_x, train_y) = (x.select_rows(&train_idx), pick(&train_idx));
    let (test_x, test_y) = (x.select_rows(&test_idx), pick(&test_idx));

    let mut record = evaluate_split((&train_x, &train_y), (&test_x, &test_y), opts, rng)?;
    let sc = silhouette_with(x, labels, Distance::Euclidean, opts.threads)?;
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let clusters = kmeans(x, distinct.len(), &opts.kmeans, &mut rng.derive(3))?;
    record.sc_mean = sc.mean;
    record.sc_std = sc.std;
    record.ari = adjusted_rand_index(labels, &clusters.labels)?;
    record.collapse_min_std = x.column_std().into_iter().fold(f64::INFINITY, f64::min);
    Ok(record)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}
