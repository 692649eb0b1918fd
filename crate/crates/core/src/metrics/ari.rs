use crate::error::{Error, Result};

/// Counts `n_ij` of points labelled `i` in the first partition and `j` in the second.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

impl ContingencyTable {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch(a.len(), b.len()));
        }
        let ra = a.iter().copied().max().map_or(0, |m| m + 1);
        let rb = b.iter().copied().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0u64; rb]; ra];
        for (&i, &j) in a.iter().zip(b) {
            counts[i][j] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..rb).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self { counts, row_sums, col_sums, total: a.len() as u64 })
    }
}

fn pairs(n: u64) -> i128 {
    let n = n as i128;
    n * (n - 1) / 2
}

/// Adjusted Rand index between two labelings.
///
/// The closed form is scaled by `2·C(N,2)` so numerator and denominator are
/// integers, evaluated exactly in `i128`. When both partitions are trivial in
/// the same way (denominator zero) the index is 1.
pub fn adjusted_rand_index(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let t = ContingencyTable::new(y_true, y_pred)?;
    let index: i128 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: i128 = t.row_sums.iter().map(|&c| pairs(c)).sum();
    let b: i128 = t.col_sums.iter().map(|&c| pairs(c)).sum();
    let n2 = pairs(t.total);
    let num = 2 * (index * n2 - a * b);
    let den = (a + b) * n2 - 2 * a * b;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}
