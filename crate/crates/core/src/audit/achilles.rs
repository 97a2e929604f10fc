use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::learn::{FeatureEncoder, Matrix};
use crate::metrics::MixedTable;
use crate::schema::{RawTable, TableSchema};

/// One-hot categoricals (every category kept) and min–max numerics.
pub fn achilles_encoder(pool: &MixedTable) -> FeatureEncoder {
    FeatureEncoder::fit(pool, &[], usize::MAX)
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    1.0 - ab / (aa * bb).sqrt()
}

/// Appends a coordinate that is 1 only for all-zero rows, so every row has a direction.
fn with_bias(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows)
        .map(|r| {
            let mut v = m.row(r).to_vec();
            v.push(if v.iter().all(|&x| x == 0.0) { 1.0 } else { 0.0 });
            v
        })
        .collect()
}

/// Mean cosine distance of every encoded row to its `k` nearest other rows.
pub fn achilles_scores_encoded(m: &Matrix, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k >= m.rows {
        return Err(Error::Audit(format!("k must be in [1, {}), got {k}", m.rows)));
    }
    let rows = with_bias(m);
    Ok((0..rows.len())
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..rows.len())
                .filter(|&j| j != i)
                .map(|j| cosine_distance(&rows[i], &rows[j]))
                .collect();
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            d[..k].sort_by(f64::total_cmp);
            d[..k].iter().sum::<f64>() / k as f64
        })
        .collect())
}

/// Vulnerability score per row; larger means more isolated.
pub fn achilles_score(table: &RawTable, schema: &TableSchema, k: usize) -> Result<Vec<f64>> {
    let mixed = MixedTable::from_raw(table, schema)?;
    let m = achilles_encoder(&mixed).transform(&mixed)?;
    achilles_scores_encoded(&m, k)
}

/// Row indices of the `n` highest scores, ties broken by index.
pub fn top_targets(scores: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}
