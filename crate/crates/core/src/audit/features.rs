use std::collections::HashMap;

use rand::seq::index::sample;

use super::achilles::achilles_encoder;
use crate::error::{Error, Result};
use crate::metrics::learn::{FeatureEncoder, Matrix};
use crate::metrics::{association_matrix, MixedColumn, MixedTable};
use crate::rng::{substream, tag};
use crate::schema::{RawTable, TableSchema};

const HIST_BINS: usize = 10;

/// What an attacker knows: the auxiliary pool, the schema and the target record.
#[derive(Debug, Clone)]
pub struct AttackContext {
    pub schema: TableSchema,
    pub header: Vec<String>,
    pub target: Vec<Option<String>>,
    target_mixed: MixedTable,
    vocab: Vec<Option<HashMap<String, usize>>>,
    ranges: Vec<(f64, f64)>,
    encoder: FeatureEncoder,
    target_encoded: Vec<f64>,
    queries: Vec<Vec<usize>>,
}

impl AttackContext {
    /// `queries` random attribute subsets of size `subset_size` are drawn once per context.
    pub fn new(
        pool: &RawTable,
        schema: &TableSchema,
        target: &[Option<String>],
        n_queries: usize,
        subset_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if target.len() != pool.header.len() {
            return Err(Error::Audit("target row width does not match the pool".into()));
        }
        let pool_mixed = MixedTable::from_raw(pool, schema)?;
        let target_raw = RawTable::new(pool.header.clone(), vec![target.to_vec()])?;
        let target_mixed = MixedTable::from_raw(&target_raw, schema)?;
        let mut vocab = Vec::new();
        let mut ranges = Vec::new();
        for col in &pool_mixed.columns {
            match col {
                MixedColumn::Categorical(v) => {
                    let mut cats: Vec<&str> = v.iter().flatten().map(String::as_str).collect();
                    cats.sort_unstable();
                    cats.dedup();
                    vocab.push(Some(cats.iter().enumerate().map(|(i, c)| (c.to_string(), i)).collect()));
                    ranges.push((0.0, 0.0));
                }
                MixedColumn::Numeric(v) => {
                    let lo = v.iter().flatten().copied().fold(f64::INFINITY, f64::min);
                    let hi = v.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
                    vocab.push(None);
                    ranges.push((lo, hi));
                }
            }
        }
        let encoder = achilles_encoder(&pool_mixed);
        let target_encoded = encoder.transform(&target_mixed)?.data;
        let width = pool.header.len();
        let s = subset_size.clamp(1, width);
        let mut rng = substream(seed, &[tag("queries")]);
        let queries = (0..n_queries)
            .map(|_| {
                let mut q = sample(&mut rng, width, s).into_vec();
                q.sort_unstable();
                q
            })
            .collect();
        Ok(Self {
            schema: schema.clone(),
            header: pool.header.clone(),
            target: target.to_vec(),
            target_mixed,
            vocab,
            ranges,
            encoder,
            target_encoded,
            queries,
        })
    }

    /// Reorders a synthetic table's rows to the pool's column order.
    pub fn align(&self, syn: &RawTable) -> Result<Vec<Vec<Option<String>>>> {
        let idx: Vec<usize> = self.header.iter().map(|h| syn.column_index_or_err(h)).collect::<Result<_>>()?;
        Ok(syn.rows.iter().map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect())
    }

    pub fn mixed(&self, syn: &RawTable) -> Result<MixedTable> {
        MixedTable::from_raw(syn, &self.schema)
    }

    pub fn encode(&self, syn: &MixedTable) -> Result<Matrix> {
        self.encoder.transform(syn)
    }

    pub fn target_encoded(&self) -> &[f64] {
        &self.target_encoded
    }

    pub fn target_mixed(&self) -> &MixedTable {
        &self.target_mixed
    }

    pub fn queries(&self) -> &[Vec<usize>] {
        &self.queries
    }

    /// Mean, median, variance and missing share of numerics; category shares
    /// (pool categories, then other, then missing) of categoricals.
    pub fn naive(&self, syn: &MixedTable) -> Vec<f64> {
        let n = syn.row_count.max(1) as f64;
        let mut out = Vec::new();
        for (k, col) in syn.columns.iter().enumerate() {
            match col {
                MixedColumn::Numeric(v) => {
                    let mut x: Vec<f64> = v.iter().flatten().copied().collect();
                    let missing = (v.len() - x.len()) as f64 / n;
                    if x.is_empty() {
                        out.extend([0.0, 0.0, 0.0, missing]);
                        continue;
                    }
                    x.sort_by(f64::total_cmp);
                    let m = x.len();
                    let mean = x.iter().sum::<f64>() / m as f64;
                    let median = if m % 2 == 1 { x[m / 2] } else { (x[m / 2 - 1] + x[m / 2]) / 2.0 };
                    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
                    out.extend([mean, median, var, missing]);
                }
                MixedColumn::Categorical(_) => {
                    out.extend(self.category_counts(k, col).into_iter().map(|c| c / n));
                }
            }
        }
        out
    }

    fn category_counts(&self, k: usize, col: &MixedColumn) -> Vec<f64> {
        let (Some(vocab), MixedColumn::Categorical(v)) = (&self.vocab[k], col) else {
            unreachable!("categorical column")
        };
        let mut c = vec![0.0; vocab.len() + 2];
        for s in v {
            let slot = match s {
                None => vocab.len() + 1,
                Some(s) => vocab.get(s.as_str()).copied().unwrap_or(vocab.len()),
            };
            c[slot] += 1.0;
        }
        c
    }

    /// Per-column counts: 10 bins over the pool range plus missing for numerics,
    /// category counts for categoricals. Each column's block sums to the row count.
    pub fn hist(&self, syn: &MixedTable) -> Vec<f64> {
        let mut out = Vec::new();
        for (k, col) in syn.columns.iter().enumerate() {
            match col {
                MixedColumn::Numeric(v) => {
                    let (lo, hi) = self.ranges[k];
                    let mut c = [0.0; HIST_BINS + 1];
                    for x in v {
                        let slot = match x {
                            None => HIST_BINS,
                            Some(_) if !(hi > lo) => 0,
                            Some(x) => (((x - lo) / (hi - lo) * HIST_BINS as f64).floor().max(0.0) as usize).min(HIST_BINS - 1),
                        };
                        c[slot] += 1.0;
                    }
                    out.extend(c);
                }
                MixedColumn::Categorical(_) => out.extend(self.category_counts(k, col)),
            }
        }
        out
    }

    /// Upper triangle of the mixed association matrix.
    pub fn corr(&self, syn: &MixedTable) -> Vec<f64> {
        let m = association_matrix(syn);
        let mut out = Vec::new();
        for i in 0..m.len() {
            out.extend_from_slice(&m[i][i + 1..]);
        }
        out
    }

    /// For each query subset, the number of rows equal to the target on it.
    pub fn query_counts(&self, aligned: &[Vec<Option<String>>]) -> Vec<f64> {
        self.queries
            .iter()
            .map(|q| aligned.iter().filter(|r| q.iter().all(|&c| r[c] == self.target[c])).count() as f64)
            .collect()
    }
}
