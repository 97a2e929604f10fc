use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MixedColumn, MixedTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    #[default]
    L1,
    L2,
}

/// Mixed-type record distance: 0/1 categorical mismatch, numeric gap scaled by
/// the training range, and 1 when exactly one side is missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MixedDistanceSpec {
    pub mode: DistanceMode,
}

enum Prepared {
    Cat(Vec<Option<u32>>, Vec<Option<u32>>),
    Num(Vec<Option<f64>>, Vec<Option<f64>>),
}

fn intern<'a>(v: &'a [Option<String>], ids: &mut HashMap<&'a str, u32>) -> Vec<Option<u32>> {
    v.iter()
        .map(|x| {
            x.as_deref().map(|s| {
                let k = ids.len() as u32;
                *ids.entry(s).or_insert(k)
            })
        })
        .collect()
}

fn prepare(train: &MixedTable, other: &MixedTable) -> Result<Vec<Prepared>> {
    if train.names != other.names {
        return Err(Error::Metric("tables have different columns".into()));
    }
    train
        .columns
        .iter()
        .zip(&other.columns)
        .map(|(a, b)| match (a, b) {
            (MixedColumn::Categorical(a), MixedColumn::Categorical(b)) => {
                let mut ids: HashMap<&str, u32> = HashMap::new();
                let a = intern(a, &mut ids);
                let b = intern(b, &mut ids);
                Ok(Prepared::Cat(a, b))
            }
            (MixedColumn::Numeric(a), MixedColumn::Numeric(b)) => {
                let lo = a.iter().flatten().copied().fold(f64::INFINITY, f64::min);
                let hi = a.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
                let range = if hi > lo { hi - lo } else { 1.0 };
                let scale = |v: &Vec<Option<f64>>| v.iter().map(|x| x.map(|x| x / range)).collect();
                Ok(Prepared::Num(scale(a), scale(b)))
            }
            _ => Err(Error::Metric("column types differ".into())),
        })
        .collect()
}

/// Per-row distance to the closest training record (exact scan).
pub fn dcr(train: &MixedTable, other: &MixedTable, spec: &MixedDistanceSpec) -> Result<Vec<f64>> {
    let cols = prepare(train, other)?;
    if train.row_count == 0 {
        return Err(Error::Metric("empty training table".into()));
    }
    let l2 = spec.mode == DistanceMode::L2;
    let out = (0..other.row_count)
        .into_par_iter()
        .map(|j| {
            let mut best = f64::INFINITY;
            for i in 0..train.row_count {
                let mut d = 0.0;
                for c in &cols {
                    let t = match c {
                        Prepared::Cat(a, b) => match (a[i], b[j]) {
                            (x, y) if x == y => 0.0,
                            _ => 1.0,
                        },
                        Prepared::Num(a, b) => match (a[i], b[j]) {
                            (Some(x), Some(y)) => (x - y).abs(),
                            (None, None) => 0.0,
                            _ => 1.0,
                        },
                    };
                    d += if l2 { t * t } else { t };
                    if d >= best {
                        break;
                    }
                }
                best = best.min(d);
            }
            if l2 {
                best.sqrt()
            } else {
                best
            }
        })
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcrSummary {
    /// Signed area of CDF_syn − CDF_test on [0, q98]; positive flags risk.
    pub integral: f64,
    /// Smallest test distance where the test CDF reaches 0.98.
    pub q98: f64,
    pub risk: bool,
    /// Merged grid as (distance, cdf_syn, cdf_test).
    pub curve: Vec<(f64, f64, f64)>,
}

fn ecdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

/// Compares train→synthetic and train→holdout DCR distributions.
pub fn dcr_cdf_integral(dcr_syn: &[f64], dcr_test: &[f64]) -> Result<DcrSummary> {
    if dcr_syn.is_empty() || dcr_test.is_empty() {
        return Err(Error::Metric("DCR samples must be non-empty".into()));
    }
    if dcr_syn.iter().chain(dcr_test).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("DCR sample".into()));
    }
    let sort = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (s, t) = (sort(dcr_syn), sort(dcr_test));
    let need = (0.98 * t.len() as f64).ceil() as usize;
    let q98 = t[need.max(1) - 1];
    let mut grid: Vec<f64> = std::iter::once(0.0)
        .chain(s.iter().copied())
        .chain(t.iter().copied())
        .filter(|&d| d <= q98)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let curve: Vec<(f64, f64, f64)> = grid.iter().map(|&d| (d, ecdf(&s, d), ecdf(&t, d))).collect();
    let integral = curve
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].1 - w[0].2, w[1].1 - w[1].2);
            (w[1].0 - w[0].0) * (a + b) / 2.0
        })
        .sum::<f64>();
    Ok(DcrSummary { integral, q98, risk: integral > 0.0, curve })
}
