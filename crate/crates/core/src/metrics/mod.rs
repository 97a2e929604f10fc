//! Fidelity, utility and overfitting metrics for synthetic tables.

mod dcr;
mod fidelity;
pub mod learn;
mod utility;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use dcr::{dcr, dcr_cdf_integral, DcrSummary, DistanceMode, MixedDistanceSpec};
pub use fidelity::{association_l2, association_matrix, jsd, wasserstein1};
pub use utility::{detection_score, ml_efficiency, MlEfficiency, MlScores, Task};

use crate::error::{Error, Result};
use crate::schema::{parse_datetime, parse_number, ColumnKind, RawTable, TableSchema};

/// A column of a [`MixedTable`].
#[derive(Debug, Clone, PartialEq)]
pub enum MixedColumn {
    Categorical(Vec<Option<String>>),
    Numeric(Vec<Option<f64>>),
}

impl MixedColumn {
    pub fn len(&self) -> usize {
        match self {
            MixedColumn::Categorical(v) => v.len(),
            MixedColumn::Numeric(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Typed view of a raw table: datetimes become epoch seconds and a latlong
/// column becomes two numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedTable {
    pub names: Vec<String>,
    pub columns: Vec<MixedColumn>,
    pub row_count: usize,
}

fn timestamp(s: &str) -> Option<f64> {
    parse_datetime(s).map(|(dt, _)| {
        let u = dt.and_utc();
        u.timestamp() as f64 + u.timestamp_subsec_nanos() as f64 * 1e-9
    })
}

impl MixedTable {
    pub fn from_raw(raw: &RawTable, schema: &TableSchema) -> Result<Self> {
        let mut names = Vec::new();
        let mut columns = Vec::new();
        let numeric = |i: usize, f: fn(&str) -> Option<f64>| {
            MixedColumn::Numeric(raw.column(i).map(|c| c.and_then(f)).collect())
        };
        for spec in &schema.columns {
            match spec.kind {
                ColumnKind::Latlong => {
                    let geo = spec
                        .geo
                        .as_ref()
                        .ok_or_else(|| Error::Schema(format!("latlong column '{}' lacks sources", spec.name)))?;
                    for src in [&geo.lat, &geo.lon] {
                        names.push(src.clone());
                        columns.push(numeric(raw.column_index_or_err(src)?, parse_number));
                    }
                }
                kind => {
                    let i = raw.column_index_or_err(&spec.name)?;
                    names.push(spec.name.clone());
                    columns.push(match kind {
                        ColumnKind::Numeric => numeric(i, parse_number),
                        ColumnKind::Datetime => numeric(i, timestamp),
                        _ => MixedColumn::Categorical(raw.column(i).map(|c| c.map(str::to_string)).collect()),
                    });
                }
            }
        }
        Ok(Self { names, columns, row_count: raw.row_count() })
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn select_rows(&self, idx: &[usize]) -> MixedTable {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                MixedColumn::Categorical(v) => MixedColumn::Categorical(idx.iter().map(|&i| v[i].clone()).collect()),
                MixedColumn::Numeric(v) => MixedColumn::Numeric(idx.iter().map(|&i| v[i]).collect()),
            })
            .collect();
        MixedTable { names: self.names.clone(), columns, row_count: idx.len() }
    }
}

/// Mann–Whitney AUC with midranks for ties; `true` labels are positives.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let mut j = k;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[k]] {
            j += 1;
        }
        let mid = (k + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[k..=j].iter().filter(|&&i| labels[i]).count() as f64;
        k = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Accuracy when predicting positive for scores above the median.
pub fn median_threshold_accuracy(scores: &[f64], labels: &[bool]) -> f64 {
    if scores.is_empty() {
        return f64::NAN;
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
    let correct = scores.iter().zip(labels).filter(|(&x, &l)| (x > median) == l).count();
    correct as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub jsd: BTreeMap<String, f64>,
    pub jsd_mean: Option<f64>,
    pub wasserstein: BTreeMap<String, f64>,
    pub wasserstein_mean: Option<f64>,
    pub association_l2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ml_efficiency: Option<MlEfficiency>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dcr_integral: Option<f64>,
}

fn mean(v: &BTreeMap<String, f64>) -> Option<f64> {
    (!v.is_empty()).then(|| v.values().sum::<f64>() / v.len() as f64)
}

/// Full metric suite. The holdout enables ML efficiency (with a target) and the DCR integral.
pub fn evaluate(
    real: &RawTable,
    syn: &RawTable,
    schema: &TableSchema,
    holdout: Option<&RawTable>,
    target: Option<&str>,
    seed: u64,
) -> Result<EvalReport> {
    let r = MixedTable::from_raw(real, schema)?;
    let s = MixedTable::from_raw(syn, schema)?;
    let mut report = EvalReport::default();
    for (k, name) in r.names.iter().enumerate() {
        match (&r.columns[k], &s.columns[k]) {
            (MixedColumn::Categorical(a), MixedColumn::Categorical(b)) => {
                report.jsd.insert(name.clone(), jsd(a, b)?);
            }
            (MixedColumn::Numeric(a), MixedColumn::Numeric(b)) => {
                let a: Vec<f64> = a.iter().flatten().copied().collect();
                let b: Vec<f64> = b.iter().flatten().copied().collect();
                if !a.is_empty() && !b.is_empty() {
                    report.wasserstein.insert(name.clone(), wasserstein1(&a, &b)?);
                }
            }
            _ => unreachable!("same schema"),
        }
    }
    report.jsd_mean = mean(&report.jsd);
    report.wasserstein_mean = mean(&report.wasserstein);
    report.association_l2 = association_l2(&r, &s)?;
    report.detection_auc = match detection_score(&r, &s, seed) {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("detection score skipped: {e}");
            None
        }
    };
    if let Some(h) = holdout {
        let t = MixedTable::from_raw(h, schema)?;
        if let Some(target) = target {
            report.ml_efficiency = Some(ml_efficiency(&r, &s, &t, target)?);
        }
        let spec = MixedDistanceSpec::default();
        let d_syn = dcr(&r, &s, &spec)?;
        let d_test = dcr(&r, &t, &spec)?;
        report.dcr_integral = Some(dcr_cdf_integral(&d_syn, &d_test)?.integral);
    }
    Ok(report)
}
