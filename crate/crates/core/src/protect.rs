//! Rare-category replacement and extreme-value clipping, applied to raw
//! columns before encoders are fitted.

use std::collections::HashMap;
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, tag};
use crate::schema::{parse_datetime, parse_number, ColumnKind, RawTable, TableSchema};

pub const RARE_TOKEN: &str = "_RARE_";

/// A count threshold, either fixed or drawn uniformly per column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdRepr", into = "ThresholdRepr")]
pub enum Threshold {
    Fixed(u32),
    Random { lo: u32, hi: u32 },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThresholdRepr {
    Int(u32),
    Text(String),
}

impl TryFrom<ThresholdRepr> for Threshold {
    type Error = String;

    fn try_from(r: ThresholdRepr) -> std::result::Result<Self, String> {
        match r {
            ThresholdRepr::Int(0) => Err("threshold must be at least 1".into()),
            ThresholdRepr::Int(k) => Ok(Threshold::Fixed(k)),
            ThresholdRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Threshold> for ThresholdRepr {
    fn from(t: Threshold) -> Self {
        match t {
            Threshold::Fixed(k) => ThresholdRepr::Int(k),
            t => ThresholdRepr::Text(t.to_string()),
        }
    }
}

impl std::str::FromStr for Threshold {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim();
        if let Ok(k) = t.parse::<u32>() {
            return ThresholdRepr::Int(k).try_into();
        }
        let inner = t
            .strip_prefix("random(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| format!("expected an integer or random(lo,hi), got '{s}'"))?;
        let (a, b) = inner.split_once(',').ok_or_else(|| format!("bad threshold '{s}'"))?;
        let lo: u32 = a.trim().parse().map_err(|_| format!("bad threshold '{s}'"))?;
        let hi: u32 = b.trim().parse().map_err(|_| format!("bad threshold '{s}'"))?;
        if lo < 1 || lo > hi {
            return Err(format!("threshold range must satisfy 1 <= lo <= hi, got '{s}'"));
        }
        Ok(Threshold::Random { lo, hi })
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Fixed(k) => write!(f, "{k}"),
            Threshold::Random { lo, hi } => write!(f, "random({lo},{hi})"),
        }
    }
}

impl Threshold {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            Threshold::Fixed(k) => k,
            Threshold::Random { lo, hi } => rng.random_range(lo..=hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RareMode {
    Token,
    Resample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueProtectionConfig {
    pub enabled: bool,
    pub rare_min_count: Threshold,
    pub extreme_k: Threshold,
    pub rare_mode: RareMode,
    pub seed: u64,
}

impl Default for ValueProtectionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rare_min_count: Threshold::Fixed(8),
            extreme_k: Threshold::Fixed(8),
            rare_mode: RareMode::Token,
            seed: 0,
        }
    }
}

/// Replaces every value seen fewer than `threshold` times.
pub fn protect_rare_categories<R: Rng + ?Sized>(
    values: &[Option<String>],
    threshold: u32,
    mode: RareMode,
    rng: &mut R,
) -> Vec<Option<String>> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for v in values.iter().flatten() {
        *counts.entry(v.as_str()).or_default() += 1;
    }
    let is_rare = |v: &str| counts[v] < threshold as usize;
    let mut common: Vec<(&str, usize)> =
        counts.iter().filter(|(v, _)| !is_rare(v)).map(|(v, c)| (*v, *c)).collect();
    common.sort();
    let sampler = match mode {
        RareMode::Resample if !common.is_empty() => {
            Some(WeightedIndex::new(common.iter().map(|c| c.1)).expect("positive counts"))
        }
        _ => None,
    };
    values
        .iter()
        .map(|v| match v {
            Some(s) if is_rare(s) => Some(match &sampler {
                Some(w) => common[w.sample(rng)].0.to_string(),
                None => RARE_TOKEN.to_string(),
            }),
            other => other.clone(),
        })
        .collect()
}

/// Clips values beyond the k-th largest and k-th smallest distinct values.
/// Unparseable cells pass through.
pub fn protect_extreme_values(values: &[Option<String>], k: u32, kind: ColumnKind) -> Vec<Option<String>> {
    let key = |s: &str| -> Option<f64> {
        match kind {
            ColumnKind::Numeric => parse_number(s),
            ColumnKind::Datetime => parse_datetime(s).map(|(dt, _)| {
                dt.and_utc().timestamp() as f64 + dt.and_utc().timestamp_subsec_nanos() as f64 * 1e-9
            }),
            _ => None,
        }
    };
    let mut distinct: Vec<(f64, &str)> =
        values.iter().flatten().filter_map(|s| key(s).map(|k| (k, s.as_str()))).collect();
    distinct.sort_by(|a, b| a.0.total_cmp(&b.0));
    distinct.dedup_by(|a, b| a.0 == b.0);
    let k = k.max(1) as usize;
    if distinct.len() < 2 * k {
        return values.to_vec();
    }
    let (lo, lo_s) = distinct[k - 1];
    let (hi, hi_s) = distinct[distinct.len() - k];
    values
        .iter()
        .map(|v| {
            let s = v.as_deref()?;
            Some(match key(s) {
                Some(x) if x > hi => hi_s.to_string(),
                Some(x) if x < lo => lo_s.to_string(),
                _ => s.to_string(),
            })
        })
        .collect()
}

/// Applies both protections column by column according to the schema.
pub fn protect_table(raw: &RawTable, schema: &TableSchema, cfg: &ValueProtectionConfig) -> Result<RawTable> {
    if !cfg.enabled {
        return Ok(raw.clone());
    }
    let mut out = raw.clone();
    for (ci, spec) in schema.columns.iter().enumerate() {
        if spec.kind == ColumnKind::Latlong {
            continue;
        }
        let idx = raw
            .column_index(&spec.name)
            .ok_or_else(|| Error::Schema(format!("column '{}' not found", spec.name)))?;
        let col: Vec<Option<String>> = raw.rows.iter().map(|r| r[idx].clone()).collect();
        let mut rng = substream(cfg.seed, &[tag("value-protection"), ci as u64]);
        let new = match spec.kind {
            ColumnKind::Categorical => {
                let t = cfg.rare_min_count.draw(&mut rng);
                protect_rare_categories(&col, t, cfg.rare_mode, &mut rng)
            }
            ColumnKind::Numeric | ColumnKind::Datetime => {
                let k = cfg.extreme_k.draw(&mut rng);
                protect_extreme_values(&col, k, spec.kind)
            }
            ColumnKind::Latlong => unreachable!(),
        };
        for (row, v) in out.rows.iter_mut().zip(new) {
            row[idx] = v;
        }
    }
    Ok(out)
}
