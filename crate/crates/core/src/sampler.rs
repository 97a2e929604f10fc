//! Sequential sampling, conditional generation and imputation.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{EncodedTable, SubColumn};
use crate::error::{Error, Result};
use crate::model::{ArgnModel, Network, OrderMode, Workspace};
use crate::rng::{substream, tag, StreamRng};
use crate::schema::RawTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub n_rows: usize,
    /// Sub-column permutation; `None` uses the model's training order.
    pub order: Option<Vec<usize>>,
    /// Sub-column index to fixed category index.
    pub conditions: BTreeMap<usize, u32>,
    pub temperature: f64,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn new(n_rows: usize, seed: u64) -> Self {
        Self { n_rows, order: None, conditions: BTreeMap::new(), temperature: 1.0, seed }
    }
}

/// Encoded rows with some cells unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialTable {
    pub sub_columns: Vec<SubColumn>,
    pub rows: Vec<Vec<Option<u32>>>,
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Generation(format!("temperature must be positive and finite, got {t}")))
    }
}

/// Draws an index from logits scaled by `1/temperature`.
fn draw(logits: &[f32], temperature: f64, rng: &mut StreamRng) -> u32 {
    let p = probabilities(logits, temperature);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k as u32;
        }
    }
    p.iter().rposition(|&v| v > 0.0).unwrap_or(0) as u32
}

fn probabilities(logits: &[f32], temperature: f64) -> Vec<f64> {
    let z: Vec<f64> = logits.iter().map(|&l| l as f64 / temperature).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Fills the unknown cells of `known` following `order`.
fn sample_row(
    net: &Network<f32>,
    order: &[usize],
    known: &[Option<u32>],
    temperature: f64,
    rng: &mut StreamRng,
    ws: &mut Workspace<f32>,
) -> Vec<u32> {
    let d = net.n_sub();
    let mut ctx = vec![0.0f32; net.context_width];
    let mut visible = vec![false; d];
    let mut out = vec![0u32; d];
    for &i in order {
        let v = match known[i] {
            Some(v) => v,
            None => {
                let logits = net.logits_with_visible(&ctx, |j| visible[j], i, ws);
                draw(&logits, temperature, rng)
            }
        };
        out[i] = v;
        let off = net.offsets[i];
        ctx[off..off + net.sizes[i].embedding].copy_from_slice(net.embedding(i, v));
        visible[i] = true;
    }
    out
}

/// Exact conditional distribution of sub-column `i` given the known cells.
pub fn conditional_probabilities(
    model: &ArgnModel,
    known: &[Option<u32>],
    i: usize,
    temperature: f64,
) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    let net = &model.network;
    if known.len() != net.n_sub() || i >= net.n_sub() {
        return Err(Error::Dimension("known cells do not match the model".into()));
    }
    let mut ctx = vec![0.0f32; net.context_width];
    for (j, v) in known.iter().enumerate() {
        if let Some(v) = v {
            if j == i {
                continue;
            }
            let off = net.offsets[j];
            ctx[off..off + net.sizes[j].embedding].copy_from_slice(net.embedding(j, *v));
        }
    }
    let mut ws = Workspace::new(net);
    let logits = net.logits_with_visible(&ctx, |j| j != i && known[j].is_some(), i, &mut ws);
    Ok(probabilities(&logits, temperature))
}

fn row_rng(seed: u64, row: usize) -> StreamRng {
    substream(seed, &[tag("row"), row as u64])
}

pub fn generate(model: &ArgnModel, req: &GenerationRequest) -> Result<EncodedTable> {
    check_temperature(req.temperature)?;
    let net = &model.network;
    let d = net.n_sub();
    let base = match &req.order {
        Some(o) => o.clone(),
        None => model.fixed_order.clone(),
    };
    crate::model::OrderPlan::new(base.clone(), d)?;
    let mut known = vec![None; d];
    for (&i, &v) in &req.conditions {
        if i >= d {
            return Err(Error::Generation(format!("condition on unknown sub-column {i}")));
        }
        if v >= net.cardinalities[i] {
            return Err(Error::Generation(format!(
                "condition value {v} out of range for sub-column '{}'",
                model.sub_columns[i].name
            )));
        }
        known[i] = Some(v);
    }
    let mut order: Vec<usize> = base.iter().copied().filter(|&i| known[i].is_some()).collect();
    order.extend(base.iter().copied().filter(|&i| known[i].is_none()));
    if model.order_mode == OrderMode::Fixed && order != model.fixed_order {
        return Err(Error::Generation(
            "model was trained in fixed order; it cannot sample in a different order".into(),
        ));
    }
    let rows: Vec<Vec<u32>> = (0..req.n_rows)
        .into_par_iter()
        .map_init(
            || Workspace::new(net),
            |ws, r| sample_row(net, &order, &known, req.temperature, &mut row_rng(req.seed, r), ws),
        )
        .collect();
    EncodedTable::new(model.sub_columns.clone(), rows.concat()).or_else(|e| {
        if req.n_rows == 0 {
            Ok(EncodedTable { sub_columns: model.sub_columns.clone(), data: Vec::new(), row_count: 0 })
        } else {
            Err(e)
        }
    })
}

/// Samples the unknown cells of each row given its observed ones.
pub fn impute(model: &ArgnModel, partial: &PartialTable, temperature: f64, seed: u64) -> Result<EncodedTable> {
    check_temperature(temperature)?;
    if model.order_mode != OrderMode::AnyOrder {
        return Err(Error::Generation("imputation needs a model trained in any-order mode".into()));
    }
    if partial.sub_columns != model.sub_columns {
        return Err(Error::Dimension("partial table does not match the model".into()));
    }
    let net = &model.network;
    for row in &partial.rows {
        if row.len() != net.n_sub() {
            return Err(Error::Dimension("partial row has the wrong width".into()));
        }
        for (v, &c) in row.iter().zip(&net.cardinalities) {
            if matches!(v, Some(x) if *x >= c) {
                return Err(Error::Encoding(format!("observed index {} out of range", v.unwrap())));
            }
        }
    }
    let rows: Vec<Vec<u32>> = partial
        .rows
        .par_iter()
        .enumerate()
        .map_init(
            || Workspace::new(net),
            |ws, (r, known)| {
                let mut order: Vec<usize> = (0..known.len()).filter(|&i| known[i].is_some()).collect();
                order.extend((0..known.len()).filter(|&i| known[i].is_none()));
                sample_row(net, &order, known, temperature, &mut row_rng(seed, r), ws)
            },
        )
        .collect();
    Ok(EncodedTable { sub_columns: model.sub_columns.clone(), data: rows.concat(), row_count: partial.rows.len() })
}

/// Generates and decodes back to raw columns.
pub fn synthesize(model: &ArgnModel, req: &GenerationRequest) -> Result<RawTable> {
    let encoded = generate(model, req)?;
    model.encoders.decode_table(&encoded, &mut substream(req.seed, &[tag("decode")]))
}

/// Encodes `column=value` pairs into sub-column conditions. An empty value means missing.
pub fn encode_conditions(model: &ArgnModel, pairs: &[(String, String)]) -> Result<BTreeMap<usize, u32>> {
    let mut out = BTreeMap::new();
    for (col, val) in pairs {
        let v = (!val.is_empty()).then_some(val.as_str());
        for (i, code) in model.encoders.encode_value(col, v)? {
            out.insert(i, code);
        }
    }
    Ok(out)
}
