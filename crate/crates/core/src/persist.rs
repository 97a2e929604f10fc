//! Versioned binary model files.
//!
//! Layout: `ARGN`, u32 format version, u64 header length, JSON header,
//! then little-endian f32 weights (per sub-column: E, W, b, V, c).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discretize::{SubColumn, TableEncoder};
use crate::error::{Error, Result};
use crate::model::{compute_layer_sizes, ArgnModel, LayerSizes, Network, OrderMode, TrainConfig, TrainingMeta};

pub const MAGIC: &[u8; 4] = b"ARGN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    encoders: TableEncoder,
    sub_columns: Vec<SubColumn>,
    cardinalities: Vec<u32>,
    layer_sizes: Vec<LayerSizes>,
    order_mode: OrderMode,
    fixed_order: Vec<usize>,
    train_config: TrainConfig,
    training_meta: TrainingMeta,
}

pub fn write_model<W: Write>(model: &ArgnModel, mut w: W) -> Result<()> {
    let header = Header {
        encoders: model.encoders.clone(),
        sub_columns: model.sub_columns.clone(),
        cardinalities: model.network.cardinalities.clone(),
        layer_sizes: model.network.sizes.clone(),
        order_mode: model.order_mode,
        fixed_order: model.fixed_order.clone(),
        train_config: model.train_config.clone(),
        training_meta: model.meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + 4 * model.network.n_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in &model.network.params {
        for v in &p.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<ArgnModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::ModelFile("not an ARGN model file".into()));
    }
    if bytes.len() < 16 {
        return Err(Error::ModelFile("truncated model file header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported model format version {version} (this build reads version {FORMAT_VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let end = usize::try_from(hlen)
        .ok()
        .and_then(|h| h.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::ModelFile("truncated model file header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[16..end])
        .map_err(|e| Error::ModelFile(format!("invalid model header: {e}")))?;
    if header.layer_sizes != compute_layer_sizes(&header.cardinalities) {
        return Err(Error::ModelFile("layer sizes do not match the cardinalities".into()));
    }
    if header.encoders.sub_columns() != header.sub_columns
        || header.sub_columns.iter().map(|s| s.cardinality).collect::<Vec<_>>() != header.cardinalities
    {
        return Err(Error::ModelFile("sub-columns do not match the encoders".into()));
    }
    let weights = &bytes[end..];
    if weights.len() % 4 != 0 {
        return Err(Error::ModelFile(format!("weight section has {} trailing bytes", weights.len() % 4)));
    }
    let flat: Vec<f32> = weights.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let network = Network::from_flat(&header.cardinalities, &flat)?;
    let mut fixed = header.fixed_order.clone();
    fixed.sort_unstable();
    if fixed != (0..header.cardinalities.len()).collect::<Vec<_>>() {
        return Err(Error::ModelFile("fixed order is not a permutation of the sub-columns".into()));
    }
    Ok(ArgnModel {
        encoders: header.encoders,
        sub_columns: header.sub_columns,
        network,
        order_mode: header.order_mode,
        fixed_order: header.fixed_order,
        train_config: header.train_config,
        meta: header.training_meta,
    })
}

pub fn save_model(model: &ArgnModel, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ArgnModel> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}
