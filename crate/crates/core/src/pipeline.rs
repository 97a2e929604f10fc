//! Run configuration and the end-to-end fit path: infer, protect, encode, train.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audit::AuditConfig;
use crate::discretize::{EncodingParams, TableEncoder};
use crate::error::{Error, Result};
use crate::model::{ArgnModel, TrainConfig};
use crate::protect::{protect_table, ValueProtectionConfig};
use crate::schema::{infer_schema, read_csv, ColumnOverride, RawTable, TableSchema};
use crate::tensor::DpConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub delimiter: char,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { delimiter: ',' }
    }
}

impl DataConfig {
    pub fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .map_err(|_| Error::Config(format!("delimiter '{}' is not a single-byte character", self.delimiter)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationDefaults {
    /// Defaults to the training row count.
    pub n_rows: Option<usize>,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GenerationDefaults {
    fn default() -> Self {
        Self { n_rows: None, temperature: 1.0, seed: 0 }
    }
}

/// Everything `train` and `audit` read from the JSON config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub overrides: BTreeMap<String, ColumnOverride>,
    pub value_protection: ValueProtectionConfig,
    pub encoding: EncodingParams,
    pub train: TrainConfig,
    /// Shorthand for `train.dp`; setting both is an error.
    pub dp: Option<DpConfig>,
    pub generation: GenerationDefaults,
    pub audit: AuditConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(dp) = cfg.dp.take() {
            if cfg.train.dp != DpConfig::default() {
                return Err(Error::Config("dp is set both at top level and in train".into()));
            }
            cfg.train.dp = dp;
        }
        cfg.train.validate()?;
        cfg.audit.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Seeds training, value protection, generation and the audit from one number.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.value_protection.seed = seed;
        self.generation.seed = seed;
        self.audit.seed = seed;
        self
    }

    pub fn read_data(&self, path: impl AsRef<Path>) -> Result<RawTable> {
        read_csv(path, self.data.delimiter_byte()?)
    }
}

/// Infers the schema from `raw` and fits a model.
pub fn fit_model(raw: &RawTable, cfg: &RunConfig) -> Result<ArgnModel> {
    let schema = infer_schema(raw, &cfg.overrides)?;
    fit_model_with_schema(raw, &schema, cfg)
}

/// Fits with a fixed schema, so shadow models of one audit agree on column types.
pub fn fit_model_with_schema(raw: &RawTable, schema: &TableSchema, cfg: &RunConfig) -> Result<ArgnModel> {
    let protected = protect_table(raw, schema, &cfg.value_protection)?;
    let encoders = TableEncoder::fit(schema, &protected, &cfg.encoding)?;
    let encoded = encoders.encode_table(&protected)?;
    log::info!(
        "training on {} rows, {} sub-columns",
        encoded.row_count,
        encoded.sub_columns.len()
    );
    ArgnModel::fit(encoders, &encoded, &cfg.train)
}
