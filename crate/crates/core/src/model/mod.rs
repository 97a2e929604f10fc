//! The flat any-order autoregressive model.

mod network;
mod train;

use serde::{Deserialize, Serialize};

pub use network::{draw_masks, masked_context, Grads, Network, OrderPlan, Workspace, PARAMS_PER_SUB};
pub use train::{evaluate_loss, train_network, EarlyStopping, EpochRecord, StopDecision, TrainingMeta};

use crate::discretize::{EncodedTable, SubColumn, TableEncoder};
use crate::error::{Error, Result};
use crate::tensor::DpConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSizes {
    pub embedding: usize,
    pub regressor: usize,
    pub predictor: usize,
}

/// `e = ceil(3 D^0.25)`, `r = ceil(16 max(1, ln D))`, predictor width `D`.
pub fn compute_layer_sizes(cardinalities: &[u32]) -> Vec<LayerSizes> {
    cardinalities
        .iter()
        .map(|&d| {
            let d = d.max(1) as f64;
            LayerSizes {
                embedding: (3.0 * d.sqrt().sqrt()).ceil() as usize,
                regressor: (16.0 * d.ln().max(1.0)).ceil() as usize,
                predictor: d as usize,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    Fixed,
    AnyOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub patience_stop: usize,
    pub patience_lr: usize,
    pub max_epochs: usize,
    pub dropout_rate: f64,
    pub val_fraction: f64,
    pub order_mode: OrderMode,
    /// Column or sub-column names; only used in fixed mode. Defaults to canonical order.
    pub fixed_order: Option<Vec<String>>,
    pub dp: DpConfig,
    pub seed: u64,
    /// When false the model trains for `max_epochs` without LR halving,
    /// stopping, or restoring the best epoch.
    pub early_stopping: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            initial_lr: 1e-3,
            patience_stop: 5,
            patience_lr: 3,
            max_epochs: 200,
            dropout_rate: 0.25,
            val_fraction: 0.10,
            order_mode: OrderMode::AnyOrder,
            fixed_order: None,
            dp: DpConfig::default(),
            seed: 0,
            early_stopping: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config("initial_lr must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return Err(Error::Config(format!("val_fraction must be in (0, 0.5), got {}", self.val_fraction)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate)));
        }
        if self.max_epochs == 0 || self.patience_stop == 0 || self.patience_lr == 0 {
            return Err(Error::Config("max_epochs and patience values must be positive".into()));
        }
        if self.dp.enabled {
            self.dp.validate()?;
        }
        if self.patience_stop <= self.patience_lr {
            log::warn!(
                "patience_stop ({}) <= patience_lr ({}): the learning rate will never be halved",
                self.patience_stop,
                self.patience_lr
            );
        }
        Ok(())
    }
}

/// Resolves column or sub-column names into a full sub-column permutation.
/// Names cover a prefix of the order; the rest follows in canonical order.
pub fn resolve_order(sub_columns: &[SubColumn], names: &[String]) -> Result<Vec<usize>> {
    let mut order = Vec::with_capacity(sub_columns.len());
    let mut used = vec![false; sub_columns.len()];
    for name in names {
        let name = name.trim();
        let hits: Vec<usize> = match sub_columns.iter().position(|s| s.name == name) {
            Some(i) => vec![i],
            None => (0..sub_columns.len()).filter(|&i| sub_columns[i].parent == name).collect(),
        };
        if hits.is_empty() {
            return Err(Error::InvalidArgument(format!("unknown column or sub-column '{name}' in order")));
        }
        for i in hits {
            if std::mem::replace(&mut used[i], true) {
                return Err(Error::InvalidArgument(format!("'{}' appears twice in order", sub_columns[i].name)));
            }
            order.push(i);
        }
    }
    order.extend((0..sub_columns.len()).filter(|&i| !used[i]));
    Ok(order)
}

/// A trained model together with everything needed to sample and decode.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgnModel {
    pub encoders: TableEncoder,
    pub sub_columns: Vec<SubColumn>,
    pub network: Network<f32>,
    pub order_mode: OrderMode,
    pub fixed_order: Vec<usize>,
    pub train_config: TrainConfig,
    pub meta: TrainingMeta,
}

impl ArgnModel {
    pub fn fit(encoders: TableEncoder, encoded: &EncodedTable, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let sub_columns = encoders.sub_columns();
        if encoded.sub_columns != sub_columns {
            return Err(Error::Dimension("encoded table does not match the encoders".into()));
        }
        let fixed_order = match &cfg.fixed_order {
            Some(names) => resolve_order(&sub_columns, names)?,
            None => (0..sub_columns.len()).collect(),
        };
        let cards = encoded.cardinalities();
        let mut rng = crate::rng::substream(cfg.seed, &[crate::rng::tag("init")]);
        let mut network = Network::<f32>::init(&cards, &mut rng)?;
        let plan = OrderPlan::new(fixed_order.clone(), cards.len())?;
        let meta = train_network(&mut network, encoded, cfg, &plan)?;
        Ok(Self {
            encoders,
            sub_columns,
            network,
            order_mode: cfg.order_mode,
            fixed_order,
            train_config: cfg.clone(),
            meta,
        })
    }

    pub fn sizes(&self) -> &[LayerSizes] {
        &self.network.sizes
    }

    /// Mean over rows of the summed negative log-likelihood under `order`.
    pub fn negative_log_likelihood(&self, encoded: &EncodedTable, order: &[usize]) -> Result<f64> {
        negative_log_likelihood(&self.network, encoded, order)
    }
}

pub fn negative_log_likelihood(net: &Network<f32>, encoded: &EncodedTable, order: &[usize]) -> Result<f64> {
    if encoded.cardinalities() != net.cardinalities {
        return Err(Error::Dimension("rows do not match the model's sub-columns".into()));
    }
    let plan = OrderPlan::new(order.to_vec(), net.n_sub())?;
    let rows: Vec<usize> = (0..encoded.row_count).collect();
    Ok(evaluate_loss(net, encoded, &rows, &plan))
}
