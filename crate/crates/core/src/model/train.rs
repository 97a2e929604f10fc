//! Teacher-forced training with validation-based early stopping.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{draw_masks, Grads, Network, OrderPlan, Workspace};
use super::{OrderMode, TrainConfig};
use crate::discretize::EncodedTable;
use crate::error::{Error, Result};
use crate::rng::{substream, tag};
use crate::tensor::{clip_in_place, dp_noisy_step, Adam};

/// Rows per gradient chunk. Fixed so results do not depend on thread count.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StopDecision {
    pub improved: bool,
    pub halve_lr: bool,
    pub stop: bool,
}

/// Patience tracker. An epoch improves only if its loss is strictly below
/// the best so far. The LR counter restarts after each halving; the stop
/// counter only restarts on improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience_stop: usize,
    patience_lr: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
    since_lr: usize,
}

impl EarlyStopping {
    pub fn new(patience_stop: usize, patience_lr: usize) -> Self {
        Self { patience_stop, patience_lr, best: f64::INFINITY, best_epoch: 0, since_best: 0, since_lr: 0 }
    }

    pub fn update(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            self.since_lr = 0;
            return StopDecision { improved: true, ..StopDecision::default() };
        }
        self.since_best += 1;
        self.since_lr += 1;
        let halve_lr = self.since_lr >= self.patience_lr;
        if halve_lr {
            self.since_lr = 0;
        }
        StopDecision { improved: false, halve_lr, stop: self.since_best >= self.patience_stop }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub train_rows: usize,
    pub val_rows: usize,
    pub history: Vec<EpochRecord>,
}

/// Mean summed cross-entropy over `rows` under `plan`, dropout off.
pub fn evaluate_loss(net: &Network<f32>, data: &EncodedTable, rows: &[usize], plan: &OrderPlan) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    let partial: Vec<f64> = rows
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut ws = Workspace::new(net);
            idx.iter().map(|&r| net.row_pass(data.row(r), plan, None, None, 1.0, &mut ws)).sum::<f64>()
        })
        .collect();
    partial.iter().sum::<f64>() / rows.len() as f64
}

fn tree_sum_grads(mut parts: Vec<Grads<f32>>) -> Grads<f32> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    for (u, v) in x.iter_mut().zip(y) {
                        *u += *v;
                    }
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().expect("at least one chunk")
}

/// Trains `net` in place and returns the run's history.
pub fn train_network(
    net: &mut Network<f32>,
    data: &EncodedTable,
    cfg: &TrainConfig,
    fixed: &OrderPlan,
) -> Result<TrainingMeta> {
    cfg.validate()?;
    let n = data.row_count;
    if n < 10 {
        return Err(Error::Training(format!("need at least 10 rows, got {n}")));
    }
    if data.cardinalities() != net.cardinalities {
        return Err(Error::Dimension("training data does not match the network".into()));
    }
    let d = net.n_sub();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(cfg.seed, &[tag("split")]));
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1);
    let (val_rows, train_rows) = idx.split_at(n_val);
    let val_rows = val_rows.to_vec();
    let mut train_rows = train_rows.to_vec();
    train_rows.sort_unstable();
    let canonical = OrderPlan::canonical(d);

    let mut opt = Adam::<f32>::new(cfg.initial_lr);
    let mut lr = cfg.initial_lr;
    let mut stopper = EarlyStopping::new(cfg.patience_stop, cfg.patience_lr);
    let mut best_params: Option<Vec<Vec<f32>>> = None;
    let mut meta = TrainingMeta { train_rows: train_rows.len(), val_rows: val_rows.len(), ..Default::default() };

    for epoch in 1..=cfg.max_epochs {
        let mut perm = train_rows.clone();
        perm.shuffle(&mut substream(cfg.seed, &[tag("epoch"), epoch as u64]));
        let mut epoch_loss = 0.0;
        for (bi, batch) in perm.chunks(cfg.batch_size).enumerate() {
            let plan = match cfg.order_mode {
                OrderMode::AnyOrder => {
                    OrderPlan::random(d, &mut substream(cfg.seed, &[tag("order"), epoch as u64, bi as u64]))
                }
                OrderMode::Fixed => fixed.clone(),
            };
            let scale = 1.0 / batch.len() as f32;
            let net_ref = &*net;
            let parts: Vec<(Grads<f32>, f64)> = batch
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(ci, rows)| {
                    let mut g = net_ref.zero_grads();
                    let mut ex = if cfg.dp.enabled { Some(net_ref.zero_grads()) } else { None };
                    let mut ws = Workspace::new(net_ref);
                    let mut loss = 0.0;
                    for (k, &r) in rows.iter().enumerate() {
                        let pos = (ci * CHUNK + k) as u64;
                        let mut rng = substream(cfg.seed, &[tag("dropout"), epoch as u64, bi as u64, pos]);
                        let masks = draw_masks::<f32>(&net_ref.sizes, cfg.dropout_rate, &mut rng);
                        let masks = (cfg.dropout_rate > 0.0).then_some(masks.as_slice());
                        match ex.as_mut() {
                            Some(e) => {
                                e.iter_mut().for_each(|v| v.fill(0.0));
                                loss += net_ref.row_pass(data.row(r), &plan, masks, Some(e), 1.0, &mut ws);
                                clip_in_place(e, cfg.dp.clip_norm);
                                for (a, b) in g.iter_mut().zip(e.iter()) {
                                    for (u, v) in a.iter_mut().zip(b) {
                                        *u += *v;
                                    }
                                }
                            }
                            None => {
                                loss += net_ref.row_pass(data.row(r), &plan, masks, Some(&mut g), scale, &mut ws);
                            }
                        }
                    }
                    (g, loss)
                })
                .collect();
            let batch_loss: f64 = parts.iter().map(|p| p.1).sum();
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite training loss at epoch {epoch}, batch {bi} (lr {lr})"
                )));
            }
            epoch_loss += batch_loss;
            let grads = tree_sum_grads(parts.into_iter().map(|p| p.0).collect());
            if cfg.dp.enabled {
                let mut rng = substream(cfg.seed, &[tag("dp-noise"), epoch as u64, bi as u64]);
                dp_noisy_step(&mut net.params, grads, batch.len(), &cfg.dp, lr, &mut rng)?;
            } else {
                for (p, g) in net.params.iter_mut().zip(grads) {
                    p.grad = g;
                }
                opt.step(&mut net.params)
                    .map_err(|e| Error::Training(format!("epoch {epoch}, batch {bi}: {e}")))?;
            }
        }
        let val_loss = evaluate_loss(net, data, &val_rows, &canonical);
        let train_loss = epoch_loss / train_rows.len() as f64;
        meta.history.push(EpochRecord { epoch, train_loss, val_loss, lr });
        meta.epochs_run = epoch;
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.3e}");
        if !cfg.early_stopping {
            continue;
        }
        let decision = stopper.update(epoch, val_loss);
        if decision.improved {
            best_params = Some(net.params.iter().map(|p| p.values.clone()).collect());
        }
        if decision.halve_lr {
            lr *= 0.5;
            opt.lr = lr;
        }
        if decision.stop {
            meta.stopped_early = true;
            break;
        }
    }
    if cfg.early_stopping {
        if let Some(best) = best_params {
            for (p, v) in net.params.iter_mut().zip(best) {
                p.values = v;
            }
        }
        meta.best_epoch = stopper.best_epoch();
        meta.best_val_loss = stopper.best_loss();
    } else {
        let last = meta.history.last().expect("at least one epoch");
        meta.best_epoch = last.epoch;
        meta.best_val_loss = last.val_loss;
    }
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::SubColumn;
    use rand::Rng;

    fn trace(losses: &[f64]) -> (Option<usize>, Vec<usize>, usize) {
        let mut es = EarlyStopping::new(5, 3);
        let mut halvings = Vec::new();
        for (k, &l) in losses.iter().enumerate() {
            let d = es.update(k + 1, l);
            if d.halve_lr {
                halvings.push(k + 1);
            }
            if d.stop {
                return (Some(k + 1), halvings, es.best_epoch());
            }
        }
        (None, halvings, es.best_epoch())
    }

    #[test]
    fn scripted_patience_trace() {
        let (stop, halve, best) = trace(&[1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99]);
        assert_eq!(stop, Some(7));
        assert_eq!(halve, vec![5]);
        assert_eq!(best, 2);
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let (stop, _, best) = trace(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(stop, Some(6));
        assert_eq!(best, 1);
    }

    #[test]
    fn lr_counter_restarts_after_halving() {
        let mut es = EarlyStopping::new(100, 3);
        let halves: Vec<usize> = (1..=10).filter(|&e| es.update(e, if e == 1 { 0.0 } else { 1.0 }).halve_lr).collect();
        assert_eq!(halves, vec![4, 7, 10]);
    }

    fn pair_table(n: usize, seed: u64) -> EncodedTable {
        let mut rng = substream(seed, &[]);
        let subs = vec![
            SubColumn { name: "x1".into(), cardinality: 10, parent: "x1".into() },
            SubColumn { name: "x2".into(), cardinality: 10, parent: "x2".into() },
        ];
        let mut data = Vec::new();
        for _ in 0..n {
            let a: u32 = rng.random_range(0..10);
            data.push(a);
            data.push((a * 3 + 1) % 10);
        }
        EncodedTable::new(subs, data).unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig { batch_size: 32, initial_lr: 0.01, max_epochs: 30, seed: 5, ..TrainConfig::default() }
    }

    fn train(data: &EncodedTable, cfg: &TrainConfig) -> (Network<f32>, TrainingMeta) {
        let mut net = Network::<f32>::init(&data.cardinalities(), &mut substream(cfg.seed, &[])).unwrap();
        let meta = train_network(&mut net, data, cfg, &OrderPlan::canonical(2)).unwrap();
        (net, meta)
    }

    #[test]
    fn learns_a_deterministic_mapping() {
        let data = pair_table(1000, 1);
        let (net, meta) = train(&data, &quick_cfg());
        assert!(meta.best_val_loss < meta.history[0].val_loss);
        let mut ws = Workspace::new(&net);
        let mut ctx = vec![0.0f32; net.context_width];
        for a in 0..10u32 {
            net.embed_row(&[a, 0], &mut ctx);
            let logits = net.logits_with_visible(&ctx, |j| j == 0, 1, &mut ws);
            let arg = (0..10).max_by(|&i, &j| logits[i].total_cmp(&logits[j])).unwrap();
            assert_eq!(arg as u32, (a * 3 + 1) % 10);
        }
    }

    #[test]
    fn restored_weights_have_minimum_val_loss() {
        let data = pair_table(300, 2);
        let cfg = TrainConfig { max_epochs: 40, initial_lr: 0.05, ..quick_cfg() };
        let (net, meta) = train(&data, &cfg);
        let min = meta.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(meta.best_val_loss, min);
        // recompute on the same validation split
        let mut idx: Vec<usize> = (0..300).collect();
        idx.shuffle(&mut substream(cfg.seed, &[tag("split")]));
        let val = &idx[..30];
        let again = evaluate_loss(&net, &data, val, &OrderPlan::canonical(2));
        assert_eq!(again, min);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = pair_table(200, 3);
        let cfg = TrainConfig { max_epochs: 5, ..quick_cfg() };
        let (a, ma) = train(&data, &cfg);
        let (b, mb) = train(&data, &cfg);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
    }

    #[test]
    fn dp_training_runs_and_is_reproducible() {
        let data = pair_table(200, 4);
        let mut cfg = TrainConfig { max_epochs: 3, ..quick_cfg() };
        cfg.dp.enabled = true;
        cfg.dp.clip_norm = 1.0;
        cfg.dp.noise_multiplier = 0.5;
        let (a, _) = train(&data, &cfg);
        let (b, _) = train(&data, &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_rows() {
        let data = pair_table(5, 5);
        let mut net = Network::<f32>::init(&data.cardinalities(), &mut substream(0, &[])).unwrap();
        assert!(train_network(&mut net, &data, &quick_cfg(), &OrderPlan::canonical(2)).is_err());
    }

    #[test]
    fn uniform_model_nll() {
        let subs: Vec<SubColumn> = (0..3)
            .map(|i| SubColumn { name: format!("s{i}"), cardinality: 2, parent: format!("s{i}") })
            .collect();
        let data = EncodedTable::new(subs, vec![0, 1, 0, 1, 1, 0]).unwrap();
        let mut net = Network::<f32>::init(&[2, 2, 2], &mut substream(0, &[])).unwrap();
        for (k, p) in net.params.iter_mut().enumerate() {
            if k % 5 == 3 {
                p.values.fill(0.0);
            }
        }
        let nll = crate::model::negative_log_likelihood(&net, &data, &[2, 0, 1]).unwrap();
        assert!((nll - 3.0 * std::f64::consts::LN_2).abs() < 1e-6);
    }
}
