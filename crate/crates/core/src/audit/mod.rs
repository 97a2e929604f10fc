//! Membership-inference audit: Achilles target selection, shadow trials,
//! aggregate-statistic and distance attacks.

mod achilles;
mod features;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use achilles::{achilles_encoder, achilles_score, achilles_scores_encoded, top_targets};
pub use features::AttackContext;

use crate::error::{Error, Result};
use crate::metrics::learn::{LogisticParams, LogisticRegression, Matrix};
use crate::metrics::{auc, median_threshold_accuracy};
use crate::pipeline::{fit_model_with_schema, RunConfig};
use crate::rng::{substream, tag};
use crate::sampler::{synthesize, GenerationRequest};
use crate::schema::{RawTable, TableSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    NaiveGh,
    HistGh,
    CorrGh,
    LogisticGh,
    ClosestHamming,
    ClosestL2,
    DirectLookup,
    KernelDensity,
    QueryBased,
}

impl AttackKind {
    pub const ALL: [AttackKind; 9] = [
        AttackKind::NaiveGh,
        AttackKind::HistGh,
        AttackKind::CorrGh,
        AttackKind::LogisticGh,
        AttackKind::ClosestHamming,
        AttackKind::ClosestL2,
        AttackKind::DirectLookup,
        AttackKind::KernelDensity,
        AttackKind::QueryBased,
    ];

    /// Attacks that train a meta-classifier on shadow features.
    pub fn is_shadow(self) -> bool {
        matches!(
            self,
            AttackKind::NaiveGh | AttackKind::HistGh | AttackKind::CorrGh | AttackKind::LogisticGh | AttackKind::QueryBased
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub n_shadow: usize,
    pub shadow_size: usize,
    /// Row indices of the targets; empty selects the top `auto_targets` Achilles rows.
    pub target_indices: Vec<usize>,
    pub auto_targets: usize,
    pub attacks: Vec<AttackKind>,
    pub n_queries: usize,
    pub subset_size: usize,
    pub achilles_k: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            n_shadow: 64,
            shadow_size: 200,
            target_indices: Vec::new(),
            auto_targets: 2,
            attacks: AttackKind::ALL.to_vec(),
            n_queries: 50,
            subset_size: 3,
            achilles_k: 5,
            folds: 4,
            seed: 0,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_shadow < 2 || self.n_shadow % 2 != 0 {
            return Err(Error::Config(format!("n_shadow must be even and at least 2, got {}", self.n_shadow)));
        }
        if self.shadow_size < 2 {
            return Err(Error::Config("shadow_size must be at least 2".into()));
        }
        if self.folds < 2 || self.folds * 2 > self.n_shadow {
            return Err(Error::Config(format!("folds must be in [2, n_shadow/2], got {}", self.folds)));
        }
        if self.subset_size == 0 || self.achilles_k == 0 {
            return Err(Error::Config("subset_size and achilles_k must be positive".into()));
        }
        Ok(())
    }
}

/// One shadow training set and whether it contains the target.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowTrial {
    pub data: RawTable,
    pub member: bool,
    pub seed: u64,
}

/// Half the trials append the target to `shadow_size - 1` pool rows, the
/// other half append one more pool row instead.
pub fn build_shadow_trials(pool: &RawTable, target: &[Option<String>], cfg: &AuditConfig) -> Result<Vec<ShadowTrial>> {
    cfg.validate()?;
    if pool.row_count() < cfg.shadow_size {
        return Err(Error::Audit(format!(
            "auxiliary pool has {} rows, shadow_size needs {}",
            pool.row_count(),
            cfg.shadow_size
        )));
    }
    if pool.rows.iter().any(|r| r.as_slice() == target) {
        return Err(Error::Audit("target record is present in the auxiliary pool".into()));
    }
    let mut labels: Vec<bool> = (0..cfg.n_shadow).map(|t| t < cfg.n_shadow / 2).collect();
    labels.shuffle(&mut substream(cfg.seed, &[tag("labels")]));
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(t, member)| {
            let mut rng = substream(cfg.seed, &[tag("trial"), t as u64]);
            let idx = sample(&mut rng, pool.row_count(), cfg.shadow_size).into_vec();
            let mut data = pool.select_rows(&idx[..cfg.shadow_size - 1]);
            data.rows.push(if member { target.to_vec() } else { pool.rows[idx[cfg.shadow_size - 1]].clone() });
            ShadowTrial { data, member, seed: crate::rng::derive_seed(cfg.seed, &[tag("shadow-seed"), t as u64]) }
        })
        .collect())
}

/// Black-box train-and-sample procedure attacked by the audit.
pub trait ShadowGenerator: Sync {
    fn generate(&self, train: &RawTable, n_rows: usize, seed: u64) -> Result<RawTable>;
}

/// The full pipeline (value protection, encoding, training, sampling) under a fixed schema.
pub struct ArgnGenerator {
    pub schema: TableSchema,
    pub config: RunConfig,
}

impl ShadowGenerator for ArgnGenerator {
    fn generate(&self, train: &RawTable, n_rows: usize, seed: u64) -> Result<RawTable> {
        let cfg = self.config.clone().with_seed(seed);
        let model = fit_model_with_schema(train, &self.schema, &cfg)?;
        let mut req = GenerationRequest::new(n_rows, seed);
        req.temperature = cfg.generation.temperature;
        synthesize(&model, &req)
    }
}

/// A synthetic table labelled with its training set's membership.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub syn: RawTable,
    pub member: bool,
}

/// Trains and samples every trial (in parallel, merged in trial order).
pub fn synthesize_trials(trials: &[ShadowTrial], generator: &dyn ShadowGenerator) -> Result<Vec<LabeledSet>> {
    trials
        .par_iter()
        .enumerate()
        .map(|(t, trial)| {
            generator
                .generate(&trial.data, trial.data.row_count(), trial.seed)
                .map(|syn| LabeledSet { syn, member: trial.member })
                .map_err(|e| Error::Audit(format!("shadow trial {t} failed: {e}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub attack: AttackKind,
    pub target: usize,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub auc: f64,
    pub accuracy: f64,
}

impl AttackResult {
    fn new(attack: AttackKind, target: usize, scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        let auc = auc(&scores, &labels)?;
        let accuracy = median_threshold_accuracy(&scores, &labels);
        Ok(Self { attack, target, scores, labels, auc, accuracy })
    }
}

/// Feature vector of one synthetic set for a shadow attack.
pub fn extract_features(ctx: &AttackContext, syn: &RawTable, kind: AttackKind) -> Result<Vec<f64>> {
    let m = ctx.mixed(syn)?;
    Ok(match kind {
        AttackKind::NaiveGh => ctx.naive(&m),
        AttackKind::HistGh => ctx.hist(&m),
        AttackKind::CorrGh => ctx.corr(&m),
        AttackKind::LogisticGh => {
            let mut v = ctx.naive(&m);
            v.extend(ctx.hist(&m));
            v
        }
        AttackKind::QueryBased => ctx.query_counts(&ctx.align(syn)?),
        other => return Err(Error::Audit(format!("{other:?} is not a shadow-feature attack"))),
    })
}

fn standardize(train: &Matrix, test: &Matrix) -> (Matrix, Matrix) {
    let n = train.rows as f64;
    let mut mean = vec![0.0; train.cols];
    let mut sd = vec![0.0; train.cols];
    for r in 0..train.rows {
        for (m, v) in mean.iter_mut().zip(train.row(r)) {
            *m += v / n;
        }
    }
    for r in 0..train.rows {
        for (j, v) in train.row(r).iter().enumerate() {
            sd[j] += (v - mean[j]).powi(2) / n;
        }
    }
    let apply = |m: &Matrix| {
        let mut out = m.clone();
        for r in 0..m.rows {
            for j in 0..m.cols {
                let s = sd[j].sqrt();
                out.data[r * m.cols + j] = if s > 1e-12 { (m.data[r * m.cols + j] - mean[j]) / s } else { 0.0 };
            }
        }
        out
    };
    (apply(train), apply(test))
}

/// Out-of-fold logistic meta-classifier scores with stratified folds.
pub fn meta_classifier_scores(features: &Matrix, labels: &[bool], folds: usize, seed: u64) -> Result<Vec<f64>> {
    if features.rows != labels.len() {
        return Err(Error::Audit("features and labels differ in length".into()));
    }
    let mut fold_of = vec![0usize; labels.len()];
    let mut rng = substream(seed, &[tag("folds")]);
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            fold_of[i] = k % folds;
        }
    }
    let params = LogisticParams { l2: 1e-2, epochs: 300, lr: 0.05 };
    let mut scores = vec![0.0; labels.len()];
    for f in 0..folds {
        let tr: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != f).collect();
        let te: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
        if te.is_empty() {
            continue;
        }
        let (xtr, xte) = standardize(&features.select_rows(&tr), &features.select_rows(&te));
        let ytr: Vec<usize> = tr.iter().map(|&i| usize::from(labels[i])).collect();
        if ytr.iter().all(|&y| y == ytr[0]) {
            return Err(Error::Audit("a training fold holds a single class".into()));
        }
        let model = LogisticRegression::fit(&xtr, &ytr, 2, params)?;
        for (i, s) in te.iter().zip(model.decision(&xte)) {
            scores[*i] = s;
        }
    }
    Ok(scores)
}

/// Shadow-feature attack on labelled synthetic sets.
pub fn run_shadow_attack(
    ctx: &AttackContext,
    sets: &[LabeledSet],
    kind: AttackKind,
    target: usize,
    cfg: &AuditConfig,
) -> Result<AttackResult> {
    let rows: Vec<Vec<f64>> = sets.iter().map(|s| extract_features(ctx, &s.syn, kind)).collect::<Result<_>>()?;
    let x = Matrix::from_rows(&rows)?;
    let labels: Vec<bool> = sets.iter().map(|s| s.member).collect();
    let scores = meta_classifier_scores(&x, &labels, cfg.folds, crate::rng::derive_seed(cfg.seed, &[target as u64]))?;
    AttackResult::new(kind, target, scores, labels)
}

/// Mean AUC of the meta-classifier over `n_perm` random relabellings (the null level).
pub fn permutation_null(features: &Matrix, labels: &[bool], folds: usize, n_perm: usize, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for p in 0..n_perm {
        let mut l = labels.to_vec();
        l.shuffle(&mut substream(seed, &[tag("null"), p as u64]));
        let s = meta_classifier_scores(features, &l, folds, seed)?;
        total += auc(&s, &l)?;
    }
    Ok(total / n_perm as f64)
}

fn kde_log_density(ctx: &AttackContext, syn: &RawTable) -> Result<f64> {
    let m = ctx.encode(&ctx.mixed(syn)?)?;
    if m.rows < 2 {
        return Err(Error::Audit("kernel density needs at least 2 synthetic rows".into()));
    }
    let (n, d) = (m.rows as f64, m.cols);
    let factor = n.powf(-1.0 / (d as f64 + 4.0));
    let h: Vec<f64> = (0..d)
        .map(|j| {
            let mean = (0..m.rows).map(|r| m.row(r)[j]).sum::<f64>() / n;
            let var = (0..m.rows).map(|r| (m.row(r)[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            var.sqrt().max(1e-2) * factor
        })
        .collect();
    let t = ctx.target_encoded();
    let logs: Vec<f64> = (0..m.rows)
        .map(|r| -0.5 * m.row(r).iter().zip(t).zip(&h).map(|((x, y), h)| ((x - y) / h).powi(2)).sum::<f64>())
        .collect();
    let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logs.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
    let norm: f64 = h.iter().map(|h| h.ln()).sum::<f64>() + 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(lse - n.ln() - norm)
}

/// Score of one synthetic set under a distance attack; larger means "member".
pub fn distance_score(ctx: &AttackContext, syn: &RawTable, kind: AttackKind) -> Result<f64> {
    match kind {
        AttackKind::ClosestHamming | AttackKind::DirectLookup => {
            let rows = ctx.align(syn)?;
            let best = rows
                .iter()
                .map(|r| r.iter().zip(&ctx.target).filter(|(a, b)| a != b).count())
                .min()
                .unwrap_or(usize::MAX);
            Ok(if kind == AttackKind::DirectLookup {
                f64::from(u8::from(best == 0))
            } else if best == usize::MAX {
                f64::NEG_INFINITY
            } else {
                -(best as f64)
            })
        }
        AttackKind::ClosestL2 => {
            let m = ctx.encode(&ctx.mixed(syn)?)?;
            let t = ctx.target_encoded();
            Ok(-(0..m.rows)
                .map(|r| m.row(r).iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min))
        }
        AttackKind::KernelDensity => kde_log_density(ctx, syn),
        other => Err(Error::Audit(format!("{other:?} is not a distance attack"))),
    }
}

pub fn run_distance_attack(ctx: &AttackContext, sets: &[LabeledSet], kind: AttackKind, target: usize) -> Result<AttackResult> {
    if sets.len() < 2 {
        return Err(Error::Audit("distance attacks need at least 2 labelled sets".into()));
    }
    let scores: Vec<f64> = sets.iter().map(|s| distance_score(ctx, &s.syn, kind)).collect::<Result<_>>()?;
    AttackResult::new(kind, target, scores, sets.iter().map(|s| s.member).collect())
}

pub fn run_attack(
    ctx: &AttackContext,
    sets: &[LabeledSet],
    kind: AttackKind,
    target: usize,
    cfg: &AuditConfig,
) -> Result<AttackResult> {
    if kind.is_shadow() {
        run_shadow_attack(ctx, sets, kind, target, cfg)
    } else {
        run_distance_attack(ctx, sets, kind, target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetInfo {
    pub index: usize,
    pub achilles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub attack: AttackKind,
    /// Mean over targets.
    pub auc: f64,
    pub accuracy: f64,
    pub n_shadow: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub config: AuditConfig,
    pub targets: Vec<TargetInfo>,
    pub summary: Vec<AttackSummary>,
    pub results: Vec<AttackResult>,
}

/// Full audit of `generator` on `data`: every target is removed from the
/// auxiliary pool, shadow sets are synthesized once and shared by all attacks.
pub fn run_audit(
    data: &RawTable,
    schema: &TableSchema,
    generator: &dyn ShadowGenerator,
    cfg: &AuditConfig,
) -> Result<AuditReport> {
    cfg.validate()?;
    let scores = achilles_score(data, schema, cfg.achilles_k)?;
    let targets = if cfg.target_indices.is_empty() {
        top_targets(&scores, cfg.auto_targets)
    } else {
        cfg.target_indices.clone()
    };
    if targets.is_empty() {
        return Err(Error::Audit("no targets selected".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= data.row_count()) {
        return Err(Error::Audit(format!("target index {bad} is out of range")));
    }
    let pool_idx: Vec<usize> = (0..data.row_count())
        .filter(|&i| !targets.iter().any(|&t| data.rows[t] == data.rows[i]))
        .collect();
    let pool = data.select_rows(&pool_idx);
    let mut results = Vec::new();
    for (ti, &t) in targets.iter().enumerate() {
        let tcfg = AuditConfig { seed: crate::rng::derive_seed(cfg.seed, &[tag("target"), ti as u64]), ..cfg.clone() };
        let target = &data.rows[t];
        log::info!("auditing target row {t} ({} shadow models)", cfg.n_shadow);
        let trials = build_shadow_trials(&pool, target, &tcfg)?;
        let sets = synthesize_trials(&trials, generator)?;
        let ctx = AttackContext::new(&pool, schema, target, cfg.n_queries, cfg.subset_size, tcfg.seed)?;
        for &kind in &cfg.attacks {
            results.push(run_attack(&ctx, &sets, kind, t, &tcfg)?);
        }
    }
    let summary = cfg
        .attacks
        .iter()
        .map(|&a| {
            let r: Vec<&AttackResult> = results.iter().filter(|r| r.attack == a).collect();
            let k = r.len() as f64;
            AttackSummary {
                attack: a,
                auc: r.iter().map(|r| r.auc).sum::<f64>() / k,
                accuracy: r.iter().map(|r| r.accuracy).sum::<f64>() / k,
                n_shadow: cfg.n_shadow,
            }
        })
        .collect();
    Ok(AuditReport {
        config: cfg.clone(),
        targets: targets.iter().map(|&t| TargetInfo { index: t, achilles: scores[t] }).collect(),
        summary,
        results,
    })
}
