use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::learn::{FeatureEncoder, LogisticParams, LogisticRegression, Ridge};
use super::{auc, MixedColumn, MixedTable};
use crate::error::{Error, Result};
use crate::rng::{substream, tag};

const MAX_CATEGORIES: usize = 50;
const MIN_DETECTION_ROWS: usize = 100;
const RIDGE_LAMBDA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MlScores {
    Classification { auc: f64, macro_f1: f64 },
    Regression { rmse: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlEfficiency {
    pub task: Task,
    pub target: String,
    /// Trained on synthetic rows, scored on the real test rows.
    pub synthetic: MlScores,
    /// Trained on the real training rows.
    pub baseline: MlScores,
}

/// AUC of a logistic classifier separating real (0) from synthetic (1) rows.
/// The larger table is subsampled so both classes have equal size.
pub fn detection_score(real: &MixedTable, syn: &MixedTable, seed: u64) -> Result<f64> {
    if real.names != syn.names {
        return Err(Error::Metric("tables have different columns".into()));
    }
    let n = real.row_count.min(syn.row_count);
    if n < MIN_DETECTION_ROWS {
        return Err(Error::Metric(format!("detection needs at least {MIN_DETECTION_ROWS} rows per table, got {n}")));
    }
    let mut rng = substream(seed, &[tag("detection")]);
    let mut pick = |rows: usize| {
        let mut idx: Vec<usize> = (0..rows).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx
    };
    let (ri, si) = (pick(real.row_count), pick(syn.row_count));
    let cut = (n as f64 * 0.8).round() as usize;
    let train = concat(&real.select_rows(&ri[..cut]), &syn.select_rows(&si[..cut]));
    let test = concat(&real.select_rows(&ri[cut..]), &syn.select_rows(&si[cut..]));
    let n_test = n - cut;
    if cut == 0 || n_test == 0 {
        return Err(Error::Metric("class imbalance after split".into()));
    }
    let enc = FeatureEncoder::fit(&train, &[], MAX_CATEGORIES);
    let xtr = enc.transform(&train)?;
    let ytr: Vec<usize> = (0..2 * cut).map(|i| usize::from(i >= cut)).collect();
    let model = LogisticRegression::fit(&xtr, &ytr, 2, LogisticParams::default())?;
    let scores = model.decision(&enc.transform(&test)?);
    let labels: Vec<bool> = (0..2 * n_test).map(|i| i >= n_test).collect();
    auc(&scores, &labels)
}

fn concat(a: &MixedTable, b: &MixedTable) -> MixedTable {
    let columns = a
        .columns
        .iter()
        .zip(&b.columns)
        .map(|(x, y)| match (x, y) {
            (MixedColumn::Categorical(x), MixedColumn::Categorical(y)) => {
                MixedColumn::Categorical(x.iter().chain(y).cloned().collect())
            }
            (MixedColumn::Numeric(x), MixedColumn::Numeric(y)) => MixedColumn::Numeric(x.iter().chain(y).copied().collect()),
            _ => unreachable!("same schema"),
        })
        .collect();
    MixedTable { names: a.names.clone(), columns, row_count: a.row_count + b.row_count }
}

fn macro_f1(pred: &[usize], truth: &[usize]) -> f64 {
    let mut stats: BTreeMap<usize, (f64, f64, f64)> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            stats.entry(p).or_default().0 += 1.0;
        } else {
            stats.entry(p).or_default().1 += 1.0;
            stats.entry(t).or_default().2 += 1.0;
        }
    }
    let f1: Vec<f64> = stats
        .values()
        .map(|&(tp, fp, fnn)| if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fnn) })
        .collect();
    f1.iter().sum::<f64>() / f1.len() as f64
}

fn classification_scores(train: &MixedTable, test: &MixedTable, target: usize) -> Result<MlScores> {
    let (MixedColumn::Categorical(ytr), MixedColumn::Categorical(yte)) = (&train.columns[target], &test.columns[target]) else {
        unreachable!("checked by caller")
    };
    // Classes seen in training; unseen test classes get their own ids and are never predicted.
    let mut classes: BTreeMap<Option<&str>, usize> = BTreeMap::new();
    for v in ytr {
        let k = classes.len();
        classes.entry(v.as_deref()).or_insert(k);
    }
    let trained = classes.len();
    if trained < 2 {
        return Err(Error::Metric("classification target has fewer than two classes in training data".into()));
    }
    let ytest: Vec<usize> = yte
        .iter()
        .map(|v| {
            let k = classes.len();
            *classes.entry(v.as_deref()).or_insert(k)
        })
        .collect();
    let ytrain: Vec<usize> = ytr.iter().map(|v| classes[&v.as_deref()]).collect();
    let enc = FeatureEncoder::fit(train, &[target], MAX_CATEGORIES);
    let model = LogisticRegression::fit(&enc.transform(train)?, &ytrain, trained, LogisticParams::default())?;
    let proba = model.predict_proba(&enc.transform(test)?);
    let pred: Vec<usize> = proba
        .iter()
        .map(|p| (0..trained).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a))).unwrap())
        .collect();
    let mut aucs = Vec::new();
    for c in 0..trained {
        let labels: Vec<bool> = ytest.iter().map(|&y| y == c).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            let s: Vec<f64> = proba.iter().map(|p| p[c]).collect();
            aucs.push(auc(&s, &labels)?);
        }
    }
    let auc = if aucs.is_empty() { 0.5 } else { aucs.iter().sum::<f64>() / aucs.len() as f64 };
    Ok(MlScores::Classification { auc, macro_f1: macro_f1(&pred, &ytest) })
}

fn regression_scores(train: &MixedTable, test: &MixedTable, target: usize) -> Result<MlScores> {
    let observed = |t: &MixedTable| -> (MixedTable, Vec<f64>) {
        let MixedColumn::Numeric(y) = &t.columns[target] else { unreachable!("checked by caller") };
        let idx: Vec<usize> = (0..t.row_count).filter(|&i| y[i].is_some()).collect();
        let vals = idx.iter().map(|&i| y[i].unwrap()).collect();
        (t.select_rows(&idx), vals)
    };
    let (tr, ytr) = observed(train);
    let (te, yte) = observed(test);
    if ytr.is_empty() || yte.is_empty() {
        return Err(Error::Metric("regression target is entirely missing".into()));
    }
    let enc = FeatureEncoder::fit(&tr, &[target], MAX_CATEGORIES);
    let model = Ridge::fit(&enc.transform(&tr)?, &ytr, RIDGE_LAMBDA)?;
    let pred = model.predict(&enc.transform(&te)?);
    let mse = pred.iter().zip(&yte).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / yte.len() as f64;
    Ok(MlScores::Regression { rmse: mse.sqrt() })
}

/// Train-synthetic-test-real utility with the real-train baseline alongside.
pub fn ml_efficiency(
    real_train: &MixedTable,
    syn_train: &MixedTable,
    real_test: &MixedTable,
    target: &str,
) -> Result<MlEfficiency> {
    if real_train.names != syn_train.names || real_train.names != real_test.names {
        return Err(Error::Metric("tables have different columns".into()));
    }
    let k = real_train
        .position(target)
        .ok_or_else(|| Error::Metric(format!("unknown target column '{target}'")))?;
    let (task, run): (Task, fn(&MixedTable, &MixedTable, usize) -> Result<MlScores>) = match real_train.columns[k] {
        MixedColumn::Categorical(_) => (Task::Classification, classification_scores),
        MixedColumn::Numeric(_) => (Task::Regression, regression_scores),
    };
    Ok(MlEfficiency {
        task,
        target: target.to_string(),
        synthetic: run(syn_train, real_test, k)?,
        baseline: run(real_train, real_test, k)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn table(rng: &mut crate::rng::StreamRng, n: usize) -> MixedTable {
        let x: Vec<Option<f64>> = (0..n).map(|_| Some(rng.random_range(0.0..1.0))).collect();
        let c: Vec<Option<String>> = x
            .iter()
            .map(|v| Some(if v.unwrap() + rng.random_range(-0.1..0.1) > 0.5 { "hi" } else { "lo" }.to_string()))
            .collect();
        let y: Vec<Option<f64>> = x.iter().map(|v| Some(3.0 * v.unwrap() + 1.0)).collect();
        MixedTable {
            names: vec!["x".into(), "c".into(), "y".into()],
            row_count: n,
            columns: vec![MixedColumn::Numeric(x), MixedColumn::Categorical(c), MixedColumn::Numeric(y)],
        }
    }

    #[test]
    fn detection_null_and_separable() {
        let mut rng = substream(51, &[]);
        let all = table(&mut rng, 2000);
        let a = all.select_rows(&(0..1000).collect::<Vec<_>>());
        let b = all.select_rows(&(1000..2000).collect::<Vec<_>>());
        let null = detection_score(&a, &b, 3).unwrap();
        assert!((null - 0.5).abs() < 0.05, "{null}");
        let garbage = MixedTable {
            names: a.names.clone(),
            row_count: 1000,
            columns: vec![
                MixedColumn::Numeric(vec![Some(0.5); 1000]),
                MixedColumn::Categorical(vec![Some("zz".into()); 1000]),
                MixedColumn::Numeric(vec![Some(0.0); 1000]),
            ],
        };
        assert!(detection_score(&a, &garbage, 3).unwrap() > 0.95);
        let small = a.select_rows(&(0..50).collect::<Vec<_>>());
        assert!(detection_score(&small, &b, 3).is_err());
    }

    #[test]
    fn identical_training_data_matches_baseline() {
        let mut rng = substream(52, &[]);
        let tr = table(&mut rng, 300);
        let te = table(&mut rng, 200);
        for target in ["c", "y"] {
            let m = ml_efficiency(&tr, &tr, &te, target).unwrap();
            assert_eq!(m.synthetic, m.baseline);
        }
        let m = ml_efficiency(&tr, &tr, &te, "y").unwrap();
        let MlScores::Regression { rmse } = m.synthetic else { panic!() };
        assert!(rmse < 1e-2, "{rmse}");
        assert!(ml_efficiency(&tr, &tr, &te, "nope").is_err());
    }

    #[test]
    fn unseen_test_category_is_tolerated() {
        let mut rng = substream(53, &[]);
        let tr = table(&mut rng, 200);
        let mut te = table(&mut rng, 50);
        if let MixedColumn::Categorical(c) = &mut te.columns[1] {
            c[0] = Some("never".into());
        }
        ml_efficiency(&tr, &tr, &te, "c").unwrap();
        ml_efficiency(&tr, &tr, &te, "x").unwrap();
    }

    #[test]
    fn perfect_classifier_f1() {
        assert_eq!(macro_f1(&[0, 1, 0, 1], &[0, 1, 0, 1]), 1.0);
        // class 0: tp 1 fp 0 fn 1 -> 2/3; class 1: tp 1 fp 1 fn 0 -> 2/3
        assert!((macro_f1(&[0, 1, 1], &[0, 0, 1]) - 2.0 / 3.0).abs() < 1e-12);
    }
}
