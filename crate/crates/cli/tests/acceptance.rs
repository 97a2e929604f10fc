//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;

use argn_core::audit::{
    achilles_score, build_shadow_trials, extract_features, permutation_null, run_attack, synthesize_trials,
    top_targets, ArgnGenerator, AttackContext, AttackKind, AuditConfig, LabeledSet, ShadowGenerator,
};
use argn_core::metrics::learn::Matrix;
use argn_core::metrics::{auc, dcr, dcr_cdf_integral, jsd, wasserstein1, MixedDistanceSpec, MixedTable};
use argn_core::model::{compute_layer_sizes, EarlyStopping, Network, OrderPlan, Workspace, PARAMS_PER_SUB};
use argn_core::persist::{read_model, write_model};
use argn_core::pipeline::{fit_model, fit_model_with_schema, RunConfig};
use argn_core::protect::{protect_extreme_values, protect_rare_categories, RareMode};
use argn_core::rng::{substream, StreamRng};
use argn_core::sampler::{conditional_probabilities, synthesize, GenerationRequest};
use argn_core::schema::{infer_schema, write_csv, ColumnKind, RawTable};
use argn_core::tensor::{dot, dp_sgd_step, dropout_mask, sgd_step, DpConfig, ParamTensor};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

// ---------------------------------------------------------------- 1

fn near_kink(n: &Network<f64>, row: &[u32], plan: &OrderPlan, h: f64) -> bool {
    for i in 0..n.n_sub() {
        let ctx = n.masked_context_for(row, &plan.order, i);
        let w = &n.params[i * PARAMS_PER_SUB + 1].values;
        let b = &n.params[i * PARAMS_PER_SUB + 2].values;
        let cw = n.context_width;
        for q in 0..n.sizes[i].regressor {
            if (b[q] + dot(&w[q * cw..(q + 1) * cw], &ctx)).abs() < 20.0 * h {
                return true;
            }
        }
    }
    false
}

fn criterion_gradients() -> Outcome {
    const H: f64 = 1e-3;
    let cards = [3u32, 5, 2, 4];
    let mut rng = substream(1001, &[]);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let mut points = 0;
    let mut attempts = 0;
    while points < 20 {
        attempts += 1;
        if attempts > 1000 {
            return Err("could not find 20 kink-free points".into());
        }
        let mut n = Network::<f64>::init(&cards, &mut rng).map_err(e2s)?;
        // nonzero biases so every parameter group carries signal
        for p in n.params.iter_mut() {
            if p.shape.len() == 1 {
                p.values.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
        }
        let row: Vec<u32> = cards.iter().map(|&c| rng.random_range(0..c)).collect();
        let plan = OrderPlan::random(cards.len(), &mut rng);
        let masks: Vec<Vec<f64>> = n.sizes.iter().map(|s| dropout_mask(s.regressor, 0.25, &mut rng)).collect();
        if near_kink(&n, &row, &plan, H) {
            continue;
        }
        let mut ws = Workspace::new(&n);
        let mut g = n.zero_grads();
        n.row_pass(&row, &plan, Some(&masks), Some(&mut g), 1.0, &mut ws);
        for pi in 0..n.params.len() {
            for k in 0..n.params[pi].len() {
                let orig = n.params[pi].values[k];
                n.params[pi].values[k] = orig + H;
                let up = n.row_pass(&row, &plan, Some(&masks), None, 1.0, &mut ws);
                n.params[pi].values[k] = orig - H;
                let down = n.row_pass(&row, &plan, Some(&masks), None, 1.0, &mut ws);
                n.params[pi].values[k] = orig;
                let num = (up - down) / (2.0 * H);
                worst = worst.max(rel_err(g[pi][k], num));
                checked += 1;
            }
        }
        points += 1;
    }
    ensure(worst < 1e-4, format!("{checked} parameters at 20 points, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 2

fn criterion_causality() -> Outcome {
    let cards = [4u32, 6, 3, 5];
    let mut rng = substream(1002, &[]);
    let n = Network::<f32>::init(&cards, &mut rng).map_err(e2s)?;
    let mut compared = 0;
    for _ in 0..50 {
        let plan = OrderPlan::random(4, &mut rng);
        let row: Vec<u32> = cards.iter().map(|&c| rng.random_range(0..c)).collect();
        for k in 0..4 {
            let i = plan.order[k];
            let base = n.forward_column(&n.masked_context_for(&row, &plan.order, i), i, None).map_err(e2s)?;
            for _ in 0..3 {
                let mut other = row.clone();
                for &j in &plan.order[k + 1..] {
                    other[j] = rng.random_range(0..cards[j]);
                }
                let again = n.forward_column(&n.masked_context_for(&other, &plan.order, i), i, None).map_err(e2s)?;
                let same = base.iter().zip(&again).all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    return Err(format!("order {:?}, sub-column {i}: output changed", plan.order));
                }
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} perturbed forward passes bit-identical over 50 orders"))
}

// ---------------------------------------------------------------- 3

fn tvd(a: &[Option<String>], b: &[Option<String>]) -> f64 {
    let mut m: HashMap<Option<&str>, (f64, f64)> = HashMap::new();
    for v in a {
        m.entry(v.as_deref()).or_default().0 += 1.0 / a.len() as f64;
    }
    for v in b {
        m.entry(v.as_deref()).or_default().1 += 1.0 / b.len() as f64;
    }
    0.5 * m.values().map(|(p, q)| (p - q).abs()).sum::<f64>()
}

fn criterion_learnability() -> Outcome {
    let g = |a: usize| (3 * a + 1) % 10;
    let mut rng = substream(1003, &[]);
    let rows: Vec<Vec<Option<String>>> = (0..3000)
        .map(|_| {
            let a = rng.random_range(0..10);
            vec![Some(format!("a{a}")), Some(format!("b{}", g(a)))]
        })
        .collect();
    let raw = RawTable::new(vec!["x1".into(), "x2".into()], rows).map_err(e2s)?;
    let mut cfg = RunConfig::default().with_seed(3);
    cfg.train.batch_size = 64;
    cfg.train.initial_lr = 1e-2;
    let model = fit_model(&raw, &cfg).map_err(e2s)?;
    let mut correct = 0;
    for a in 0..10 {
        let (_, code) = model.encoders.encode_value("x1", Some(&format!("a{a}"))).map_err(e2s)?[0];
        let p = conditional_probabilities(&model, &[Some(code), None], 1, 1.0).map_err(e2s)?;
        let arg = (0..p.len()).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap();
        let label = match &model.encoders.encoders[1] {
            argn_core::discretize::ColumnEncoder::Categorical(c) => c.decode(arg as u32).ok().flatten(),
            _ => None,
        };
        if label.as_deref() == Some(format!("b{}", g(a)).as_str()) {
            correct += 1;
        }
    }
    let syn = synthesize(&model, &GenerationRequest::new(10_000, 11)).map_err(e2s)?;
    let col = |t: &RawTable, i: usize| -> Vec<Option<String>> { t.rows.iter().map(|r| r[i].clone()).collect() };
    let t1 = tvd(&col(&raw, 0), &col(&syn, 0));
    let t2 = tvd(&col(&raw, 1), &col(&syn, 1));
    ensure(
        correct == 10 && t1 < 0.05 && t2 < 0.05,
        format!("conditional argmax {correct}/10, marginal TVD {t1:.4} / {t2:.4}"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_layer_sizes() -> Outcome {
    // 3 d^0.25, 16 max(1, ln d), d; rounded up
    let expected = [(1u32, 3, 16, 1), (2, 4, 16, 2), (16, 6, 45, 16), (100, 10, 74, 100)];
    let got = compute_layer_sizes(&expected.map(|e| e.0));
    for ((d, e, r, p), s) in expected.iter().zip(&got) {
        if (s.embedding, s.regressor, s.predictor) != (*e, *r, *p as usize) {
            return Err(format!("cardinality {d}: got {s:?}, expected ({e}, {r}, {p})"));
        }
    }
    Ok(format!("{:?}", got.iter().map(|s| (s.embedding, s.regressor, s.predictor)).collect::<Vec<_>>()))
}

// ---------------------------------------------------------------- 5

fn criterion_early_stopping() -> Outcome {
    let trace = [1.0, 0.8, 0.85, 0.9, 0.81, 0.82, 0.95, 0.7];
    let mut es = EarlyStopping::new(5, 3);
    let mut halved = Vec::new();
    let mut stop = None;
    for (k, &loss) in trace.iter().enumerate() {
        let d = es.update(k + 1, loss);
        if d.halve_lr {
            halved.push(k + 1);
        }
        if d.stop {
            stop = Some(k + 1);
            break;
        }
    }
    let best = es.best_epoch();
    ensure(
        stop == Some(7) && halved == vec![5] && best == 2,
        format!("stop {stop:?}, halvings {halved:?}, restored epoch {best}"),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_privacy() -> Outcome {
    let mut rng = substream(1006, &[]);
    // (a) rare categories
    let values: Vec<Option<String>> = (0..2000)
        .map(|_| {
            let k: f64 = rng.random_range(0.0f64..1.0);
            Some(format!("c{}", (k.powi(3) * 60.0) as u32))
        })
        .collect();
    let protected = protect_rare_categories(&values, 8, RareMode::Token, &mut rng);
    let mut before: HashMap<&str, usize> = HashMap::new();
    for v in values.iter().flatten() {
        *before.entry(v).or_default() += 1;
    }
    let mut after: HashMap<&str, usize> = HashMap::new();
    for v in protected.iter().flatten() {
        *after.entry(v).or_default() += 1;
    }
    let rare_before = before.values().filter(|&&c| c < 8).count();
    let bad = after.iter().filter(|(k, &c)| before.contains_key(*k) && c < 8).count();
    if bad > 0 || rare_before == 0 {
        return Err(format!("(a) {bad} surviving categories below 8 ({rare_before} rare before)"));
    }
    // (b) extreme values
    let nums: Vec<f64> = (0..500).map(|_| rng.random_range(-1000.0f64..1000.0).round() / 4.0).collect();
    let strs: Vec<Option<String>> = nums.iter().map(|v| Some(v.to_string())).collect();
    let clipped = protect_extreme_values(&strs, 5, ColumnKind::Numeric);
    let mut distinct = nums.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let out: Vec<f64> = clipped.iter().flatten().map(|s| s.parse().unwrap()).collect();
    let (mn, mx) = (out.iter().copied().fold(f64::INFINITY, f64::min), out.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let (want_min, want_max) = (distinct[4], distinct[distinct.len() - 5]);
    if mn != want_min || mx != want_max {
        return Err(format!("(b) range [{mn}, {mx}], expected [{want_min}, {want_max}]"));
    }
    // (c) DP-SGD without noise is SGD
    let batch = 16;
    let init: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let examples: Vec<Vec<Vec<f64>>> =
        (0..batch).map(|_| vec![(0..6).map(|_| rng.random_range(-3.0..3.0)).collect(), (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()]).collect();
    let mut a = vec![
        ParamTensor::from_values(&[6], init[..6].to_vec()).map_err(e2s)?,
        ParamTensor::from_values(&[4], init[6..].to_vec()).map_err(e2s)?,
    ];
    let mut b = a.clone();
    let quiet = DpConfig { enabled: true, clip_norm: 1e12, noise_multiplier: 0.0, reported_epsilon: None };
    dp_sgd_step(&mut a, examples.clone(), &quiet, 0.05, &mut rng).map_err(e2s)?;
    for ex in &examples {
        for (p, g) in b.iter_mut().zip(ex) {
            for (acc, v) in p.grad.iter_mut().zip(g) {
                *acc += v / batch as f64;
            }
        }
    }
    sgd_step(&mut b, 0.05).map_err(e2s)?;
    let diff = a
        .iter()
        .zip(&b)
        .flat_map(|(x, y)| x.values.iter().zip(&y.values).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max);
    if diff > 1e-6 {
        return Err(format!("(c) DP without noise differs from SGD by {diff:e}"));
    }
    // (c) noise scale: zero gradients, lr 1, so the update is the noise itself
    let dp = DpConfig { enabled: true, clip_norm: 0.7, noise_multiplier: 1.0, reported_epsilon: None };
    let n = 10_000;
    let mut p = vec![ParamTensor::<f64>::zeros(&[n])];
    dp_sgd_step(&mut p, vec![vec![vec![0.0; n]]; batch], &dp, 1.0, &mut rng).map_err(e2s)?;
    let mean = p[0].values.iter().sum::<f64>() / n as f64;
    let sd = (p[0].values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let expect = dp.noise_multiplier * dp.clip_norm / batch as f64;
    ensure(
        (sd / expect - 1.0).abs() <= 0.05,
        format!(
            "(a) {rare_before} rare categories replaced; (b) range [{mn}, {mx}]; (c) SGD gap {diff:.1e}, noise sd {sd:.5} vs {expect:.5}"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn hungarian(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let (mut p, mut way) = (vec![0usize; n + 1], vec![0usize; n + 1]);
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let (mut delta, mut j1) = (f64::INFINITY, 0);
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[p[j] - 1][j - 1]).sum()
}

fn pairwise_auc(s: &[f64], l: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] && !l[j] {
                pairs += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

fn criterion_metrics() -> Outcome {
    let mut rng = substream(1007, &[]);
    let cats = |v: &[&str]| -> Vec<Option<String>> { v.iter().map(|s| Some(s.to_string())).collect() };
    let same = jsd(&cats(&["a", "b", "b", "c"]), &cats(&["c", "b", "a", "b"])).map_err(e2s)?;
    let disjoint = jsd(&cats(&["a", "b"]), &cats(&["c", "d", "e"])).map_err(e2s)?;
    if same != 0.0 || (disjoint - 1.0).abs() > 1e-12 {
        return Err(format!("JSD identical {same}, disjoint {disjoint}"));
    }
    let mut wd_gap: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(2..=20);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..7.0)).collect();
        let lo = a.iter().chain(&b).copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().chain(&b).copied().fold(f64::NEG_INFINITY, f64::max);
        let cost: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| (x - y).abs() / (hi - lo)).collect()).collect();
        let ot = hungarian(&cost) / n as f64;
        wd_gap = wd_gap.max((wasserstein1(&a, &b).map_err(e2s)? - ot).abs());
    }
    if wd_gap > 1e-9 {
        return Err(format!("Wasserstein differs from optimal transport by {wd_gap:e}"));
    }
    let scores: Vec<f64> = (0..200).map(|_| rng.random_range(0..30) as f64 / 3.0).collect();
    let labels: Vec<bool> = (0..200).map(|_| rng.random_bool(0.45)).collect();
    let (fast, slow) = (auc(&scores, &labels).map_err(e2s)?, pairwise_auc(&scores, &labels));
    if fast != slow {
        return Err(format!("AUC {fast} vs pair counting {slow}"));
    }
    let test: Vec<f64> = (0..300).map(|_| rng.random_range(0.05..2.0)).collect();
    let ident = dcr_cdf_integral(&test, &test).map_err(e2s)?.integral;
    let copies = dcr_cdf_integral(&vec![0.0; 300], &test).map_err(e2s)?.integral;
    ensure(
        ident == 0.0 && copies > 0.0,
        format!("JSD 0 / {disjoint}; WD gap {wd_gap:.1e}; AUC {fast} exact; DCR integral {ident} / {copies:.4}"),
    )
}

// ---------------------------------------------------------------- 8

fn mixed_table(n: usize, rng: &mut StreamRng) -> RawTable {
    let regions = ["north", "south", "east", "west", "centre", "islands"];
    let rows = (0..n)
        .map(|_| {
            let r = (rng.random_range(0.0f64..1.0).powi(2) * 6.0) as usize;
            let seg = (r + rng.random_range(0..3)) % 4;
            let age: i64 = (18.0 + rng.random_range(0.0f64..1.0) * 40.0 + rng.random_range(0.0f64..1.0) * 30.0) as i64;
            let income = ((age as f64) * 900.0 * (1.0 + seg as f64 / 3.0) * rng.random_range(0.5f64..1.5) * 100.0).round() / 100.0;
            let score = (rng.random_range(0.0f64..1.0) * 1000.0).round() / 1000.0;
            let day = rng.random_range(0..7000);
            let date = chrono_like(day);
            vec![
                Some(regions[r].to_string()),
                Some(format!("s{seg}")),
                Some(age.to_string()),
                Some(format!("{income}")),
                Some(format!("{score}")),
                Some(date),
            ]
        })
        .collect();
    let header = ["region", "segment", "age", "income", "score", "since"].map(String::from).to_vec();
    RawTable::new(header, rows).unwrap()
}

/// Days after 2000-01-01 as an ISO date, using a 365-day calendar of 12 equal-ish months.
fn chrono_like(day: u32) -> String {
    const LEN: [u32; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    let (year, mut rest) = (2000 + day / 365, day % 365);
    let mut month = 0;
    while rest >= LEN[month] {
        rest -= LEN[month];
        month += 1;
    }
    format!("{year}-{:02}-{:02}", month + 1, rest + 1)
}

fn dcr_integral_for(cfg: &RunConfig, train: &RawTable, test: &RawTable) -> Result<(f64, usize), String> {
    let schema = infer_schema(train, &cfg.overrides).map_err(e2s)?;
    let model = fit_model_with_schema(train, &schema, cfg).map_err(e2s)?;
    let syn = synthesize(&model, &GenerationRequest::new(train.row_count(), 5)).map_err(e2s)?;
    let m = |t: &RawTable| MixedTable::from_raw(t, &schema).map_err(e2s);
    let (tr, sy, te) = (m(train)?, m(&syn)?, m(test)?);
    let spec = MixedDistanceSpec::default();
    let s = dcr_cdf_integral(&dcr(&tr, &sy, &spec).map_err(e2s)?, &dcr(&tr, &te, &spec).map_err(e2s)?).map_err(e2s)?;
    Ok((s.integral, model.meta.epochs_run))
}

fn criterion_dcr_direction() -> Outcome {
    let mut rng = substream(1008, &[]);
    let train = mixed_table(2000, &mut rng);
    let test = mixed_table(2000, &mut rng);
    let mut a = RunConfig::default().with_seed(8);
    a.value_protection.enabled = false;
    a.train.dropout_rate = 0.0;
    a.train.early_stopping = false;
    a.train.max_epochs = 500;
    let b = RunConfig::default().with_seed(8);
    let (ia, ea) = dcr_integral_for(&a, &train, &test)?;
    let (ib, eb) = dcr_integral_for(&b, &train, &test)?;
    ensure(
        ia > ib && ib <= 0.05,
        format!("overfit model {ia:.4} ({ea} epochs) vs default model {ib:.4} ({eb} epochs)"),
    )
}

// ---------------------------------------------------------------- 9

fn audit_table(n: usize, rng: &mut StreamRng) -> RawTable {
    let jobs = ["clerk", "driver", "nurse", "teacher", "cook", "farmer", "pilot", "judge"];
    let rows = (0..n)
        .map(|_| {
            let j = (rng.random_range(0.0f64..1.0).powi(3) * jobs.len() as f64) as usize;
            let age = rng.random_range(18..70) as i64;
            let hours = if rng.random_bool(0.02) { rng.random_range(80..120) } else { rng.random_range(20..50) };
            let married = if rng.random_bool(0.4 + age as f64 / 200.0) { "yes" } else { "no" };
            let pay = (age as f64 * 800.0 + hours as f64 * 300.0 * rng.random_range(0.7f64..1.3)).round();
            vec![
                Some(jobs[j].to_string()),
                Some(age.to_string()),
                Some(hours.to_string()),
                Some(married.to_string()),
                Some(pay.to_string()),
            ]
        })
        .collect();
    RawTable::new(["job", "age", "hours", "married", "pay"].map(String::from).to_vec(), rows).unwrap()
}

struct Verbatim;

impl ShadowGenerator for Verbatim {
    fn generate(&self, train: &RawTable, _: usize, _: u64) -> argn_core::Result<RawTable> {
        Ok(train.clone())
    }
}

fn criterion_membership() -> Outcome {
    let mut rng = substream(1009, &[]);
    let data = audit_table(600, &mut rng);
    let schema = infer_schema(&data, &BTreeMap::new()).map_err(e2s)?;
    let cfg = AuditConfig { n_shadow: 64, shadow_size: 150, seed: 9, ..AuditConfig::default() };
    let scores = achilles_score(&data, &schema, cfg.achilles_k).map_err(e2s)?;
    let targets = top_targets(&scores, 2);
    let pool_idx: Vec<usize> = (0..data.row_count()).filter(|&i| targets.iter().all(|&t| data.rows[t] != data.rows[i])).collect();
    let pool = data.select_rows(&pool_idx);

    let mut run_cfg = RunConfig::default();
    run_cfg.train.batch_size = 32;
    let model_b = ArgnGenerator { schema: schema.clone(), config: run_cfg };

    let mut leak_auc: f64 = 1.0;
    let mut per_attack: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut nulls = Vec::new();
    for (ti, &t) in targets.iter().enumerate() {
        let tcfg = AuditConfig { seed: cfg.seed + ti as u64, ..cfg.clone() };
        let target = &data.rows[t];
        let trials = build_shadow_trials(&pool, target, &tcfg).map_err(e2s)?;
        let ctx = AttackContext::new(&pool, &schema, target, tcfg.n_queries, tcfg.subset_size, tcfg.seed).map_err(e2s)?;

        let leaked = synthesize_trials(&trials, &Verbatim).map_err(e2s)?;
        let r = run_attack(&ctx, &leaked, AttackKind::ClosestL2, t, &tcfg).map_err(e2s)?;
        leak_auc = leak_auc.min(r.auc);

        let sets: Vec<LabeledSet> = synthesize_trials(&trials, &model_b).map_err(e2s)?;
        for kind in AttackKind::ALL {
            let r = run_attack(&ctx, &sets, kind, t, &tcfg).map_err(e2s)?;
            per_attack.entry(format!("{kind:?}")).or_default().push(r.auc);
        }
        let rows: Vec<Vec<f64>> = sets
            .iter()
            .map(|s| extract_features(&ctx, &s.syn, AttackKind::LogisticGh))
            .collect::<Result<_, _>>()
            .map_err(e2s)?;
        let labels: Vec<bool> = sets.iter().map(|s| s.member).collect();
        let x = Matrix::from_rows(&rows).map_err(e2s)?;
        nulls.push(permutation_null(&x, &labels, tcfg.folds, 20, tcfg.seed).map_err(e2s)?);
    }
    let means: Vec<(String, f64)> = per_attack.iter().map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len() as f64)).collect();
    let null = nulls.iter().sum::<f64>() / nulls.len() as f64;
    let in_band = means.iter().all(|(_, a)| (0.35..=0.65).contains(a));
    let detail = means.iter().map(|(k, a)| format!("{k} {a:.3}")).collect::<Vec<_>>().join(", ");
    ensure(
        leak_auc >= 0.9 && in_band && (null - 0.5).abs() <= 0.1,
        format!("targets {targets:?}; planted leak AUC {leak_auc:.3}; protected model: {detail}; null {null:.3}"),
    )
}

// ---------------------------------------------------------------- 10

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_argn")).args(args).env("RUST_LOG", "warn").output().map_err(e2s)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("argn {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn criterion_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let mut rng = substream(1010, &[]);
    write_csv(&mixed_table(400, &mut rng), Path::new(&p("data.csv")), b',').map_err(e2s)?;
    std::fs::write(p("config.json"), r#"{"train": {"max_epochs": 15, "batch_size": 64}}"#).map_err(e2s)?;
    let mut outputs = Vec::new();
    let mut models = Vec::new();
    for run in 0..2 {
        let (m, s) = (p(&format!("model{run}.argn")), p(&format!("syn{run}.csv")));
        run_cli(&["train", "--data", &p("data.csv"), "--config", &p("config.json"), "--out", &m, "--seed", "3"])?;
        run_cli(&["generate", "--model", &m, "-n", "500", "--out", &s, "--seed", "7"])?;
        outputs.push(std::fs::read(&s).map_err(e2s)?);
        models.push(std::fs::read(&m).map_err(e2s)?);
    }
    if outputs[0] != outputs[1] || outputs[0].is_empty() {
        return Err("synthetic CSVs differ between runs".into());
    }
    let model = read_model(models[0].as_slice()).map_err(e2s)?;
    let mut again = Vec::new();
    write_model(&model, &mut again).map_err(e2s)?;
    let reloaded = read_model(again.as_slice()).map_err(e2s)?;
    let bits_equal = model
        .network
        .params
        .iter()
        .zip(&reloaded.network.params)
        .all(|(a, b)| a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    ensure(
        again == models[0] && bits_equal && models[0] == models[1],
        format!("{} byte CSVs identical; {} byte model file round-trips exactly", outputs[0].len(), again.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradients match finite differences", criterion_gradients),
        ("masking causality", criterion_causality),
        ("learnability", criterion_learnability),
        ("layer size heuristics", criterion_layer_sizes),
        ("early stopping trace", criterion_early_stopping),
        ("privacy mechanisms", criterion_privacy),
        ("metric oracles", criterion_metrics),
        ("DCR overfitting direction", criterion_dcr_direction),
        ("membership inference", criterion_membership),
        ("reproducibility", criterion_reproducibility),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS {:>2} {name} ({secs:.1}s): {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1}s): {msg}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
