use std::collections::{BTreeMap, HashMap};

use super::{MixedColumn, MixedTable};
use crate::error::{Error, Result};

/// Base-2 Jensen–Shannon divergence of two empirical category distributions.
/// Missing cells count as their own category.
pub fn jsd(real: &[Option<String>], syn: &[Option<String>]) -> Result<f64> {
    if real.is_empty() || syn.is_empty() {
        return Err(Error::Metric("JSD of an empty column".into()));
    }
    let mut counts: BTreeMap<Option<&str>, (f64, f64)> = BTreeMap::new();
    for v in real {
        counts.entry(v.as_deref()).or_default().0 += 1.0;
    }
    for v in syn {
        counts.entry(v.as_deref()).or_default().1 += 1.0;
    }
    let (np, nq) = (real.len() as f64, syn.len() as f64);
    let mut d = 0.0;
    for &(cp, cq) in counts.values() {
        let (p, q) = (cp / np, cq / nq);
        let m = (p + q) / 2.0;
        if p > 0.0 {
            d += 0.5 * p * (p / m).log2();
        }
        if q > 0.0 {
            d += 0.5 * q * (q / m).log2();
        }
    }
    Ok(d.clamp(0.0, 1.0))
}

/// 1-Wasserstein distance after min–max scaling both samples by their combined range.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Metric("Wasserstein distance of an empty sample".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Wasserstein input".into()));
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(0.0);
    }
    let scale = |v: &[f64]| {
        let mut s: Vec<f64> = v.iter().map(|x| (x - lo) / (hi - lo)).collect();
        s.sort_by(f64::total_cmp);
        s
    };
    let (sa, sb) = (scale(a), scale(b));
    // Integrate |F_a - F_b| between consecutive points of the merged support.
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = 0.0;
    let mut total = 0.0;
    while i < sa.len() || j < sb.len() {
        let x = match (sa.get(i), sb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (x - prev);
        prev = x;
        while i < sa.len() && sa[i] == x {
            i += 1;
        }
        while j < sb.len() && sb[j] == x {
            j += 1;
        }
    }
    Ok(total)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    }
}

fn correlation_ratio(cats: &[Option<&str>], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.is_empty() {
        return 0.0;
    }
    let my = y.iter().sum::<f64>() / n;
    let total: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut groups: HashMap<Option<&str>, (f64, f64)> = HashMap::new();
    for (c, v) in cats.iter().zip(y) {
        let g = groups.entry(*c).or_default();
        g.0 += v;
        g.1 += 1.0;
    }
    if groups.len() < 2 {
        return 0.0;
    }
    let between: f64 = groups.values().map(|(s, k)| k * (s / k - my).powi(2)).sum();
    (between / total).sqrt().clamp(0.0, 1.0)
}

fn cramers_v(a: &[Option<&str>], b: &[Option<&str>]) -> f64 {
    let mut ia: HashMap<Option<&str>, usize> = HashMap::new();
    let mut ib: HashMap<Option<&str>, usize> = HashMap::new();
    for v in a {
        let k = ia.len();
        ia.entry(*v).or_insert(k);
    }
    for v in b {
        let k = ib.len();
        ib.entry(*v).or_insert(k);
    }
    let (r, c) = (ia.len(), ib.len());
    if r < 2 || c < 2 {
        return 0.0;
    }
    let mut table = vec![0.0; r * c];
    for (x, y) in a.iter().zip(b) {
        table[ia[x] * c + ib[y]] += 1.0;
    }
    let n = a.len() as f64;
    let rows: Vec<f64> = (0..r).map(|i| table[i * c..(i + 1) * c].iter().sum()).collect();
    let cols: Vec<f64> = (0..c).map(|j| (0..r).map(|i| table[i * c + j]).sum()).collect();
    let mut chi2 = 0.0;
    for i in 0..r {
        for j in 0..c {
            let e = rows[i] * cols[j] / n;
            chi2 += (table[i * c + j] - e).powi(2) / e;
        }
    }
    (chi2 / (n * (r.min(c) - 1) as f64)).sqrt().clamp(0.0, 1.0)
}

fn pair(a: &MixedColumn, b: &MixedColumn) -> f64 {
    use MixedColumn::*;
    match (a, b) {
        (Numeric(x), Numeric(y)) => {
            let (u, v): (Vec<f64>, Vec<f64>) =
                x.iter().zip(y).filter_map(|(p, q)| Some(((*p)?, (*q)?))).unzip();
            pearson(&u, &v)
        }
        (Categorical(c), Numeric(y)) | (Numeric(y), Categorical(c)) => {
            let (g, v): (Vec<Option<&str>>, Vec<f64>) =
                c.iter().zip(y).filter_map(|(p, q)| Some((p.as_deref(), (*q)?))).unzip();
            correlation_ratio(&g, &v)
        }
        (Categorical(x), Categorical(y)) => {
            let a: Vec<Option<&str>> = x.iter().map(|v| v.as_deref()).collect();
            let b: Vec<Option<&str>> = y.iter().map(|v| v.as_deref()).collect();
            cramers_v(&a, &b)
        }
    }
}

/// Pearson / correlation ratio / Cramér's V matrix with a unit diagonal.
pub fn association_matrix(t: &MixedTable) -> Vec<Vec<f64>> {
    let k = t.columns.len();
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        m[i][i] = 1.0;
        for j in i + 1..k {
            let v = pair(&t.columns[i], &t.columns[j]);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// Frobenius norm of the difference between the two association matrices.
pub fn association_l2(real: &MixedTable, syn: &MixedTable) -> Result<f64> {
    if real.names != syn.names {
        return Err(Error::Metric("tables have different columns".into()));
    }
    let (a, b) = (association_matrix(real), association_matrix(syn));
    Ok(a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt())
}
