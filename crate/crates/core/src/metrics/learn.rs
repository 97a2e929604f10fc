//! Small built-in learners: a mixed-type feature encoder, multinomial
//! logistic regression and ridge regression.

use std::collections::HashMap;

use super::{MixedColumn, MixedTable};
use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged matrix rows".into()));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ColumnFeatures {
    /// One slot per kept category, then "other", then missing.
    OneHot { index: HashMap<String, usize>, width: usize },
    /// Scaled value, then a missing indicator.
    Scaled { min: f64, max: f64 },
}

/// One-hot encodes categoricals (with an "other" bucket for unseen or
/// infrequent categories and a missing indicator) and min–max scales numerics.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoder {
    columns: Vec<(usize, ColumnFeatures)>,
    width: usize,
}

impl FeatureEncoder {
    /// Categories beyond `max_categories` (by frequency) fall into "other".
    pub fn fit(table: &MixedTable, exclude: &[usize], max_categories: usize) -> Self {
        let mut columns = Vec::new();
        let mut width = 0;
        for (k, col) in table.columns.iter().enumerate() {
            if exclude.contains(&k) {
                continue;
            }
            let f = match col {
                MixedColumn::Categorical(v) => {
                    let mut counts: HashMap<&str, usize> = HashMap::new();
                    for s in v.iter().flatten() {
                        *counts.entry(s).or_default() += 1;
                    }
                    let mut cats: Vec<(&str, usize)> = counts.into_iter().collect();
                    cats.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                    cats.truncate(max_categories);
                    let index: HashMap<String, usize> =
                        cats.iter().enumerate().map(|(i, (s, _))| (s.to_string(), i)).collect();
                    let w = index.len() + 2;
                    width += w;
                    ColumnFeatures::OneHot { index, width: w }
                }
                MixedColumn::Numeric(v) => {
                    let vals = v.iter().flatten();
                    let min = vals.clone().copied().fold(f64::INFINITY, f64::min);
                    let max = vals.copied().fold(f64::NEG_INFINITY, f64::max);
                    width += 2;
                    ColumnFeatures::Scaled { min, max }
                }
            };
            columns.push((k, f));
        }
        Self { columns, width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn transform(&self, table: &MixedTable) -> Result<Matrix> {
        let mut m = Matrix::zeros(table.row_count, self.width);
        let mut off = 0;
        for (k, f) in &self.columns {
            let col = table
                .columns
                .get(*k)
                .ok_or_else(|| Error::Dimension(format!("table lacks column {k}")))?;
            match (f, col) {
                (ColumnFeatures::OneHot { index, width }, MixedColumn::Categorical(v)) => {
                    for (r, s) in v.iter().enumerate() {
                        let slot = match s {
                            None => width - 1,
                            Some(s) => index.get(s.as_str()).copied().unwrap_or(width - 2),
                        };
                        m.data[r * self.width + off + slot] = 1.0;
                    }
                    off += width;
                }
                (ColumnFeatures::Scaled { min, max }, MixedColumn::Numeric(v)) => {
                    let range = max - min;
                    for (r, x) in v.iter().enumerate() {
                        let at = r * self.width + off;
                        match x {
                            Some(x) if range.is_finite() && range > 0.0 => m.data[at] = (x - min) / range,
                            Some(_) => {}
                            None => m.data[at + 1] = 1.0,
                        }
                    }
                    off += 2;
                }
                _ => return Err(Error::Dimension(format!("column {k} changed type"))),
            }
        }
        Ok(m)
    }
}

/// Multinomial logistic regression trained by full-batch Adam from zero weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    pub classes: usize,
    pub features: usize,
    /// classes × (features + 1); the last column is the intercept.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticParams {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self { l2: 1e-3, epochs: 300, lr: 0.05 }
    }
}

fn softmax_row(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

impl LogisticRegression {
    pub fn fit(x: &Matrix, y: &[usize], classes: usize, p: LogisticParams) -> Result<Self> {
        if x.rows != y.len() || x.rows == 0 {
            return Err(Error::Metric("logistic regression needs matching, non-empty inputs".into()));
        }
        if classes < 2 || y.iter().any(|&c| c >= classes) {
            return Err(Error::Metric("logistic regression needs at least two classes".into()));
        }
        let stride = x.cols + 1;
        let mut model = Self { classes, features: x.cols, weights: vec![0.0; classes * stride] };
        let mut m = vec![0.0; model.weights.len()];
        let mut v = vec![0.0; model.weights.len()];
        let mut grad = vec![0.0; model.weights.len()];
        let mut z = vec![0.0; classes];
        let n = x.rows as f64;
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        for t in 1..=p.epochs {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for r in 0..x.rows {
                let row = x.row(r);
                model.logits_into(row, &mut z);
                softmax_row(&mut z);
                z[y[r]] -= 1.0;
                for c in 0..classes {
                    let g = &mut grad[c * stride..(c + 1) * stride];
                    let d = z[c] / n;
                    for (gi, xi) in g.iter_mut().zip(row) {
                        *gi += d * xi;
                    }
                    g[x.cols] += d;
                }
            }
            for c in 0..classes {
                for j in 0..x.cols {
                    grad[c * stride + j] += p.l2 * model.weights[c * stride + j];
                }
            }
            let (c1, c2) = (1.0 - b1.powi(t as i32), 1.0 - b2.powi(t as i32));
            for i in 0..grad.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                model.weights[i] -= p.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(model)
    }

    fn logits_into(&self, row: &[f64], z: &mut [f64]) {
        let stride = self.features + 1;
        for (c, zc) in z.iter_mut().enumerate() {
            let w = &self.weights[c * stride..(c + 1) * stride];
            *zc = w[self.features] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Row-wise class probabilities.
    pub fn predict_proba(&self, x: &Matrix) -> Vec<Vec<f64>> {
        (0..x.rows)
            .map(|r| {
                let mut z = vec![0.0; self.classes];
                self.logits_into(x.row(r), &mut z);
                softmax_row(&mut z);
                z
            })
            .collect()
    }

    /// Logit of the last class against the first, a monotone score for binary problems.
    pub fn decision(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows)
            .map(|r| {
                let mut z = vec![0.0; self.classes];
                self.logits_into(x.row(r), &mut z);
                z[self.classes - 1] - z[0]
            })
            .collect()
    }
}

/// Ridge regression with an unpenalized intercept, solved in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct Ridge {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

/// Cholesky solve of a symmetric positive definite system.
pub fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Metric("matrix is not positive definite".into()));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Ok(x)
}

impl Ridge {
    pub fn fit(x: &Matrix, y: &[f64], lambda: f64) -> Result<Self> {
        if x.rows != y.len() || x.rows == 0 {
            return Err(Error::Metric("ridge needs matching, non-empty inputs".into()));
        }
        let (n, d) = (x.rows, x.cols);
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v / n as f64;
            }
        }
        let ym = y.iter().sum::<f64>() / n as f64;
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        let mut xc = vec![0.0; d];
        for r in 0..n {
            for (j, v) in x.row(r).iter().enumerate() {
                xc[j] = v - mean[j];
            }
            for i in 0..d {
                b[i] += xc[i] * (y[r] - ym);
                for j in 0..=i {
                    a[i * d + j] += xc[i] * xc[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                a[j * d + i] = a[i * d + j];
            }
            // Constant features get a unit diagonal so the system stays solvable.
            a[i * d + i] += if a[i * d + i] == 0.0 { 1.0 } else { lambda };
        }
        let weights = cholesky_solve(&a, &b, d)?;
        let intercept = ym - weights.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
        Ok(Self { weights, intercept })
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows)
            .map(|r| self.intercept + self.weights.iter().zip(x.row(r)).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}
