use rand::Rng;
use serde::{Deserialize, Serialize};

use super::decimal_places;
use crate::error::{Error, Result};

const MAX_DECIMALS: u32 = 8;

/// Quantile bins over a numeric column. Index `n_value_bins()` is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileEncoder {
    edges: Vec<f64>,
    integer: bool,
    decimals: u32,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl PercentileEncoder {
    pub fn fit(values: &[f64], n_bins: usize) -> Result<Self> {
        if n_bins < 1 {
            return Err(Error::Encoding("n_bins must be at least 1".into()));
        }
        if values.is_empty() {
            return Err(Error::Encoding("percentile binning needs at least one value".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("percentile binning input".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut edges: Vec<f64> = (0..=n_bins)
            .map(|i| quantile(&sorted, i as f64 / n_bins as f64))
            .collect();
        edges.dedup();
        let integer = values.iter().all(|v| v.fract() == 0.0 && v.abs() < 9.0e15);
        let decimals = values.iter().map(|&v| decimal_places(v)).max().unwrap_or(0).min(MAX_DECIMALS);
        Ok(Self { edges, integer, decimals })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_value_bins(&self) -> u32 {
        (self.edges.len().max(2) - 1) as u32
    }

    pub fn missing_index(&self) -> u32 {
        self.n_value_bins()
    }

    pub fn cardinality(&self) -> u32 {
        self.n_value_bins() + 1
    }

    pub fn encode(&self, value: Option<f64>) -> u32 {
        let Some(v) = value else { return self.missing_index() };
        let n = self.n_value_bins() as usize;
        let upto = self.edges.partition_point(|&e| e <= v);
        upto.saturating_sub(1).min(n - 1) as u32
    }

    pub fn decode<R: Rng + ?Sized>(&self, index: u32, rng: &mut R) -> Result<Option<String>> {
        if index == self.missing_index() {
            return Ok(None);
        }
        if index > self.missing_index() {
            return Err(Error::Encoding(format!("bin index {index} out of range")));
        }
        if self.edges.len() == 1 {
            return Ok(Some(self.format(self.edges[0])));
        }
        let j = index as usize;
        let (lo, hi) = (self.edges[j], self.edges[j + 1]);
        let last = j + 1 == self.n_value_bins() as usize;
        if self.integer {
            let ilo = lo.ceil();
            let ihi = if last { hi.floor() } else { hi.ceil() - 1.0 };
            if ilo <= ihi {
                let span = (ihi - ilo + 1.0) as u64;
                let k = ilo + rng.random_range(0..span) as f64;
                return Ok(Some(self.format(k)));
            }
        }
        let mut v = lo + rng.random::<f64>() * (hi - lo);
        if v >= hi && !last {
            v = lo;
        }
        let p = 10f64.powi(self.decimals as i32);
        let rounded = (v * p).round() / p;
        if rounded.is_finite() && self.encode(Some(rounded)) == index {
            v = rounded;
        }
        Ok(Some(self.format(v)))
    }

    fn format(&self, v: f64) -> String {
        if self.integer && v.fract() == 0.0 {
            format!("{}", v as i64)
        } else {
            format!("{v}")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn one_to(n: i64) -> Vec<f64> {
        (1..=n).map(|v| v as f64).collect()
    }

    #[test]
    fn midpoint_lands_in_bin_49() {
        // Independent oracle: with h = 999*i/100 the i-th edge is exactly (100 + 999 i)/100,
        // so the bin of v is the number of interior edges that are <= v.
        let enc = PercentileEncoder::fit(&one_to(1000), 100).unwrap();
        let v = 500i64;
        let oracle = (1..100).filter(|i| 100 + 999 * i <= 100 * v).count() as u32;
        assert_eq!(oracle, 49);
        assert_eq!(enc.encode(Some(500.0)), oracle);
        for v in [1i64, 2, 11, 12, 250, 999, 1000] {
            let o = (1..100).filter(|i| 100 + 999 * i <= 100 * v).count() as u32;
            assert_eq!(enc.encode(Some(v as f64)), o.min(99), "v={v}");
        }
    }

    #[test]
    fn constant_column_has_one_value_bin() {
        let enc = PercentileEncoder::fit(&[5.0, 5.0, 5.0], 100).unwrap();
        assert_eq!(enc.cardinality(), 2);
        assert_eq!(enc.encode(Some(5.0)), 0);
        assert_eq!(enc.decode(0, &mut substream(0, &[])).unwrap().as_deref(), Some("5"));
    }

    #[test]
    fn boundaries_and_clamping() {
        let enc = PercentileEncoder::fit(&one_to(1000), 100).unwrap();
        assert_eq!(enc.encode(Some(1.0)), 0);
        assert_eq!(enc.encode(Some(1000.0)), 99);
        assert_eq!(enc.encode(Some(-5.0)), 0);
        assert_eq!(enc.encode(Some(1e9)), 99);
        assert_eq!(enc.encode(None), 100);
    }

    #[test]
    fn edges_strictly_increase() {
        let vals: Vec<f64> = (0..500).map(|i| ((i * i) % 37) as f64).collect();
        let enc = PercentileEncoder::fit(&vals, 100).unwrap();
        assert!(enc.edges().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn decode_stays_in_bin() {
        let vals: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin() * 40.0 + 0.5).collect();
        let enc = PercentileEncoder::fit(&vals, 20).unwrap();
        let mut rng = substream(3, &[]);
        for k in 0..enc.cardinality() {
            for _ in 0..50 {
                let s = enc.decode(k, &mut rng).unwrap();
                let v = s.as_deref().map(|s| s.parse::<f64>().unwrap());
                assert_eq!(enc.encode(v), k);
                if let Some(v) = v {
                    let e = enc.edges();
                    let j = k as usize;
                    assert!(v >= e[j] && (v < e[j + 1] || j + 2 == e.len()));
                }
            }
        }
    }

    #[test]
    fn integer_columns_decode_to_integers() {
        let enc = PercentileEncoder::fit(&one_to(1000), 10).unwrap();
        let mut rng = substream(9, &[]);
        for k in 0..10 {
            let s = enc.decode(k, &mut rng).unwrap().unwrap();
            assert!(s.parse::<i64>().is_ok(), "{s}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PercentileEncoder::fit(&[1.0], 0).is_err());
        assert!(PercentileEncoder::fit(&[], 10).is_err());
    }
}
