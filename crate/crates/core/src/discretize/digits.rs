use serde::{Deserialize, Serialize};

use super::decimal_places;
use crate::error::{Error, Result};

const MAX_DECIMALS: u32 = 6;
const SIGN_PLUS: u32 = 0;
const SIGN_MINUS: u32 = 1;
const SIGN_MISSING: u32 = 2;
const DIGIT_MISSING: u32 = 10;

/// Fixed-width decimal digits, most significant first.
///
/// Missing values live on the leading sub-column: the sign slot when
/// negatives exist, otherwise an eleventh category of the first digit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitEncoder {
    signed: bool,
    int_digits: u32,
    decimals: u32,
}

fn magnitude_parts(v: f64, decimals: u32) -> (String, String) {
    let s = format!("{:.*}", decimals as usize, v.abs());
    match s.split_once('.') {
        Some((i, f)) => (i.to_string(), f.to_string()),
        None => (s, String::new()),
    }
}

impl DigitEncoder {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Encoding("digit split needs at least one value".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("digit split input {v}")));
        }
        let decimals = values.iter().map(|&v| decimal_places(v)).max().unwrap_or(0).min(MAX_DECIMALS);
        let int_digits = values
            .iter()
            .map(|&v| {
                let (i, _) = magnitude_parts(v, decimals);
                i.trim_start_matches('0').len().max(1) as u32
            })
            .max()
            .unwrap_or(1);
        let signed = values.iter().any(|&v| v < 0.0);
        Ok(Self { signed, int_digits, decimals })
    }

    pub fn n_digits(&self) -> usize {
        (self.int_digits + self.decimals) as usize
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.n_digits() + 1);
        if self.signed {
            out.push(3);
            out.extend(std::iter::repeat(10).take(self.n_digits()));
        } else {
            out.push(11);
            out.extend(std::iter::repeat(10).take(self.n_digits() - 1));
        }
        out
    }

    pub fn sub_column_names(&self, parent: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.signed {
            out.push(format!("{parent}::sign"));
        }
        let top = self.int_digits as i64 - 1;
        for k in 0..self.n_digits() as i64 {
            out.push(format!("{parent}::e{}", top - k));
        }
        out
    }

    pub fn encode(&self, value: Option<f64>, out: &mut [u32]) -> Result<()> {
        let lead = if self.signed { 1 } else { 0 };
        let Some(v) = value else {
            out.fill(0);
            out[0] = if self.signed { SIGN_MISSING } else { DIGIT_MISSING };
            return Ok(());
        };
        let (int, frac) = magnitude_parts(v, self.decimals);
        let int = int.trim_start_matches('0');
        if int.len() > self.int_digits as usize {
            return Err(Error::Encoding(format!(
                "{v} needs more than {} integer digits",
                self.int_digits
            )));
        }
        let pad = self.int_digits as usize - int.len();
        let digits = std::iter::repeat(0u32)
            .take(pad)
            .chain(int.bytes().chain(frac.bytes()).map(|b| (b - b'0') as u32));
        for (slot, d) in out[lead..].iter_mut().zip(digits) {
            *slot = d;
        }
        if self.signed {
            let zero = out[1..].iter().all(|&d| d == 0);
            out[0] = if v < 0.0 && !zero { SIGN_MINUS } else { SIGN_PLUS };
        } else if v < 0.0 && out.iter().any(|&d| d != 0) {
            return Err(Error::Encoding(format!("{v} is negative but the column has no sign")));
        }
        Ok(())
    }

    pub fn decode(&self, codes: &[u32]) -> Result<Option<String>> {
        let (negative, digits) = if self.signed {
            match codes[0] {
                SIGN_MISSING => return Ok(None),
                SIGN_PLUS => (false, &codes[1..]),
                SIGN_MINUS => (true, &codes[1..]),
                c => return Err(Error::Encoding(format!("sign index {c} out of range"))),
            }
        } else {
            if codes[0] == DIGIT_MISSING {
                return Ok(None);
            }
            (false, codes)
        };
        if let Some(d) = digits.iter().find(|&&d| d > 9) {
            return Err(Error::Encoding(format!("digit index {d} out of range")));
        }
        let to_char = |d: &u32| char::from(b'0' + *d as u8);
        let (ip, fp) = digits.split_at(self.int_digits as usize);
        let int: String = ip.iter().map(to_char).collect();
        let frac: String = fp.iter().map(to_char).collect();
        let int = match int.trim_start_matches('0') {
            "" => "0",
            s => s,
        };
        let frac = frac.trim_end_matches('0');
        let mut s = String::new();
        if negative && (int != "0" || !frac.is_empty()) {
            s.push('-');
        }
        s.push_str(int);
        if !frac.is_empty() {
            s.push('.');
            s.push_str(frac);
        }
        Ok(Some(s))
    }
}
