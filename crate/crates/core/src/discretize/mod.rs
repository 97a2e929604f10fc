//! Reversible mapping between raw columns and discrete sub-columns.

mod categorical;
mod datetime;
mod digits;
mod percentile;
mod quadtile;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use categorical::CategoricalEncoder;
pub use datetime::{DatetimeEncoder, DatetimePart};
pub use digits::DigitEncoder;
pub use percentile::PercentileEncoder;
pub use quadtile::QuadtileEncoder;

use crate::error::{Error, Result};
use crate::schema::{parse_datetime, parse_number, ColumnKind, EncodingKind, RawTable, TableSchema};

/// One discrete model feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubColumn {
    pub name: String,
    pub cardinality: u32,
    pub parent: String,
}

/// Row-major matrix of category indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedTable {
    pub sub_columns: Vec<SubColumn>,
    pub data: Vec<u32>,
    pub row_count: usize,
}

impl EncodedTable {
    pub fn new(sub_columns: Vec<SubColumn>, data: Vec<u32>) -> Result<Self> {
        let width = sub_columns.len();
        if width == 0 {
            return Err(Error::Encoding("encoded table has no sub-columns".into()));
        }
        if data.len() % width != 0 {
            return Err(Error::Dimension(format!(
                "{} cells do not divide into rows of width {width}",
                data.len()
            )));
        }
        let t = Self { row_count: data.len() / width, sub_columns, data };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.width();
        if self.data.len() != self.row_count * w {
            return Err(Error::Dimension("data length does not match row count".into()));
        }
        for (r, row) in self.data.chunks(w).enumerate() {
            for (c, (&v, sc)) in row.iter().zip(&self.sub_columns).enumerate() {
                if v >= sc.cardinality {
                    return Err(Error::Encoding(format!(
                        "row {r}, sub-column {c} ('{}'): index {v} >= cardinality {}",
                        sc.name, sc.cardinality
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.sub_columns.len()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        let w = self.width();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.data.chunks(self.width())
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.sub_columns.iter().map(|s| s.cardinality).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> EncodedTable {
        let mut data = Vec::with_capacity(indices.len() * self.width());
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        EncodedTable { sub_columns: self.sub_columns.clone(), data, row_count: indices.len() }
    }
}

/// Fitted encoder for one schema column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnEncoder {
    Categorical(CategoricalEncoder),
    Percentile(PercentileEncoder),
    Digits(DigitEncoder),
    Datetime(DatetimeEncoder),
    Quadtile(QuadtileEncoder),
}

impl ColumnEncoder {
    pub fn cardinalities(&self) -> Vec<u32> {
        match self {
            Self::Categorical(e) => vec![e.cardinality()],
            Self::Percentile(e) => vec![e.cardinality()],
            Self::Digits(e) => e.cardinalities(),
            Self::Datetime(e) => e.cardinalities(),
            Self::Quadtile(e) => vec![e.cardinality()],
        }
    }

    pub fn sub_column_names(&self, parent: &str) -> Vec<String> {
        match self {
            Self::Categorical(_) | Self::Percentile(_) => vec![parent.to_string()],
            Self::Digits(e) => e.sub_column_names(parent),
            Self::Datetime(e) => e.sub_column_names(parent),
            Self::Quadtile(_) => vec![format!("{parent}::quadkey")],
        }
    }

    pub fn width(&self) -> usize {
        self.cardinalities().len()
    }
}

/// Encoder fitting parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingParams {
    pub n_bins: usize,
    pub min_tile_count: usize,
    pub max_depth: usize,
}

impl Default for EncodingParams {
    fn default() -> Self {
        Self { n_bins: 100, min_tile_count: 100, max_depth: 12 }
    }
}

/// Encoders for every column of a schema, plus the raw header they read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEncoder {
    pub schema: TableSchema,
    pub source_header: Vec<String>,
    pub encoders: Vec<ColumnEncoder>,
}

enum Source {
    Single(usize),
    Pair(usize, usize),
}

impl TableEncoder {
    pub fn fit(schema: &TableSchema, raw: &RawTable, params: &EncodingParams) -> Result<Self> {
        let mut encoders = Vec::with_capacity(schema.columns.len());
        for spec in &schema.columns {
            let enc = match (spec.kind, spec.encoding) {
                (ColumnKind::Categorical, _) => {
                    let i = raw.column_index_or_err(&spec.name)?;
                    ColumnEncoder::Categorical(CategoricalEncoder::fit(raw.column(i)))
                }
                (ColumnKind::Numeric, enc) => {
                    let i = raw.column_index_or_err(&spec.name)?;
                    let vals: Vec<f64> = raw.column(i).flatten().filter_map(parse_number).collect();
                    let numbers_for = |what: &str| {
                        if vals.is_empty() {
                            Err(Error::Encoding(format!(
                                "column '{}': {what} needs at least one numeric value",
                                spec.name
                            )))
                        } else {
                            Ok(())
                        }
                    };
                    if enc == EncodingKind::DigitSplit {
                        numbers_for("digit split")?;
                        ColumnEncoder::Digits(DigitEncoder::fit(&vals)?)
                    } else {
                        numbers_for("percentile binning")?;
                        ColumnEncoder::Percentile(PercentileEncoder::fit(&vals, params.n_bins)?)
                    }
                }
                (ColumnKind::Datetime, _) => {
                    let i = raw.column_index_or_err(&spec.name)?;
                    let vals: Vec<_> = raw.column(i).flatten().filter_map(parse_datetime).collect();
                    ColumnEncoder::Datetime(DatetimeEncoder::fit(&vals).map_err(|e| {
                        Error::Encoding(format!("column '{}': {e}", spec.name))
                    })?)
                }
                (ColumnKind::Latlong, _) => {
                    let geo = spec.geo.as_ref().ok_or_else(|| {
                        Error::Schema(format!("latlong column '{}' lacks source columns", spec.name))
                    })?;
                    let li = raw.column_index_or_err(&geo.lat)?;
                    let oi = raw.column_index_or_err(&geo.lon)?;
                    let pts: Vec<(f64, f64)> = raw
                        .rows
                        .iter()
                        .filter_map(|r| {
                            Some((
                                parse_number(r[li].as_deref()?)?,
                                parse_number(r[oi].as_deref()?)?,
                            ))
                        })
                        .collect();
                    ColumnEncoder::Quadtile(QuadtileEncoder::fit(
                        &pts,
                        params.min_tile_count,
                        params.max_depth,
                    )?)
                }
            };
            encoders.push(enc);
        }
        Ok(Self { schema: schema.clone(), source_header: raw.header.clone(), encoders })
    }

    pub fn sub_columns(&self) -> Vec<SubColumn> {
        let mut out = Vec::new();
        for (spec, enc) in self.schema.columns.iter().zip(&self.encoders) {
            for (name, card) in enc.sub_column_names(&spec.name).into_iter().zip(enc.cardinalities()) {
                out.push(SubColumn { name, cardinality: card, parent: spec.name.clone() });
            }
        }
        out
    }

    /// Global sub-column index range belonging to schema column `col`.
    pub fn sub_column_range(&self, col: usize) -> Range<usize> {
        let start: usize = self.encoders[..col].iter().map(|e| e.width()).sum();
        start..start + self.encoders[col].width()
    }

    fn sources(&self, header: &[String]) -> Result<Vec<Source>> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("column '{name}' not found")))
        };
        self.schema
            .columns
            .iter()
            .map(|spec| match &spec.geo {
                Some(g) => Ok(Source::Pair(find(&g.lat)?, find(&g.lon)?)),
                None => Ok(Source::Single(find(&spec.name)?)),
            })
            .collect()
    }

    pub fn encode_table(&self, raw: &RawTable) -> Result<EncodedTable> {
        let sources = self.sources(&raw.header)?;
        let sub = self.sub_columns();
        let width = sub.len();
        let mut data = vec![0u32; raw.row_count() * width];
        for (r, row) in raw.rows.iter().enumerate() {
            let out = &mut data[r * width..(r + 1) * width];
            let mut off = 0;
            for ((spec, enc), src) in self.schema.columns.iter().zip(&self.encoders).zip(&sources) {
                let w = enc.width();
                let slot = &mut out[off..off + w];
                let res = match (enc, src) {
                    (ColumnEncoder::Quadtile(q), Source::Pair(a, b)) => {
                        q.encode(row[*a].as_deref(), row[*b].as_deref()).map(|k| slot[0] = k)
                    }
                    (_, Source::Single(i)) => encode_cell(enc, row[*i].as_deref(), slot),
                    _ => Err(Error::Schema(format!("column '{}' has mismatched sources", spec.name))),
                };
                res.map_err(|e| Error::Encoding(format!("row {r}, column '{}': {e}", spec.name)))?;
                off += w;
            }
        }
        EncodedTable::new(sub, data)
    }

    /// Encodes a single raw value of column `column` into (sub-column, index) pairs.
    pub fn encode_value(&self, column: &str, value: Option<&str>) -> Result<Vec<(usize, u32)>> {
        let col = self
            .schema
            .position(column)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown column '{column}'")))?;
        let enc = &self.encoders[col];
        let range = self.sub_column_range(col);
        let mut slot = vec![0u32; range.len()];
        match enc {
            ColumnEncoder::Quadtile(q) => {
                let (lat, lon) = match value {
                    None => (None, None),
                    Some(v) => {
                        let (a, b) = v.split_once(';').ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "column '{column}': expected 'lat;lon', got '{v}'"
                            ))
                        })?;
                        (Some(a), Some(b))
                    }
                };
                slot[0] = q.encode(lat, lon)?;
            }
            _ => encode_cell(enc, value, &mut slot).map_err(|_| {
                Error::InvalidArgument(format!(
                    "value '{}' is not in the vocabulary of column '{column}'",
                    value.unwrap_or("")
                ))
            })?,
        }
        Ok(range.zip(slot).collect())
    }

    pub fn decode_table<R: Rng + ?Sized>(&self, encoded: &EncodedTable, rng: &mut R) -> Result<RawTable> {
        let expected = self.sub_columns();
        if encoded.sub_columns != expected {
            return Err(Error::Encoding("encoded table does not match these encoders".into()));
        }
        encoded.validate()?;
        let sources = self.sources(&self.source_header)?;
        let ncols = self.source_header.len();
        let mut rows = Vec::with_capacity(encoded.row_count);
        for codes in encoded.rows() {
            let mut out: Vec<Option<String>> = vec![None; ncols];
            let mut off = 0;
            for (enc, src) in self.encoders.iter().zip(&sources) {
                let w = enc.width();
                let c = &codes[off..off + w];
                match (enc, src) {
                    (ColumnEncoder::Quadtile(q), Source::Pair(a, b)) => {
                        let (lat, lon) = q.decode(c[0], rng)?;
                        out[*a] = lat;
                        out[*b] = lon;
                    }
                    (ColumnEncoder::Categorical(e), Source::Single(i)) => out[*i] = e.decode(c[0])?,
                    (ColumnEncoder::Percentile(e), Source::Single(i)) => out[*i] = e.decode(c[0], rng)?,
                    (ColumnEncoder::Digits(e), Source::Single(i)) => out[*i] = e.decode(c)?,
                    (ColumnEncoder::Datetime(e), Source::Single(i)) => out[*i] = e.decode(c)?,
                    _ => return Err(Error::Schema("mismatched column sources".into())),
                }
                off += w;
            }
            rows.push(out);
        }
        RawTable::new(self.source_header.clone(), rows)
    }
}

fn encode_cell(enc: &ColumnEncoder, cell: Option<&str>, slot: &mut [u32]) -> Result<()> {
    match enc {
        ColumnEncoder::Categorical(e) => {
            slot[0] = e.encode(cell).ok_or_else(|| {
                Error::Encoding(format!("unknown category '{}'", cell.unwrap_or("")))
            })?;
        }
        ColumnEncoder::Percentile(e) => slot[0] = e.encode(cell.and_then(parse_number)),
        ColumnEncoder::Digits(e) => e.encode(cell.and_then(parse_number), slot)?,
        ColumnEncoder::Datetime(e) => e.encode(cell.and_then(parse_datetime).map(|p| p.0), slot)?,
        ColumnEncoder::Quadtile(_) => {
            return Err(Error::Encoding("quadtile columns need two source cells".into()))
        }
    }
    Ok(())
}

/// Number of digits after the decimal point in the shortest round-trip form.
pub(crate) fn decimal_places(v: f64) -> u32 {
    let s = format!("{v}");
    s.split_once('.').map(|(_, f)| f.len() as u32).unwrap_or(0)
}
