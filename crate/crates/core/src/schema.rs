//! Delimited-text ingestion and per-column type inference.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of non-missing cells that must parse for a typed column.
pub const PARSE_THRESHOLD: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Numeric,
    Datetime,
    Latlong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    CategoryMap,
    PercentileBins,
    DigitSplit,
    DatetimeParts,
    Quadtile,
}

/// Source columns of a latlong column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoSource {
    pub lat: String,
    pub lon: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub encoding: EncodingKind,
    pub null_frequency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<ColumnSpec>,
    pub row_count: usize,
}

impl TableSchema {
    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// A table of raw string cells. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl RawTable {
    pub fn new(header: Vec<String>, rows: Vec<Vec<Option<String>>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for h in &header {
            if !seen.insert(h.as_str()) {
                return Err(Error::Schema(format!("duplicate column name '{h}'")));
            }
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != header.len() {
                return Err(Error::Parse {
                    line: i as u64 + 2,
                    message: format!("expected {} fields, got {}", header.len(), r.len()),
                });
            }
        }
        Ok(Self { header, rows })
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column_index_or_err(&self, name: &str) -> Result<usize> {
        self.column_index(name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found")))
    }

    pub fn column(&self, idx: usize) -> impl Iterator<Item = Option<&str>> + Clone + '_ {
        self.rows.iter().map(move |r| r[idx].as_deref())
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> RawTable {
        RawTable {
            header: self.header.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

pub fn read_csv(path: impl AsRef<Path>, delimiter: u8) -> Result<RawTable> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv_from(std::io::BufReader::new(file), delimiter)
}

pub fn read_csv_from<R: Read>(reader: R, delimiter: u8) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .from_reader(reader);
    let mut records = rdr.records();
    let header: Vec<String> = match records.next() {
        Some(rec) => rec.map_err(csv_err)?.iter().map(str::to_string).collect(),
        None => return Err(Error::Parse { line: 1, message: "missing header row".into() }),
    };
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != header.len() {
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", header.len(), rec.len()),
            });
        }
        rows.push(
            rec.iter()
                .map(|c| if c.is_empty() { None } else { Some(c.to_string()) })
                .collect(),
        );
    }
    RawTable::new(header, rows)
}

fn csv_err(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        },
        _ => {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse { line, message: e.to_string() }
        }
    }
}

pub fn write_csv(table: &RawTable, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv_to(table, std::io::BufWriter::new(file), delimiter)
}

pub fn write_csv_to<W: Write>(table: &RawTable, writer: W, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|c| c.as_deref().unwrap_or("")))?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a cell as a finite number.
pub fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses ISO-8601 dates and datetimes. The flag reports whether a time part was present.
pub fn parse_datetime(s: &str) -> Option<(NaiveDateTime, bool)> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some((d.and_hms_opt(0, 0, 0)?, false));
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    for f in FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, f) {
            return Some((dt, true));
        }
    }
    DateTime::parse_from_rfc3339(s).ok().map(|dt| (dt.naive_utc(), true))
}

/// A user override for one column.
///
/// For `kind = latlong` the override key names the new combined column and
/// `lat`/`lon` name the two source columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnOverride {
    pub kind: ColumnKind,
    #[serde(default)]
    pub encoding: Option<EncodingKind>,
    #[serde(default)]
    pub lat: Option<String>,
    #[serde(default)]
    pub lon: Option<String>,
}

fn default_encoding(kind: ColumnKind) -> EncodingKind {
    match kind {
        ColumnKind::Categorical => EncodingKind::CategoryMap,
        ColumnKind::Numeric => EncodingKind::PercentileBins,
        ColumnKind::Datetime => EncodingKind::DatetimeParts,
        ColumnKind::Latlong => EncodingKind::Quadtile,
    }
}

fn check_encoding(name: &str, kind: ColumnKind, enc: EncodingKind) -> Result<()> {
    let ok = match kind {
        ColumnKind::Categorical => enc == EncodingKind::CategoryMap,
        ColumnKind::Numeric => {
            matches!(enc, EncodingKind::PercentileBins | EncodingKind::DigitSplit)
        }
        ColumnKind::Datetime => enc == EncodingKind::DatetimeParts,
        ColumnKind::Latlong => enc == EncodingKind::Quadtile,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Schema(format!("column '{name}': encoding {enc:?} does not fit kind {kind:?}")))
    }
}

fn infer_kind<'a>(cells: impl Iterator<Item = Option<&'a str>> + Clone) -> ColumnKind {
    let present: Vec<&str> = cells.flatten().collect();
    if present.is_empty() {
        return ColumnKind::Categorical;
    }
    let n = present.len() as f64;
    let numeric = present.iter().filter(|s| parse_number(s).is_some()).count() as f64;
    if numeric / n >= PARSE_THRESHOLD {
        return ColumnKind::Numeric;
    }
    let dates = present.iter().filter(|s| parse_datetime(s).is_some()).count() as f64;
    if dates / n >= PARSE_THRESHOLD {
        return ColumnKind::Datetime;
    }
    ColumnKind::Categorical
}

fn null_frequency<'a>(cells: impl Iterator<Item = Option<&'a str>>, kind: ColumnKind) -> f64 {
    let mut n = 0usize;
    let mut missing = 0usize;
    for c in cells {
        n += 1;
        let is_missing = match (c, kind) {
            (None, _) => true,
            (Some(s), ColumnKind::Numeric | ColumnKind::Latlong) => parse_number(s).is_none(),
            (Some(s), ColumnKind::Datetime) => parse_datetime(s).is_none(),
            (Some(_), ColumnKind::Categorical) => false,
        };
        missing += is_missing as usize;
    }
    if n == 0 {
        0.0
    } else {
        missing as f64 / n as f64
    }
}

pub fn infer_schema(
    table: &RawTable,
    overrides: &BTreeMap<String, ColumnOverride>,
) -> Result<TableSchema> {
    if table.header.is_empty() {
        return Err(Error::Schema("table has no columns".into()));
    }
    // Latlong overrides consume their source columns.
    let mut geo_by_lat: BTreeMap<usize, (String, GeoSource, Option<EncodingKind>)> = BTreeMap::new();
    let mut consumed: HashSet<usize> = HashSet::new();
    for (name, ov) in overrides {
        if ov.kind == ColumnKind::Latlong {
            let (lat, lon) = match (&ov.lat, &ov.lon) {
                (Some(a), Some(b)) => (a.clone(), b.clone()),
                _ => {
                    return Err(Error::Schema(format!(
                        "latlong override '{name}' must name both lat and lon columns"
                    )))
                }
            };
            let li = table.column_index_or_err(&lat)?;
            let oi = table.column_index_or_err(&lon)?;
            if li == oi || !consumed.insert(li) || !consumed.insert(oi) {
                return Err(Error::Schema(format!("latlong override '{name}' reuses a column")));
            }
            if let Some(existing) = table.column_index(name) {
                if existing != li && existing != oi {
                    return Err(Error::Schema(format!(
                        "latlong override '{name}' collides with an existing column"
                    )));
                }
            }
            geo_by_lat.insert(li, (name.clone(), GeoSource { lat, lon }, ov.encoding));
        } else if table.column_index(name).is_none() {
            return Err(Error::Schema(format!("override references unknown column '{name}'")));
        } else if ov.lat.is_some() || ov.lon.is_some() {
            return Err(Error::Schema(format!("override '{name}': lat/lon only apply to latlong")));
        }
    }

    let mut columns = Vec::with_capacity(table.header.len());
    for (idx, name) in table.header.iter().enumerate() {
        if let Some((gname, geo, enc)) = geo_by_lat.get(&idx) {
            let enc = enc.unwrap_or(EncodingKind::Quadtile);
            check_encoding(gname, ColumnKind::Latlong, enc)?;
            let lat_i = idx;
            let lon_i = table.column_index(&geo.lon).expect("checked above");
            let missing = table
                .rows
                .iter()
                .filter(|r| {
                    let a = r[lat_i].as_deref().and_then(parse_number);
                    let b = r[lon_i].as_deref().and_then(parse_number);
                    a.is_none() || b.is_none()
                })
                .count();
            columns.push(ColumnSpec {
                name: gname.clone(),
                kind: ColumnKind::Latlong,
                encoding: enc,
                null_frequency: if table.rows.is_empty() {
                    0.0
                } else {
                    missing as f64 / table.rows.len() as f64
                },
                geo: Some(geo.clone()),
            });
            continue;
        }
        if consumed.contains(&idx) {
            continue;
        }
        let cells = table.column(idx);
        let (kind, encoding) = match overrides.get(name) {
            Some(ov) => {
                let enc = ov.encoding.unwrap_or_else(|| default_encoding(ov.kind));
                check_encoding(name, ov.kind, enc)?;
                (ov.kind, enc)
            }
            None => {
                let k = infer_kind(cells.clone());
                (k, default_encoding(k))
            }
        };
        columns.push(ColumnSpec {
            name: name.clone(),
            kind,
            encoding,
            null_frequency: null_frequency(cells, kind),
            geo: None,
        });
    }
    Ok(TableSchema { columns, row_count: table.row_count() })
}
