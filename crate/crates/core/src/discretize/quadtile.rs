use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Tile {
    lat: (f64, f64),
    lon: (f64, f64),
}

const ROOT: Tile = Tile { lat: (-90.0, 90.0), lon: (-180.0, 180.0) };

impl Tile {
    fn mid(&self) -> (f64, f64) {
        ((self.lat.0 + self.lat.1) / 2.0, (self.lon.0 + self.lon.1) / 2.0)
    }

    /// Quadrant digit: 0 NW, 1 NE, 2 SW, 3 SE.
    fn digit(&self, lat: f64, lon: f64) -> u8 {
        let (ml, mo) = self.mid();
        let south = (lat < ml) as u8;
        let east = (lon >= mo) as u8;
        south * 2 + east
    }

    fn child(&self, d: u8) -> Tile {
        let (ml, mo) = self.mid();
        let lat = if d < 2 { (ml, self.lat.1) } else { (self.lat.0, ml) };
        let lon = if d % 2 == 1 { (mo, self.lon.1) } else { (self.lon.0, mo) };
        Tile { lat, lon }
    }
}

fn check_range(lat: f64, lon: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(Error::Encoding(format!("coordinate ({lat}, {lon}) out of range")));
    }
    Ok(())
}

/// Adaptive quadtree over plain lat/lon. Leaf keys form one categorical;
/// index `leaves.len()` is missing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "QuadtileRepr", into = "QuadtileRepr")]
pub struct QuadtileEncoder {
    leaves: Vec<String>,
    max_depth: usize,
    lookup: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct QuadtileRepr {
    leaves: Vec<String>,
    max_depth: usize,
}

impl From<QuadtileRepr> for QuadtileEncoder {
    fn from(r: QuadtileRepr) -> Self {
        Self::from_leaves(r.leaves, r.max_depth)
    }
}

impl From<QuadtileEncoder> for QuadtileRepr {
    fn from(e: QuadtileEncoder) -> Self {
        Self { leaves: e.leaves, max_depth: e.max_depth }
    }
}

impl PartialEq for QuadtileEncoder {
    fn eq(&self, other: &Self) -> bool {
        self.leaves == other.leaves && self.max_depth == other.max_depth
    }
}

impl QuadtileEncoder {
    pub fn fit(points: &[(f64, f64)], min_tile_count: usize, max_depth: usize) -> Result<Self> {
        for &(lat, lon) in points {
            check_range(lat, lon)?;
        }
        let mut leaves = Vec::new();
        let mut stack = vec![(String::new(), ROOT, points.to_vec())];
        while let Some((key, tile, pts)) = stack.pop() {
            if pts.len() >= min_tile_count.max(1) && key.len() < max_depth {
                let mut children: [Vec<(f64, f64)>; 4] = Default::default();
                for p in pts {
                    children[tile.digit(p.0, p.1) as usize].push(p);
                }
                for (d, c) in children.into_iter().enumerate() {
                    stack.push((format!("{key}{d}"), tile.child(d as u8), c));
                }
            } else {
                leaves.push(key);
            }
        }
        leaves.sort();
        Ok(Self::from_leaves(leaves, max_depth))
    }

    fn from_leaves(leaves: Vec<String>, max_depth: usize) -> Self {
        let lookup = leaves.iter().enumerate().map(|(i, k)| (k.clone(), i as u32)).collect();
        Self { leaves, max_depth, lookup }
    }

    pub fn leaves(&self) -> &[String] {
        &self.leaves
    }

    pub fn cardinality(&self) -> u32 {
        self.leaves.len() as u32 + 1
    }

    pub fn missing_index(&self) -> u32 {
        self.leaves.len() as u32
    }

    pub fn key_of(&self, lat: f64, lon: f64) -> Result<&str> {
        check_range(lat, lon)?;
        let mut key = String::new();
        let mut tile = ROOT;
        loop {
            if let Some(&i) = self.lookup.get(&key) {
                return Ok(&self.leaves[i as usize]);
            }
            if key.len() >= self.max_depth {
                return Err(Error::Encoding(format!("no leaf tile covers ({lat}, {lon})")));
            }
            let d = tile.digit(lat, lon);
            key.push(char::from(b'0' + d));
            tile = tile.child(d);
        }
    }

    pub fn encode(&self, lat: Option<&str>, lon: Option<&str>) -> Result<u32> {
        let parse = |s: Option<&str>| s.and_then(crate::schema::parse_number);
        match (parse(lat), parse(lon)) {
            (Some(a), Some(b)) => Ok(self.lookup[self.key_of(a, b)?]),
            _ => Ok(self.missing_index()),
        }
    }

    pub fn decode<R: Rng + ?Sized>(
        &self,
        index: u32,
        rng: &mut R,
    ) -> Result<(Option<String>, Option<String>)> {
        if index == self.missing_index() {
            return Ok((None, None));
        }
        let key = self
            .leaves
            .get(index as usize)
            .ok_or_else(|| Error::Encoding(format!("quadtile index {index} out of range")))?;
        let mut tile = ROOT;
        for b in key.bytes() {
            tile = tile.child(b - b'0');
        }
        let lat = tile.lat.0 + rng.random::<f64>() * (tile.lat.1 - tile.lat.0);
        let lon = tile.lon.0 + rng.random::<f64>() * (tile.lon.1 - tile.lon.0);
        let round = |v: f64| (v * 1e6).round() / 1e6;
        let (rl, ro) = (round(lat), round(lon));
        let (lat, lon) = match self.key_of(rl, ro) {
            Ok(k) if k == key => (rl, ro),
            _ => (lat, lon),
        };
        Ok((Some(format!("{lat}")), Some(format!("{lon}"))))
    }
}
