use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type PortId = u32;

/// World Port Index harbor size code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HarborSize {
    #[serde(rename = "L")]
    Large,
    #[serde(rename = "M")]
    Medium,
    #[serde(rename = "S")]
    Small,
    #[serde(rename = "V")]
    VerySmall,
}

impl HarborSize {
    pub fn parse(code: &str) -> Option<Self> {
        match code.trim() {
            "L" | "l" => Some(HarborSize::Large),
            "M" | "m" => Some(HarborSize::Medium),
            "S" | "s" => Some(HarborSize::Small),
            "V" | "v" => Some(HarborSize::VerySmall),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            HarborSize::Large => "L",
            HarborSize::Medium => "M",
            HarborSize::Small => "S",
            HarborSize::VerySmall => "V",
        }
    }

    /// L > M > S > V > missing.
    pub fn rank(size: Option<HarborSize>) -> u8 {
        match size {
            Some(HarborSize::Large) => 4,
            Some(HarborSize::Medium) => 3,
            Some(HarborSize::Small) => 2,
            Some(HarborSize::VerySmall) => 1,
            None => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortRecord {
    pub port_id: PortId,
    pub name: String,
    pub country: String,
    pub lat: f64,
    pub lon: f64,
    pub harbor_size: Option<HarborSize>,
    /// Every non-core registry column; `None` for an empty cell.
    pub raw_features: BTreeMap<String, Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrySchema {
    pub delimiter: char,
    pub id: String,
    pub name: String,
    pub country: String,
    pub lat: String,
    pub lon: String,
    pub harbor_size: String,
}

impl Default for RegistrySchema {
    fn default() -> Self {
        RegistrySchema {
            delimiter: ',',
            id: "port_id".into(),
            name: "name".into(),
            country: "country".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            harbor_size: "harbor_size".into(),
        }
    }
}

/// Parses a delimited port registry. Unlike AIS rows, a malformed registry
/// row is fatal: every downstream stage keys on port identity.
pub fn parse_port_registry<R: Read>(source: R, schema: &RegistrySchema) -> Result<Vec<PortRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .from_reader(source);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_owned()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("registry column {name:?} not in header")))
    };
    let id_col = find(&schema.id)?;
    let name_col = find(&schema.name)?;
    let country_col = find(&schema.country)?;
    let lat_col = find(&schema.lat)?;
    let lon_col = find(&schema.lon)?;
    let size_col = find(&schema.harbor_size)?;
    let core = [id_col, name_col, country_col, lat_col, lon_col, size_col];

    let mut ports = Vec::new();
    let mut seen = BTreeSet::new();
    for (row, result) in reader.records().enumerate() {
        let rec = result?;
        let line = row + 2;
        let get = |i: usize| rec.get(i).unwrap_or("").trim();
        let port_id: PortId = get(id_col)
            .parse()
            .map_err(|_| Error::InvalidInput(format!("registry line {line}: bad port id {:?}", get(id_col))))?;
        if !seen.insert(port_id) {
            return Err(Error::InvalidInput(format!("duplicate port id {port_id}")));
        }
        let coord = |i: usize, bound: f64| -> Result<f64> {
            get(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.abs() <= bound)
                .ok_or_else(|| Error::InvalidInput(format!("registry line {line}: bad coordinate {:?}", get(i))))
        };
        let size_raw = get(size_col);
        let harbor_size = if size_raw.is_empty() {
            None
        } else {
            Some(HarborSize::parse(size_raw).ok_or_else(|| {
                Error::InvalidInput(format!("registry line {line}: harbor size {size_raw:?} not in L/M/S/V"))
            })?)
        };
        let raw_features = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !core.contains(i))
            .map(|(i, h)| {
                let v = get(i);
                (h.clone(), (!v.is_empty()).then(|| v.to_owned()))
            })
            .collect();
        ports.push(PortRecord {
            port_id,
            name: get(name_col).to_owned(),
            country: get(country_col).to_owned(),
            lat: coord(lat_col, 90.0)?,
            lon: coord(lon_col, 180.0)?,
            harbor_size,
            raw_features,
        });
    }
    Ok(ports)
}

pub fn read_port_registry(path: &Path, schema: &RegistrySchema) -> Result<Vec<PortRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_port_registry(BufReader::new(file), schema)
}
