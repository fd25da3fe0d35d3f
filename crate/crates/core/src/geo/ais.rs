use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// UTC instant with one-second resolution, stored as epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn parse_rfc3339(s: &str) -> Option<Self> {
        DateTime::parse_from_rfc3339(s.trim())
            .ok()
            .map(|dt| Timestamp(dt.timestamp()))
    }

    pub fn parse_epoch(s: &str) -> Option<Self> {
        s.trim().parse::<i64>().ok().map(Timestamp)
    }

    pub fn to_rfc3339(self) -> String {
        DateTime::<Utc>::from_timestamp(self.0, 0)
            .map(|dt| dt.to_rfc3339_opts(SecondsFormat::Secs, true))
            .unwrap_or_else(|| self.0.to_string())
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_rfc3339())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VesselType {
    Cargo,
    Tanker,
    Passenger,
    Other,
    Unknown,
}

impl VesselType {
    /// Accepts category names or numeric AIS ship-type codes (60-69
    /// passenger, 70-79 cargo, 80-89 tanker).
    pub fn parse(raw: &str) -> Self {
        let s = raw.trim();
        if s.is_empty() {
            return VesselType::Unknown;
        }
        if let Ok(code) = s.parse::<u32>() {
            return match code {
                0 => VesselType::Unknown,
                60..=69 => VesselType::Passenger,
                70..=79 => VesselType::Cargo,
                80..=89 => VesselType::Tanker,
                _ => VesselType::Other,
            };
        }
        match s.to_ascii_lowercase().as_str() {
            "cargo" => VesselType::Cargo,
            "tanker" => VesselType::Tanker,
            "passenger" => VesselType::Passenger,
            "unknown" | "na" | "n/a" => VesselType::Unknown,
            _ => VesselType::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VesselType::Cargo => "cargo",
            VesselType::Tanker => "tanker",
            VesselType::Passenger => "passenger",
            VesselType::Other => "other",
            VesselType::Unknown => "unknown",
        }
    }
}

/// One decoded vessel position report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AisRecord {
    pub mmsi: String,
    pub imo: Option<String>,
    pub callsign: Option<String>,
    pub timestamp: Timestamp,
    pub lat: f64,
    pub lon: f64,
    pub vessel_type: VesselType,
}

/// A vessel identity: MMSI, IMO number and call sign, all non-empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VesselId {
    mmsi: String,
    imo: String,
    callsign: String,
}

impl VesselId {
    pub fn new(mmsi: &str, imo: &str, callsign: &str) -> Option<Self> {
        let (mmsi, imo, callsign) = (mmsi.trim(), imo.trim(), callsign.trim());
        if mmsi.is_empty() || imo.is_empty() || callsign.is_empty() {
            return None;
        }
        Some(VesselId {
            mmsi: mmsi.to_owned(),
            imo: imo.to_owned(),
            callsign: callsign.to_owned(),
        })
    }

    pub fn mmsi(&self) -> &str {
        &self.mmsi
    }

    pub fn imo(&self) -> &str {
        &self.imo
    }

    pub fn callsign(&self) -> &str {
        &self.callsign
    }

    /// Single-field key `mmsi|imo|callsign` used in persisted artifacts.
    pub fn key(&self) -> String {
        format!("{}|{}|{}", self.mmsi, self.imo, self.callsign)
    }

    pub fn from_key(key: &str) -> Option<Self> {
        let mut parts = key.split('|');
        let id = VesselId::new(parts.next()?, parts.next()?, parts.next()?)?;
        parts.next().is_none().then_some(id)
    }
}

impl fmt::Display for VesselId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// Returns a vessel identity iff all three identifiers are present.
pub fn resolve_vessel_id(record: &AisRecord) -> Option<VesselId> {
    VesselId::new(
        &record.mmsi,
        record.imo.as_deref().unwrap_or(""),
        record.callsign.as_deref().unwrap_or(""),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    CoordinateOutOfRange,
    BadTimestamp,
    MissingColumn,
    BadIdentifier,
}

impl RejectReason {
    pub fn describe(self) -> &'static str {
        match self {
            RejectReason::CoordinateOutOfRange => "coordinate out of range",
            RejectReason::BadTimestamp => "bad timestamp",
            RejectReason::MissingColumn => "missing column",
            RejectReason::BadIdentifier => "bad identifier",
        }
    }
}

/// Per-reason reject counts. Merging is associative and commutative.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectReport {
    pub accepted: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
}

impl RejectReport {
    pub fn record(&mut self, reason: RejectReason) {
        *self.rejected.entry(reason).or_default() += 1;
    }

    pub fn total_rejected(&self) -> usize {
        self.rejected.values().sum()
    }

    pub fn count(&self, reason: RejectReason) -> usize {
        self.rejected.get(&reason).copied().unwrap_or(0)
    }

    pub fn merge(mut self, other: RejectReport) -> RejectReport {
        self.accepted += other.accepted;
        for (reason, n) in other.rejected {
            *self.rejected.entry(reason).or_default() += n;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFormat {
    #[default]
    Delimited,
    JsonLines,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    #[default]
    Rfc3339,
    EpochSeconds,
}

/// Names of the source columns (or JSON keys) holding each field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub mmsi: String,
    pub imo: String,
    pub callsign: String,
    pub timestamp: String,
    pub lat: String,
    pub lon: String,
    pub vessel_type: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            mmsi: "mmsi".into(),
            imo: "imo".into(),
            callsign: "callsign".into(),
            timestamp: "timestamp".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            vessel_type: "vessel_type".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AisSchema {
    pub format: RecordFormat,
    pub delimiter: char,
    pub timestamp_format: TimestampFormat,
    pub columns: ColumnMap,
}

impl Default for AisSchema {
    fn default() -> Self {
        AisSchema {
            format: RecordFormat::Delimited,
            delimiter: ',',
            timestamp_format: TimestampFormat::Rfc3339,
            columns: ColumnMap::default(),
        }
    }
}

const CHUNK: usize = 16 * 1024;

/// Raw string fields of one row, in [mmsi, imo, callsign, timestamp, lat,
/// lon, vessel_type] order. `None` means the column is absent from the row.
type RawRow = [Option<String>; 7];

fn parse_row(row: &RawRow, schema: &AisSchema) -> std::result::Result<AisRecord, RejectReason> {
    let field = |i: usize| row[i].as_deref().ok_or(RejectReason::MissingColumn);
    let mmsi = field(0)?.trim();
    let ts_raw = field(3)?;
    let lat_raw = field(4)?;
    let lon_raw = field(5)?;

    if mmsi.is_empty() {
        return Err(RejectReason::MissingColumn);
    }
    if mmsi.len() != 9 || !mmsi.bytes().all(|b| b.is_ascii_digit()) {
        return Err(RejectReason::BadIdentifier);
    }
    let imo = row[1]
        .as_deref()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned);
    if let Some(imo) = &imo {
        let digits = imo.strip_prefix("IMO").unwrap_or(imo);
        if digits.len() != 7 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(RejectReason::BadIdentifier);
        }
    }
    let callsign = row[2]
        .as_deref()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned);

    let timestamp = match schema.timestamp_format {
        TimestampFormat::Rfc3339 => Timestamp::parse_rfc3339(ts_raw),
        TimestampFormat::EpochSeconds => Timestamp::parse_epoch(ts_raw),
    }
    .ok_or(RejectReason::BadTimestamp)?;

    let lat: f64 = lat_raw
        .trim()
        .parse()
        .map_err(|_| RejectReason::CoordinateOutOfRange)?;
    let lon: f64 = lon_raw
        .trim()
        .parse()
        .map_err(|_| RejectReason::CoordinateOutOfRange)?;
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(RejectReason::CoordinateOutOfRange);
    }

    Ok(AisRecord {
        mmsi: mmsi.to_owned(),
        imo,
        callsign,
        timestamp,
        lat,
        lon,
        vessel_type: row[6].as_deref().map(VesselType::parse).unwrap_or(VesselType::Unknown),
    })
}

fn parse_chunk(rows: &[RawRow], schema: &AisSchema) -> (Vec<AisRecord>, RejectReport) {
    let mut out = Vec::with_capacity(rows.len());
    let mut report = RejectReport::default();
    for row in rows {
        match parse_row(row, schema) {
            Ok(rec) => {
                report.accepted += 1;
                out.push(rec);
            }
            Err(reason) => report.record(reason),
        }
    }
    (out, report)
}

fn finish(rows: Vec<RawRow>, schema: &AisSchema) -> (Vec<AisRecord>, RejectReport) {
    let parts: Vec<_> = rows
        .par_chunks(CHUNK)
        .map(|chunk| parse_chunk(chunk, schema))
        .collect();
    let mut records = Vec::with_capacity(rows.len());
    let mut report = RejectReport::default();
    for (recs, rep) in parts {
        records.extend(recs);
        report = report.merge(rep);
    }
    (records, report)
}

fn collect_delimited<R: Read>(source: R, schema: &AisSchema) -> Result<Vec<RawRow>> {
    if !schema.delimiter.is_ascii() {
        return Err(Error::Schema(format!("non-ASCII delimiter {:?}", schema.delimiter)));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let c = &schema.columns;
    let wanted = [&c.mmsi, &c.imo, &c.callsign, &c.timestamp, &c.lat, &c.lon, &c.vessel_type];
    let positions: Vec<Option<usize>> = wanted
        .iter()
        .map(|name| headers.iter().position(|h| h.trim() == name.as_str()))
        .collect();
    for (name, pos) in wanted.iter().zip(&positions) {
        if pos.is_none() {
            return Err(Error::Schema(format!("column {name:?} not in header")));
        }
    }
    let mut rows = Vec::new();
    for result in reader.records() {
        let record = result?;
        let row: RawRow = std::array::from_fn(|i| {
            positions[i].and_then(|p| record.get(p)).map(str::to_owned)
        });
        rows.push(row);
    }
    Ok(rows)
}

fn collect_json_lines<R: Read>(source: R, schema: &AisSchema) -> Result<(Vec<RawRow>, usize)> {
    let c = &schema.columns;
    let keys = [&c.mmsi, &c.imo, &c.callsign, &c.timestamp, &c.lat, &c.lon, &c.vessel_type];
    let mut rows = Vec::new();
    let mut malformed = 0;
    for (lineno, line) in BufReader::new(source).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("<line {}>", lineno + 1), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let Ok(serde_json::Value::Object(obj)) = serde_json::from_str::<serde_json::Value>(&line)
        else {
            malformed += 1;
            continue;
        };
        let row: RawRow = std::array::from_fn(|i| match obj.get(keys[i].as_str()) {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) => Some(s.clone()),
            Some(other) => Some(other.to_string()),
        });
        rows.push(row);
    }
    Ok((rows, malformed))
}

/// Parses a line-oriented AIS export.
///
/// Individual bad rows are rejected and counted; only an unreadable source
/// or a header lacking mapped columns is fatal. Rows are parsed in parallel
/// chunks and their reports merged.
pub fn parse_ais_stream<R: Read>(source: R, schema: &AisSchema) -> Result<(Vec<AisRecord>, RejectReport)> {
    match schema.format {
        RecordFormat::Delimited => {
            let rows = collect_delimited(source, schema)?;
            Ok(finish(rows, schema))
        }
        RecordFormat::JsonLines => {
            let (rows, malformed) = collect_json_lines(source, schema)?;
            let (records, mut report) = finish(rows, schema);
            if malformed > 0 {
                *report.rejected.entry(RejectReason::MissingColumn).or_default() += malformed;
            }
            Ok((records, report))
        }
    }
}

pub fn parse_ais_path(path: &Path, schema: &AisSchema) -> Result<(Vec<AisRecord>, RejectReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ais_stream(BufReader::new(file), schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "mmsi,imo,callsign,timestamp,lat,lon,vessel_type\n";

    fn parse(body: &str) -> (Vec<AisRecord>, RejectReport) {
        let text = format!("{HEADER}{body}");
        parse_ais_stream(text.as_bytes(), &AisSchema::default()).unwrap()
    }

    #[test]
    fn well_formed_row_round_trips_fields() {
        let (recs, rep) = parse("123456789,9876543,ABCD,2019-03-01T12:00:05Z,43.5,10.25,cargo\n");
        assert_eq!(rep.total_rejected(), 0);
        assert_eq!(
            recs,
            vec![AisRecord {
                mmsi: "123456789".into(),
                imo: Some("9876543".into()),
                callsign: Some("ABCD".into()),
                timestamp: Timestamp::parse_rfc3339("2019-03-01T12:00:05Z").unwrap(),
                lat: 43.5,
                lon: 10.25,
                vessel_type: VesselType::Cargo,
            }]
        );
    }

    #[test]
    fn latitude_out_of_range_is_rejected() {
        let (recs, rep) = parse("123456789,9876543,ABCD,2019-03-01T12:00:05Z,91.0,10.0,cargo\n");
        assert!(recs.is_empty());
        assert_eq!(rep.count(RejectReason::CoordinateOutOfRange), 1);
        assert_eq!(RejectReason::CoordinateOutOfRange.describe(), "coordinate out of range");
    }

    #[test]
    fn bad_timestamp_and_short_row() {
        let (recs, rep) = parse(
            "123456789,9876543,ABCD,yesterday,1.0,1.0,cargo\n123456789,9876543,ABCD\n",
        );
        assert!(recs.is_empty());
        assert_eq!(rep.count(RejectReason::BadTimestamp), 1);
        assert_eq!(rep.count(RejectReason::MissingColumn), 1);
    }

    #[test]
    fn optional_identifiers_parse_as_none() {
        let (recs, _) = parse("123456789,,,2019-03-01T12:00:05Z,1.0,1.0,70\n");
        assert_eq!(recs[0].imo, None);
        assert_eq!(recs[0].callsign, None);
        assert_eq!(recs[0].vessel_type, VesselType::Cargo);
        assert_eq!(resolve_vessel_id(&recs[0]), None);
    }

    #[test]
    fn epoch_and_json_lines() {
        let schema = AisSchema {
            format: RecordFormat::JsonLines,
            timestamp_format: TimestampFormat::EpochSeconds,
            ..AisSchema::default()
        };
        let text = r#"{"mmsi":"123456789","imo":9876543,"callsign":"AB","timestamp":1500000000,"lat":1.5,"lon":-2.5,"vessel_type":"tanker"}
not json
{"mmsi":"123456789","timestamp":1500000000,"lat":100,"lon":0}
"#;
        let (recs, rep) = parse_ais_stream(text.as_bytes(), &schema).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].imo.as_deref(), Some("9876543"));
        assert_eq!(recs[0].timestamp, Timestamp(1_500_000_000));
        assert_eq!(rep.count(RejectReason::MissingColumn), 1);
        assert_eq!(rep.count(RejectReason::CoordinateOutOfRange), 1);
    }

    #[test]
    fn header_without_mapped_column_is_fatal() {
        let text = "mmsi,when,lat,lon\n";
        assert!(matches!(
            parse_ais_stream(text.as_bytes(), &AisSchema::default()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn vessel_id_requires_all_three() {
        let rec = |imo: Option<&str>| AisRecord {
            mmsi: "123456789".into(),
            imo: imo.map(Into::into),
            callsign: Some("ABCD".into()),
            timestamp: Timestamp(0),
            lat: 0.0,
            lon: 0.0,
            vessel_type: VesselType::Cargo,
        };
        let a = resolve_vessel_id(&rec(Some("9876543"))).unwrap();
        let b = resolve_vessel_id(&rec(Some("9876543"))).unwrap();
        assert_eq!(a, b);
        assert_eq!(resolve_vessel_id(&rec(None)), None);
        assert_eq!(VesselId::from_key(&a.key()), Some(a));
    }

    #[test]
    fn timestamp_formatting() {
        assert_eq!(Timestamp(0).to_rfc3339(), "1970-01-01T00:00:00Z");
        assert_eq!(Timestamp::parse_rfc3339("2019-01-01T01:00:00+01:00"), Some(Timestamp(1_546_300_800)));
    }
}
