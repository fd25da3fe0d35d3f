//! Final report artifacts: a GeoJSON point layer, a top-ports table and a
//! JSON summary.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};

use crate::centrality::CentralityTable;
use crate::error::{Error, Result};
use crate::geo::{PortId, PortRecord};

/// Model outcome for one labeled port.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortScore {
    pub label: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortReportRow {
    pub port_id: PortId,
    pub name: String,
    pub country: String,
    pub lat: f64,
    pub lon: f64,
    pub aggregate: f64,
    pub rank: usize,
    #[serde(rename = "DI")]
    pub in_degree: usize,
    #[serde(rename = "DO")]
    pub out_degree: usize,
    #[serde(rename = "PR")]
    pub pagerank: f64,
    #[serde(rename = "wPR")]
    pub weighted_pagerank: f64,
    #[serde(rename = "BC")]
    pub betweenness: f64,
    #[serde(rename = "CC")]
    pub closeness: f64,
    pub label: Option<bool>,
    pub score: Option<f64>,
}

/// One row per network port, in rank order.
pub fn report_rows(table: &CentralityTable, registry: &[PortRecord], scores: &BTreeMap<PortId, PortScore>) -> Result<Vec<PortReportRow>> {
    let by_id: BTreeMap<PortId, &PortRecord> = registry.iter().map(|p| (p.port_id, p)).collect();
    let raw = &table.raw;
    let agg = &table.aggregated;
    if raw.ports != agg.ports {
        return Err(Error::MismatchedPorts("raw and aggregated centralities differ".into()));
    }
    let mut rows = Vec::with_capacity(raw.len());
    for i in agg.ranking() {
        let id = raw.ports[i];
        let port = by_id
            .get(&id)
            .ok_or_else(|| Error::InvalidInput(format!("port {id} not in registry")))?;
        let s = scores.get(&id);
        rows.push(PortReportRow {
            port_id: id,
            name: port.name.clone(),
            country: port.country.clone(),
            lat: port.lat,
            lon: port.lon,
            aggregate: agg.aggregate[i],
            rank: agg.rank[i],
            in_degree: raw.in_degree[i],
            out_degree: raw.out_degree[i],
            pagerank: raw.pagerank[i],
            weighted_pagerank: raw.weighted_pagerank[i],
            betweenness: raw.betweenness[i],
            closeness: raw.closeness[i],
            label: s.map(|s| s.label),
            score: s.map(|s| s.score),
        });
    }
    Ok(rows)
}

pub fn geojson(rows: &[PortReportRow]) -> Value {
    let features: Vec<Value> = rows
        .iter()
        .map(|r| {
            let mut props = serde_json::to_value(r).expect("row serializes");
            if let Value::Object(m) = &mut props {
                m.remove("lat");
                m.remove("lon");
                m.retain(|_, v| !v.is_null());
            }
            json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [r.lon, r.lat]},
                "properties": props,
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

/// Structural check of a point FeatureCollection: required members, point
/// geometry with in-range `[lon, lat]`, and finite numeric properties.
pub fn validate_point_collection(doc: &Value) -> Result<()> {
    let bad = |msg: String| Err(Error::Schema(msg));
    if doc.get("type") != Some(&json!("FeatureCollection")) {
        return bad("root type must be FeatureCollection".into());
    }
    let Some(features) = doc.get("features").and_then(Value::as_array) else {
        return bad("features must be an array".into());
    };
    for (i, f) in features.iter().enumerate() {
        if f.get("type") != Some(&json!("Feature")) {
            return bad(format!("feature {i}: type must be Feature"));
        }
        let geom = f.get("geometry");
        if geom.and_then(|g| g.get("type")) != Some(&json!("Point")) {
            return bad(format!("feature {i}: geometry must be a Point"));
        }
        let coords = geom.and_then(|g| g.get("coordinates")).and_then(Value::as_array);
        let Some([lon, lat]) = coords.map(Vec::as_slice) else {
            return bad(format!("feature {i}: coordinates must be [lon, lat]"));
        };
        match (lon.as_f64(), lat.as_f64()) {
            (Some(lon), Some(lat)) if (-180.0..=180.0).contains(&lon) && (-90.0..=90.0).contains(&lat) => {}
            _ => return bad(format!("feature {i}: coordinates out of range")),
        }
        let Some(props) = f.get("properties").and_then(Value::as_object) else {
            return bad(format!("feature {i}: properties must be an object"));
        };
        for (k, v) in props {
            if v.is_number() && !v.as_f64().is_some_and(f64::is_finite) {
                return bad(format!("feature {i}: property {k} is not finite"));
            }
        }
    }
    Ok(())
}

pub const TOP_PORTS_HEADER: [&str; 4] = ["Rank", "Port Name", "Country", "Centrality"];

pub fn write_top_ports<W: Write>(out: W, rows: &[PortReportRow], k: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TOP_PORTS_HEADER)?;
    for r in rows.iter().take(k) {
        w.write_record([r.rank.to_string(), r.name.clone(), r.country.clone(), format!("{:.2}", r.aggregate)])?;
    }
    w.flush().map_err(|e| Error::io("<top ports>", e))?;
    Ok(())
}
