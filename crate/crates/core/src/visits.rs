//! Port visits and voyages.
//!
//! A visit is a maximal run of a vessel's consecutive port-tagged records at
//! one port; records outside every geofence are dropped before collapsing,
//! so `A, (sea), A` is a single visit. A voyage chains two consecutive
//! visits of the same vessel.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{PortId, Timestamp, VesselId, VesselType};

/// A single position report reduced to what visit extraction needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaggedRecord {
    pub timestamp: Timestamp,
    pub port: Option<PortId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortVisit {
    pub vessel: VesselId,
    pub port_id: PortId,
    pub arrival: Timestamp,
    pub departure: Timestamp,
    /// Number of records collapsed into this visit.
    pub messages: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Voyage {
    pub vessel: VesselId,
    pub origin: PortId,
    pub destination: PortId,
    pub depart: Timestamp,
    pub arrive: Timestamp,
}

/// Collapses one vessel's time-sorted records into visits.
///
/// Runs shorter than `min_messages` are discarded, after which neighbouring
/// visits at the same port are merged again.
pub fn extract_visits(vessel: &VesselId, records: &[TaggedRecord], min_messages: usize) -> Result<Vec<PortVisit>> {
    if let Some(i) = records.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::Unsorted { index: i + 1 });
    }
    let mut runs: Vec<PortVisit> = Vec::new();
    for rec in records {
        let Some(port) = rec.port else { continue };
        match runs.last_mut() {
            Some(v) if v.port_id == port => {
                v.departure = rec.timestamp;
                v.messages += 1;
            }
            _ => runs.push(PortVisit {
                vessel: vessel.clone(),
                port_id: port,
                arrival: rec.timestamp,
                departure: rec.timestamp,
                messages: 1,
            }),
        }
    }
    if min_messages <= 1 {
        return Ok(runs);
    }
    let mut visits: Vec<PortVisit> = Vec::with_capacity(runs.len());
    for run in runs.into_iter().filter(|r| r.messages >= min_messages) {
        match visits.last_mut() {
            Some(v) if v.port_id == run.port_id => {
                v.departure = run.departure;
                v.messages += run.messages;
            }
            _ => visits.push(run),
        }
    }
    Ok(visits)
}

/// Most frequent type over a vessel's records; ties resolve to `Unknown`.
pub fn modal_vessel_type(types: impl IntoIterator<Item = VesselType>) -> VesselType {
    let mut counts: BTreeMap<VesselType, usize> = BTreeMap::new();
    for t in types {
        *counts.entry(t).or_default() += 1;
    }
    let Some(&max) = counts.values().max() else {
        return VesselType::Unknown;
    };
    let mut modes = counts.iter().filter(|(_, &n)| n == max);
    match (modes.next(), modes.next()) {
        (Some((&t, _)), None) => t,
        _ => VesselType::Unknown,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CargoFilterReport {
    pub kept_visits: usize,
    pub excluded_visits: BTreeMap<VesselType, usize>,
    pub excluded_vessels: BTreeMap<VesselType, usize>,
}

/// Keeps visits of cargo vessels. Vessels missing from `types` count as
/// unknown and are excluded.
pub fn filter_cargo(visits: Vec<PortVisit>, types: &HashMap<VesselId, VesselType>) -> (Vec<PortVisit>, CargoFilterReport) {
    let mut report = CargoFilterReport::default();
    let mut seen_excluded: BTreeMap<VesselType, std::collections::BTreeSet<VesselId>> = BTreeMap::new();
    let mut kept = Vec::with_capacity(visits.len());
    for v in visits {
        let t = types.get(&v.vessel).copied().unwrap_or(VesselType::Unknown);
        if t == VesselType::Cargo {
            kept.push(v);
        } else {
            *report.excluded_visits.entry(t).or_default() += 1;
            seen_excluded.entry(t).or_default().insert(v.vessel);
        }
    }
    report.kept_visits = kept.len();
    report.excluded_vessels = seen_excluded.into_iter().map(|(t, s)| (t, s.len())).collect();
    (kept, report)
}

/// Chains consecutive visits of one vessel: n visits give n - 1 voyages.
pub fn derive_voyages(visits: &[PortVisit]) -> Vec<Voyage> {
    visits
        .windows(2)
        .map(|w| Voyage {
            vessel: w[0].vessel.clone(),
            origin: w[0].port_id,
            destination: w[1].port_id,
            depart: w[0].departure,
            arrive: w[1].arrival,
        })
        .collect()
}

/// One port-assigned record of a resolved vessel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VesselRecord {
    pub vessel: VesselId,
    pub timestamp: Timestamp,
    pub port: Option<PortId>,
    pub vessel_type: VesselType,
}

#[derive(Debug, Clone, Default)]
pub struct VisitExtraction {
    /// All visits, grouped by vessel in key order, time-ordered within.
    pub visits: Vec<PortVisit>,
    pub vessel_types: HashMap<VesselId, VesselType>,
    pub records: usize,
    pub duplicate_timestamps: usize,
}

/// Groups records by vessel, sorts each group stably by time, drops repeated
/// timestamps (first record wins) and extracts visits per vessel in parallel.
pub fn extract_all(records: Vec<VesselRecord>, min_messages: usize) -> Result<VisitExtraction> {
    let total = records.len();
    let mut groups: BTreeMap<VesselId, Vec<(Timestamp, Option<PortId>, VesselType)>> = BTreeMap::new();
    for r in records {
        groups.entry(r.vessel).or_default().push((r.timestamp, r.port, r.vessel_type));
    }
    let per_vessel: Vec<(VesselId, VesselType, usize, Result<Vec<PortVisit>>)> = groups
        .into_par_iter()
        .map(|(vessel, mut recs)| {
            let vtype = modal_vessel_type(recs.iter().map(|r| r.2));
            recs.sort_by_key(|r| r.0);
            let before = recs.len();
            recs.dedup_by_key(|r| r.0);
            let dups = before - recs.len();
            let tagged: Vec<TaggedRecord> = recs
                .iter()
                .map(|&(timestamp, port, _)| TaggedRecord { timestamp, port })
                .collect();
            let visits = extract_visits(&vessel, &tagged, min_messages);
            (vessel, vtype, dups, visits)
        })
        .collect();
    let mut out = VisitExtraction {
        records: total,
        ..Default::default()
    };
    for (vessel, vtype, dups, visits) in per_vessel {
        out.duplicate_timestamps += dups;
        out.visits.extend(visits?);
        out.vessel_types.insert(vessel, vtype);
    }
    Ok(out)
}

/// Voyages for every vessel in a visit list grouped by vessel.
pub fn derive_all_voyages(visits: &[PortVisit]) -> Vec<Voyage> {
    visits
        .chunk_by(|a, b| a.vessel == b.vessel)
        .flat_map(derive_voyages)
        .collect()
}

#[derive(Serialize, Deserialize)]
struct VisitRow {
    vessel: String,
    port_id: PortId,
    arrival: String,
    departure: String,
    messages: usize,
}

#[derive(Serialize, Deserialize)]
struct VoyageRow {
    vessel: String,
    origin: PortId,
    destination: PortId,
    depart: String,
    arrive: String,
}

fn parse_vessel(key: &str) -> Result<VesselId> {
    VesselId::from_key(key).ok_or_else(|| Error::InvalidInput(format!("bad vessel key {key:?}")))
}

fn parse_ts(s: &str) -> Result<Timestamp> {
    Timestamp::parse_rfc3339(s).ok_or_else(|| Error::InvalidInput(format!("bad timestamp {s:?}")))
}

pub fn write_visits<W: Write>(out: W, visits: &[PortVisit]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for v in visits {
        w.serialize(VisitRow {
            vessel: v.vessel.key(),
            port_id: v.port_id,
            arrival: v.arrival.to_rfc3339(),
            departure: v.departure.to_rfc3339(),
            messages: v.messages,
        })?;
    }
    w.flush().map_err(|e| Error::io("<visits>", e))?;
    Ok(())
}

pub fn read_visits<R: Read>(input: R) -> Result<Vec<PortVisit>> {
    csv::Reader::from_reader(input)
        .deserialize::<VisitRow>()
        .map(|row| {
            let row = row?;
            Ok(PortVisit {
                vessel: parse_vessel(&row.vessel)?,
                port_id: row.port_id,
                arrival: parse_ts(&row.arrival)?,
                departure: parse_ts(&row.departure)?,
                messages: row.messages,
            })
        })
        .collect()
}

pub fn write_voyages<W: Write>(out: W, voyages: &[Voyage]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for v in voyages {
        w.serialize(VoyageRow {
            vessel: v.vessel.key(),
            origin: v.origin,
            destination: v.destination,
            depart: v.depart.to_rfc3339(),
            arrive: v.arrive.to_rfc3339(),
        })?;
    }
    w.flush().map_err(|e| Error::io("<voyages>", e))?;
    Ok(())
}

pub fn read_voyages<R: Read>(input: R) -> Result<Vec<Voyage>> {
    csv::Reader::from_reader(input)
        .deserialize::<VoyageRow>()
        .map(|row| {
            let row = row?;
            Ok(Voyage {
                vessel: parse_vessel(&row.vessel)?,
                origin: row.origin,
                destination: row.destination,
                depart: parse_ts(&row.depart)?,
                arrive: parse_ts(&row.arrive)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vid(n: u32) -> VesselId {
        VesselId::new(&format!("{:09}", 100_000_000 + n), "9876543", "CALL").unwrap()
    }

    fn tagged(ports: &[Option<PortId>]) -> Vec<TaggedRecord> {
        ports
            .iter()
            .enumerate()
            .map(|(i, &port)| TaggedRecord {
                timestamp: Timestamp(1_000 + 60 * i as i64),
                port,
            })
            .collect()
    }

    fn ports_of(visits: &[PortVisit]) -> Vec<PortId> {
        visits.iter().map(|v| v.port_id).collect()
    }

    #[test]
    fn consecutive_runs_collapse() {
        let (a, b) = (1, 2);
        let v = extract_visits(&vid(0), &tagged(&[Some(a), Some(a), Some(a), Some(b), Some(b)]), 1).unwrap();
        assert_eq!(ports_of(&v), vec![a, b]);
        assert_eq!((v[0].arrival, v[0].departure), (Timestamp(1_000), Timestamp(1_120)));
        assert_eq!(v[1].messages, 2);
    }

    #[test]
    fn sea_records_do_not_break_runs() {
        let v = extract_visits(&vid(0), &tagged(&[Some(1), None, Some(1), Some(2), Some(1)]), 1).unwrap();
        assert_eq!(ports_of(&v), vec![1, 2, 1]);
        assert_eq!(v[0].departure, Timestamp(1_120));
    }

    #[test]
    fn empty_and_unsorted() {
        assert!(extract_visits(&vid(0), &[], 1).unwrap().is_empty());
        let mut recs = tagged(&[Some(1), Some(2)]);
        recs.swap(0, 1);
        assert!(matches!(extract_visits(&vid(0), &recs, 1), Err(Error::Unsorted { index: 1 })));
    }

    #[test]
    fn min_messages_drops_short_runs_and_remerges() {
        let v = extract_visits(&vid(0), &tagged(&[Some(1), Some(1), Some(2), Some(1), Some(1)]), 2).unwrap();
        assert_eq!(ports_of(&v), vec![1]);
        assert_eq!(v[0].messages, 4);
        assert_eq!(v[0].departure, Timestamp(1_240));
    }

    #[test]
    fn voyages_chain_bordering_visits() {
        let mk = |port, arr, dep| PortVisit {
            vessel: vid(1),
            port_id: port,
            arrival: Timestamp(arr),
            departure: Timestamp(dep),
            messages: 1,
        };
        let visits = [mk(10, 0, 100), mk(20, 500, 900), mk(10, 1_500, 1_600), mk(30, 4_000, 4_100)];
        let voyages = derive_voyages(&visits);
        let got: Vec<_> = voyages.iter().map(|v| (v.origin, v.destination, v.depart.0, v.arrive.0)).collect();
        assert_eq!(got, vec![(10, 20, 100, 500), (20, 10, 900, 1_500), (10, 30, 1_600, 4_000)]);
        assert!(derive_voyages(&visits[..1]).is_empty());
        assert!(derive_voyages(&[]).is_empty());
    }

    #[test]
    fn cargo_filter_counts_exclusions() {
        let mk = |n: u32| PortVisit {
            vessel: vid(n),
            port_id: 1,
            arrival: Timestamp(0),
            departure: Timestamp(0),
            messages: 1,
        };
        let mut types = HashMap::new();
        let mut visits = Vec::new();
        for n in 0..10 {
            types.insert(vid(n), VesselType::Cargo);
            visits.push(mk(n));
        }
        for n in 10..15 {
            types.insert(vid(n), VesselType::Tanker);
            visits.push(mk(n));
        }
        types.insert(vid(15), VesselType::Unknown);
        visits.push(mk(15));
        let (kept, report) = filter_cargo(visits, &types);
        assert_eq!(kept.len(), 10);
        assert!(kept.iter().all(|v| types[&v.vessel] == VesselType::Cargo));
        assert_eq!(report.excluded_visits[&VesselType::Tanker], 5);
        assert_eq!(report.excluded_vessels[&VesselType::Unknown], 1);

        let tankers: Vec<_> = (10..15).map(mk).collect();
        assert!(filter_cargo(tankers, &types).0.is_empty());
    }

    #[test]
    fn modal_type_ties_are_unknown() {
        use VesselType::*;
        assert_eq!(modal_vessel_type([Cargo, Cargo, Tanker]), Cargo);
        assert_eq!(modal_vessel_type([Cargo, Tanker]), Unknown);
        assert_eq!(modal_vessel_type([]), Unknown);
    }

    #[test]
    fn csv_round_trip() {
        let v = extract_visits(&vid(3), &tagged(&[Some(1), Some(2), Some(3)]), 1).unwrap();
        let mut buf = Vec::new();
        write_visits(&mut buf, &v).unwrap();
        assert_eq!(read_visits(buf.as_slice()).unwrap(), v);
        let voy = derive_voyages(&v);
        let mut buf = Vec::new();
        write_voyages(&mut buf, &voy).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("vessel,origin,destination,depart,arrive\n"));
        assert_eq!(read_voyages(buf.as_slice()).unwrap(), voy);
    }

    proptest! {
        #[test]
        fn visit_and_voyage_counts(ports in prop::collection::vec(prop::option::of(0u32..4), 0..60)) {
            let recs = tagged(&ports);
            let visits = extract_visits(&vid(0), &recs, 1).unwrap();
            prop_assert!(visits.len() <= recs.len());
            for w in visits.windows(2) {
                prop_assert_ne!(w[0].port_id, w[1].port_id);
                prop_assert!(w[0].departure < w[1].arrival);
            }
            let voyages = derive_voyages(&visits);
            prop_assert_eq!(voyages.len(), visits.len().saturating_sub(1));
            for v in &voyages {
                prop_assert!(v.depart < v.arrive);
                prop_assert_ne!(v.origin, v.destination);
            }

            // Idempotent on its own output projected back to records.
            let projected: Vec<TaggedRecord> = visits
                .iter()
                .map(|v| TaggedRecord { timestamp: v.arrival, port: Some(v.port_id) })
                .collect();
            let again = extract_visits(&vid(0), &projected, 1).unwrap();
            prop_assert_eq!(ports_of(&again), ports_of(&visits));
            let arrivals: Vec<_> = again.iter().map(|v| v.arrival).collect();
            let expect: Vec<_> = visits.iter().map(|v| v.arrival).collect();
            prop_assert_eq!(arrivals, expect);
        }
    }
}
