//! Deterministic synthetic inputs.
//!
//! The toy world is a small AIS dump plus port registry used for end-to-end
//! and golden tests. The planted world is a larger registry with a voyage
//! list in which vessels prefer ports with deep cargo berths and large
//! harbors, so centrality is driven by those two features.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geo::{HarborSize, PortId, PortRecord, Timestamp, VesselId};
use crate::visits::Voyage;

/// Ordinal depth letters as used by the port registry (no `I`).
pub const DEPTH_LETTERS: [&str; 16] = ["A", "B", "C", "D", "E", "F", "G", "H", "J", "K", "L", "M", "N", "O", "P", "Q"];

const COUNTRIES: [&str; 6] = ["Aveland", "Borsk", "Calmaria", "Dunmere", "Estvia", "Fjordheim"];

/// Renders a registry as CSV with the default column names followed by the
/// feature columns of the first port (in key order).
pub fn registry_csv(ports: &[PortRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let extra: Vec<String> = ports.first().map(|p| p.raw_features.keys().cloned().collect()).unwrap_or_default();
    let mut header: Vec<String> = ["port_id", "name", "country", "lat", "lon", "harbor_size"].map(str::to_owned).to_vec();
    header.extend(extra.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for p in ports {
        let mut rec = vec![
            p.port_id.to_string(),
            p.name.clone(),
            p.country.clone(),
            p.lat.to_string(),
            p.lon.to_string(),
            p.harbor_size.map_or(String::new(), |s| s.code().to_owned()),
        ];
        rec.extend(extra.iter().map(|k| p.raw_features.get(k).cloned().flatten().unwrap_or_default()));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn pick<'a>(rng: &mut impl Rng, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

/// A random level, or `None` with probability `missing`.
fn cell(rng: &mut impl Rng, missing: f64, items: &[&str]) -> Option<String> {
    let v = pick(rng, items);
    (!rng.random_bool(missing)).then(|| v.to_owned())
}

/// Offsets `(lat, lon)` by roughly `meters` east and north.
fn offset(lat: f64, lon: f64, north_m: f64, east_m: f64) -> (f64, f64) {
    let dlat = north_m / 111_195.0;
    let dlon = east_m / (111_195.0 * lat.to_radians().cos());
    (lat + dlat, lon + dlon)
}

pub struct ToyWorld {
    pub ports: Vec<PortRecord>,
    pub registry_csv: String,
    pub ais_csv: String,
}

/// Visits of the shuttle vessel: three `1 -> 2` voyages and nothing else
/// reaches 2 straight from 1.
pub const TOY_SHUTTLE: [PortId; 6] = [1, 2, 1, 2, 1, 2];

/// About 40 ports on a grid (port 41 sits inside port 1's geofence) and
/// about 500 AIS rows from a dozen vessels, including a tanker, a vessel
/// without a call sign and a few malformed rows.
pub fn toy_world() -> ToyWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sizes = [HarborSize::Large, HarborSize::Medium, HarborSize::Small, HarborSize::VerySmall];
    let mut ports = Vec::new();
    for i in 0..40u32 {
        let (row, col) = (i / 8, i % 8);
        let lat = 40.0 + 2.0 * row as f64 + rng.random_range(-0.3..0.3);
        let lon = -5.0 + 2.5 * col as f64 + rng.random_range(-0.3..0.3);
        let size = if i == 0 { HarborSize::Large } else { sizes[rng.random_range(0..4)] };
        ports.push(toy_port(&mut rng, i + 1, lat, lon, Some(size)));
    }
    let (lat, lon) = offset(ports[0].lat, ports[0].lon, 3_000.0, 2_000.0);
    ports.push(toy_port(&mut rng, 41, lat, lon, Some(HarborSize::Small)));

    let mut routes: Vec<Vec<PortId>> = vec![TOY_SHUTTLE.to_vec()];
    for _ in 0..9 {
        let mut route: Vec<PortId> = Vec::new();
        while route.len() < 11 {
            let p = rng.random_range(1..=40);
            let prev = route.last().copied();
            if prev == Some(p) || (prev == Some(1) && p == 2) {
                continue;
            }
            route.push(p);
        }
        // Close the loop so every route is a cycle.
        let first = route[0];
        if route.last() != Some(&first) && !(route.last() == Some(&1) && first == 2) {
            route.push(first);
        }
        routes.push(route);
    }

    let mut rows: Vec<[String; 7]> = Vec::new();
    let mut vessel = |idx: usize, callsign: &str, vtype: &str, route: &[PortId], rng: &mut ChaCha8Rng| {
        let mmsi = format!("{:09}", 230_000_000 + idx as u64 * 1_111);
        let imo = format!("{:07}", 9_100_000 + idx as u64 * 37);
        let mut t = 1_700_000_000i64 + idx as i64 * 977;
        let mut emit = |lat: f64, lon: f64, t: i64| {
            rows.push([
                mmsi.clone(),
                imo.clone(),
                callsign.to_owned(),
                Timestamp(t).to_rfc3339(),
                format!("{lat:.5}"),
                format!("{lon:.5}"),
                vtype.to_owned(),
            ]);
        };
        for (k, &p) in route.iter().enumerate() {
            let port = &ports[p as usize - 1];
            for _ in 0..3 {
                let (lat, lon) = offset(port.lat, port.lon, rng.random_range(-800.0..800.0), rng.random_range(-800.0..800.0));
                emit(lat, lon, t);
                t += 1_800;
            }
            if let Some(&next) = route.get(k + 1) {
                let q = &ports[next as usize - 1];
                emit((port.lat + q.lat) / 2.0, (port.lon + q.lon) / 2.0, t + 20_000);
                t += 40_000;
            }
        }
    };
    for (i, route) in routes.iter().enumerate() {
        vessel(i, &format!("TOY{i:02}"), "cargo", route, &mut rng);
    }
    let tanker_route: Vec<PortId> = vec![1, 2, 5, 9, 1, 2, 5, 9, 1, 2];
    vessel(20, "TNK20", "tanker", &tanker_route, &mut rng);
    vessel(21, "", "cargo", &[3, 4, 3, 4], &mut rng);

    let mut ais = String::from("mmsi,imo,callsign,timestamp,lat,lon,vessel_type\n");
    for r in &rows {
        writeln!(ais, "{}", r.join(",")).expect("string write");
    }
    ais.push_str("230999999,9999999,BAD01,2023-11-14T22:13:20Z,95.0,10.0,cargo\n");
    ais.push_str("230999999,9999999,BAD01,not-a-time,45.0,10.0,cargo\n");
    ais.push_str("12345,9999999,BAD01,2023-11-14T22:13:20Z,45.0,10.0,cargo\n");
    ais.push_str("230999999,9999999,BAD01,2023-11-14T22:13:20Z,45.0\n");

    ToyWorld {
        registry_csv: registry_csv(&ports),
        ports,
        ais_csv: ais,
    }
}

fn toy_port(rng: &mut ChaCha8Rng, id: PortId, lat: f64, lon: f64, size: Option<HarborSize>) -> PortRecord {
    let mut f = std::collections::BTreeMap::new();
    f.insert("CARGO DEPTH".to_owned(), cell(rng, 0.1, &DEPTH_LETTERS));
    f.insert("SHELTER".to_owned(), cell(rng, 0.2, &["E", "F", "G", "N", "P"]));
    f.insert("RADIO".to_owned(), cell(rng, 0.3, &["N", "Y"]));
    f.insert("RAILWAY".to_owned(), cell(rng, 0.7, &["L", "M", "S"]));
    f.insert("FAX".to_owned(), cell(rng, 0.66, &["N", "Y"]));
    f.insert("REGION NUMBER".to_owned(), Some(format!("{}", 10 + id % 5)));
    PortRecord {
        port_id: id,
        name: format!("Port {id:02}"),
        country: COUNTRIES[(id as usize) % COUNTRIES.len()].to_owned(),
        lat,
        lon,
        harbor_size: size,
        raw_features: f,
    }
}

/// Run configuration for the toy world, with paths relative to the
/// directory holding it.
pub const TOY_CONFIG: &str = r#"seed = 11

[input]
ais = "ais.csv"
ports = "ports.csv"

[model]
k = 0.15
permutation_trials = 200

[model.forest]
trees = 50

[explain]
background_cap = 64
max_ports = 4
shap_permutations = 256
sage_permutations = 512
pdp_features = 2
"#;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedParams {
    pub ports: usize,
    pub vessels: usize,
    pub steps: usize,
    /// Strength of the preference for attractive ports.
    pub beta: f64,
    pub noise_features: usize,
    /// Distinct cargo depths, spread evenly over the depth letters.
    pub depth_levels: usize,
    pub seed: u64,
}

impl Default for PlantedParams {
    fn default() -> Self {
        PlantedParams {
            ports: 400,
            vessels: 100,
            steps: 120,
            beta: 2.5,
            noise_features: 6,
            depth_levels: 6,
            seed: 0,
        }
    }
}

pub struct PlantedWorld {
    pub ports: Vec<PortRecord>,
    pub voyages: Vec<Voyage>,
    /// Attractiveness per port, aligned with `ports`.
    pub attractiveness: Vec<f64>,
}

/// Names of the two features that drive attractiveness.
pub const PLANTED_FEATURES: [&str; 2] = ["CARGO DEPTH", "HARBOR SIZE"];

/// Ports whose attractiveness rises with cargo depth and harbor size; each
/// vessel walks a Markov chain choosing the next port with probability
/// proportional to `exp(beta * attractiveness)`.
pub fn planted_world(params: &PlantedParams) -> PlantedWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let levels = params.depth_levels.clamp(2, DEPTH_LETTERS.len());
    let sizes = [HarborSize::VerySmall, HarborSize::Small, HarborSize::Medium, HarborSize::Large];
    let noise_levels = ["A", "B", "C", "D", "E"];
    let mut ports = Vec::with_capacity(params.ports);
    let mut attractiveness = Vec::with_capacity(params.ports);
    for i in 0..params.ports {
        let depth = rng.random_range(0..levels);
        let size = rng.random_range(0..sizes.len());
        let a = depth as f64 / (levels - 1) as f64 + size as f64 / (sizes.len() - 1) as f64;
        attractiveness.push(a);
        let mut f = std::collections::BTreeMap::new();
        let letter = depth * (DEPTH_LETTERS.len() - 1) / (levels - 1);
        f.insert("CARGO DEPTH".to_owned(), Some(DEPTH_LETTERS[letter].to_owned()));
        for k in 0..params.noise_features {
            let levels: &[&str] = if k % 2 == 0 { &["N", "Y"] } else { &noise_levels };
            f.insert(format!("NOISE {k}"), cell(&mut rng, 0.1, levels));
        }
        ports.push(PortRecord {
            port_id: i as PortId + 1,
            name: format!("Planted {:03}", i + 1),
            country: COUNTRIES[rng.random_range(0..COUNTRIES.len())].to_owned(),
            lat: rng.random_range(-60.0..60.0),
            lon: rng.random_range(-179.0..179.0),
            harbor_size: Some(sizes[size]),
            raw_features: f,
        });
    }
    let weights: Vec<f64> = attractiveness.iter().map(|a| (params.beta * a).exp()).collect();
    let dist = WeightedIndex::new(&weights).expect("positive weights");
    let mut voyages = Vec::with_capacity(params.vessels * params.steps);
    for v in 0..params.vessels {
        let vessel = VesselId::new(&format!("{:09}", 300_000_000 + v), &format!("{:07}", 9_300_000 + v), &format!("PL{v:04}"))
            .expect("non-empty identifiers");
        let mut at = rng.random_range(0..params.ports);
        let mut t = 1_600_000_000i64;
        for _ in 0..params.steps {
            let next = loop {
                let n = dist.sample(&mut rng);
                if n != at {
                    break n;
                }
            };
            let depart = t + 86_400;
            let arrive = depart + rng.random_range(86_400..10 * 86_400);
            voyages.push(Voyage {
                vessel: vessel.clone(),
                origin: at as PortId + 1,
                destination: next as PortId + 1,
                depart: Timestamp(depart),
                arrive: Timestamp(arrive),
            });
            at = next;
            t = arrive;
        }
    }
    PlantedWorld {
        ports,
        voyages,
        attractiveness,
    }
}

/// Geofence radius small enough that no two planted ports merge.
pub const PLANTED_RADIUS_M: f64 = 1.0;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{parse_ais_stream, parse_port_registry, AisSchema, RegistrySchema};

    #[test]
    fn toy_world_is_deterministic_and_parses() {
        let a = toy_world();
        let b = toy_world();
        assert_eq!(a.ais_csv, b.ais_csv);
        assert_eq!(a.registry_csv, b.registry_csv);
        let ports = parse_port_registry(a.registry_csv.as_bytes(), &RegistrySchema::default()).unwrap();
        assert_eq!(ports, a.ports);
        let (records, rejects) = parse_ais_stream(a.ais_csv.as_bytes(), &AisSchema::default()).unwrap();
        assert!((450..=560).contains(&(records.len() + rejects.total_rejected())), "{}", records.len());
        assert_eq!(rejects.total_rejected(), 4);
    }

    #[test]
    fn planted_world_prefers_attractive_ports() {
        let w = planted_world(&PlantedParams {
            ports: 60,
            vessels: 10,
            steps: 50,
            ..Default::default()
        });
        assert_eq!(w.voyages.len(), 500);
        let mut arrivals = vec![0usize; 60];
        for v in &w.voyages {
            arrivals[v.destination as usize - 1] += 1;
            assert_ne!(v.origin, v.destination);
        }
        let top = (0..60).max_by(|&a, &b| w.attractiveness[a].total_cmp(&w.attractiveness[b])).unwrap();
        let bottom = (0..60).min_by(|&a, &b| w.attractiveness[a].total_cmp(&w.attractiveness[b])).unwrap();
        assert!(arrivals[top] > arrivals[bottom]);
    }
}
