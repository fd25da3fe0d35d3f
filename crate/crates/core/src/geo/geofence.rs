use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{haversine_m, HarborSize, PortId, PortRecord, EARTH_RADIUS_M};
use crate::error::{Error, Result};

/// Geofence radius in meters per harbor size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadiusPolicy {
    pub large: f64,
    pub medium: f64,
    pub small: f64,
    pub very_small: f64,
    pub missing: f64,
}

impl Default for RadiusPolicy {
    fn default() -> Self {
        RadiusPolicy {
            large: 10_000.0,
            medium: 6_000.0,
            small: 3_000.0,
            very_small: 2_000.0,
            missing: 3_000.0,
        }
    }
}

impl RadiusPolicy {
    pub fn uniform(meters: f64) -> Self {
        RadiusPolicy {
            large: meters,
            medium: meters,
            small: meters,
            very_small: meters,
            missing: meters,
        }
    }

    pub fn radius(&self, size: Option<HarborSize>) -> f64 {
        match size {
            Some(HarborSize::Large) => self.large,
            Some(HarborSize::Medium) => self.medium,
            Some(HarborSize::Small) => self.small,
            Some(HarborSize::VerySmall) => self.very_small,
            None => self.missing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Circle {
    port_id: PortId,
    lat: f64,
    lon: f64,
    radius: f64,
    rank: u8,
}

/// Circular port geofences with overlap resolution.
///
/// Circles whose open disks intersect are linked; every connected cluster
/// maps to its member with the highest harbor-size rank (smallest id on
/// ties). A point inside any member circle resolves to the cluster's
/// retainer. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GeofenceIndex {
    /// Sorted by latitude for band lookups.
    circles: Vec<Circle>,
    max_radius: f64,
    retainer: BTreeMap<PortId, PortId>,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn meters_to_degrees(m: f64) -> f64 {
    (m / EARTH_RADIUS_M).to_degrees()
}

impl GeofenceIndex {
    pub fn build(ports: &[PortRecord], policy: &RadiusPolicy) -> Result<Self> {
        if ports.is_empty() {
            return Err(Error::Empty("port list"));
        }
        let mut circles: Vec<Circle> = ports
            .iter()
            .map(|p| Circle {
                port_id: p.port_id,
                lat: p.lat,
                lon: p.lon,
                radius: policy.radius(p.harbor_size),
                rank: HarborSize::rank(p.harbor_size),
            })
            .collect();
        // Canonical order makes everything below independent of input order.
        circles.sort_by(|a, b| a.lat.total_cmp(&b.lat).then(a.port_id.cmp(&b.port_id)));
        let mut seen = std::collections::BTreeSet::new();
        for c in &circles {
            if !seen.insert(c.port_id) {
                return Err(Error::InvalidInput(format!("duplicate port id {}", c.port_id)));
            }
            if !(c.radius > 0.0) {
                return Err(Error::InvalidInput(format!("non-positive radius for port {}", c.port_id)));
            }
        }
        let max_radius = circles.iter().map(|c| c.radius).fold(0.0, f64::max);

        let n = circles.len();
        let mut sets = DisjointSet::new(n);
        let band = meters_to_degrees(2.0 * max_radius);
        for i in 0..n {
            for j in i + 1..n {
                if circles[j].lat - circles[i].lat > band {
                    break;
                }
                let d = haversine_m(circles[i].lat, circles[i].lon, circles[j].lat, circles[j].lon);
                if d < circles[i].radius + circles[j].radius {
                    sets.union(i, j);
                }
            }
        }

        let mut best: BTreeMap<usize, usize> = BTreeMap::new();
        for i in 0..n {
            let root = sets.find(i);
            let entry = best.entry(root).or_insert(i);
            let (cur, cand) = (&circles[*entry], &circles[i]);
            if (cand.rank, std::cmp::Reverse(cand.port_id)) > (cur.rank, std::cmp::Reverse(cur.port_id)) {
                *entry = i;
            }
        }
        let retainer = (0..n)
            .map(|i| {
                let root = sets.find(i);
                (circles[i].port_id, circles[best[&root]].port_id)
            })
            .collect();

        Ok(GeofenceIndex {
            circles,
            max_radius,
            retainer,
        })
    }

    /// Port a point falls in, after overlap resolution.
    pub fn assign(&self, lat: f64, lon: f64) -> Option<PortId> {
        let band = meters_to_degrees(self.max_radius);
        let start = self.circles.partition_point(|c| c.lat < lat - band);
        self.circles[start..]
            .iter()
            .take_while(|c| c.lat <= lat + band)
            .find(|c| haversine_m(lat, lon, c.lat, c.lon) < c.radius)
            .map(|c| self.retainer[&c.port_id])
    }

    /// The retained port for an original registry port.
    pub fn resolve(&self, port_id: PortId) -> Option<PortId> {
        self.retainer.get(&port_id).copied()
    }

    /// Original port id → retained port id, for every port in the index.
    pub fn resolution(&self) -> &BTreeMap<PortId, PortId> {
        &self.retainer
    }

    pub fn retained_ports(&self) -> impl Iterator<Item = PortId> + '_ {
        self.retainer.iter().filter(|(k, v)| k == v).map(|(k, _)| *k)
    }

    pub fn len(&self) -> usize {
        self.circles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.circles.is_empty()
    }
}

/// Resolved port containing `(lat, lon)`, if any.
pub fn assign_port(lat: f64, lon: f64, index: &GeofenceIndex) -> Option<PortId> {
    index.assign(lat, lon)
}
