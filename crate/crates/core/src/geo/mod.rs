//! Record ingestion and port geofencing.

mod ais;
mod geofence;
mod ports;

pub use ais::{
    parse_ais_path, parse_ais_stream, resolve_vessel_id, AisRecord, AisSchema, ColumnMap,
    RecordFormat, RejectReason, RejectReport, Timestamp, TimestampFormat, VesselId, VesselType,
};
pub use geofence::{assign_port, GeofenceIndex, RadiusPolicy};
pub use ports::{parse_port_registry, read_port_registry, HarborSize, PortId, PortRecord, RegistrySchema};

/// Mean spherical earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Great-circle distance in meters between two (lat, lon) points in degrees.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}
