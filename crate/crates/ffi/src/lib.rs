//! C ABI over the portrank library.
//!
//! Every fallible call returns a [`PnStatus`]; on failure the message is
//! available from [`pn_last_error`] on the same thread. Objects are opaque
//! handles created by `*_new`/`*_load`/`*_compute` style calls and released
//! with the matching `*_free`. Output arrays are caller-allocated; calls that
//! fill them take the array length and fail with `PN_STATUS_BUFFER_TOO_SMALL`
//! when it is short.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use portrank::centrality::{centrality_table, write_centrality, CentralityParams, CentralityTable, Measure};
use portrank::error::Error;
use portrank::geo::{haversine_m, read_port_registry, GeofenceIndex, RadiusPolicy, RegistrySchema};
use portrank::model::{rank_auc, roc_auc, RandomForest};
use portrank::network::{largest_scc, read_edge_list, PortsNetwork};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Parse = 5,
    Empty = 6,
    NotConverged = 7,
    Degenerate = 8,
    Unreachable = 9,
    Schema = 10,
    Panic = 11,
}

/// Centrality measure selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnMeasure {
    InDegree = 0,
    OutDegree = 1,
    PageRank = 2,
    WeightedPageRank = 3,
    Betweenness = 4,
    Closeness = 5,
}

impl From<PnMeasure> for Measure {
    fn from(m: PnMeasure) -> Self {
        match m {
            PnMeasure::InDegree => Measure::InDegree,
            PnMeasure::OutDegree => Measure::OutDegree,
            PnMeasure::PageRank => Measure::PageRank,
            PnMeasure::WeightedPageRank => Measure::WeightedPageRank,
            PnMeasure::Betweenness => Measure::Betweenness,
            PnMeasure::Closeness => Measure::Closeness,
        }
    }
}

/// Directed, trip-weighted ports network.
pub struct PnNetwork(PortsNetwork);

/// Raw and aggregated centralities of one network.
pub struct PnCentrality(CentralityTable);

/// Port geofences built from a registry.
pub struct PnGeofence(GeofenceIndex);

/// Trained random forest.
pub struct PnForest(RandomForest);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PnStatus {
    match e {
        Error::Io { .. } | Error::WouldOverwrite(_) | Error::MissingArtifact(_) => PnStatus::Io,
        Error::Csv(_) | Error::Json(_) | Error::Config(_) => PnStatus::Parse,
        Error::Schema(_) | Error::MismatchedPorts(_) | Error::UnseenLevel { .. } => PnStatus::Schema,
        Error::Empty(_) | Error::NoObservedCells(_) => PnStatus::Empty,
        Error::NotConverged { .. } => PnStatus::NotConverged,
        Error::DegenerateCentrality(_) | Error::SingleClass | Error::TooFewInClass { .. } => PnStatus::Degenerate,
        Error::Unreachable(_) => PnStatus::Unreachable,
        Error::InvalidInput(_) | Error::Unsorted { .. } => PnStatus::InvalidArgument,
    }
}

fn fail(status: PnStatus, msg: impl Into<String>) -> PnStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, recording errors and turning panics into `PN_STATUS_PANIC`.
fn guard(f: impl FnOnce() -> Result<(), PnStatus>) -> PnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PnStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(PnStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn lift<T>(r: portrank::Result<T>) -> Result<T, PnStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, PnStatus> {
    // SAFETY: callers pass either null or a pointer obtained from this library.
    unsafe { p.as_ref() }.ok_or_else(|| fail(PnStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, PnStatus> {
    // SAFETY: as above; the caller owns the pointed-to slot.
    unsafe { p.as_mut() }.ok_or_else(|| fail(PnStatus::NullPointer, format!("{what} is null")))
}

fn in_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], PnStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(PnStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: the caller guarantees `len` readable elements at `p`.
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

fn out_slice<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], PnStatus> {
    if len < need {
        return Err(fail(PnStatus::BufferTooSmall, format!("{what} holds {len}, need {need}")));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(PnStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: the caller guarantees `len >= need` writable elements at `p`.
    Ok(unsafe { slice::from_raw_parts_mut(p, need) })
}

fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, PnStatus> {
    if p.is_null() {
        return Err(fail(PnStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: the caller passes a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(PnStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(Path::new(s))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn pn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Great-circle distance in meters.
#[no_mangle]
pub extern "C" fn pn_haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    haversine_m(lat1, lon1, lat2, lon2)
}

// --- networks --------------------------------------------------------------

/// Builds a network from `n` parallel (src, dst, weight) arrays. Self-loops,
/// zero weights and repeated pairs are rejected.
///
/// # Safety
/// Each array must hold `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pn_network_from_edges(
    src: *const u32,
    dst: *const u32,
    weight: *const u64,
    n: usize,
    out: *mut *mut PnNetwork,
) -> PnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let (s, d, w) = (in_slice(src, n, "src")?, in_slice(dst, n, "dst")?, in_slice(weight, n, "weight")?);
        let net = lift(PortsNetwork::from_edges((0..n).map(|i| (s[i], d[i], w[i]))))?;
        *out = boxed(PnNetwork(net));
        Ok(())
    })
}

/// Reads a `src,dst,weight` edge list.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pn_network_read(path: *const c_char, out: *mut *mut PnNetwork) -> PnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let file = std::fs::File::open(path).map_err(|e| fail(PnStatus::Io, format!("{}: {e}", path.display())))?;
        *out = boxed(PnNetwork(lift(read_edge_list(file))?));
        Ok(())
    })
}

/// Node count, 0 for NULL.
///
/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pn_network_node_count(net: *const PnNetwork) -> usize {
    unsafe { net.as_ref() }.map_or(0, |n| n.0.node_count())
}

/// Edge count, 0 for NULL.
///
/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pn_network_edge_count(net: *const PnNetwork) -> usize {
    unsafe { net.as_ref() }.map_or(0, |n| n.0.edge_count())
}

/// Port ids in node order (ascending).
///
/// # Safety
/// `net` must be a live handle; `ids` must hold `len` writable elements.
#[no_mangle]
pub unsafe extern "C" fn pn_network_nodes(net: *const PnNetwork, ids: *mut u32, len: usize) -> PnStatus {
    guard(|| {
        let net = non_null(net, "net")?;
        let nodes = net.0.nodes();
        out_slice(ids, len, nodes.len(), "ids")?.copy_from_slice(nodes);
        Ok(())
    })
}

/// Trip count on `from -> to`, 0 when there is no such edge.
///
/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pn_network_weight(net: *const PnNetwork, from: u32, to: u32) -> u64 {
    unsafe { net.as_ref() }.and_then(|n| n.0.weight(from, to)).unwrap_or(0)
}

/// Induced subgraph on the largest strongly connected component.
///
/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pn_network_largest_scc(net: *const PnNetwork, out: *mut *mut PnNetwork) -> PnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let net = non_null(net, "net")?;
        *out = boxed(PnNetwork(lift(largest_scc(&net.0))?));
        Ok(())
    })
}

/// # Safety
/// `net` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pn_network_free(net: *mut PnNetwork) {
    if !net.is_null() {
        drop(unsafe { Box::from_raw(net) });
    }
}

// --- centralities ----------------------------------------------------------

/// All six centralities plus z-scores and the aggregate, with default
/// parameters (damping 0.85, ln(1 + w) weights, incoming closeness).
///
/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pn_centrality_compute(net: *const PnNetwork, out: *mut *mut PnCentrality) -> PnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let net = non_null(net, "net")?;
        *out = boxed(PnCentrality(lift(centrality_table(&net.0, &CentralityParams::default()))?));
        Ok(())
    })
}

/// Number of ports scored, 0 for NULL.
///
/// # Safety
/// `c` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pn_centrality_len(c: *const PnCentrality) -> usize {
    unsafe { c.as_ref() }.map_or(0, |c| c.0.raw.len())
}

/// Raw values of one measure, aligned with `pn_network_nodes`.
///
/// # Safety
/// `c` must be a live handle; `measure` one of the `PnMeasure` values;
/// `values` must hold `len` writable elements.
#[no_mangle]
pub unsafe extern "C" fn pn_centrality_values(c: *const PnCentrality, measure: PnMeasure, values: *mut f64, len: usize) -> PnStatus {
    guard(|| {
        let c = non_null(c, "centrality")?;
        let v = c.0.raw.values(measure.into());
        out_slice(values, len, v.len(), "values")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Aggregated score and 1-based rank per port.
///
/// # Safety
/// `c` must be a live handle; both arrays must hold `len` writable elements.
#[no_mangle]
pub unsafe extern "C" fn pn_centrality_aggregate(
    c: *const PnCentrality,
    aggregate: *mut f64,
    rank: *mut u32,
    len: usize,
) -> PnStatus {
    guard(|| {
        let c = non_null(c, "centrality")?;
        let agg = &c.0.aggregated;
        out_slice(aggregate, len, agg.aggregate.len(), "aggregate")?.copy_from_slice(&agg.aggregate);
        let r = out_slice(rank, len, agg.rank.len(), "rank")?;
        for (dst, &src) in r.iter_mut().zip(&agg.rank) {
            *dst = src as u32;
        }
        Ok(())
    })
}

/// Writes the centrality table as CSV.
///
/// # Safety
/// `c` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pn_centrality_write(c: *const PnCentrality, path: *const c_char) -> PnStatus {
    guard(|| {
        let c = non_null(c, "centrality")?;
        let path = path_arg(path, "path")?;
        let file = std::fs::File::create(path).map_err(|e| fail(PnStatus::Io, format!("{}: {e}", path.display())))?;
        lift(write_centrality(std::io::BufWriter::new(file), &c.0))
    })
}

/// # Safety
/// `c` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pn_centrality_free(c: *mut PnCentrality) {
    if !c.is_null() {
        drop(unsafe { Box::from_raw(c) });
    }
}

// --- geofences -------------------------------------------------------------

/// Geofences from a registry CSV with the default column names. A positive
/// `uniform_radius_m` gives every port that radius; otherwise radii follow
/// harbor size.
///
/// # Safety
/// `registry` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pn_geofence_load(registry: *const c_char, uniform_radius_m: f64, out: *mut *mut PnGeofence) -> PnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(registry, "registry")?;
        let ports = lift(read_port_registry(path, &RegistrySchema::default()))?;
        let policy = if uniform_radius_m > 0.0 {
            RadiusPolicy::uniform(uniform_radius_m)
        } else {
            RadiusPolicy::default()
        };
        *out = boxed(PnGeofence(lift(GeofenceIndex::build(&ports, &policy))?));
        Ok(())
    })
}

/// Retained port whose geofence contains the point. Writes 0 to `port`
/// when no geofence does.
///
/// # Safety
/// `g` must be a live handle; `port` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pn_geofence_assign(g: *const PnGeofence, lat: f64, lon: f64, port: *mut u32) -> PnStatus {
    guard(|| {
        let g = non_null(g, "geofence")?;
        let port = out_ptr(port, "port")?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(fail(PnStatus::InvalidArgument, format!("coordinate ({lat}, {lon}) out of range")));
        }
        *port = g.0.assign(lat, lon).unwrap_or(0);
        Ok(())
    })
}

/// Retained port that `port_id` merged into, 0 if unknown.
///
/// # Safety
/// `g` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pn_geofence_resolve(g: *const PnGeofence, port_id: u32) -> u32 {
    unsafe { g.as_ref() }.and_then(|g| g.0.resolve(port_id)).unwrap_or(0)
}

/// # Safety
/// `g` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pn_geofence_free(g: *mut PnGeofence) {
    if !g.is_null() {
        drop(unsafe { Box::from_raw(g) });
    }
}

// --- forests ---------------------------------------------------------------

/// Loads a forest saved by the `train` stage (`model.json`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pn_forest_load(path: *const c_char, out: *mut *mut PnForest) -> PnStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        *out = boxed(PnForest(lift(RandomForest::load(path))?));
        Ok(())
    })
}

/// Feature count expected per row, 0 for NULL.
///
/// # Safety
/// `f` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pn_forest_n_features(f: *const PnForest) -> usize {
    unsafe { f.as_ref() }.map_or(0, |f| f.0.n_features())
}

/// Positive-class probability for `rows` row-major rows of `n_features`
/// values each.
///
/// # Safety
/// `f` must be a live handle; `x` must hold `rows * n_features` readable
/// values and `proba` `rows` writable ones.
#[no_mangle]
pub unsafe extern "C" fn pn_forest_predict(f: *const PnForest, x: *const f64, rows: usize, n_features: usize, proba: *mut f64) -> PnStatus {
    guard(|| {
        let f = non_null(f, "forest")?;
        if n_features != f.0.n_features() {
            return Err(fail(
                PnStatus::InvalidArgument,
                format!("model expects {} features, got {n_features}", f.0.n_features()),
            ));
        }
        let total = rows
            .checked_mul(n_features)
            .ok_or_else(|| fail(PnStatus::InvalidArgument, "rows * n_features overflows"))?;
        let x = in_slice(x, total, "x")?;
        let out = out_slice(proba, rows, rows, "proba")?;
        for (r, p) in out.iter_mut().enumerate() {
            *p = f.0.predict_one(&x[r * n_features..(r + 1) * n_features]);
        }
        Ok(())
    })
}

/// # Safety
/// `f` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pn_forest_free(f: *mut PnForest) {
    if !f.is_null() {
        drop(unsafe { Box::from_raw(f) });
    }
}

// --- evaluation ------------------------------------------------------------

/// Area under the ROC curve; `labels` are 0 or 1. `rank_auc` may be NULL;
/// otherwise it receives the Mann-Whitney estimate.
///
/// # Safety
/// `scores` and `labels` must hold `n` readable elements; `auc` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pn_roc_auc(scores: *const f64, labels: *const u8, n: usize, auc: *mut f64, rank: *mut f64) -> PnStatus {
    guard(|| {
        let auc = out_ptr(auc, "auc")?;
        let s = in_slice(scores, n, "scores")?;
        let l = in_slice(labels, n, "labels")?;
        if let Some(bad) = l.iter().find(|&&v| v > 1) {
            return Err(fail(PnStatus::InvalidArgument, format!("label {bad} is not 0 or 1")));
        }
        let y: Vec<bool> = l.iter().map(|&v| v == 1).collect();
        *auc = lift(roc_auc(s, &y))?.auc;
        if !rank.is_null() {
            // SAFETY: non-null and writable per the contract.
            unsafe { *rank = lift(rank_auc(s, &y))? };
        }
        Ok(())
    })
}
