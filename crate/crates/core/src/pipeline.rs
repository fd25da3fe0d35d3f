//! Stage runner. Each stage reads its upstream artifacts from the output
//! directory, writes its own files plus a `manifest.json` into
//! `<out>/<stage>/`, and can be re-run on its own.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::centrality::{centrality_table, read_centrality, write_centrality, CentralityTable};
use crate::config::{seeds, RunConfig};
use crate::error::{Error, Result};
use crate::explain::{
    background_sample, choose_rows, default_grid, force_report, local_rank, partial_dependence, sage_values, shap_values,
    write_partial_dependence, write_sage, write_shap_matrix, Mode,
};
use crate::features::{
    clean, encode, impute, profile, read_feature_table, write_feature_table, write_missing_mask, EncodedFeature, Encoding,
    FeatureKind, FeatureTable, RawTable,
};
use crate::geo::{
    parse_ais_path, read_port_registry, resolve_vessel_id, GeofenceIndex, PortId, PortRecord, Timestamp, VesselId, VesselType,
};
use crate::model::{
    label_topk, permutation_aucs, rank_auc, read_labels, roc_auc, split, write_labels, write_roc, ForestParams, Labeling,
    RandomForest, Split,
};
use crate::network::{build_network, largest_scc, network_stats, read_edge_list, write_edge_list};
use crate::report::{geojson, report_rows, write_top_ports, PortScore};
use crate::visits::{derive_all_voyages, extract_all, filter_cargo, read_voyages, write_visits, write_voyages, VesselRecord};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Visits,
    Network,
    Centrality,
    Features,
    Train,
    Explain,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Visits,
        Stage::Network,
        Stage::Centrality,
        Stage::Features,
        Stage::Train,
        Stage::Explain,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Visits => "visits",
            Stage::Network => "network",
            Stage::Centrality => "centrality",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Explain => "explain",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown stage {s:?}")))
    }
}

/// Provenance record written next to every stage's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub version: String,
    pub config_hash: String,
    /// External input file name to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Upstream stage to the identity hash of its manifest.
    pub upstream: BTreeMap<String, String>,
    /// Output file (relative to the stage directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
    pub metrics: BTreeMap<String, f64>,
    /// Wall-clock time; not part of the identity hash.
    pub elapsed_ms: u64,
}

impl StageManifest {
    /// SHA-256 of the manifest with timing removed.
    pub fn identity_hash(&self) -> String {
        let mut m = self.clone();
        m.elapsed_ms = 0;
        sha256_hex(serde_json::to_string(&m).expect("manifest serializes").as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Collects a stage's files in memory, then writes them with the manifest.
struct StageOutput {
    manifest: StageManifest,
    files: BTreeMap<String, Vec<u8>>,
}

impl StageOutput {
    fn put(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(name.into(), bytes);
    }

    fn put_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.put(name, buf);
        Ok(())
    }

    fn put_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.put(name, s.into_bytes());
        Ok(())
    }

    fn count(&mut self, key: &str, v: usize) {
        self.manifest.counts.insert(key.to_owned(), v as u64);
    }

    fn metric(&mut self, key: &str, v: f64) {
        self.manifest.metrics.insert(key.to_owned(), v);
    }
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: RunConfig,
    pub out: PathBuf,
    pub force: bool,
}

#[derive(Serialize, Deserialize)]
struct RecordRow {
    vessel: String,
    timestamp: String,
    lat: f64,
    lon: f64,
    port_id: Option<PortId>,
    vessel_type: String,
}

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    port_id: PortId,
    split: String,
    label: u8,
    score: f64,
}

/// Sidecar describing an encoded feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub missing_threshold: f64,
    pub cycles: usize,
    pub ridge: f64,
    /// Master seed of the run; the imputer itself draws no random numbers.
    pub seed: u64,
    pub rows: usize,
    pub dropped_meta: Vec<String>,
    pub dropped_missing: Vec<String>,
    pub features: Vec<EncodedFeature>,
}

impl Pipeline {
    pub fn new(config: RunConfig, out: PathBuf, force: bool) -> Self {
        Pipeline { config, out, force }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    fn artifact(&self, stage: Stage, file: &str) -> PathBuf {
        self.stage_dir(stage).join(file)
    }

    pub fn has_artifact(&self, stage: Stage) -> bool {
        self.artifact(stage, MANIFEST).is_file()
    }

    fn require(&self, stage: Stage) -> Result<StageManifest> {
        let path = self.artifact(stage, MANIFEST);
        if !path.is_file() {
            return Err(Error::MissingArtifact(stage.name()));
        }
        StageManifest::read(&path)
    }

    fn begin(&self, stage: Stage, upstream: &[(Stage, &StageManifest)]) -> StageOutput {
        StageOutput {
            manifest: StageManifest {
                stage: stage.name().to_owned(),
                version: VERSION.to_owned(),
                config_hash: self.config.hash(),
                inputs: BTreeMap::new(),
                upstream: upstream
                    .iter()
                    .map(|(s, m)| (s.name().to_owned(), m.identity_hash()))
                    .collect(),
                outputs: BTreeMap::new(),
                counts: BTreeMap::new(),
                metrics: BTreeMap::new(),
                elapsed_ms: 0,
            },
            files: BTreeMap::new(),
        }
    }

    fn input(&self, out: &mut StageOutput, key: &str, path: &Path) -> Result<()> {
        out.manifest.inputs.insert(key.to_owned(), hash_file(path)?);
        Ok(())
    }

    fn finish(&self, stage: Stage, mut out: StageOutput, started: Instant) -> Result<StageManifest> {
        let dir = self.stage_dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for (name, bytes) in &out.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            out.manifest.outputs.insert(name.clone(), sha256_hex(bytes));
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        out.manifest.elapsed_ms = started.elapsed().as_millis() as u64;
        let path = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&out.manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        log::info!("{stage}: wrote {} files in {} ms", out.files.len(), out.manifest.elapsed_ms);
        Ok(out.manifest)
    }

    pub fn run(&self, stage: Stage) -> Result<StageManifest> {
        self.config.validate()?;
        let existing = self.artifact(stage, MANIFEST);
        if existing.exists() && !self.force {
            return Err(Error::WouldOverwrite(self.stage_dir(stage)));
        }
        let started = Instant::now();
        let out = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Visits => self.visits()?,
            Stage::Network => self.network()?,
            Stage::Centrality => self.centrality()?,
            Stage::Features => self.features()?,
            Stage::Train => self.train()?,
            Stage::Explain => self.explain()?,
            Stage::Report => self.report()?,
        };
        self.finish(stage, out, started)
    }

    /// Runs every stage in order. Without an AIS source the run starts from
    /// the configured voyage list.
    pub fn run_all(&self) -> Result<Vec<StageManifest>> {
        Stage::ALL
            .into_iter()
            .filter(|&s| s != Stage::Ingest || self.config.input.ais.is_some())
            .map(|s| self.run(s))
            .collect()
    }

    fn registry(&self) -> Result<Vec<PortRecord>> {
        read_port_registry(&self.config.input.ports, &self.config.registry_schema)
    }

    fn ingest(&self) -> Result<StageOutput> {
        let ais = self
            .config
            .input
            .ais
            .as_ref()
            .ok_or_else(|| Error::Config("input.ais is not set".into()))?;
        let mut out = self.begin(Stage::Ingest, &[]);
        self.input(&mut out, "ais", ais)?;
        self.input(&mut out, "ports", &self.config.input.ports)?;
        let registry = self.registry()?;
        let index = GeofenceIndex::build(&registry, &self.config.radius_policy)?;
        let (records, rejects) = parse_ais_path(ais, &self.config.ais_schema)?;

        let mut rows = Vec::with_capacity(records.len());
        let mut unidentified = 0;
        let mut in_port = 0;
        for r in &records {
            let Some(vessel) = resolve_vessel_id(r) else {
                unidentified += 1;
                continue;
            };
            let port = index.assign(r.lat, r.lon);
            in_port += usize::from(port.is_some());
            rows.push(RecordRow {
                vessel: vessel.key(),
                timestamp: r.timestamp.to_rfc3339(),
                lat: r.lat,
                lon: r.lon,
                port_id: port,
                vessel_type: r.vessel_type.as_str().to_owned(),
            });
        }
        out.put_with("records.csv", |buf| {
            let mut w = csv::Writer::from_writer(buf);
            for row in &rows {
                w.serialize(row)?;
            }
            w.flush().map_err(|e| Error::io("<records>", e))?;
            Ok(())
        })?;
        out.put_with("geofence.csv", |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["port_id", "retained_by"])?;
            for (p, r) in index.resolution() {
                w.write_record([p.to_string(), r.to_string()])?;
            }
            w.flush().map_err(|e| Error::io("<geofence>", e))?;
            Ok(())
        })?;
        out.put_json("rejects.json", &rejects)?;
        out.count("ports", registry.len());
        out.count("geofences", index.len());
        out.count("accepted", rejects.accepted);
        out.count("rejected", rejects.total_rejected());
        out.count("unidentified", unidentified);
        out.count("records", rows.len());
        out.count("in_port", in_port);
        Ok(out)
    }

    fn visits(&self) -> Result<StageOutput> {
        if !self.has_artifact(Stage::Ingest) {
            if let Some(path) = &self.config.input.voyages {
                let mut out = self.begin(Stage::Visits, &[]);
                self.input(&mut out, "voyages", path)?;
                let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
                let voyages = read_voyages(file)?;
                out.put_with("voyages.csv", |buf| write_voyages(buf, &voyages))?;
                out.count("voyages", voyages.len());
                return Ok(out);
            }
        }
        let upstream = self.require(Stage::Ingest)?;
        let mut out = self.begin(Stage::Visits, &[(Stage::Ingest, &upstream)]);
        let path = self.artifact(Stage::Ingest, "records.csv");
        let mut reader = csv::Reader::from_path(&path)?;
        let mut records = Vec::new();
        for row in reader.deserialize() {
            let row: RecordRow = row?;
            records.push(VesselRecord {
                vessel: VesselId::from_key(&row.vessel)
                    .ok_or_else(|| Error::InvalidInput(format!("bad vessel key {:?}", row.vessel)))?,
                timestamp: Timestamp::parse_rfc3339(&row.timestamp)
                    .ok_or_else(|| Error::InvalidInput(format!("bad timestamp {:?}", row.timestamp)))?,
                port: row.port_id,
                vessel_type: VesselType::parse(&row.vessel_type),
            });
        }
        let extraction = extract_all(records, self.config.visits.min_messages)?;
        let all_visits = extraction.visits.len();
        let visits = if self.config.visits.cargo_only {
            let (kept, report) = filter_cargo(extraction.visits, &extraction.vessel_types);
            out.count("excluded_visits", report.excluded_visits.values().sum());
            out.count("excluded_vessels", report.excluded_vessels.values().sum());
            out.put_json("cargo_filter.json", &report)?;
            kept
        } else {
            extraction.visits
        };
        let voyages = derive_all_voyages(&visits);
        out.put_with("visits.csv", |buf| write_visits(buf, &visits))?;
        out.put_with("voyages.csv", |buf| write_voyages(buf, &voyages))?;
        out.count("records", extraction.records);
        out.count("duplicate_timestamps", extraction.duplicate_timestamps);
        out.count("vessels", extraction.vessel_types.len());
        out.count("visits_before_filter", all_visits);
        out.count("visits", visits.len());
        out.count("voyages", voyages.len());
        Ok(out)
    }

    fn network(&self) -> Result<StageOutput> {
        let upstream = self.require(Stage::Visits)?;
        let mut out = self.begin(Stage::Network, &[(Stage::Visits, &upstream)]);
        let path = self.artifact(Stage::Visits, "voyages.csv");
        let voyages = read_voyages(fs::File::open(&path).map_err(|e| Error::io(&path, e))?)?;
        let full = build_network(&voyages)?;
        let scc = largest_scc(&full)?;
        out.put_with("edges.csv", |buf| write_edge_list(buf, &full))?;
        out.put_with("scc_edges.csv", |buf| write_edge_list(buf, &scc))?;
        let mut stats = BTreeMap::new();
        stats.insert("network", network_stats(&full)?);
        stats.insert("largest_scc", network_stats(&scc)?);
        out.put_json("stats.json", &stats)?;
        out.count("nodes", full.node_count());
        out.count("edges", full.edge_count());
        out.count("scc_nodes", scc.node_count());
        out.count("scc_edges", scc.edge_count());
        Ok(out)
    }

    fn centrality(&self) -> Result<StageOutput> {
        let upstream = self.require(Stage::Network)?;
        let mut out = self.begin(Stage::Centrality, &[(Stage::Network, &upstream)]);
        let path = self.artifact(Stage::Network, "scc_edges.csv");
        let net = read_edge_list(fs::File::open(&path).map_err(|e| Error::io(&path, e))?)?;
        let table = centrality_table(&net, &self.config.centrality)?;
        out.put_with("centrality.csv", |buf| write_centrality(buf, &table))?;
        out.count("ports", table.raw.len());
        Ok(out)
    }

    fn features(&self) -> Result<StageOutput> {
        let mut out = self.begin(Stage::Features, &[]);
        self.input(&mut out, "ports", &self.config.input.ports)?;
        let registry = self.registry()?;
        // Ports absorbed into another port's geofence never appear in the
        // network; keep one row per retained port.
        let index = GeofenceIndex::build(&registry, &self.config.radius_policy)?;
        let retained: BTreeSet<PortId> = index.retained_ports().collect();
        let ports: Vec<PortRecord> = registry.into_iter().filter(|p| retained.contains(&p.port_id)).collect();
        let cfg = &self.config.features;
        let raw = RawTable::from_registry(&ports);
        let specs = profile(&raw, &cfg.continuous);
        let cleaned = clean(&raw, &specs, &cfg.blocklist, cfg.missing_threshold)?;
        let (encoded, encoding) = encode(&cleaned)?;
        let imputed = impute(&encoded, &cfg.impute)?;

        out.put_with("profile.csv", |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["feature", "kind", "missing_fraction", "support", "cardinality", "retained"])?;
            for s in &specs {
                let kept = cleaned.specs.iter().any(|c| c.name == s.name);
                w.write_record([
                    s.name.clone(),
                    match s.kind {
                        FeatureKind::Categorical => "categorical".into(),
                        FeatureKind::Continuous => "continuous".into(),
                    },
                    s.missing_fraction.to_string(),
                    s.support.to_string(),
                    s.cardinality.to_string(),
                    u8::from(kept).to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io("<profile>", e))?;
            Ok(())
        })?;
        out.put_with("features.csv", |buf| write_feature_table(buf, &imputed))?;
        out.put_with("mask.csv", |buf| write_missing_mask(buf, &imputed))?;
        let sidecar = FeatureSidecar {
            missing_threshold: cfg.missing_threshold,
            cycles: cfg.impute.cycles,
            ridge: cfg.impute.ridge,
            seed: self.config.seed,
            rows: imputed.rows(),
            dropped_meta: cleaned.dropped_meta.clone(),
            dropped_missing: cleaned.dropped_missing.clone(),
            features: encoding.features.clone(),
        };
        out.put(
            "features.toml",
            toml::to_string(&sidecar).map_err(|e| Error::Config(e.to_string()))?.into_bytes(),
        );
        out.count("rows", imputed.rows());
        out.count("columns_profiled", specs.len());
        out.count("columns_retained", imputed.cols());
        out.count("cells_imputed", imputed.missing.iter().filter(|&&m| m).count());
        Ok(out)
    }

    fn load_features(&self) -> Result<(FeatureTable, FeatureSidecar)> {
        let values = self.artifact(Stage::Features, "features.csv");
        let mask = self.artifact(Stage::Features, "mask.csv");
        let table = read_feature_table(
            fs::File::open(&values).map_err(|e| Error::io(&values, e))?,
            Some(fs::File::open(&mask).map_err(|e| Error::io(&mask, e))?),
        )?;
        let side = self.artifact(Stage::Features, "features.toml");
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar = toml::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
        Ok((table, sidecar))
    }

    fn load_centrality(&self) -> Result<CentralityTable> {
        let path = self.artifact(Stage::Centrality, "centrality.csv");
        read_centrality(fs::File::open(&path).map_err(|e| Error::io(&path, e))?)
    }

    fn forest_params(&self) -> ForestParams {
        ForestParams {
            seed: self.config.seed_for(seeds::FOREST),
            ..self.config.model.forest
        }
    }

    fn train(&self) -> Result<StageOutput> {
        let cen = self.require(Stage::Centrality)?;
        let fea = self.require(Stage::Features)?;
        let mut out = self.begin(Stage::Train, &[(Stage::Centrality, &cen), (Stage::Features, &fea)]);
        let table = self.load_centrality()?;
        let (features, _) = self.load_features()?;
        let fset: BTreeSet<PortId> = features.port_ids.iter().copied().collect();
        let (joined, unjoined): (Vec<PortId>, Vec<PortId>) =
            table.aggregated.ports.iter().partition(|p| fset.contains(p));
        if !unjoined.is_empty() {
            log::warn!("{} network ports have no feature row", unjoined.len());
        }
        out.put_with("unjoined.csv", |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["port_id"])?;
            for p in &unjoined {
                w.write_record([p.to_string()])?;
            }
            w.flush().map_err(|e| Error::io("<unjoined>", e))?;
            Ok(())
        })?;

        let m = &self.config.model;
        let labels = label_topk(&table.aggregated, Some(&joined), m.k)?;
        let rows = features.rows_for(&labels.ports)?;
        let parts = split(&labels.labels, m.train_fraction, self.config.seed_for(seeds::SPLIT))?;
        let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) {
            (idx.iter().map(|&i| rows[i].clone()).collect(), idx.iter().map(|&i| labels.labels[i]).collect())
        };
        let (train_x, train_y) = pick(&parts.train);
        let test_y: Vec<bool> = parts.test.iter().map(|&i| labels.labels[i]).collect();
        let forest = RandomForest::train(&train_x, &train_y, &features.names, &self.forest_params())?;
        let scores = forest.predict_proba(&rows)?;
        let test_scores: Vec<f64> = parts.test.iter().map(|&i| scores[i]).collect();
        let curve = roc_auc(&test_scores, &test_y)?;
        let rank = rank_auc(&test_scores, &test_y)?;
        let perm = permutation_aucs(&test_scores, &test_y, m.permutation_trials, self.config.seed_for(seeds::PERMUTATION))?;
        let perm_mean = if perm.is_empty() { f64::NAN } else { perm.iter().sum::<f64>() / perm.len() as f64 };
        let train_acc = {
            let s = forest.predict(&train_x)?;
            s.iter().zip(&train_y).filter(|(a, b)| a == b).count() as f64 / train_y.len() as f64
        };

        out.put_with("labels.csv", |buf| write_labels(buf, &labels))?;
        out.put_json("split.json", &parts)?;
        out.put("model.json", forest.to_json()?.into_bytes());
        out.put_with("roc.csv", |buf| write_roc(buf, &curve))?;
        let test_set: BTreeSet<usize> = parts.test.iter().copied().collect();
        out.put_with("scores.csv", |buf| {
            let mut w = csv::Writer::from_writer(buf);
            for (i, &p) in labels.ports.iter().enumerate() {
                w.serialize(ScoreRow {
                    port_id: p,
                    split: if test_set.contains(&i) { "test" } else { "train" }.into(),
                    label: labels.labels[i].into(),
                    score: scores[i],
                })?;
            }
            w.flush().map_err(|e| Error::io("<scores>", e))?;
            Ok(())
        })?;
        out.count("population", labels.ports.len());
        out.count("positives", labels.positives);
        out.count("unjoined", unjoined.len());
        out.count("train", parts.train.len());
        out.count("test", parts.test.len());
        out.count("features", features.cols());
        out.metric("k", m.k);
        out.metric("test_auc", curve.auc);
        out.metric("test_rank_auc", rank);
        out.metric("train_accuracy", train_acc);
        if !perm.is_empty() {
            out.metric("permutation_mean_auc", perm_mean);
        }
        Ok(out)
    }

    fn load_training(&self) -> Result<(RandomForest, Labeling, Split)> {
        let model = RandomForest::load(&self.artifact(Stage::Train, "model.json"))?;
        let lp = self.artifact(Stage::Train, "labels.csv");
        let labels = read_labels(fs::File::open(&lp).map_err(|e| Error::io(&lp, e))?, self.config.model.k)?;
        let sp = self.artifact(Stage::Train, "split.json");
        let parts: Split = serde_json::from_str(&fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?)?;
        Ok((model, labels, parts))
    }

    fn explain(&self) -> Result<StageOutput> {
        let tr = self.require(Stage::Train)?;
        let fea = self.require(Stage::Features)?;
        let mut out = self.begin(Stage::Explain, &[(Stage::Train, &tr), (Stage::Features, &fea)]);
        let (forest, labels, parts) = self.load_training()?;
        let (features, sidecar) = self.load_features()?;
        if features.names != forest.feature_names {
            return Err(Error::Schema("model features differ from the feature table".into()));
        }
        let encoding = Encoding {
            features: sidecar.features.clone(),
        };
        let rows = features.rows_for(&labels.ports)?;
        let cfg = &self.config.explain;
        let d = features.cols();
        let train_x: Vec<Vec<f64>> = parts.train.iter().map(|&i| rows[i].clone()).collect();
        let test_x: Vec<Vec<f64>> = parts.test.iter().map(|&i| rows[i].clone()).collect();
        let test_y: Vec<bool> = parts.test.iter().map(|&i| labels.labels[i]).collect();
        let background = background_sample(&train_x, cfg.background_cap, self.config.seed_for(seeds::BACKGROUND));
        let exact = d <= cfg.exact_max_features;
        let mode_for = |permutations, offset| {
            if exact {
                Mode::Exact
            } else {
                Mode::Sampled {
                    permutations,
                    seed: self.config.seed_for(offset),
                }
            }
        };

        let sage = sage_values(&forest, &test_x, &test_y, &background, mode_for(cfg.sage_permutations, seeds::SAGE))?;
        out.put_with("sage.csv", |buf| write_sage(buf, &features.names, &sage))?;
        out.metric("sage_total", sage.total);

        let picked = choose_rows(parts.test.len(), cfg.max_ports, self.config.seed_for(seeds::EXPLAINED));
        let mut explained_ports = Vec::with_capacity(picked.len());
        let mut explanations = Vec::with_capacity(picked.len());
        for &t in &picked {
            let i = parts.test[t];
            let e = shap_values(&forest, &background, &rows[i], mode_for(cfg.shap_permutations, seeds::SHAP))?;
            let port = labels.ports[i];
            let mut report = force_report(&e, &features.names, Some(port))?;
            for c in &mut report.contributions {
                let col = features.column_index(&c.feature).expect("feature from table");
                if encoding.features[col].kind == FeatureKind::Categorical {
                    c.display = Some(encoding.decode(col, c.value));
                }
            }
            out.put_json(&format!("force/{port}.json"), &report)?;
            explained_ports.push(port);
            explanations.push(e);
        }
        out.put_with("shap.csv", |buf| write_shap_matrix(buf, &features.names, &explained_ports, &explanations))?;
        if !explanations.is_empty() {
            let ranks = local_rank(&explanations)?;
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| ranks[a].total_cmp(&ranks[b]).then(a.cmp(&b)));
            out.put_with("local_rank.csv", |buf| {
                let mut w = csv::Writer::from_writer(buf);
                w.write_record(["feature", "average_rank"])?;
                for &i in &order {
                    w.write_record([features.names[i].clone(), ranks[i].to_string()])?;
                }
                w.flush().map_err(|e| Error::io("<local rank>", e))?;
                Ok(())
            })?;
        }

        let mut top: Vec<usize> = (0..d).collect();
        top.sort_by(|&a, &b| sage.phi[b].total_cmp(&sage.phi[a]).then(a.cmp(&b)));
        for &f in top.iter().take(cfg.pdp_features) {
            let grid = default_grid(&rows, f, cfg.pdp_grid_points);
            let pd = partial_dependence(&forest, &rows, f, Some(grid))?;
            out.put_with(&format!("pdp/{}.csv", file_stem(&features.names[f])), |buf| write_partial_dependence(buf, &pd))?;
        }
        out.count("explained_ports", explanations.len());
        out.count("background", background.len());
        out.count("exact", usize::from(exact));
        Ok(out)
    }

    fn report(&self) -> Result<StageOutput> {
        let cen = self.require(Stage::Centrality)?;
        let mut upstream = vec![(Stage::Centrality, cen)];
        for s in [Stage::Network, Stage::Train, Stage::Explain] {
            if self.has_artifact(s) {
                upstream.push((s, self.require(s)?));
            }
        }
        let refs: Vec<(Stage, &StageManifest)> = upstream.iter().map(|(s, m)| (*s, m)).collect();
        let mut out = self.begin(Stage::Report, &refs);
        self.input(&mut out, "ports", &self.config.input.ports)?;
        let registry = self.registry()?;
        let table = self.load_centrality()?;

        let mut scores = BTreeMap::new();
        let mut summary = serde_json::Map::new();
        if self.has_artifact(Stage::Train) {
            let path = self.artifact(Stage::Train, "scores.csv");
            let mut r = csv::Reader::from_path(&path)?;
            for row in r.deserialize() {
                let row: ScoreRow = row?;
                scores.insert(
                    row.port_id,
                    PortScore {
                        label: row.label == 1,
                        score: row.score,
                    },
                );
            }
            let train = StageManifest::read(&self.artifact(Stage::Train, MANIFEST))?;
            summary.insert("model".into(), serde_json::to_value(&train.metrics)?);
        }
        if self.has_artifact(Stage::Network) {
            let path = self.artifact(Stage::Network, "stats.json");
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            summary.insert("network".into(), serde_json::from_str(&text)?);
        }
        if self.has_artifact(Stage::Explain) {
            let path = self.artifact(Stage::Explain, "sage.csv");
            let mut r = csv::Reader::from_path(&path)?;
            let mut sage: Vec<(String, f64, Option<f64>)> = r.deserialize().collect::<std::result::Result<_, _>>()?;
            sage.sort_by(|a, b| b.1.total_cmp(&a.1));
            let top: Vec<_> = sage
                .iter()
                .map(|(f, v, se)| serde_json::json!({"feature": f, "value": v, "stderr": se}))
                .collect();
            summary.insert("sage".into(), serde_json::Value::Array(top));
        }

        let rows = report_rows(&table, &registry, &scores)?;
        let top_k = self.config.report.top_k;
        summary.insert(
            "top_ports".into(),
            serde_json::to_value(rows.iter().take(top_k).map(|r| (r.rank, &r.name, &r.country, r.aggregate)).collect::<Vec<_>>())?,
        );
        out.put_json("ports.geojson", &geojson(&rows))?;
        out.put_with("top_ports.csv", |buf| write_top_ports(buf, &rows, top_k))?;
        out.put_json("summary.json", &summary)?;
        out.count("ports", rows.len());
        Ok(out)
    }
}

/// File-name-safe version of a feature name.
fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("bogus".parse::<Stage>().is_err());
    }

    #[test]
    fn identity_hash_ignores_timing() {
        let mut m = StageManifest {
            stage: "x".into(),
            version: VERSION.into(),
            config_hash: "h".into(),
            inputs: BTreeMap::new(),
            upstream: BTreeMap::new(),
            outputs: BTreeMap::new(),
            counts: BTreeMap::new(),
            metrics: BTreeMap::new(),
            elapsed_ms: 5,
        };
        let h = m.identity_hash();
        m.elapsed_ms = 500;
        assert_eq!(m.identity_hash(), h);
        m.counts.insert("n".into(), 1);
        assert_ne!(m.identity_hash(), h);
    }

    #[test]
    fn network_without_visits_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(RunConfig::default(), dir.path().to_path_buf(), false);
        let err = p.run(Stage::Network).unwrap_err();
        assert_eq!(err.to_string(), "visits artifact missing");
    }

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("CARGO DEPTH"), "cargo_depth");
        assert_eq!(file_stem("a/b"), "a_b");
    }
}
