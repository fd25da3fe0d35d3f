//! Ports Network analytics.
//!
//! The pipeline turns decoded AIS position reports into port visits and
//! voyages, aggregates voyages into a weighted directed network, scores each
//! port with an aggregated centrality, and relates those scores to port
//! registry features through a random forest explained with Shapley values.
//!
//! Stages:
//!
//! - [`geo`]: record parsing, vessel identity and circular geofences
//! - [`visits`]: run-collapsing into visits and voyages
//! - [`network`]: weighted digraph, largest SCC, descriptive statistics
//! - [`centrality`]: six centralities and their z-score aggregate
//! - [`features`]: profiling, cleaning, encoding and iterative imputation
//! - [`model`]: top-k labeling, stratified split, Gini random forest, ROC/AUC
//! - [`explain`]: SHAP, SAGE, partial dependence, local ranks
//! - [`pipeline`]: stage orchestration over persisted artifacts

pub mod centrality;
pub mod config;
pub mod error;
pub mod explain;
pub mod features;
pub mod geo;
pub mod model;
pub mod network;
pub mod pipeline;
pub mod report;
pub mod synthetic;
pub mod visits;

pub use error::{Error, Result};
