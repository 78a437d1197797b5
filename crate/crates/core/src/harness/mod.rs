//! Experiment registry, configuration, corpora and report bundles.

pub mod config;
pub mod corpus;
pub mod experiments;
pub mod report;

pub use config::{ExperimentKind, ExperimentSpec};
pub use corpus::{generate_corpus, CorpusKind, CorpusOptions};
pub use experiments::run_experiment;
pub use report::{emit_tables, ReportBundle};
