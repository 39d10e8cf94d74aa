//! Bus subset selection for drive-by sensing.
//!
//! The pipeline: ingest a schedule into an [`OccupancyTensor`], pick buses by
//! greedy maximization of a coverage or facility-location gain, then check the
//! pick by sampling a simulated field along the chosen routes and imputing
//! the dense map.

// Guards like `!(x > 0.0)` are written to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geo;
pub mod greedy;
pub mod grid;
pub mod harness;
pub mod imputation;
pub mod objectives;
pub mod occupancy;
pub mod rng;
pub mod simgen;
pub mod similarity;

pub use error::{Error, Result};
pub use greedy::{
    brute_force_select, check_monotone_submodular, greedy_select, lazy_greedy_select, random_select, PropertyReport,
    SelectionResult,
};
pub use harness::{
    coverage_classification, run_mre_table, run_report, run_selection_table, synth_fleet, CoverageLabel, Dataset,
    ExperimentConfig, Fleet, FleetConfig, Method, MreConfig, Report,
};
pub use imputation::{
    impute_vbmc_cs, impute_vbsf_cs, mre, mre_percent, Imputation, ImputeConfig, ObservationSet, TemporalConfig,
    Transition,
};
pub use objectives::{
    fls_gain, flst_gain_reference, pc_gain, psc_gain, rfl_gain, Evaluator, GainState, GainValue, Objective,
    ObjectiveKind, SetFunction,
};
pub use occupancy::{
    build_occupancy, load_gtfs, load_gtfs_dir, sampling_matrix, subsample_stops, GtfsFeed, LocationSet,
    OccupancyTensor, SamplingMatrix, Stop, TimeGrid, TimedVisit,
};
pub use simgen::{simulate_ar, simulate_factored, spectral_basis, SpatioTemporalMatrix};
pub use similarity::{
    causal_kernel, distance_matrix, exponential_similarity, fit_lambda, normalized_similarity,
    temporal_similarity_from_data, DistanceMatrix, SimilarityMatrix, StationReadings, TemporalSimilarity,
};
