//! Shared fixtures for the criterion benches.

use driveby_core::harness::{similarities, synth_fleet, FleetConfig, DEFAULT_LAMBDA_PER_KM};
use driveby_core::{OccupancyTensor, SimilarityMatrix};

/// Synthetic fleet with `slots` slots, `passes` scaled so coverage per slot
/// stays roughly constant as `slots` grows.
pub fn fleet(locations: usize, slots: usize, buses: usize, seed: u64) -> (OccupancyTensor, SimilarityMatrix) {
    let cfg = FleetConfig {
        locations,
        slots,
        buses,
        route_len: 12.min(locations),
        passes: (slots / 6).max(1),
        area_km: 20.0,
    };
    let f = synth_fleet(&cfg, seed).expect("valid fleet parameters");
    let (s, _) = similarities(&f.locations, DEFAULT_LAMBDA_PER_KM).expect("distinct locations");
    (f.tensor, s)
}
