//! Shared inputs for the benchmarks.

use shapehazard::{rng, sim, SimConfig, SurvivalDataset};

/// A data set from the replication-table design with `n` subjects and 30%
/// censoring.
pub fn table_data(n: usize, seed: u64) -> SurvivalDataset {
    let cfg = SimConfig::table(n, [0.5, -0.5, 0.1], 0.3, 1, seed);
    let rate = sim::calibrate_censoring(&cfg).expect("valid design");
    sim::generate(&cfg, rate, &mut rng::stream(seed, &[0])).expect("valid design")
}
