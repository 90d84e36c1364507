//! Shared fixtures for the criterion benches.

use counterfair_core::io::dataset_tables;
use counterfair_core::latent::{sample_population, BiasConfig, SyntheticFaceGenerator};
use counterfair_core::{Dataset, ScoredPopulation};

/// A biased synthetic population of `n` candidates, its generator, and the
/// ground-truth scores as a scored population.
pub fn population(n: usize) -> (SyntheticFaceGenerator, Dataset, ScoredPopulation) {
    let gen = SyntheticFaceGenerator::new(7).expect("generator");
    let cfg = BiasConfig {
        population: n,
        ..BiasConfig::default()
    };
    let ds = sample_population(&gen, &cfg).expect("population").dataset;
    let (truth, _) = dataset_tables(&ds);
    (gen, ds, truth)
}
