//! Pretraining, adaptation, evaluation and benchmark runs.

mod config;
mod model;
mod report;
mod train;

pub use config::{AdaptConfig, Ablations};
pub use model::{Checkpoint, ModelState, OptimizerState, Tensor, CHECKPOINT_FORMAT};
pub use report::{mean_std, EpochMetrics, MetricsReport};
pub use train::{adapt, embedding_csv, evaluate, pretrain, run_benchmark};

/// Mixes `tags` into `base` with splitmix64 so that independent streams
/// (batches, noise, partitions) never share a seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}

#[cfg(test)]
mod tests {
    use super::derive_seed;

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, &[2, 3]);
        assert_eq!(a, derive_seed(1, &[2, 3]));
        assert_ne!(a, derive_seed(1, &[3, 2]));
        assert_ne!(a, derive_seed(2, &[2, 3]));
    }
}
