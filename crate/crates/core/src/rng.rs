//! Counter-based named random streams.
//!
//! Every draw is a pure function of `(seed, label, step, index)`. The tuple is
//! packed verbatim into the 256-bit ChaCha key, so two distinct tuples select
//! two distinct keystreams and never alias each other. Nothing here carries
//! mutable position state: a stream value can be copied to any worker and the
//! draws it produces depend only on the counters it is asked for.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamLabel {
    Trajectory,
    Population,
    Dataset,
    Training,
}

impl StreamLabel {
    fn tag(self) -> u64 {
        match self {
            StreamLabel::Trajectory => 0x7472_616a,
            StreamLabel::Population => 0x706f_7075,
            StreamLabel::Dataset => 0x6461_7461,
            StreamLabel::Training => 0x7472_6169,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    label: StreamLabel,
    step: u64,
    index: u64,
}

impl RngStream {
    pub fn new(seed: u64, label: StreamLabel) -> Self {
        Self { seed, label, step: 0, index: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> StreamLabel {
        self.label
    }

    pub fn counters(&self) -> (u64, u64) {
        (self.step, self.index)
    }

    /// Same seed and label, positioned at `(step, index)`.
    pub fn at(self, step: u64, index: u64) -> Self {
        Self { step, index, ..self }
    }

    pub fn relabel(self, label: StreamLabel) -> Self {
        Self { label, ..self }
    }

    /// Keyed generator for the current counters. Every call returns a fresh
    /// generator positioned at the start of the same keystream.
    pub fn generator(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.label.tag().to_le_bytes());
        key[16..24].copy_from_slice(&self.step.to_le_bytes());
        key[24..32].copy_from_slice(&self.index.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }

    /// `n` standard normal draws at the current counters.
    pub fn normals(&self, n: usize) -> Vec<f64> {
        let mut rng = self.generator();
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }
}

/// SplitMix64 finalizer, used to derive child seeds such as per-run seeds
/// from `(base_seed, run_index)`.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
