use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Stream ids used by the pipeline. Null samples use their sample index directly,
/// so the other consumers live above 2³².
pub mod streams {
    pub const VBPCA_INIT: u64 = 1 << 32;
    pub const SYNTH_COMPONENTS: u64 = 2 << 32;
    pub const SYNTH_LOADINGS: u64 = (2 << 32) + 1;
}

/// A `(seed, stream)` pair naming one reproducible random sequence.
///
/// Backed by ChaCha8 with the stream id mapped onto ChaCha's 64-bit stream
/// counter, so sequences are platform independent and distinct stream ids give
/// independent sequences under the same seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    pub fn split(&self, stream: u64) -> Self {
        RngStream {
            seed: self.seed,
            stream,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// `n` i.i.d. N(0, 1) draws from the stream.
pub fn standard_normal(stream: RngStream, n: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn fill_standard_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out {
        *v = StandardNormal.sample(rng);
    }
}

/// SplitMix64 finalizer; used to derive child seeds from a base seed and an index.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
