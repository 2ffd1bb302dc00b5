//! Reproducible random streams keyed by `(base_seed, stream_index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

/// Identifies an independent ChaCha stream. Copy it freely; each call to
/// [`RngStream::rng`] restarts the stream from its beginning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub base_seed: u64,
    pub stream_index: u64,
}

impl RngStream {
    pub fn new(base_seed: u64, stream_index: u64) -> Self {
        Self {
            base_seed,
            stream_index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
        rng.set_stream(self.stream_index);
        rng
    }

    pub fn gaussian(&self, n: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    pub fn gamma(&self, shape: f64, scale: f64, n: usize) -> Vec<f64> {
        assert!(shape > 0.0 && scale > 0.0, "gamma shape and scale must be positive");
        let dist = Gamma::new(shape, scale).expect("valid gamma parameters");
        let mut rng = self.rng();
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    }
}
