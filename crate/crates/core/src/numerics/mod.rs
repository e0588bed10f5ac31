//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod checkpoint;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use graph::{Graph, Var};
pub use params::Parameters;
pub use tensor::{Real, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The single random generator type used throughout.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for one `(seed, stream)` pair; streams never overlap.
pub fn stream_rng(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
