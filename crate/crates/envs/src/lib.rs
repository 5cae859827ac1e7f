//! Deterministic 2D memory gridworlds with partial (egocentric) observations,
//! scripted data-collection policies and an episode file format.
//!
//! World logic and rendering are integer-only, so a given `(kind, seed)`
//! always produces the same bytes.

pub mod dataset;
pub mod distracting;
pub mod doors;
pub mod episode;
pub mod grid;
pub mod nav;
pub mod palette;
pub mod render;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use dataset::{build_dataset, Dataset, DatasetHeader, DatasetSpec, Split};
pub use distracting::gen_distracting_memory;
pub use doors::{gen_multi_doors_keys, Skill};
pub use episode::{generate_episode, generate_world, phase_lengths, Episode};
pub use grid::{Action, Cell, Dir, EnvKind, GridWorld, Pose, StepOutcome};
pub use render::render;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unreachable target: {0}")]
    Unreachable(String),
    #[error("{0}")]
    Invalid(String),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error("I/O error{}: {source}", .episode.map(|i| format!(" at episode {i}")).unwrap_or_default())]
    Io {
        episode: Option<usize>,
        #[source]
        source: std::io::Error,
    },
}

/// Independent random stream `stream` of an episode seed.
pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
