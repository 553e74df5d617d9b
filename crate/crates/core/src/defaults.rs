//! Default hyperparameters.

/// Largest block size the verifier is expected to handle.
pub const MAX_K: usize = 200;
/// Blocks sampled per size during planning, across all workers.
pub const N_SAMPLES: usize = 400;
/// Reduced per-size sample count once a worker has seen enough failing sizes.
pub const N_SAMPLES_REDUCED: usize = 24;
/// Number of zero-success sizes after which a worker reduces its sampling.
pub const N_FAIL: usize = 10;
/// Tolerated expected number of oversized blocks.
pub const EPS: f64 = 0.01;
/// Largest covering stored in the database.
pub const DB_CAP: usize = 500_000;
/// Random t-subsets used to time the complete backend.
pub const COMPLETE_SAMPLES: usize = 20;
pub const DEFAULT_WORKERS: usize = 8;
