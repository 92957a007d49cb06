//! Tensor transpose planning and execution toolkit.
//!
//! Given a dense tensor layout and a permutation of its dimensions, this
//! crate enumerates the transpose schedules a GPU-style kernel could use
//! (tiled staging, direct tiled copy, multi-dimension packing, and packing
//! with a split dimension), ranks them either with an analytical latency
//! model or by exact simulation of the memory traffic they would generate,
//! and executes any of them on host memory with worker threads standing in
//! for thread blocks.
//!
//! The crate is organized along those lines:
//!
//! - [`index`]: cumulative volumes, scalar positions, the input-to-output
//!   scatter map, and the major/minor/staging position sums.
//! - [`plan`]: partition construction, plan enumeration, and plan selection.
//! - [`device`]: architecture constants, built-in profiles, profile files.
//! - [`model`]: the analytical cycle estimate (memory latency, transactions
//!   per request, memory-level parallelism, warp occupancy) fed by sampled
//!   traffic counts.
//! - [`sim`]: exact per-warp simulation of global-memory coalescing, store
//!   cache-line classification, and shared-memory bank conflicts.
//! - [`exec`]: the multi-threaded host executor and the scattered reference
//!   transpose it is verified against.

pub mod device;
pub mod error;
pub mod exec;
pub mod index;
pub mod model;
pub mod plan;
pub mod sim;

pub use device::DeviceProfile;
pub use error::{Error, Result};
pub use exec::{Element, TensorBuffer, WriteMode};
pub use index::{ElemSize, MultiIndex, Permutation, TensorLayout, LANES};
pub use model::{CostEstimate, TrafficReport};
pub use plan::{AlgorithmKind, Partition, TransposePlan};
pub use sim::{SimConfig, SimScope};

/// Buffer of opaque 4-byte elements.
pub type Buffer32 = TensorBuffer<u32>;
/// Buffer of opaque 8-byte elements.
pub type Buffer64 = TensorBuffer<u64>;
/// Buffer of single-precision elements (accumulate support).
pub type BufferF32 = TensorBuffer<f32>;
/// Buffer of double-precision elements (accumulate support).
pub type BufferF64 = TensorBuffer<f64>;
