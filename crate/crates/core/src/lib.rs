//! Hidden Sketch: a reversible Bloom filter paired with a Count-Min sketch so
//! that hot keys and their exact counts can be decoded from the sketch alone,
//! plus a cold filter and a windowed tracker on top.

mod bits;
pub mod cmsketch;
mod codec;
pub mod coldfilter;
pub mod decoder;
pub mod error;
pub mod hash;
pub mod keyspace;
pub mod rbf;
pub mod tracker;

pub use cmsketch::{CmError, CmSketch, EquationSystem, IncrementMode};
pub use coldfilter::CuFilter;
pub use decoder::{decode, DecodeError, DecodeResult, DecodeStatus, DecoderConfig};
pub use error::{CodecError, ConfigError};
pub use keyspace::{Key, NodeId, SegTree};
pub use rbf::{plan_memory, plan_memory_with, MemoryPlan, PlanOptions, Rbf, RecoverError};
pub use tracker::{
    heavy_changers, ClosedWindow, DecodedWindow, HiddenSketch, Tracker, TrackerConfig,
    TrackerError, WindowReport,
};
