//! Count-min sketches over compact rank-indexed counter arrays.
//!
//! The counter backends are [`FlatCounterArray`], [`BrickArray`] and
//! [`HbrickArray`]; [`CountMinSketch`] runs on any of them. [`pipesim`]
//! models the pipelined update path and [`memmodel`] accounts block-RAM use.

pub mod assoc;
pub mod bits;
pub mod brick;
pub mod counter;
pub mod error;
pub mod flowkey;
pub mod hbrick;
pub mod memmodel;
pub mod pipesim;
pub mod sketch;
mod snapshot;
pub mod traces;

pub use assoc::AssociativeStore;
pub use brick::{BrickArray, BrickConfig};
pub use counter::{CounterArray, FlatCounterArray};
pub use error::{Error, Result};
pub use flowkey::{FlowKey, HashFamily};
pub use hbrick::{HbrickArray, HbrickConfig};
pub use sketch::{BackendConfig, BackendKind, CountMinSketch, Estimate, SketchConfig, UpdateStrategy};
pub use traces::{ExactCounts, PacketRecord, ZipfSpec};
