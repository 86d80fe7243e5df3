//! Grid-brick event processing.
//!
//! Event datasets are split into fragments ("bricks") that live on worker
//! nodes. Filter jobs are planned next to the data, executed in parallel by
//! node agents, and merged back into a single deterministic result file by the
//! job submission engine.

pub mod agent;
pub mod catalog;
pub mod event;
pub mod filter;
pub mod jse;
pub mod wire;

mod util;

pub use event::{Event, FragmentFile, FragmentMeta, Schema};
pub use filter::{Calibration, FilterExpr};
