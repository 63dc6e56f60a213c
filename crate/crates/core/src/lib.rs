//! Diagnostics for open-vocabulary panoptic segmentation.
//!
//! Panoptic-quality scoring with false-negative stratification, test-time
//! candidate handling (no-object filtering, ensembling, fusion), zero-shot
//! mask classification, ground-truth oracles and the binary/JSON formats
//! used to exchange predictions and reports.

mod codec;
pub mod dump;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod oracles;
pub mod panoptic;
pub mod pipeline;
pub mod proposals;
pub mod report;
pub mod rle;
pub mod taxonomy;
pub mod testkit;
pub mod zeroshot;

pub use error::{Error, ErrorKind, Result};
pub use mask::{BinaryMask, SoftMask};
pub use panoptic::{PanopticMap, Segment};
pub use proposals::{Candidate, CandidateSet};
pub use taxonomy::Taxonomy;
