//! Knowledge-graph refinement by metric learning.
//!
//! Facts are rendered as partial-fact token sequences, a sequence encoder is
//! trained with a triplet loss so that facts about the same relation (or the
//! same head entity) cluster together, and the two refinement tasks are
//! answered by nearest-neighbor search over the embedded training anchors:
//!
//! * relation prediction: the relations of the K nearest anchors to the
//!   head+tail embedding of a query pair;
//! * triple classification: the aggregated distance from the full triple's
//!   embedding to the anchors of its head entity, against a tuned threshold.

mod binio;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod pipeline;
pub mod sampler;
pub mod store;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
