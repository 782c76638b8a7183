//! Coreference dialogue state tracking.
//!
//! For every domain-slot pair at every user turn the tracker decides whether
//! the slot is filled by a coreference to earlier dialogue content and, if it
//! is, extracts the referenced value as a span of the dialogue text. The
//! resulting edits are merged into the per-turn belief states of a base
//! tracker and scored with joint goal accuracy.
//!
//! Pipeline: [`corpus`] (ingest) → [`encoding`] (model inputs) → [`model`]
//! (encoder + per-slot heads) → [`training`] → [`tracker`] (merge) →
//! [`evaluation`]. The [`cli`] module wires the stages together.

pub mod cli;
pub mod corpus;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod ontology;
#[doc(hidden)]
pub mod testing;
pub mod tracker;
pub mod training;
pub mod util;

pub use error::{CdstError, Result};
pub use ontology::{DomainSlot, SlotInventory};
