//! Logical-pattern memory model for entailment-tree generation.
//!
//! A small encoder-decoder reads two premises, picks (or mixes) learned
//! pattern vectors from an external memory through an address head, and adds
//! the result to the decoder's start token before generating a conclusion.
//! Around it sit the entity-abstraction corpus builder, the entailment-tree
//! data model, a two-phase trainer, tree builders, and the tree metrics.

pub mod abstraction;
pub mod autodiff;
pub mod builder;
pub mod checkpoint;
pub mod error;
pub mod evaluator;
pub mod gradcheck;
pub mod inspect;
pub mod memory;
pub mod model;
pub mod params;
pub mod trainer;
pub mod treebank;
pub mod vocab;

pub use error::{Error, Result};
