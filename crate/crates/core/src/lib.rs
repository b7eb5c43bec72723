//! Link-context learning at desk scale.
//!
//! A synthetic universe of embedding classes stands in for frozen image
//! features. A small causal transformer is trained on 2-way episodes whose
//! labels are re-bound every episode, so the only way to answer the query
//! is to read the label mapping off the support pairs.

pub mod episodes;
pub mod error;
pub mod eval;
pub mod neighbors;
pub mod net;
pub mod rng;
pub mod train;
pub mod universe;
pub mod vecmath;

pub use error::{Error, Result};
pub use rng::StreamRng;
pub use universe::{ClassId, ClassUniverse, Embedding, UniverseParams};
