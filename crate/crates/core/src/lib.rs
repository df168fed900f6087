//! Evaluation, passage ranking and dataset construction for grounded
//! keys-to-text generation: describing an entity from attribute names and a
//! pool of web passages.

pub mod backends;
pub mod corpus;
pub mod databuilder;
pub mod descriptor;
mod hashing;
pub mod mafe;
pub mod rankers;
pub mod textmetrics;

pub use hashing::{hashed_bag, SparseVec};
