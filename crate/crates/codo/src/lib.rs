//! File formats, pipeline stages and command implementations for `codo`.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod imageio;
pub mod shards;
pub mod evaluate;
pub mod pretrain;
pub mod views;
pub mod ablate;
pub mod plot;
