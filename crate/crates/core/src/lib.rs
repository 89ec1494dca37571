//! Sparse TopK latent classifiers for bonafide/spoof detection, with
//! detection metrics (EER, minimum DCF) and mutual-information based
//! disentanglement metrics (completeness, modularity, nMI survival).
//!
//! The pipeline:
//!
//! 1. [`data`] builds or loads embeddings with sample labels.
//! 2. [`nn`] defines the head `E -> D -> TopK -> 2`.
//! 3. [`train`] fits it, keeps the best dev-EER epoch and runs sweeps.
//! 4. [`detmetrics`] scores detection quality.
//! 5. [`infotheory`] turns latents into an nMI importance matrix.
//! 6. [`disentangle`] summarizes that matrix.
//!
//! [`commands`] wires everything into the `sparsedet` command-line tool.
//! The guide under `book/` walks through each step; its Rust snippets run
//! as doctests of this crate.

pub mod commands;
pub mod data;
pub mod detmetrics;
pub mod disentangle;
pub mod error;
pub mod infotheory;
pub mod nn;
pub mod plot;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/topk.md")]
    pub struct TopK;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/detection.md")]
    pub struct Detection;
    #[doc = include_str!("../../../book/src/mutual_information.md")]
    pub struct MutualInformation;
    #[doc = include_str!("../../../book/src/disentanglement.md")]
    pub struct Disentanglement;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
