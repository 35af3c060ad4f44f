//! Balanced multimodal learning for multi-omics classification.
//!
//! The pipeline: per-modality similarity networks fused with SNF
//! cross-diffusion, (revised) graph-convolutional encoders over the fused
//! edges, teacher/student self-distillation from the strong modality, and a
//! multitask-like joint objective whose per-modality loss weights follow a
//! piecewise tanh schedule over relative macro F1.
//!
//! Everything is deterministic per seed: datasets, splits, weight
//! initialization, training trajectories and reports.

pub mod balance;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod distill;
pub mod error;
pub mod gcn;
pub mod losses;
pub mod metrics;
pub mod numeric;
pub mod optim;
pub mod pipeline;
pub mod plots;
pub mod report;
pub mod snf;

pub use error::{Error, Result};
