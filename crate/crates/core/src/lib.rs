//! Skeleton-based gesture recognition with grouped channel-wise and
//! temporal-wise dynamic topology graph convolutions, built on a small
//! reverse-mode tensor engine.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod graph_conv;
pub mod mstcn;
pub mod network;
pub mod nn;
pub mod params;
pub mod pooling;
pub mod runtime;
pub mod skeleton;
pub mod tensor;
pub mod topology;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
