//! Graph-based training-set reduction and partitioning.
//!
//! The pipeline clusters a labeled dataset, knits a class-pattern weighted
//! neighbor graph over the cluster centers, sheds clusters with no
//! significant edge (GSH), clubs the remainder into independently trainable
//! partitions (GCH), and trains one SVM per partition. Partitions can be
//! trained in-process or handed to worker processes over TCP.

pub mod ann;
pub mod bench;
pub mod clubbing;
pub mod clustering;
pub mod config;
pub mod data;
pub mod distnet;
pub mod error;
pub mod knitting;
pub mod pipeline;
pub mod predict;
pub mod shedding;
pub mod svm;

pub use error::{Error, Result};
