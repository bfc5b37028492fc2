//! Supervised self-organising maps on learned metrics.
//!
//! This crate trains a supervised SOM whose neurons carry both attribute
//! weights and class weights, learns a Mahalanobis metric with the
//! large-margin nearest-neighbour loss, and composes the two: the learned
//! metric is factored into a whitening transform, the data is mapped through
//! it, and a plain SOM is trained in the transformed space. A benchmark
//! harness runs paired experiments (SOM vs SOM on whitened features) over
//! seeded splits and emits JSON/CSV reports.
//!
//! Everything is `f64`, deterministic for fixed seeds, and thread-count
//! independent: parallel and serial harness runs produce identical reports.

pub mod dataset;
pub mod harness;
pub mod lmnn;
pub mod matrix;
pub mod numerics;
pub mod pca;
pub mod som;
pub mod whitening;

pub use matrix::Mat;
pub use numerics::SymMatrix;
