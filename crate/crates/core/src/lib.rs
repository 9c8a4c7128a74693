//! Genetic-programming search for classification loss functions.
//!
//! Losses are expression trees over per-class prediction and label values
//! ([`expr`]). A steady generational loop ([`gp`]) evolves them, scoring each
//! candidate by training a small softmax classifier ([`nn`]) on a dataset
//! ([`data`]) through a fitness oracle ([`fitness`]). [`losses`] holds the
//! reference catalog and [`analysis`] studies two-class loss landscapes.

pub mod analysis;
pub mod data;
pub mod expr;
pub mod fitness;
pub mod gp;
pub mod losses;
pub mod nn;
pub mod rng;

pub use analysis::{analyze, binary_reduce, sample_landscape, LandscapeCurve, LandscapeReport, Shape};
pub use data::{synth_blobs, Dataset, DatasetSplit};
pub use expr::{EvalPoint, LossExpr, Node, TreeConstraints};
pub use fitness::{compare, FitnessValue};
pub use gp::{GpConfig, Individual, SearchHistory};
pub use losses::{builtin, LossFn};
pub use nn::{ClassifierModel, TrainConfig, TrainReport};
