// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod numerics;
pub mod scenario;
pub mod encoder;
pub mod decoder;
pub mod model;
pub mod training;
pub mod metrics;
pub mod ensemble;
pub mod prediction;
pub mod config;
pub mod checkpoint;
pub mod plot;
pub mod cli;
