// `!(x > 0.0)` is the NaN-rejecting comparison used throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod cli;
pub mod geometry;
pub mod hsidata;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;
