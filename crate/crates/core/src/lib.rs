//! Tumor saliency estimation for breast ultrasound images guided by the
//! layered breast anatomy (skin, fat, mammary gland, muscle).

// `!(x > 0.0)` is used on purpose so NaN is rejected along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod anatomy;
pub mod config;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod layer;
pub mod maps;
pub mod optimizer;
pub mod pipeline;
pub mod runner;
pub mod superpixel;

pub use error::{Result, TseError};
pub use layer::Layer;
