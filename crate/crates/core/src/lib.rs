pub mod crf;
pub mod error;
pub mod grid;
pub mod lattice;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod synthdata;
pub mod tgio;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases for the generic core types.
pub type Grid = grid::TensorGrid<f64>;
pub type Soft = grid::SoftLabeling<f64>;
pub type Points = lattice::FeaturePointSet<f64>;
pub type Crf = crf::DenseCrf<f64>;
pub type Params = model::SegmenterParams<f64>;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
