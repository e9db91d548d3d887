pub mod analytics;
pub mod domain;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod exactness;
pub mod randomness;
pub mod scalar;
pub mod topology;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use topology::{Ball, VertexId};

pub type Spin64 = engine::Spin<f64>;
pub type Spin32 = engine::Spin<f32>;
pub type Landscape64 = engine::Landscape<f64>;
pub type Landscape32 = engine::Landscape<f32>;
pub type Trajectory64 = engine::Trajectory<f64>;
pub type Trajectory32 = engine::Trajectory<f32>;
pub type DiscreteTrajectory64 = engine::DiscreteTrajectory<f64>;
pub type DiscreteTrajectory32 = engine::DiscreteTrajectory<f32>;
pub type Certificate64 = exactness::Certificate<f64>;
pub type Certificate32 = exactness::Certificate<f32>;
