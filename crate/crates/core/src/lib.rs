//! Implicit neural fields that jointly reconstruct a shape's signed distance
//! and segment it into parts.

pub mod autodiff;
pub mod error;
pub mod extractor;
pub mod field_net;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod sampler;
pub mod scalar;
pub mod shape_data;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FieldNetwork32 = field_net::FieldNetwork<f32>;
pub type FieldNetwork64 = field_net::FieldNetwork<f64>;
pub type LabeledMesh32 = shape_data::LabeledMesh<f32>;
pub type LabeledMesh64 = shape_data::LabeledMesh<f64>;
pub type LabeledPointCloud32 = shape_data::LabeledPointCloud<f32>;
pub type LabeledPointCloud64 = shape_data::LabeledPointCloud<f64>;
pub type SampleBatch32 = sampler::SampleBatch<f32>;
pub type SampleBatch64 = sampler::SampleBatch<f64>;
