#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision, clippy::needless_range_loop)]

pub mod classify;
pub mod directions;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod mc_oracle;
pub mod nrcdt;
pub mod scalar;
pub mod sliced_wasserstein;
pub mod trace_features;
pub mod voxel;

pub use error::{Error, Result};
pub use scalar::Real;

pub type HalfWidthsF64 = geometry::HalfWidths<f64>;
pub type DirectionF64 = geometry::Direction<f64>;
pub type CubeSectionF64 = geometry::CubeSection<f64>;
pub type VoxelImageF64 = voxel::VoxelImage<f64>;
pub type SinogramF64 = voxel::Sinogram<f64>;
pub type DirectionSetF64 = directions::DirectionSet<f64>;
pub type DiscreteCdfF64 = nrcdt::DiscreteCdf<f64>;
pub type QuantileProfileF64 = nrcdt::QuantileProfile<f64>;
pub type SinogramTensor3F64 = trace_features::SinogramTensor3<f64>;

pub type HalfWidthsF32 = geometry::HalfWidths<f32>;
pub type DirectionF32 = geometry::Direction<f32>;
pub type CubeSectionF32 = geometry::CubeSection<f32>;
pub type VoxelImageF32 = voxel::VoxelImage<f32>;
pub type SinogramF32 = voxel::Sinogram<f32>;
pub type DirectionSetF32 = directions::DirectionSet<f32>;
pub type DiscreteCdfF32 = nrcdt::DiscreteCdf<f32>;
pub type QuantileProfileF32 = nrcdt::QuantileProfile<f32>;
pub type SinogramTensor3F32 = trace_features::SinogramTensor3<f32>;
