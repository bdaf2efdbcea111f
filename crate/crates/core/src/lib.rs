//! Surface reconstruction as the iso-surface of the electrostatic potential
//! of a set of isotropic Gaussian charges.
//!
//! The crate covers the closed-form field ([`field`]), mesh I/O and sampling
//! ([`mesh`]), fitting charges to a shape ([`optimizer`]), iso-surface
//! extraction and slicing ([`isosurface`]), reconstruction metrics
//! ([`metrics`]) and Fourier / charge-distribution analysis ([`spectral`]).

pub mod exec;
pub mod field;
pub mod isosurface;
pub mod mesh;
pub mod metrics;
pub mod optimizer;
pub mod spectral;
pub mod summary;
pub mod vec3;

pub use exec::Execution;
pub use field::{ChargeSet, FieldError, FieldGradient, GaussianCharge};
pub use isosurface::{evaluate_grid, marching_cubes, GridSpec, ScalarGrid};
pub use mesh::{MeshError, PointSample, SpatialIndex, TriangleMesh};
pub use optimizer::{FitConfig, FitError, FitReport};
pub use vec3::Vec3;
