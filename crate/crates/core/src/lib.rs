//! Metamorphosis-based indirect image registration for 2D parallel-beam
//! tomography.
//!
//! A template image is deformed by a diffeomorphic flow and simultaneously
//! has intensity added along the flow, so that the ray transform of the end
//! result matches measured projection data.

pub mod error;
pub mod experiments;
pub mod flow;
pub mod grid;
pub mod harness;
pub mod io;
pub mod kernel;
pub mod metamorphosis;
pub mod objective;
pub mod optimizer;
pub mod ray;
pub mod spatiotemporal;

pub use error::{Error, Result};
pub use flow::{DeformationMap, TimeGrid, TimeVaryingVectorField};
pub use grid::{GridSpec, Image, VectorImage};
pub use kernel::KernelSpec;
pub use metamorphosis::{TimeVaryingScalarField, Trajectories};
pub use objective::{GradientPair, ObjectiveValue, RegParams};
pub use optimizer::{SolveConfig, SolveMode, SolveReport, StopReason};
pub use ray::{Geometry, Sinogram};
pub use spatiotemporal::{Gate, GatedData};
