//! Differentiable SAR rendering of raster surface models ("radar fields")
//! and gradient-based recovery of the surface from rendered or observed
//! images.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common case.

pub mod diff;
pub mod error;
pub mod geometry;
pub mod io;
pub mod math;
pub mod metrics;
pub mod optimize;
pub mod renderer;
pub mod scalar;
pub mod scene;
pub mod speckle;

pub use diff::{backward_plane, finite_difference_oracle, plane_squared_error_grad, GradMask, GradientSet};
pub use error::{Error, Result};
pub use geometry::{build_plane, build_planes, march_points, sample_rays, AzimuthPlane, ViewConfig};
pub use math::{Grid2, Vec3};
pub use metrics::{altitude_mae, altitude_median, altitude_report, altitude_rmse, image_mse, AltitudeReport};
pub use optimize::{data_loss, fit, smoothness_reg, BetaMode, FitOutput, FitReport, LrSchedule, RunConfig, TrainState, Trainer};
pub use renderer::{
    laplace_cdf, pseudo_density, ray_transmittance, reflectance, render_image, render_plane, RenderTape, SarImage,
};
pub use scalar::Real;
pub use scene::{DsmSurface, Scene, SharpnessParam, SpecularityMap};
pub use speckle::{apply_speckle, simulate_acquisitions, speckle_statistics, NoiseConfig, SpeckleStats};

pub type Surface = DsmSurface<f64>;
pub type Surface32 = DsmSurface<f32>;
pub type SceneF64 = Scene<f64>;
pub type SceneF32 = Scene<f32>;
pub type Image = SarImage<f64>;
pub type Image32 = SarImage<f32>;
pub type Plane = AzimuthPlane<f64>;
pub type Plane32 = AzimuthPlane<f32>;
pub type Gradients = GradientSet<f64>;
pub type Gradients32 = GradientSet<f32>;
