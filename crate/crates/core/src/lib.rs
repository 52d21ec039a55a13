//! Single-grid directional x-ray dark-field imaging.
//!
//! The crate synthesizes grid-only and sample-and-grid images from analytical
//! models and retrieves transmission, dominant scattering direction and the
//! semi-major/minor blur widths from such image pairs:
//!
//! 1. [`forward`] – blur kernel, grid and sample-and-grid models, noise, a
//!    brute-force convolution oracle.
//! 2. [`correlation`] – windowed auto/cross-correlation, five-term sinusoid
//!    fit, period averaging and kernel-size selection; [`period`] estimates
//!    the grid period.
//! 3. [`retrieval`] – closed-form solve for `T`, `θ`, `σ_M²`, `σ_m²`.
//! 4. [`metrics`] – scattering angles, `Θ_RMS`, `Θ_ASY`, HSV rendering and
//!    phase-shift maps.
//! 5. [`pipeline`] – file formats, flat/dark correction and the end-to-end
//!    runs behind the `sgdf` command.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correlation;
pub mod error;
pub mod forward;
pub mod image;
pub mod metrics;
pub mod period;
pub mod pipeline;
pub mod retrieval;

pub use crate::correlation::{
    average_over_period, compute_coefficient_maps, compute_raw_coefficient_maps,
    fit_correlation_model, local_correlation, select_kernel_size, CoefficientMaps, CoefficientSet,
    CorrelationFitter, CorrelationMap,
};
pub use crate::error::{Error, Result};
pub use crate::forward::{
    eval_df_kernel, eval_grid_image, eval_sample_grid_image, numeric_convolution_oracle,
    sigma_to_angle, synthesize_pair, DarkFieldKernelParams, Geometry, GridParams, NoiseModel,
    SampleField,
};
pub use crate::image::{Image, Mask, Rect};
pub use crate::metrics::{
    compose_hsv, phase_shift_maps, theta_asy, theta_rms_sq, AngleMaps, MetricMaps,
};
pub use crate::period::estimate_grid_period;
pub use crate::retrieval::{retrieve_field, DarkFieldSolution, SolutionMaps};
