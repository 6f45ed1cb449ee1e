//! Strain-minimising stream surfaces in steady divergence-free 3D vector fields.
//!
//! The crate finds seed curves whose arc length is preserved (to first or
//! second order) when the curve is advected by the field, integrates the
//! stream surfaces they generate, ranks the surfaces by their strain energy,
//! and globally optimises the best candidates with a Gauss-Newton /
//! back-integration cycle.
//!
//! Modules follow the processing pipeline:
//!
//! * [`exprparse`] — analytic vector-field expressions with forward-mode AD
//! * [`field`] — field abstraction (analytic, linear, grid) with exact Jacobians
//! * [`quadrics`] — pointwise direction solves on the strain cones
//! * [`curves`] — seed-curve generation for the three candidate families
//! * [`energies`] — discrete strain and ranking energies
//! * [`surface`] — RK4 stream-surface integration and trimming
//! * [`optimize`] — Gauss-Newton mesh optimisation and the outer cycle
//! * [`pipeline`] — sampling, ranking, adaptive refinement, artifact emission
//! * [`io`] — artifact serialisation (JSON/CSV/OBJ, VFGRID grids)

pub mod curves;
pub mod energies;
pub mod exprparse;
pub mod field;
pub mod io;
pub mod optimize;
pub mod pipeline;
pub mod quadrics;
pub mod surface;

/// 3-vector used for points, directions and velocities.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3×3 matrix used for Jacobians and quadratic forms.
pub type Mat3 = nalgebra::Matrix3<f64>;
