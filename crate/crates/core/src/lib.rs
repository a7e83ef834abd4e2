//! Ultraweak discontinuous Petrov–Galerkin discretization of the Reissner–Mindlin
//! plate bending model, robust in the plate thickness `t` down to the
//! Kirchhoff–Love limit `t = 0`.
//!
//! Field variables (deflection `u`, bending moment `M`, rotation `θ`) are
//! element-wise constants. Skeleton traces are generated by four reduced
//! Hsieh–Clough–Tocher fields `(û, M̂₁₁, M̂₁₂, M̂₂₂)`, and optimal test functions are
//! approximated in the broken space of cubic polynomials.
//!
//! Module map:
//!
//! * [`mesh`] – unit-square triangulations with red refinement.
//! * [`quadrature`] – triangle and edge rules.
//! * [`broken_poly`] – element-local Bernstein test basis.
//! * [`hct`] – reduced HCT C¹ macro-elements.
//! * [`dpg`] – element Gram matrix, bilinear form blocks, load, residual.
//! * [`linalg`] – dense Cholesky, sparse SPD storage, direct and CG solvers.
//! * [`manufactured`] – the smooth manufactured solution and L2 errors.
//! * [`driver`] – dof maps, boundary conditions, global solves and studies.
//! * [`checks`] – property suites behind `plate-dpg verify`.

pub mod broken_poly;
pub mod checks;
pub mod dpg;
pub mod driver;
pub mod error;
pub mod hct;
pub mod linalg;
pub mod manufactured;
pub mod mesh;
pub mod quadrature;

pub use error::{Error, Result};
