//! Numerical laboratory for log-concave functions under heat and
//! Fokker-Planck evolution.
//!
//! The crate evolves densities `e^{-phi}` with convex potential `phi` along
//! the heat semigroup, takes discrete Legendre transforms, and measures the
//! functional volume product `M(e^{-phi}) = ∫e^{-phi} · ∫e^{-phi*}` together
//! with the pointwise identities and variance inequalities that control its
//! behaviour in time. Everything is dense, deterministic, and desk-scale:
//! uniform grids in dimension 1 to 3, extended-real values through a finite
//! cap sentinel, and direct Gaussian-kernel quadrature in the log domain.

pub mod convex;
pub mod grid;
pub mod heatflow;
pub mod inequalities;
pub mod linalg;
pub mod potentials;
pub mod report;
pub mod santalo;
pub mod special;

pub use grid::{AxisSpec, GridSpec, PotentialField, ScalarField};
pub use report::CheckReport;
