//! Convolution-type nonlocal energies on uniform grids.
//!
//! The crate discretizes functionals of the form
//!
//! ```text
//! F_eps^T(u, A) = ∫_{B_T} ∫_{A_eps(ξ)} f(ξ, (u(x + eps ξ) - u(x)) / eps) dx dξ
//! ```
//!
//! on box grids, minimizes them under frozen-cell (Dirichlet / pinning)
//! constraints, and uses those solves to compute homogenized densities,
//! local and nonlocal capacitary densities, functional-inequality ratios
//! and perforated-domain regime experiments.
//!
//! The numerical core ([`kernels`], [`fields`], [`energy`], [`minimize`]) is
//! generic over the scalar type through [`Real`]; the experiment layers work
//! in `f64`. Concrete `f64` aliases are exported at the crate root.

pub mod capacity;
pub mod energy;
pub mod error;
pub mod fields;
pub mod homogenize;
pub mod inequalities;
pub mod kernels;
pub mod minimize;
pub mod quad;
pub mod real;
pub mod regimes;

pub use error::{Error, Result};
pub use real::Real;

/// `f64` kernel specification.
pub type Kernel = kernels::KernelSpec<f64>;
/// `f64` grid domain.
pub type Domain = fields::GridDomain<f64>;
/// `f64` piecewise-constant field.
pub type Field = fields::GridFunction<f64>;
/// `f64` energy parameters (scale, truncation, shift quadrature).
pub type Params = energy::EnergyParams<f64>;
/// `f64` periodic perforation.
pub type Perforation = fields::Perforation<f64>;
/// `f64` frozen-cell constraint set.
pub type Constraints = minimize::ConstraintMask<f64>;
/// `f64` solver report.
pub type Report = minimize::SolveReport<f64>;

/// `f32` kernel specification.
pub type Kernel32 = kernels::KernelSpec<f32>;
/// `f32` piecewise-constant field.
pub type Field32 = fields::GridFunction<f32>;
