//! Finite-difference semi-discretizations of the benchmark problems.

mod grid;
mod model;
mod terms;

pub use grid::{BoxRegion, GridSpec, RegionMask};
pub use model::{
    advection_model, allen_cahn_model, build_actuator, build_cost_matrix,
    build_dirichlet_laplacian, initial_condition, Benchmark, LowRankCost, ModelGeometry,
    SemilinearModel,
};
pub use terms::{OperatorTerm, StateFunction, UpwindAdvection};
