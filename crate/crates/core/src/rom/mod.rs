//! POD bases, DEIM hyper-reduction, reduced operators and the reduced SDRE loop.

mod artifact;
mod pod;
mod reduced;
mod snapshots;

pub use artifact::{load_reduced, reduced_artifact, Artifact, FORMAT_VERSION, MAGIC};
pub use pod::{build_deim, compute_pod_basis, numerical_rank, thin_svd, DeimBasis, PodBasis, RankSelection};
pub use reduced::{
    error_metrics, reduce_operators, reduced_implicit_euler_step, run_pod_deim_sdre, DeimFidelity,
    DeimSetup, DeimTerm, ErrorMetrics, ReducedDynamics, ReducedModel, ReducedRun, ReducedTerm,
    StencilMap,
};
pub use snapshots::{adjoint_rollout, collect_snapshots, SnapshotRequest, SnapshotSet, SnapshotStrategy};
