//! GeoShapley: Shapley attributions that treat location as a joint player.
//!
//! Given a predictor over `p` columns, `g` of which are coordinates, every
//! prediction is split into a base value, an intrinsic location effect, one
//! main effect per non-location feature and one location x feature
//! interaction per feature:
//!
//! ```text
//! f(x) = phi_0 + phi_GEO + sum_j phi_j + sum_j phi_(GEO,j)
//! ```
//!
//! The estimator enumerates all coalitions of the `q = p - g + 1` effective
//! players, evaluates them by interventional masking against a weighted
//! background, and solves a constrained weighted least squares problem.
//! [`oracle`] holds exact enumeration formulas used to check it.

pub mod background;
pub mod bridge;
pub mod coalition;
pub mod error;
pub mod explainer;
pub mod floats;
pub mod io;
pub mod linalg;
pub mod models;
pub mod oracle;
pub mod postprocess;
pub mod simulation;
pub mod solver;
pub mod validation;

pub use background::{kmeans, select_background, BackgroundSpec, Reference};
pub use bridge::{bridge_connect, BridgeCommand, BridgePredictor};
pub use coalition::{
    build_design_matrix, coalition_value, coalition_values, enumerate_coalitions, kernel_weight,
    BackgroundData, Coalition, DesignSystem, GeoSpec, KernelWeight, Layout, MAX_PLAYERS,
};
pub use error::{GeoShapError, Result};
pub use explainer::{
    explain_batch, explain_instance, ExplainOptions, Explainer, GeoShapleyResult,
    InstanceExplanation, ResultMetadata,
};
pub use models::{ols_fit, FnPredictor, OlsModel, Predictor, TrueModel};
pub use postprocess::{
    bootstrap_ci, intrinsic_effect, log10_to_percent, rank_features, significance_mask,
    svc_recover, BootstrapConfig, BootstrapResult, SvcSurface, Trainer,
};
pub use simulation::{generate_dataset, surface_fidelity, Fidelity, SimulatedDataset};
pub use solver::{solve_constrained_wls, ConstrainedWls, WlsSolution};
