//! Addams-family shared frailty models for clustered current-status data.

pub mod data;
pub mod estimation;
pub mod family;
pub mod hazard;
pub mod likelihood;
pub mod numdiff;
pub mod optim;
pub mod risk;
pub mod simulate;
pub mod summation;

pub use data::{Cluster, CsvOptions, CurrentStatusDataset, DataError, RowIssue, UnitRecord};
pub use family::{
    classify_branch, support_and_pmf, AddamsParameters, BranchKind, BranchRegime,
    ConditionalMoments, FamilyError, FrailtyBranch, SupportPoint,
};
pub use hazard::{
    stratum_frailty_params, unit_cumulative_hazard, Baseline, FrailtyLink, HazardError,
    LinearPredictor, ModelSpec, ParametricBaseline, PiecewiseConstantBaseline, StratumLevel,
    UnitModel,
};
pub use likelihood::{cluster_loglik, total_loglik, LikelihoodError, PreparedData};
pub use estimation::{
    fit, transformed_ci, Domain, Estimate, EstimationError, FitOptions, FitResult, FittedModel,
    Init, ParameterLayout,
};
pub use risk::{hr_across, hr_across_quantile_matched, hr_within, rc_table, trajectories, HazardRatio, RiskError};
pub use simulate::{generate, sample_event_time, sample_frailty, MonitoringLaw, SimConfig, SimError};
