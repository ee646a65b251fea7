//! Ground-truth solvers and the approximation-bound studies.

mod lp;
mod reference;
mod studies;

pub use lp::{exact_ot_lp, LpCertificate, LpSolution};
pub use reference::{
    unregularized_eta, uot_kl_estimate, uot_reference, ReferenceSolution, REFERENCE_TOL,
    UNREGULARIZED_ETA_SCALE,
};
pub use studies::{
    linear_fit, tau_scaling_study, theorem2_check, theorem4_check, theorem4_constant, BoundReport,
    ModelFit, SandwichReport, ScalingModel, TauStudy, TauStudyOptions, TauStudyRow, THREADS_ENV,
};
