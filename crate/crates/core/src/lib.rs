//! Robust reviewer assignment under uncertain affinity scores.

pub mod adversary;
pub mod chi2;
pub mod error;
pub mod flow;
pub mod harness;
pub mod io;
pub mod model;
pub mod projection;
pub mod rounding;
pub mod rra;
pub mod uncertainty;

pub use chi2::Chi2Method;
pub use error::{RauError, Result};
pub use flow::{solve_box, solve_known, solve_sphere};
pub use model::{
    usw, validate_instance, AffinityMatrix, Assignment, AssignmentConstraints, AssignmentKind,
    FeasibilityReport, Infeasibility,
};
pub use uncertainty::{Geometry, UncertaintySet};
