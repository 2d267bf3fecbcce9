//! Adam, Euclidean projection onto l1 balls, and the projected loop that
//! combines them.

mod adam;
mod l1;
mod pgd;

pub use adam::{Adam, AdamConfig};
pub use l1::{project_l1, project_l1_in_place, L1Ball, MEMBERSHIP_TOL};
pub use pgd::{pgd_loop, PgdOutcome, PgdSettings, PgdState, StepGrads, StepRule};
