//! Secure transmission design with channel knowledge.
//!
//! [`run_alternating`] minimizes the augmented Lagrangian of the sum-MSE
//! problem block by block. The closed-form precoders and the power-allocation
//! lower bound serve as reference points for it.

mod closed_form;
mod lagrangian;
mod solver;

pub use closed_form::{
    closed_form_precoder_highsnr, closed_form_precoder_ridge_nulling, lower_bound_cost,
};
pub use lagrangian::{
    augmented_lagrangian, constraint_penalty, dual_update, grad_c, grad_theta, grad_w,
    lagrangian_grad_w, DualState,
};
pub use solver::{
    initial_design, matched_filter_design, project_phases, project_phases_complex,
    run_alternating, scale_to_feasible, sublinear_envelope, wrap_phase, AltOptions, AltOutcome,
    CsiOracle, EnvelopeFit, OptTrace, StepSchedule, TraceRow,
};
