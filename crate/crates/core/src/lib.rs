//! Self-correcting symbolic task planning.
//!
//! Plans are checked step by step: the claimed successor state is compared
//! with the recomputed one, the action's inverse is applied to that state,
//! and whatever fails to return to the prior state becomes feedback for the
//! next planning round.

pub mod atom;
pub mod bench;
pub mod correction;
pub mod domain;
pub mod error;
pub mod fixtures;
pub mod plan;
pub mod planner;
mod syntax;
pub mod transition;
pub mod validator;

pub use atom::{parse_state, render_state, Atom, State};
pub use domain::{
    parse_domain, parse_problem, render_domain, render_problem, ActionCall, ActionSchema,
    Domain, GroundAction, Problem, SingleValuedDecl,
};
pub use error::{GroundError, ParseError};
pub use plan::{parse_plan, render_plan, Plan, PlanStep};
pub use transition::{
    apply_effects, apply_optimistic, apply_strict, check_preconditions, satisfies_goal,
    ApplyError, ApplyOutcome,
};
pub use validator::{
    render_feedback, state_diff, synthesize_inverse, validate_plan, verify_step, Check,
    FailureReason, InverseError, Overall, StateDiff, StepVerdict, ValidationReport, Verdict,
};
