//! Three-step plan validation: recompute and compare each claimed state,
//! undo the action with its inverse and compare with the prior state, then
//! check the goal. Differences become the feedback text.

use std::collections::BTreeSet;
use std::fmt::Display;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::atom::{render_atom_list, Atom, State};
use crate::domain::{ActionCall, Domain, GroundAction, Problem};
use crate::transition::{apply_effects, apply_optimistic};

fn as_text<T: Display, S: Serializer>(value: &T, serializer: S) -> Result<S::Ok, S::Error> {
    serializer.collect_str(value)
}

/// Atoms present in exactly one of two states.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StateDiff {
    pub only_in_left: BTreeSet<Atom>,
    pub only_in_right: BTreeSet<Atom>,
}

impl StateDiff {
    pub fn is_empty(&self) -> bool {
        self.only_in_left.is_empty() && self.only_in_right.is_empty()
    }

    pub fn swapped(&self) -> StateDiff {
        StateDiff {
            only_in_left: self.only_in_right.clone(),
            only_in_right: self.only_in_left.clone(),
        }
    }

    /// `(left…) & (right…)`, the layout of the difference line.
    pub fn render(&self) -> String {
        format!(
            "{} & {}",
            render_atom_list(&self.only_in_left),
            render_atom_list(&self.only_in_right)
        )
    }
}

pub fn state_diff(left: &State, right: &State) -> StateDiff {
    StateDiff {
        only_in_left: left.atoms().difference(right.atoms()).cloned().collect(),
        only_in_right: right.atoms().difference(left.atoms()).cloned().collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Check {
    pub pass: bool,
    pub diff: StateDiff,
}

impl Check {
    fn from_diff(diff: StateDiff) -> Self {
        Check {
            pass: diff.is_empty(),
            diff,
        }
    }

    fn vacuous() -> Self {
        Check {
            pass: true,
            diff: StateDiff::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    StateMismatch,
    InverseMismatch,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "kebab-case")]
pub enum Verdict {
    Feasible,
    Infeasible(FailureReason),
}

impl Verdict {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Verdict::Feasible)
    }
}

/// The outcome of validating one plan step. `index` is 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StepVerdict {
    pub index: usize,
    #[serde(serialize_with = "as_text")]
    pub action: GroundAction,
    /// Claimed state against the recomputed one (left claimed, right recomputed).
    pub state_check: Check,
    /// The state carried forward: the claim when there is one.
    pub resulting_state: State,
    #[serde(serialize_with = "as_text")]
    pub inverse_action: GroundAction,
    pub inverted_state: State,
    /// Inverted state against the prior state (left inverted, right prior).
    pub inverse_check: Check,
    pub verdict: Verdict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Overall {
    Feasible,
    /// `first_failing_step` is `None` when every step passed but the goal
    /// does not hold.
    Infeasible { first_failing_step: Option<usize> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub steps: Vec<StepVerdict>,
    /// Unmet goal atoms on the left; atoms holding their single-valued
    /// slot in the final state on the right.
    pub goal_check: Check,
    pub overall: Overall,
}

impl ValidationReport {
    pub fn is_feasible(&self) -> bool {
        matches!(self.overall, Overall::Feasible)
    }

    pub fn first_failure(&self) -> Option<&StepVerdict> {
        self.steps.iter().find(|s| !s.verdict.is_feasible())
    }

    pub fn final_state(&self) -> Option<&State> {
        self.steps.last().map(|s| &s.resulting_state)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum InverseError {
    #[error("declared inverse {declared} of {action} does not undo its effects")]
    InverseMismatch { action: String, declared: String },
}

fn synthesized(action: &GroundAction) -> GroundAction {
    let pre = action
        .pre
        .difference(&action.del)
        .chain(action.add.iter())
        .cloned()
        .collect();
    GroundAction::from_sets(
        format!("inverse-{}", action.name),
        action.args.clone(),
        pre,
        action.del.clone(),
        action.add.clone(),
    )
}

fn declared_call(domain: &Domain, action: &GroundAction) -> Option<ActionCall> {
    let decl = domain.schema(&action.name)?.inverse.as_ref()?;
    let args = decl
        .permutation
        .iter()
        .map(|&i| action.args.get(i).cloned())
        .collect::<Option<Vec<_>>>()?;
    Some(ActionCall {
        name: decl.action.clone(),
        args,
    })
}

/// Builds `a⁻¹`: it adds what `a` deleted, deletes what `a` added, and
/// requires `(pre \ del) ∪ add`. When the schema declares an inverse, the
/// result carries the declared name and argument order, and the declared
/// schema must have the same ground effects.
pub fn synthesize_inverse(
    domain: &Domain,
    action: &GroundAction,
) -> Result<GroundAction, InverseError> {
    let mut inverse = synthesized(action);
    if let Some(call) = declared_call(domain, action) {
        let agrees = domain
            .instantiate(&call)
            .map(|declared| declared.same_effects(&inverse))
            .unwrap_or(false);
        if !agrees {
            return Err(InverseError::InverseMismatch {
                action: action.to_string(),
                declared: call.to_string(),
            });
        }
        inverse.name = call.name;
        inverse.args = call.args;
    }
    Ok(inverse)
}

/// Checks every declared inverse symbolically, grounding each schema over
/// its own parameter names.
pub fn check_declared_inverses(domain: &Domain) -> Result<(), InverseError> {
    for schema in &domain.schemas {
        if schema.inverse.is_none() {
            continue;
        }
        let mut objects = domain.objects.clone();
        objects.extend(schema.params.iter().cloned());
        let symbolic = domain.with_objects(objects);
        let binding = schema
            .params
            .iter()
            .map(|p| (p.clone(), p.clone()))
            .collect();
        let action = symbolic
            .ground(schema, &binding)
            .expect("schema grounds over its own parameters");
        synthesize_inverse(&symbolic, &action)?;
    }
    Ok(())
}

fn inverse_for_report(domain: &Domain, action: &GroundAction) -> GroundAction {
    synthesize_inverse(domain, action).unwrap_or_else(|e| {
        log::warn!("{e}; using the synthesized inverse");
        synthesized(action)
    })
}

/// Validates one step from `prev`. The inverse is applied by effects only,
/// to the claimed state when one is given and to the recomputed state
/// otherwise.
pub fn verify_step(
    domain: &Domain,
    index: usize,
    prev: &State,
    action: &GroundAction,
    claimed_next: Option<&State>,
) -> StepVerdict {
    let recomputed = apply_optimistic(domain, prev, action).next;
    let state_check = match claimed_next {
        Some(claim) => Check::from_diff(state_diff(claim, &recomputed)),
        None => Check::vacuous(),
    };
    let resulting_state = claimed_next.cloned().unwrap_or(recomputed);
    let inverse_action = inverse_for_report(domain, action);
    let inverted_state = apply_effects(&resulting_state, &inverse_action.add, &inverse_action.del);
    let inverse_check = Check::from_diff(state_diff(&inverted_state, prev));
    let verdict = match (state_check.pass, inverse_check.pass) {
        (true, true) => Verdict::Feasible,
        (false, true) => Verdict::Infeasible(FailureReason::StateMismatch),
        (true, false) => Verdict::Infeasible(FailureReason::InverseMismatch),
        (false, false) => Verdict::Infeasible(FailureReason::Both),
    };
    StepVerdict {
        index,
        action: action.clone(),
        state_check,
        resulting_state,
        inverse_action,
        inverted_state,
        inverse_check,
        verdict,
    }
}

/// Goal atoms missing from `state`, paired with the atoms occupying their
/// single-valued slots.
pub fn goal_check(domain: &Domain, state: &State, goal: &State) -> Check {
    let unmet: BTreeSet<Atom> = goal.iter().filter(|a| !state.contains(a)).cloned().collect();
    let occupying = state
        .iter()
        .filter(|s| unmet.iter().any(|g| domain.conflicting(g, s)))
        .cloned()
        .collect();
    Check {
        pass: unmet.is_empty(),
        diff: StateDiff {
            only_in_left: unmet,
            only_in_right: occupying,
        },
    }
}

/// Validates every step of `plan` from the problem's initial state,
/// carrying each step's resulting state forward, then checks the goal.
pub fn validate_plan(problem: &Problem, plan: &crate::plan::Plan) -> ValidationReport {
    let domain = &problem.domain;
    let mut state = problem.init.clone();
    let mut steps = Vec::with_capacity(plan.len());
    for (i, step) in plan.steps.iter().enumerate() {
        let v = verify_step(domain, i + 1, &state, &step.action, step.claimed_next.as_ref());
        state = v.resulting_state.clone();
        steps.push(v);
    }
    let goal_check = goal_check(domain, &state, &problem.goal);
    let first = steps.iter().find(|s| !s.verdict.is_feasible()).map(|s| s.index);
    let overall = match (first, goal_check.pass) {
        (None, true) => Overall::Feasible,
        (first, _) => Overall::Infeasible {
            first_failing_step: first,
        },
    };
    ValidationReport {
        steps,
        goal_check,
        overall,
    }
}

fn is_location(predicate: &str) -> bool {
    predicate == "at" || predicate.ends_with("-at")
}

/// Phrases `actual` against `expected` when they share a single-valued key.
fn contrast(domain: &Domain, expected: &Atom, actual: &Atom) -> Option<String> {
    let decl = domain
        .single_valued
        .iter()
        .find(|d| d.conflicts(expected, actual))?;
    let key = decl.key_of(actual)?;
    if is_location(actual.predicate()) && !key.is_empty() {
        Some(format!(
            "{} is in {}, not {}",
            key.join(" "),
            decl.value_of(actual)?.join(" "),
            decl.value_of(expected)?.join(" ")
        ))
    } else {
        Some(format!("{actual} holds, not {expected}"))
    }
}

/// The explanation clause for a diff whose left side is what was expected
/// and whose right side is what actually holds.
fn explain(domain: &Domain, diff: &StateDiff) -> String {
    let pairs: Vec<String> = diff
        .only_in_right
        .iter()
        .flat_map(|actual| {
            diff.only_in_left
                .iter()
                .filter_map(move |expected| contrast(domain, expected, actual))
        })
        .collect();
    if pairs.is_empty() {
        format!(
            ": the states differ by {}",
            diff.render()
        )
    } else {
        format!(" because {}", pairs.join(" and "))
    }
}

/// Renders the feedback for the first failing step, or for the goal when
/// every step passed. Equal reports give byte-equal text.
pub fn render_feedback(domain: &Domain, report: &ValidationReport) -> String {
    if report.is_feasible() {
        return "The plan is feasible.\n".to_string();
    }
    let mut out = String::new();
    if let Some(step) = report.first_failure() {
        out.push_str(&format!("Step {}: {}\n", step.index, step.action));
        out.push_str(&format!("Resulting state: {}\n", step.resulting_state));
        out.push_str(&format!("Inverse action: {}\n", step.inverse_action));
        out.push_str(&format!("Inversed state: {}\n", step.inverted_state));
        out.push_str(&format!("Difference: {}\n", step.inverse_check.diff.render()));
        if !step.state_check.pass {
            out.push_str(&format!(
                "State check: claimed & recomputed differ by {}\n",
                step.state_check.diff.render()
            ));
        }
        let diff = if step.inverse_check.pass {
            &step.state_check.diff
        } else {
            &step.inverse_check.diff
        };
        out.push_str(&format!("The action is wrong{}.\n", explain(domain, diff)));
    } else {
        let diff = &report.goal_check.diff;
        out.push_str(&format!(
            "Goal check: unmet goal atoms {}\n",
            render_atom_list(&diff.only_in_left)
        ));
        out.push_str(&format!(
            "The plan does not reach the goal{}.\n",
            explain(domain, diff)
        ));
    }
    out
}
