//! The plan, validate, re-plan loop, and monitored execution.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::atom::State;
use crate::bench::{oracle_judge, OracleVerdict};
use crate::domain::Problem;
use crate::plan::Plan;
use crate::planner::llm::{LlmClient, LlmError};
use crate::planner::prompt::{parse_llm_validation, render_validation_prompt, Exemplars, PromptStyle, StepQuery};
use crate::planner::{Planner, PlannerError, PlannerRequest};
use crate::transition::{apply_optimistic, apply_strict};
use crate::validator::{render_feedback, state_diff, validate_plan, StateDiff, ValidationReport};

pub const DEFAULT_CAP: usize = 10;

/// A validator's decision on one plan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Judgment {
    pub feasible: bool,
    pub feedback: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ValidatorError {
    #[error(transparent)]
    Llm(#[from] LlmError),
}

pub trait Validator: Send {
    fn id(&self) -> String;

    /// `round` counts from 0, as in [`PlannerRequest`].
    fn judge(&mut self, problem: &Problem, plan: &Plan, round: usize) -> Result<Judgment, ValidatorError>;
}

/// The symbolic three-step check with inverse actions.
#[derive(Clone, Copy, Debug, Default)]
pub struct InverseValidator;

impl Validator for InverseValidator {
    fn id(&self) -> String {
        "inverseprompt".into()
    }

    fn judge(&mut self, problem: &Problem, plan: &Plan, _round: usize) -> Result<Judgment, ValidatorError> {
        let report = validate_plan(problem, plan);
        Ok(Judgment {
            feasible: report.is_feasible(),
            feedback: (!report.is_feasible()).then(|| render_feedback(&problem.domain, &report)),
        })
    }
}

/// A rule-based checker outside the planner: runs the plan in the strict
/// simulator and reports the first unmet precondition or goal atoms.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExternalValidator;

impl Validator for ExternalValidator {
    fn id(&self) -> String {
        "external-validator".into()
    }

    fn judge(&mut self, problem: &Problem, plan: &Plan, _round: usize) -> Result<Judgment, ValidatorError> {
        let feedback = match oracle_judge(problem, plan) {
            OracleVerdict::Feasible => None,
            OracleVerdict::StepFailure { step, reason } => Some(format!(
                "Step {step}: {} cannot be executed: {reason}.\n",
                plan.steps[step - 1].action
            )),
            OracleVerdict::GoalMiss { unmet } => Some(format!(
                "The plan ends without reaching {}.\n",
                crate::atom::render_atom_list(&unmet)
            )),
        };
        Ok(Judgment {
            feasible: feedback.is_none(),
            feedback,
        })
    }
}

/// Accepts every plan.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoValidator;

impl Validator for NoValidator {
    fn id(&self) -> String {
        "no-validator".into()
    }

    fn judge(&mut self, _: &Problem, _: &Plan, _: usize) -> Result<Judgment, ValidatorError> {
        Ok(Judgment {
            feasible: true,
            feedback: None,
        })
    }
}

/// Lets the model check its own plan step by step.
#[derive(Clone)]
pub struct LlmValidator {
    pub client: Arc<LlmClient>,
    pub style: PromptStyle,
    pub exemplars: Exemplars,
}

impl LlmValidator {
    pub fn new(client: Arc<LlmClient>, style: PromptStyle) -> Self {
        LlmValidator {
            client,
            style,
            exemplars: Exemplars::bundled(),
        }
    }
}

impl Validator for LlmValidator {
    fn id(&self) -> String {
        match self.style {
            PromptStyle::Inverse => "inverseprompt".into(),
            PromptStyle::Standard => "self-corr-standard".into(),
        }
    }

    fn judge(&mut self, problem: &Problem, plan: &Plan, round: usize) -> Result<Judgment, ValidatorError> {
        let config = &self.client.config;
        let temperature = config.validation_temperature_at(round);
        let mut state = problem.init.clone();
        for (i, step) in plan.steps.iter().enumerate() {
            let query = StepQuery {
                domain: &problem.domain,
                current: &state,
                goal: &problem.goal,
                action: &step.action,
                claimed_next: step.claimed_next.as_ref(),
            };
            let prompt = render_validation_prompt(&query, self.style, &self.exemplars, config.exemplars);
            let text = self.client.complete(&prompt, temperature)?;
            let header = format!("Step {}: {}\n", i + 1, step.action);
            match parse_llm_validation(&text, &problem.domain) {
                Ok(answer) if answer.feasible => {}
                Ok(_) => {
                    return Ok(Judgment {
                        feasible: false,
                        feedback: Some(format!("{header}{}\n", text.trim_end())),
                    })
                }
                Err(e) => {
                    return Ok(Judgment {
                        feasible: false,
                        feedback: Some(format!("{header}The check of this step could not be read: {}\n", e.message)),
                    })
                }
            }
            state = step
                .claimed_next
                .clone()
                .unwrap_or_else(|| apply_optimistic(&problem.domain, &state, &step.action).next);
        }
        let unmet: Vec<String> = problem.goal.iter().filter(|g| !state.contains(g)).map(|g| g.to_string()).collect();
        Ok(if unmet.is_empty() {
            Judgment {
                feasible: true,
                feedback: None,
            }
        } else {
            Judgment {
                feasible: false,
                feedback: Some(format!("The plan ends without reaching {}.\n", unmet.concat())),
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionStatus {
    Solved,
    Exhausted,
    PlannerError,
}

/// One round of the loop. `round` is 1-based: the initial plan is round 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub plan: Option<Plan>,
    /// The symbolic report, kept for diagnostics whichever validator ran.
    pub report: Option<ValidationReport>,
    pub judged_feasible: bool,
    pub feedback: Option<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CorrectionOutcome {
    pub planner: String,
    pub validator: String,
    pub cap: usize,
    /// The last plan produced, accepted or not.
    pub final_plan: Option<Plan>,
    pub rounds_used: usize,
    pub round_log: Vec<RoundRecord>,
    pub status: CorrectionStatus,
}

impl CorrectionOutcome {
    /// Whether the round-1 plan was judged feasible; `None` when round 1
    /// produced no plan.
    pub fn first_judgment(&self) -> Option<bool> {
        self.round_log.first().filter(|r| r.plan.is_some()).map(|r| r.judged_feasible)
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "planner: {}\nvalidator: {}\ncap: {}\n",
            self.planner, self.validator, self.cap
        );
        for r in &self.round_log {
            out.push_str(&format!("--- round {} ---\n", r.round));
            match (&r.plan, &r.error) {
                (_, Some(e)) => out.push_str(&format!("error: {e}\n")),
                (Some(p), None) => {
                    out.push_str(&p.to_string());
                    out.push_str(if r.judged_feasible { "judged feasible\n" } else { "judged infeasible\n" });
                }
                (None, None) => {}
            }
            if let Some(f) = &r.feedback {
                out.push_str("feedback:\n");
                out.push_str(f);
            }
        }
        let status = match self.status {
            CorrectionStatus::Solved => "solved",
            CorrectionStatus::Exhausted => "exhausted",
            CorrectionStatus::PlannerError => "planner-error",
        };
        out.push_str(&format!("rounds_used: {}\nstatus: {status}\n", self.rounds_used));
        out
    }
}

/// Asks for a plan, validates it, and feeds the first failing step back,
/// for at most `cap` rounds.
pub fn run_correction(
    problem: &Problem,
    planner: &mut dyn Planner,
    validator: &mut dyn Validator,
    cap: usize,
) -> CorrectionOutcome {
    assert!(cap >= 1, "the refinement cap must be at least 1");
    let mut log: Vec<RoundRecord> = Vec::new();
    let mut final_plan = None;
    let mut feedback: Option<String> = None;
    let mut status = CorrectionStatus::Exhausted;
    for round in 0..cap {
        let request = PlannerRequest {
            problem,
            feedback: feedback.as_deref(),
            round,
        };
        let mut record = RoundRecord {
            round: round + 1,
            plan: None,
            report: None,
            judged_feasible: false,
            feedback: None,
            error: None,
        };
        match planner.plan(&request) {
            Ok(plan) => {
                record.report = Some(validate_plan(problem, &plan));
                match validator.judge(problem, &plan, round) {
                    Ok(j) => {
                        record.judged_feasible = j.feasible;
                        record.feedback = j.feedback;
                    }
                    Err(e) => {
                        record.error = Some(e.to_string());
                        record.plan = Some(plan.clone());
                        final_plan = Some(plan);
                        log.push(record);
                        status = CorrectionStatus::PlannerError;
                        break;
                    }
                }
                record.plan = Some(plan.clone());
                final_plan = Some(plan);
            }
            Err(PlannerError::Parse(e)) => {
                record.error = Some(e.to_string());
                record.feedback = Some(format!(
                    "The previous answer could not be read as a plan ({}). Write one action per line.\n",
                    e.message
                ));
            }
            Err(e) => {
                record.error = Some(e.to_string());
                log.push(record);
                status = CorrectionStatus::PlannerError;
                break;
            }
        }
        let solved = record.judged_feasible;
        feedback = record.feedback.clone();
        log.push(record);
        if solved {
            status = CorrectionStatus::Solved;
            break;
        }
    }
    CorrectionOutcome {
        planner: planner.id(),
        validator: validator.id(),
        cap,
        final_plan,
        rounds_used: log.len(),
        round_log: log,
        status,
    }
}

/// Perturbs the observed world right after step `at_step` (1-based).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct FailureSpec {
    pub at_step: usize,
    pub remove: State,
    pub add: State,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExecutedStep {
    pub action: String,
    pub planned_state: State,
    pub observed_state: State,
    /// Planned on the left, observed on the right.
    pub diff: StateDiff,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExecutionTrace {
    pub executed: Vec<ExecutedStep>,
    /// 1-based step at which the observation departed from the plan.
    pub interrupted_at: Option<usize>,
    pub replanned: bool,
}

/// Executes `plan` in a simulated world, comparing each observed state with
/// the planned one and stopping at the first difference. An action that
/// cannot run leaves the world unchanged.
pub fn execute_with_monitor(problem: &Problem, plan: &Plan, failure: Option<&FailureSpec>) -> ExecutionTrace {
    let domain = &problem.domain;
    let mut planned = problem.init.clone();
    let mut world = problem.init.clone();
    let mut executed = Vec::new();
    let mut interrupted_at = None;
    for (i, step) in plan.steps.iter().enumerate() {
        let k = i + 1;
        planned = match &step.claimed_next {
            Some(c) => c.clone(),
            None => apply_optimistic(domain, &planned, &step.action).next,
        };
        if let Ok(o) = apply_strict(domain, &world, &step.action) {
            world = o.next;
        }
        if let Some(f) = failure.filter(|f| f.at_step == k) {
            world = world.iter().filter(|a| !f.remove.contains(a)).cloned().collect();
            world.extend(f.add.iter().cloned());
        }
        let diff = state_diff(&planned, &world);
        let departed = !diff.is_empty();
        executed.push(ExecutedStep {
            action: step.action.to_string(),
            planned_state: planned.clone(),
            observed_state: world.clone(),
            diff,
        });
        if departed {
            interrupted_at = Some(k);
            break;
        }
    }
    ExecutionTrace {
        executed,
        interrupted_at,
        replanned: false,
    }
}

/// A corrected plan, its monitored execution and, when execution was
/// interrupted, the recovery from the observed state.
#[derive(Clone, Debug, Serialize)]
pub struct MonitoredRun {
    pub outcome: CorrectionOutcome,
    pub trace: Option<ExecutionTrace>,
    pub recovery: Option<Box<MonitoredRun>>,
}

/// Corrects, executes, and on interruption re-enters the loop once with a
/// problem whose initial state is the observed one.
pub fn correct_and_execute(
    problem: &Problem,
    planner: &mut dyn Planner,
    validator: &mut dyn Validator,
    cap: usize,
    failure: Option<&FailureSpec>,
) -> MonitoredRun {
    let outcome = run_correction(problem, planner, validator, cap);
    let Some(plan) = outcome.final_plan.clone().filter(|_| outcome.status == CorrectionStatus::Solved) else {
        return MonitoredRun {
            outcome,
            trace: None,
            recovery: None,
        };
    };
    let mut trace = execute_with_monitor(problem, &plan, failure);
    let mut recovery = None;
    if trace.interrupted_at.is_some() {
        let observed = trace.executed.last().expect("interrupted after a step").observed_state.clone();
        match problem.with_init(observed) {
            Ok(next) => {
                trace.replanned = true;
                let run = correct_and_execute(&next, planner, validator, cap, None);
                recovery = Some(Box::new(run));
            }
            Err(e) => log::warn!("observed state is not a valid initial state: {e}"),
        }
    }
    MonitoredRun {
        outcome,
        trace: Some(trace),
        recovery,
    }
}

/// `(TP + TN) / M × 100` over (judged feasible, actually feasible) pairs;
/// `None` when there are none.
pub fn accuracy(pairs: impl IntoIterator<Item = (bool, bool)>) -> Option<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for (judged, truth) in pairs {
        total += 1;
        right += usize::from(judged == truth);
    }
    (total > 0).then(|| right as f64 / total as f64 * 100.0)
}

/// A plan with its ground-truth label from the oracle.
#[derive(Clone, Debug)]
pub struct LabeledPlan {
    pub problem: Problem,
    pub plan: Plan,
    pub feasible: bool,
}

/// Accuracy of `validator` on labelled plans, in percent.
pub fn score_correction(cases: &[LabeledPlan], validator: &mut dyn Validator) -> Result<Option<f64>, ValidatorError> {
    let mut pairs = Vec::with_capacity(cases.len());
    for (i, c) in cases.iter().enumerate() {
        pairs.push((validator.judge(&c.problem, &c.plan, 0)?.feasible, c.feasible));
        log::trace!("scored case {i}");
    }
    Ok(accuracy(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::parse_state;
    use crate::fixtures;
    use crate::planner::{Corruption, FaultyPlanner, ReferencePlanner};

    /// Returns a fixed plan and remembers the feedback it was given.
    struct Stubborn {
        plan: Plan,
        seen: Vec<Option<String>>,
    }

    impl Planner for Stubborn {
        fn id(&self) -> String {
            "stubborn".into()
        }

        fn plan(&mut self, request: &PlannerRequest<'_>) -> Result<Plan, PlannerError> {
            self.seen.push(request.feedback.map(str::to_string));
            Ok(self.plan.clone())
        }
    }

    #[test]
    fn reference_planner_solves_in_one_round() {
        let p = fixtures::worked_problem();
        let out = run_correction(&p, &mut ReferencePlanner::default(), &mut InverseValidator, DEFAULT_CAP);
        assert_eq!(out.status, CorrectionStatus::Solved);
        assert_eq!(out.rounds_used, 1);
        assert!(out.round_log[0].report.as_ref().unwrap().is_feasible());
    }

    #[test]
    fn three_corrupted_rounds_then_solved() {
        let p = fixtures::worked_problem();
        let mut planner = FaultyPlanner::new(Corruption::FirstRounds(3), 1);
        let out = run_correction(&p, &mut planner, &mut InverseValidator, DEFAULT_CAP);
        assert_eq!(out.status, CorrectionStatus::Solved);
        assert_eq!(out.rounds_used, 4);
        let bad = out.round_log.iter().filter(|r| !r.report.as_ref().unwrap().is_feasible()).count();
        assert_eq!(bad, 3);
        assert!(crate::bench::oracle_check(&p, out.final_plan.as_ref().unwrap()));
    }

    #[test]
    fn stubborn_planner_exhausts_the_cap_and_feedback_is_forwarded_verbatim() {
        let p = fixtures::worked_problem();
        let bad = crate::plan::parse_plan(fixtures::WORKED_PLAN_TEXT, &p.domain).unwrap();
        let mut planner = Stubborn {
            plan: bad,
            seen: vec![],
        };
        let out = run_correction(&p, &mut planner, &mut InverseValidator, DEFAULT_CAP);
        assert_eq!(out.status, CorrectionStatus::Exhausted);
        assert_eq!(out.rounds_used, 10);
        assert_eq!(out.round_log.len(), 10);
        assert_eq!(planner.seen[0], None);
        for r in 1..10 {
            assert_eq!(planner.seen[r], out.round_log[r - 1].feedback);
        }
        let first = out.round_log[0].feedback.as_ref().unwrap();
        assert!(first.contains("because robot1 is in room1, not room2"));
        let one = run_correction(&p, &mut planner, &mut InverseValidator, 1);
        assert_eq!((one.status, one.rounds_used), (CorrectionStatus::Exhausted, 1));
    }

    #[test]
    fn unreadable_plans_consume_rounds() {
        struct Mumbler;
        impl Planner for Mumbler {
            fn id(&self) -> String {
                "mumbler".into()
            }
            fn plan(&mut self, _: &PlannerRequest<'_>) -> Result<Plan, PlannerError> {
                Err(crate::planner::parse_llm_plan("no idea", &fixtures::ballmoving()).unwrap_err().into())
            }
        }
        let p = fixtures::worked_problem();
        let out = run_correction(&p, &mut Mumbler, &mut InverseValidator, 3);
        assert_eq!((out.status, out.rounds_used), (CorrectionStatus::Exhausted, 3));
        assert!(out.final_plan.is_none());
    }

    #[test]
    fn unsolvable_is_a_planner_error() {
        let p = fixtures::worked_problem();
        let p = Problem {
            init: parse_state("{(robot-at robot1 room1)}").unwrap(),
            ..p
        };
        let out = run_correction(&p, &mut ReferencePlanner::default(), &mut InverseValidator, 10);
        assert_eq!((out.status, out.rounds_used), (CorrectionStatus::PlannerError, 1));
    }

    #[test]
    fn monitor_without_failure_follows_the_plan() {
        let p = fixtures::worked_problem();
        let plan = crate::planner::reference_plan(&p).unwrap();
        let trace = execute_with_monitor(&p, &plan, None);
        assert_eq!(trace.executed.len(), plan.len());
        assert!(trace.interrupted_at.is_none());
        for (e, s) in trace.executed.iter().zip(&plan.steps) {
            assert!(e.diff.is_empty());
            assert_eq!(Some(&e.observed_state), s.claimed_next.as_ref());
        }
    }

    #[test]
    fn dropped_block_interrupts_execution() {
        let d = fixtures::blocksworld();
        let p = Problem::new(
            "drop",
            Arc::new(d.clone()),
            parse_state("{(arm-empty)(clear b4)(on b4 b3)(on b3 b2)(ontable b2)(clear b1)(ontable b1)}").unwrap(),
            parse_state("{(on b4 b1)}").unwrap(),
        )
        .unwrap();
        let plan = crate::planner::reference_plan(&p).unwrap();
        assert_eq!(plan.steps[0].action.to_string(), "(unstack b4 b3)");
        let failure = FailureSpec {
            at_step: 1,
            remove: parse_state("{(holding b4)(clear b3)}").unwrap(),
            add: parse_state("{(on b4 b3)(clear b4)(arm-empty)}").unwrap(),
        };
        let trace = execute_with_monitor(&p, &plan, Some(&failure));
        assert_eq!(trace.interrupted_at, Some(1));
        let diff = &trace.executed[0].diff;
        assert!(diff.only_in_right.contains(&"(on b4 b3)".parse().unwrap()));
        assert!(diff.only_in_left.contains(&"(holding b4)".parse().unwrap()));

        let run = correct_and_execute(&p, &mut ReferencePlanner::default(), &mut InverseValidator, 10, Some(&failure));
        assert!(run.trace.as_ref().unwrap().replanned);
        let recovery = run.recovery.unwrap();
        assert_eq!(recovery.outcome.status, CorrectionStatus::Solved);
        assert!(recovery.trace.unwrap().interrupted_at.is_none());
    }

    #[test]
    fn wrong_ingredient_in_hand() {
        let p = Problem::new(
            "cook",
            Arc::new(fixtures::cooking()),
            parse_state("{(arm-free)(available granola)(available mushrooms)}").unwrap(),
            parse_state("{(in granola pot1)(arm-free)}").unwrap(),
        )
        .unwrap();
        let plan = crate::planner::reference_plan(&p).unwrap();
        let failure = FailureSpec {
            at_step: 1,
            remove: parse_state("{(holding granola)(available mushrooms)}").unwrap(),
            add: parse_state("{(holding mushrooms)(available granola)}").unwrap(),
        };
        let trace = execute_with_monitor(&p, &plan, Some(&failure));
        assert_eq!(trace.interrupted_at, Some(1));
        let diff = &trace.executed[0].diff;
        assert!(diff.only_in_left.contains(&"(holding granola)".parse().unwrap()));
        assert!(diff.only_in_right.contains(&"(holding mushrooms)".parse().unwrap()));
    }

    #[test]
    fn accuracy_arithmetic() {
        let all_right: Vec<(bool, bool)> = (0..20).map(|i| (i < 10, i < 10)).collect();
        assert_eq!(accuracy(all_right.clone()), Some(100.0));
        assert_eq!(accuracy(all_right.iter().map(|&(j, t)| (!j, t))), Some(0.0));
        let fourteen: Vec<(bool, bool)> = (0..20).map(|i| (i < 14, true)).collect();
        assert_eq!(accuracy(fourteen), Some(70.0));
        assert_eq!(accuracy(Vec::new()), None);
    }

    #[test]
    fn external_validator_names_missing_atoms() {
        let p = fixtures::worked_problem();
        let bad = crate::plan::parse_plan("(pick ball1 room2)", &p.domain).unwrap();
        let j = ExternalValidator.judge(&p, &bad, 0).unwrap();
        assert!(!j.feasible);
        assert!(j.feedback.unwrap().contains("(robot-at robot1 room2)"));
    }
}
