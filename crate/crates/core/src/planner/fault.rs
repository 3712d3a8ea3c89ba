//! Seeded plan corruption. Each fault kind turns an executable plan into
//! one the strict simulator rejects, at a known step.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atom::{Atom, State};
use crate::bench::{oracle_judge, OracleVerdict};
use crate::domain::{ActionCall, GroundAction, Problem};
use crate::plan::{Plan, PlanStep};
use crate::transition::{apply_optimistic, apply_strict};

use super::reference::{search_plan, SearchOptions};
use super::{Planner, PlannerError, PlannerRequest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    WrongObject,
    PreconditionViolation,
    SkippedStep,
    CorruptedClaimedState,
    GoalMiss,
}

impl FaultKind {
    pub const ALL: [FaultKind; 5] = [
        FaultKind::WrongObject,
        FaultKind::PreconditionViolation,
        FaultKind::SkippedStep,
        FaultKind::CorruptedClaimedState,
        FaultKind::GoalMiss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FaultKind::WrongObject => "wrong-object",
            FaultKind::PreconditionViolation => "precondition-violation",
            FaultKind::SkippedStep => "skipped-step",
            FaultKind::CorruptedClaimedState => "corrupted-claimed-state",
            FaultKind::GoalMiss => "goal-miss",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaultKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown fault kind `{s}`"))
    }
}

/// Which fault to inject where. `step` is a 0-based plan index; for
/// `GoalMiss` it is the number of leading steps kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub step: usize,
    pub rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum FaultError {
    #[error("cannot realize {kind} at step {step}: {reason}")]
    CannotRealize {
        kind: FaultKind,
        step: usize,
        reason: String,
    },
}

/// States reached by strict application; stops at the first failure.
fn strict_states(problem: &Problem, plan: &Plan) -> Vec<State> {
    let mut out = vec![problem.init.clone()];
    for a in plan.actions() {
        match apply_strict(&problem.domain, out.last().unwrap(), a) {
            Ok(o) => out.push(o.next),
            Err(_) => break,
        }
    }
    out
}

/// Rebuilds a plan whose claims follow optimistic application, so every
/// claim agrees with the recomputed state and only the actions are wrong.
fn with_optimistic_claims(problem: &Problem, actions: Vec<GroundAction>) -> Plan {
    let mut state = problem.init.clone();
    Plan::new(
        actions
            .into_iter()
            .map(|action| {
                state = apply_optimistic(&problem.domain, &state, &action).next;
                PlanStep {
                    action,
                    claimed_next: Some(state.clone()),
                }
            })
            .collect(),
    )
}

/// 0-based index of the first rejected step, the plan length for a missed
/// goal, `None` when the plan is accepted.
fn failing_index(problem: &Problem, plan: &Plan) -> Option<usize> {
    match oracle_judge(problem, plan) {
        OracleVerdict::Feasible => None,
        OracleVerdict::StepFailure { step, .. } => Some(step - 1),
        OracleVerdict::GoalMiss { .. } => Some(plan.len()),
    }
}

fn replaced(actions: &[GroundAction], at: usize, with: GroundAction) -> Vec<GroundAction> {
    let mut out = actions.to_vec();
    out[at] = with;
    out
}

/// Candidate plans breaking exactly at `t`.
fn breaking_at(problem: &Problem, t: usize, candidates: Vec<Vec<GroundAction>>) -> Vec<Plan> {
    candidates
        .into_iter()
        .map(|actions| with_optimistic_claims(problem, actions))
        .filter(|p| failing_index(problem, p) == Some(t))
        .collect()
}

fn wrong_object(problem: &Problem, actions: &[GroundAction], t: usize) -> Vec<Plan> {
    let domain = &problem.domain;
    let target = &actions[t];
    let mut candidates = Vec::new();
    for (j, arg) in target.args.iter().enumerate() {
        for o in domain.objects.iter().filter(|o| *o != arg) {
            let mut args = target.args.clone();
            args[j] = o.clone();
            let call = ActionCall {
                name: target.name.clone(),
                args,
            };
            if let Ok(a) = domain.instantiate(&call) {
                candidates.push(replaced(actions, t, a));
            }
        }
    }
    breaking_at(problem, t, candidates)
}

fn precondition_violation(problem: &Problem, actions: &[GroundAction], t: usize) -> Vec<Plan> {
    let mut candidates = Vec::new();
    if t + 1 < actions.len() {
        let mut swapped = actions.to_vec();
        swapped.swap(t, t + 1);
        candidates.push(swapped);
    }
    let before = &strict_states(problem, &Plan::from_actions(actions[..t].iter().cloned()))[t];
    for a in problem.domain.ground_all() {
        if a.name == actions[t].name && a != actions[t] && !before.holds_all(&a.pre) {
            candidates.push(replaced(actions, t, a));
        }
    }
    breaking_at(problem, t, candidates)
}

/// Drops `atom` or moves it to another value of its single-valued key.
fn perturbations(problem: &Problem, state: &State) -> Vec<State> {
    let domain = &problem.domain;
    let mut out = Vec::new();
    for x in state.iter() {
        let mut dropped = state.clone();
        dropped.remove(x);
        out.push(dropped.clone());
        for decl in domain.single_valued.iter().filter(|d| d.key_of(x).is_some()) {
            for &pos in &decl.value_positions {
                for o in domain.objects.iter().filter(|o| **o != x.args()[pos]) {
                    let mut args = x.args().to_vec();
                    args[pos] = o.clone();
                    let moved = Atom::new(x.predicate(), args);
                    if !state.contains(&moved) {
                        let mut s = dropped.clone();
                        s.insert(moved);
                        out.push(s);
                    }
                }
            }
        }
    }
    out
}

/// Mutates `plan`, which must be executable, so that it realizes the
/// requested fault. The choice among possible mutations follows
/// `spec.rng_seed`.
pub fn inject_fault(problem: &Problem, plan: &Plan, spec: &FaultSpec) -> Result<Plan, FaultError> {
    let fail = |reason: &str| FaultError::CannotRealize {
        kind: spec.kind,
        step: spec.step,
        reason: reason.into(),
    };
    let t = spec.step;
    if t >= plan.len() {
        return Err(fail("step is outside the plan"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let actions: Vec<GroundAction> = plan.actions().cloned().collect();
    let mut options = match spec.kind {
        FaultKind::WrongObject => wrong_object(problem, &actions, t),
        FaultKind::PreconditionViolation => precondition_violation(problem, &actions, t),
        FaultKind::SkippedStep => {
            let mut shorter = actions.clone();
            shorter.remove(t);
            let p = with_optimistic_claims(problem, shorter);
            if failing_index(problem, &p).is_some() {
                vec![p]
            } else {
                vec![]
            }
        }
        FaultKind::GoalMiss => {
            let p = with_optimistic_claims(problem, actions[..t].to_vec());
            if failing_index(problem, &p).is_some() {
                vec![p]
            } else {
                vec![]
            }
        }
        FaultKind::CorruptedClaimedState => {
            let states = strict_states(problem, plan);
            if states.len() != plan.len() + 1 {
                return Err(fail("plan is not executable"));
            }
            perturbations(problem, &states[t + 1])
                .into_iter()
                .map(|claim| {
                    let mut steps: Vec<PlanStep> = actions
                        .iter()
                        .zip(&states[1..])
                        .map(|(a, s)| PlanStep {
                            action: a.clone(),
                            claimed_next: Some(s.clone()),
                        })
                        .collect();
                    steps[t].claimed_next = Some(claim);
                    Plan::new(steps)
                })
                .collect()
        }
    };
    options.shuffle(&mut rng);
    options.pop().ok_or_else(|| fail("no mutation is rejected at that step"))
}

/// How often a [`FaultyPlanner`] corrupts its plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corruption {
    /// Each round independently with this probability.
    Probability(f64),
    /// The first `n` rounds, then never.
    FirstRounds(usize),
}

impl FromStr for Corruption {
    type Err = String;

    /// Reads `p=0.3` or `rounds=2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| format!("expected p=<prob> or rounds=<n>, got `{s}`"))?;
        match key.trim() {
            "p" => {
                let p: f64 = value.trim().parse().map_err(|_| format!("bad probability `{value}`"))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(format!("probability {p} is outside [0, 1]"));
                }
                Ok(Corruption::Probability(p))
            }
            "rounds" => value
                .trim()
                .parse()
                .map(Corruption::FirstRounds)
                .map_err(|_| format!("bad round count `{value}`")),
            other => Err(format!("unknown fault option `{other}`")),
        }
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Corruption::Probability(p) => write!(f, "p={p}"),
            Corruption::FirstRounds(n) => write!(f, "rounds={n}"),
        }
    }
}

/// Wraps the reference planner: a corrupted round returns the shortest plan
/// with one injected fault, otherwise the plan itself.
#[derive(Clone, Debug)]
pub struct FaultyPlanner {
    pub corruption: Corruption,
    pub seed: u64,
    pub kinds: Vec<FaultKind>,
    pub search: SearchOptions,
    cached: Option<(State, State, Plan)>,
    /// Rounds whose plan was actually corrupted.
    pub injected: Vec<(usize, FaultSpec)>,
}

impl FaultyPlanner {
    pub fn new(corruption: Corruption, seed: u64) -> Self {
        FaultyPlanner {
            corruption,
            seed,
            kinds: FaultKind::ALL.to_vec(),
            search: SearchOptions::default(),
            cached: None,
            injected: Vec::new(),
        }
    }

    fn clean_plan(&mut self, problem: &Problem) -> Result<Plan, PlannerError> {
        if let Some((init, goal, plan)) = &self.cached {
            if *init == problem.init && *goal == problem.goal {
                return Ok(plan.clone());
            }
        }
        let plan = search_plan(problem, &self.search)?;
        self.cached = Some((problem.init.clone(), problem.goal.clone(), plan.clone()));
        Ok(plan)
    }
}

impl Planner for FaultyPlanner {
    fn id(&self) -> String {
        format!("fault:{}", self.corruption)
    }

    fn plan(&mut self, request: &PlannerRequest<'_>) -> Result<Plan, PlannerError> {
        let clean = self.clean_plan(request.problem)?;
        let round_seed = self
            .seed
            .wrapping_add((request.round as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut rng = ChaCha8Rng::seed_from_u64(round_seed);
        let corrupt = match self.corruption {
            Corruption::Probability(p) => rng.gen_bool(p),
            Corruption::FirstRounds(n) => request.round < n,
        };
        if !corrupt || clean.is_empty() {
            return Ok(clean);
        }
        let mut kinds = self.kinds.clone();
        kinds.shuffle(&mut rng);
        for kind in kinds {
            let mut steps: Vec<usize> = (0..clean.len()).collect();
            steps.shuffle(&mut rng);
            for step in steps {
                let spec = FaultSpec {
                    kind,
                    step,
                    rng_seed: rng.gen(),
                };
                if let Ok(bad) = inject_fault(request.problem, &clean, &spec) {
                    self.injected.push((request.round, spec));
                    return Ok(bad);
                }
            }
        }
        log::debug!("no fault realizable on a {}-step plan", clean.len());
        Ok(clean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::planner::reference_plan;
    use crate::validator::{validate_plan, Overall};

    fn worked() -> (Problem, Plan) {
        let p = fixtures::worked_problem();
        let plan = reference_plan(&p).unwrap();
        (p, plan)
    }

    #[test]
    fn every_kind_is_rejected_at_or_before_its_step() {
        let (p, plan) = worked();
        for kind in FaultKind::ALL {
            for step in 0..plan.len() {
                for seed in 0..3 {
                    let spec = FaultSpec { kind, step, rng_seed: seed };
                    let Ok(bad) = inject_fault(&p, &plan, &spec) else {
                        continue;
                    };
                    assert!(failing_index(&p, &bad).is_some(), "{kind} {step}");
                    let report = validate_plan(&p, &bad);
                    match report.overall {
                        Overall::Infeasible { first_failing_step: Some(s) } => {
                            if kind != FaultKind::SkippedStep {
                                assert_eq!(s, step + 1, "{kind}");
                            }
                        }
                        Overall::Infeasible { first_failing_step: None } => {
                            assert!(matches!(kind, FaultKind::GoalMiss | FaultKind::SkippedStep));
                        }
                        Overall::Feasible => panic!("{kind} at {step} went undetected"),
                    }
                }
            }
        }
    }

    #[test]
    fn injection_is_seed_deterministic() {
        let (p, plan) = worked();
        let spec = FaultSpec {
            kind: FaultKind::WrongObject,
            step: 2,
            rng_seed: 11,
        };
        assert_eq!(inject_fault(&p, &plan, &spec), inject_fault(&p, &plan, &spec));
    }

    #[test]
    fn skipped_step_shortens_by_one() {
        let (p, plan) = worked();
        let spec = FaultSpec {
            kind: FaultKind::SkippedStep,
            step: 0,
            rng_seed: 0,
        };
        assert_eq!(inject_fault(&p, &plan, &spec).unwrap().len(), plan.len() - 1);
    }

    #[test]
    fn goal_miss_keeps_the_prefix() {
        let (p, plan) = worked();
        let spec = FaultSpec {
            kind: FaultKind::GoalMiss,
            step: plan.len() - 1,
            rng_seed: 0,
        };
        let bad = inject_fault(&p, &plan, &spec).unwrap();
        assert_eq!(bad.len(), plan.len() - 1);
        assert!(!validate_plan(&p, &bad).goal_check.pass);
    }

    #[test]
    fn wrong_object_needs_another_object() {
        let d = fixtures::cooking().with_objects(vec!["granola".into(), "pot1".into()]);
        let p = Problem::new(
            "one",
            std::sync::Arc::new(d),
            "{(arm-free)(available granola)}".parse().unwrap(),
            "{(in granola pot1)(arm-free)}".parse().unwrap(),
        )
        .unwrap();
        let plan = reference_plan(&p).unwrap();
        let only = p.domain.with_objects(vec!["granola".into()]);
        let p1 = Problem { domain: std::sync::Arc::new(only), ..p.clone() };
        let spec = FaultSpec {
            kind: FaultKind::WrongObject,
            step: 0,
            rng_seed: 0,
        };
        assert!(matches!(inject_fault(&p1, &plan, &spec), Err(FaultError::CannotRealize { .. })));
        let out = FaultSpec { step: 9, ..spec };
        assert!(inject_fault(&p, &plan, &out).is_err());
    }

    #[test]
    fn first_rounds_corruption_schedule() {
        let p = fixtures::worked_problem();
        let mut planner = FaultyPlanner::new(Corruption::FirstRounds(2), 5);
        for round in 0..4 {
            let req = PlannerRequest {
                problem: &p,
                feedback: None,
                round,
            };
            let plan = planner.plan(&req).unwrap();
            assert_eq!(failing_index(&p, &plan).is_some(), round < 2, "round {round}");
        }
        assert_eq!(planner.injected.len(), 2);
        assert_eq!("p=0.3".parse::<Corruption>().unwrap(), Corruption::Probability(0.3));
        assert!("p=1.5".parse::<Corruption>().is_err());
    }
}
