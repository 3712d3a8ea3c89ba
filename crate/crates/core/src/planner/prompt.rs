//! Prompt templates for planning and step validation, and tolerant readers
//! for the answers.

use thiserror::Error;

use crate::atom::{parse_state, Atom, State};
use crate::domain::{render_domain, ActionCall, Domain, GroundAction};
use crate::plan::{step_prefix, Plan};
use crate::validator::StateDiff;

use super::PlannerRequest;

const PLANNING_EXEMPLARS: &str = include_str!("../../fixtures/exemplars/planning.txt");
const INVERSE_EXEMPLARS: &str = include_str!("../../fixtures/exemplars/validation.txt");
const STANDARD_EXEMPLARS: &str = include_str!("../../fixtures/exemplars/standard.txt");

/// Worked examples shown before the task, one list per prompt kind.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Exemplars {
    pub planning: Vec<String>,
    pub inverse: Vec<String>,
    pub standard: Vec<String>,
}

fn split_exemplars(text: &str) -> Vec<String> {
    text.split("\n---\n")
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

impl Exemplars {
    pub fn bundled() -> Self {
        Exemplars {
            planning: split_exemplars(PLANNING_EXEMPLARS),
            inverse: split_exemplars(INVERSE_EXEMPLARS),
            standard: split_exemplars(STANDARD_EXEMPLARS),
        }
    }

    pub fn none() -> Self {
        Exemplars {
            planning: vec![],
            inverse: vec![],
            standard: vec![],
        }
    }
}

impl Default for Exemplars {
    fn default() -> Self {
        Exemplars::bundled()
    }
}

/// Which validation prompt to ask: the four-field inverse check, or a plain
/// resulting-state-and-verdict check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptStyle {
    #[default]
    Inverse,
    Standard,
}

fn push_examples(out: &mut String, examples: &[String], k: usize) {
    for (i, e) in examples.iter().take(k).enumerate() {
        out.push_str(&format!("Example {}:\n{}\n\n", i + 1, e));
    }
}

pub fn render_planning_prompt(request: &PlannerRequest<'_>, exemplars: &Exemplars, k: usize) -> String {
    let problem = request.problem;
    let mut out = String::new();
    out.push_str(&format!(
        "You are a task planner for the {} domain.\n\n",
        problem.domain.name
    ));
    out.push_str(&format!("Domain:\n{}\n", render_domain(&problem.domain)));
    out.push_str(
        "Write the plan one action per line as (name arg ...). After each action write => \
         and the full state it produces, in braces. Write nothing else.\n\n",
    );
    push_examples(&mut out, &exemplars.planning, k);
    out.push_str(&format!("Current state: {}\n", problem.init));
    out.push_str(&format!("Goal state: {}\n", problem.goal));
    if let Some(feedback) = request.feedback {
        out.push_str("Feedback:\n");
        for line in feedback.lines() {
            out.push_str(&format!("> {line}\n"));
        }
        out.push_str("Revise the plan so that it avoids the problem above.\n");
    }
    out.push_str("Plan:\n");
    out
}

/// One plan step to be checked.
#[derive(Clone, Copy, Debug)]
pub struct StepQuery<'a> {
    pub domain: &'a Domain,
    pub current: &'a State,
    pub goal: &'a State,
    pub action: &'a GroundAction,
    pub claimed_next: Option<&'a State>,
}

pub fn render_validation_prompt(
    query: &StepQuery<'_>,
    style: PromptStyle,
    exemplars: &Exemplars,
    k: usize,
) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "You check one step of a plan in the {} domain.\n\n",
        query.domain.name
    ));
    out.push_str(&format!("Domain:\n{}\n", render_domain(query.domain)));
    match style {
        PromptStyle::Inverse => out.push_str(
            "Apply the examined action to the current state and answer with these lines:\n\
             - Resulting state: the state after the action, in braces\n\
             - Inverse action: the action that undoes the examined action\n\
             - Inversed state: the resulting state after the inverse action, in braces\n\
             - Difference: atoms only in the inversed state & atoms only in the current state, \
             writing (none) for an empty side\n\
             - The action is correct. or The action is wrong because ...\n\n",
        ),
        PromptStyle::Standard => out.push_str(
            "Apply the examined action to the current state and answer with these lines:\n\
             - Resulting state: the state after the action, in braces\n\
             - The action is correct. or The action is wrong because ...\n\n",
        ),
    }
    let examples = match style {
        PromptStyle::Inverse => &exemplars.inverse,
        PromptStyle::Standard => &exemplars.standard,
    };
    push_examples(&mut out, examples, k);
    out.push_str(&format!("Current state: {}\n", query.current));
    out.push_str(&format!("Goal state: {}\n", query.goal));
    out.push_str(&format!("Examined action: {}\n", query.action));
    if let Some(claim) = query.claimed_next {
        out.push_str(&format!("Planned resulting state: {claim}\n"));
    }
    out
}

/// A completion that could not be read. Carries the raw text.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("could not read the completion: {message}")]
pub struct ParseFailure {
    pub message: String,
    pub raw: String,
}

impl ParseFailure {
    fn new(message: impl Into<String>, raw: &str) -> Self {
        ParseFailure {
            message: message.into(),
            raw: raw.to_string(),
        }
    }
}

/// Removes bullets and step numbering: `- `, `* `, `3. `, `3) `, `Step 3:`.
fn strip_marker(line: &str) -> &str {
    let mut s = line.trim();
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = s.strip_prefix(bullet) {
            s = rest.trim_start();
        }
    }
    let lower = s.to_ascii_lowercase();
    if lower.starts_with("step") {
        if let Some(colon) = s.find(':') {
            if s[4..colon].trim().chars().all(|c| c.is_ascii_digit()) {
                s = s[colon + 1..].trim_start();
            }
        }
    }
    let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            s = r.trim_start();
        }
    }
    s
}

/// Reads a plan out of free text: every line that starts with an action,
/// after list markers are removed, becomes a step. Other lines are skipped.
pub fn parse_llm_plan(text: &str, domain: &Domain) -> Result<Plan, ParseFailure> {
    let mut steps = Vec::new();
    for line in text.lines() {
        let line = strip_marker(line);
        if !line.starts_with('(') {
            continue;
        }
        match step_prefix(line, domain) {
            Ok(step) => steps.push(step),
            Err(Some(e)) => return Err(ParseFailure::new(format!("{e} in `{line}`"), text)),
            Err(None) => continue,
        }
    }
    if steps.is_empty() {
        return Err(ParseFailure::new("no actions found", text));
    }
    Ok(Plan::new(steps))
}

/// The fields of a step-validation answer. Missing fields stay `None`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationAnswer {
    pub resulting_state: Option<State>,
    pub inverse_action: Option<ActionCall>,
    pub inversed_state: Option<State>,
    pub difference: Option<StateDiff>,
    pub feasible: bool,
    /// The verdict sentence as written.
    pub verdict_line: Option<String>,
}

/// The text after `label` when the line starts with it, ignoring case.
fn field<'a>(line: &'a str, labels: &[&str]) -> Option<&'a str> {
    let lower = line.to_ascii_lowercase();
    labels
        .iter()
        .find(|l| lower.starts_with(*l))
        .map(|l| line[l.len()..].trim())
}

fn state_in(text: &str, domain: &Domain) -> Option<State> {
    let open = text.find('{')?;
    let close = open + text[open..].find('}')?;
    parse_state(&text[open..=close])
        .ok()
        .map(|s| domain.normalize_state(&s))
}

fn atom_list(text: &str, domain: &Domain) -> Option<State> {
    let state = parse_state(&format!("{{{}}}", text.trim())).ok()?;
    Some(
        state
            .into_iter()
            .filter(|a| !(a.predicate() == "none" && a.arity() == 0))
            .map(|a: Atom| domain.normalize_atom(&a))
            .collect(),
    )
}

pub fn parse_llm_validation(text: &str, domain: &Domain) -> Result<ValidationAnswer, ParseFailure> {
    let mut answer = ValidationAnswer::default();
    let mut verdict: Option<bool> = None;
    for raw in text.lines() {
        let line = strip_marker(raw);
        if let Some(rest) = field(line, &["resulting state:"]) {
            answer.resulting_state = state_in(rest, domain);
        } else if let Some(rest) = field(line, &["inverse action:"]) {
            answer.inverse_action = parse_state(&format!("{{{rest}}}"))
                .ok()
                .and_then(|s| s.into_iter().next())
                .map(|a| ActionCall {
                    name: a.predicate().to_string(),
                    args: a.args().to_vec(),
                });
        } else if let Some(rest) = field(line, &["inversed state:", "inverted state:"]) {
            answer.inversed_state = state_in(rest, domain);
        } else if let Some(rest) = field(line, &["difference:"]) {
            if let Some((left, right)) = rest.split_once('&') {
                if let (Some(l), Some(r)) = (atom_list(left, domain), atom_list(right, domain)) {
                    answer.difference = Some(StateDiff {
                        only_in_left: l.into_atoms(),
                        only_in_right: r.into_atoms(),
                    });
                }
            }
        } else {
            let lower = line.to_ascii_lowercase();
            if lower.contains("is wrong") || lower.contains("infeasible") || lower.contains("incorrect") {
                verdict = Some(false);
                answer.verdict_line = Some(line.to_string());
            } else if lower.contains("is correct") || lower.contains("is feasible") {
                verdict = Some(true);
                answer.verdict_line = Some(line.to_string());
            }
        }
    }
    let found_any = answer.resulting_state.is_some()
        || answer.inverse_action.is_some()
        || answer.inversed_state.is_some()
        || answer.difference.is_some();
    answer.feasible = match (verdict, &answer.difference) {
        (Some(v), _) => v,
        (None, Some(d)) => d.is_empty(),
        (None, None) if found_any => {
            return Err(ParseFailure::new("no verdict and no difference", text));
        }
        (None, None) => return Err(ParseFailure::new("no answer fields found", text)),
    };
    Ok(answer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::plan::parse_plan;

    #[test]
    fn worked_answer_fields() {
        let d = fixtures::ballmoving();
        let a = parse_llm_validation(fixtures::WORKED_ANSWER_TEXT, &d).unwrap();
        assert_eq!(a.inverse_action.unwrap().to_string(), "(drop ball1 room2)");
        assert_eq!(
            a.resulting_state.unwrap(),
            fixtures::worked_state(fixtures::WORKED_CLAIMED)
        );
        assert_eq!(
            a.inversed_state.unwrap(),
            fixtures::worked_state(fixtures::WORKED_INVERSED)
        );
        let diff = a.difference.unwrap();
        assert_eq!(diff.render(), "(robot-at robot1 room2) & (robot-at robot1 room1)");
        assert!(!a.feasible);
        assert!(a.verdict_line.unwrap().contains("robot1 is in room1, not room2"));
    }

    #[test]
    fn prose_is_a_parse_failure() {
        let d = fixtures::ballmoving();
        let err = parse_llm_plan("I would first go to the other room.", &d).unwrap_err();
        assert_eq!(err.raw, "I would first go to the other room.");
        assert!(parse_llm_validation("Looks fine to me.", &d).is_err());
    }

    #[test]
    fn bullets_and_numbers_are_stripped() {
        let d = fixtures::ballmoving();
        let plain = "(move robot1 room1 room2)\n(pick ball1 room2)\n";
        let numbered = "Here is the plan:\n1. (move robot1 room1 room2)\n2) (pick ball1 room2)\n";
        let bulleted = "- (move robot1 room1 room2)\n* Step 2: (pick ball1 room2)\nDone.";
        let want = parse_plan(plain, &d).unwrap();
        assert_eq!(parse_llm_plan(numbered, &d).unwrap(), want);
        assert_eq!(parse_llm_plan(bulleted, &d).unwrap(), want);
    }

    #[test]
    fn unknown_actions_fail() {
        let d = fixtures::ballmoving();
        assert!(parse_llm_plan("(teleport ball1 room4)", &d).is_err());
        assert!(parse_llm_plan("(pick ball9 room2)", &d).is_err());
    }

    #[test]
    fn exemplar_plans_match_strict_application() {
        let ex = Exemplars::bundled();
        assert_eq!(ex.planning.len(), 3);
        for (text, domain) in ex.planning.iter().zip(fixtures::all_domains()) {
            let plan = parse_llm_plan(text, &domain).unwrap();
            let init = state_in(text.lines().next().unwrap(), &domain).unwrap();
            let mut s = init;
            for step in &plan.steps {
                s = crate::transition::apply_strict(&domain, &s, &step.action).unwrap().next;
                assert_eq!(step.claimed_next.as_ref(), Some(&s));
            }
        }
        for text in ex.inverse.iter().chain(&ex.standard) {
            let domain = if text.contains("ball") {
                fixtures::ballmoving()
            } else {
                fixtures::blocksworld()
            };
            parse_llm_validation(text, &domain).unwrap();
        }
    }

    #[test]
    fn validation_prompt_blocks_in_order() {
        let d = fixtures::ballmoving();
        let current = fixtures::worked_state(fixtures::WORKED_CURRENT);
        let goal = fixtures::worked_state(fixtures::WORKED_GOAL);
        let action = d
            .instantiate(&ActionCall {
                name: "pick".into(),
                args: vec!["ball1".into(), "room2".into()],
            })
            .unwrap();
        let q = StepQuery {
            domain: &d,
            current: &current,
            goal: &goal,
            action: &action,
            claimed_next: None,
        };
        let text = render_validation_prompt(&q, PromptStyle::Inverse, &Exemplars::none(), 2);
        let a = text.find(&format!("Current state: {current}")).unwrap();
        let b = text.find(&format!("Goal state: {goal}")).unwrap();
        let c = text.find("Examined action: (pick ball1 room2)").unwrap();
        assert!(a < b && b < c);
        assert!(!text.contains("Example 1"));
        let with = render_validation_prompt(&q, PromptStyle::Inverse, &Exemplars::bundled(), 2);
        assert!(with.contains("Example 2") && !with.contains("Example 3"));
    }

    #[test]
    fn planning_prompt_feedback_and_exemplars() {
        let p = fixtures::worked_problem();
        let mut req = PlannerRequest::new(&p);
        let bare = render_planning_prompt(&req, &Exemplars::bundled(), 0);
        assert!(!bare.contains("Example") && !bare.contains("Feedback:"));
        req.feedback = Some("The action is wrong because robot1 is in room1, not room2.");
        let text = render_planning_prompt(&req, &Exemplars::bundled(), 2);
        assert!(text.contains("Feedback:\n> The action is wrong because robot1 is in room1, not room2."));
        assert!(text.contains("Example 2:") && !text.contains("Example 3:"));
        assert_eq!(text, render_planning_prompt(&req, &Exemplars::bundled(), 2));
    }
}
