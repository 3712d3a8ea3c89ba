//! Bundled domain fixtures and the Ballmoving worked example.

use std::sync::Arc;

use crate::atom::{parse_state, State};
use crate::domain::{parse_domain, parse_problem, Domain, Problem};

pub const BALLMOVING_TEXT: &str = include_str!("../fixtures/domains/ballmoving.dom");
pub const BLOCKSWORLD_TEXT: &str = include_str!("../fixtures/domains/blocksworld.dom");
pub const COOKING_TEXT: &str = include_str!("../fixtures/domains/cooking.dom");

pub const WORKED_PROBLEM_TEXT: &str = include_str!("../fixtures/worked/problem.prob");
pub const WORKED_PLAN_TEXT: &str = include_str!("../fixtures/worked/plan.plan");
/// A validation answer laid out like the worked example.
pub const WORKED_ANSWER_TEXT: &str = include_str!("../fixtures/worked/answer.txt");

pub const WORKED_CURRENT: &str =
    "{(robot-at robot1 room1)(at ball1 room2)(at ball2 room3)(at ball3 room1)(at ball4 room2)}";
pub const WORKED_GOAL: &str = "{(at ball1 room1)(at ball2 room1)(at ball3 room3)(at ball4 room4)}";
pub const WORKED_CLAIMED: &str =
    "{(arm-ball1)(robot-at robot1 room2)(at ball1 room2)(at ball2 room3)(at ball3 room1)(at ball4 room2)}";
pub const WORKED_INVERSED: &str =
    "{(robot-at robot1 room2)(at ball1 room2)(at ball2 room3)(at ball3 room1)(at ball4 room2)}";

pub fn ballmoving() -> Domain {
    parse_domain(BALLMOVING_TEXT).expect("ballmoving fixture parses")
}

pub fn blocksworld() -> Domain {
    parse_domain(BLOCKSWORLD_TEXT).expect("blocksworld fixture parses")
}

pub fn cooking() -> Domain {
    parse_domain(COOKING_TEXT).expect("cooking fixture parses")
}

pub fn all_domains() -> Vec<Domain> {
    vec![ballmoving(), blocksworld(), cooking()]
}

/// Looks a bundled domain up by name.
pub fn domain_by_name(name: &str) -> Option<Domain> {
    match name {
        "ballmoving" => Some(ballmoving()),
        "blocksworld" => Some(blocksworld()),
        "cooking" => Some(cooking()),
        _ => None,
    }
}

/// A state written in the worked example's notation, normalized against
/// the Ballmoving fixture so `(arm-ball1)` reads as `(arm ball1)`.
pub fn worked_state(text: &str) -> State {
    ballmoving().normalize_state(&parse_state(text).expect("fixture state parses"))
}

pub fn worked_problem() -> Problem {
    parse_problem(WORKED_PROBLEM_TEXT, Arc::new(ballmoving())).expect("fixture problem parses")
}
