//! Plans: action sequences with optional claimed successor states.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::atom::State;
use crate::domain::{ActionCall, Domain, GroundAction};
use crate::error::ParseError;
use crate::syntax::{Lexer, Token};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanStep {
    pub action: GroundAction,
    /// The state the planner says the action leads to.
    pub claimed_next: Option<State>,
}

impl PlanStep {
    pub fn new(action: GroundAction) -> Self {
        PlanStep {
            action,
            claimed_next: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
}

impl Plan {
    pub fn new(steps: Vec<PlanStep>) -> Self {
        Plan { steps }
    }

    pub fn from_actions(actions: impl IntoIterator<Item = GroundAction>) -> Self {
        Plan {
            steps: actions.into_iter().map(PlanStep::new).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = &GroundAction> {
        self.steps.iter().map(|s| &s.action)
    }

    /// Drops every claimed state.
    pub fn without_claims(&self) -> Plan {
        Plan::from_actions(self.actions().cloned())
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for step in &self.steps {
            write!(f, "{}", step.action)?;
            if let Some(s) = &step.claimed_next {
                write!(f, " => {s}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct StepDoc<'a> {
    action: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    claimed_next: Option<&'a State>,
}

impl Serialize for Plan {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.steps.iter().map(|s| StepDoc {
            action: s.action.to_string(),
            claimed_next: s.claimed_next.as_ref(),
        }))
    }
}

pub(crate) fn action_call(lexer: &mut Lexer<'_>) -> Result<ActionCall, ParseError> {
    let atom = lexer.atom()?;
    Ok(ActionCall {
        name: atom.predicate().to_string(),
        args: atom.args().to_vec(),
    })
}

/// Reads one action per line, each optionally followed by `=> {state}`,
/// resolving actions against `domain`.
pub fn parse_plan(text: &str, domain: &Domain) -> Result<Plan, ParseError> {
    let mut lexer = Lexer::new(text);
    let mut steps = Vec::new();
    while !lexer.at_end()? {
        let call = action_call(&mut lexer)?;
        let action = domain.instantiate(&call)?;
        let claimed_next = if lexer.peek_is(&Token::Arrow)? {
            lexer.next()?;
            Some(domain.normalize_state(&State::from(lexer.atom_set()?)))
        } else {
            None
        };
        steps.push(PlanStep {
            action,
            claimed_next,
        });
    }
    Ok(Plan { steps })
}

/// Reads one step from the start of `text`, ignoring whatever follows it.
/// Syntax errors come back as `Err(None)`, grounding errors as
/// `Err(Some(_))`.
pub(crate) fn step_prefix(text: &str, domain: &Domain) -> Result<PlanStep, Option<ParseError>> {
    let mut lexer = Lexer::new(text);
    let call = action_call(&mut lexer).map_err(|_| None)?;
    let action = domain.instantiate(&call).map_err(|e| Some(e.into()))?;
    let claimed_next = match lexer.peek_is(&Token::Arrow) {
        Ok(true) => {
            lexer.next().map_err(|_| None)?;
            let atoms = lexer.atom_set().map_err(Some)?;
            Some(domain.normalize_state(&State::from(atoms)))
        }
        _ => None,
    };
    Ok(PlanStep {
        action,
        claimed_next,
    })
}

pub fn render_plan(plan: &Plan) -> String {
    plan.to_string()
}
