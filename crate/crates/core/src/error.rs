use thiserror::Error;

/// Errors raised while reading domain, problem, state or plan text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("schema error in action `{action}`: {message}")]
    Schema { action: String, message: String },
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("action `{action}` takes {expected} arguments, got {got}")]
    Arity {
        action: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid problem: {0}")]
    Problem(String),
}

impl ParseError {
    pub(crate) fn syntax(offset: usize, expected: impl Into<String>) -> Self {
        ParseError::Syntax {
            offset,
            expected: expected.into(),
        }
    }
}

/// Errors raised while instantiating an action schema.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroundError {
    #[error("variable `{0}` is not bound")]
    UnboundVariable(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("action `{action}` takes {expected} arguments, got {got}")]
    Arity {
        action: String,
        expected: usize,
        got: usize,
    },
}

impl From<GroundError> for ParseError {
    fn from(e: GroundError) -> Self {
        match e {
            GroundError::UnknownObject(o) => ParseError::UnknownObject(o),
            GroundError::UnknownAction(a) => ParseError::UnknownAction(a),
            GroundError::Arity {
                action,
                expected,
                got,
            } => ParseError::Arity {
                action,
                expected,
                got,
            },
            GroundError::UnboundVariable(v) => ParseError::Schema {
                action: String::new(),
                message: format!("unbound variable {v}"),
            },
        }
    }
}
