//! Plan producers: a shortest-plan search, a fault injector that turns good
//! plans into known-bad ones, and an adapter for a hosted language model.

pub mod fault;
pub mod llm;
pub mod prompt;
pub mod reference;

use thiserror::Error;

use crate::domain::Problem;
use crate::plan::Plan;

pub use fault::{inject_fault, FaultError, FaultKind, FaultSpec, FaultyPlanner, Corruption};
pub use llm::{
    llm_complete, prompt_hash, read_transcript, CompletionRequest, CompletionService,
    HttpService, LlmClient, LlmConfig, LlmError, LlmPlanner, ScriptedService,
    TemperatureSchedule, TranscriptMode, TranscriptRecord,
};
pub use prompt::{
    parse_llm_plan, parse_llm_validation, render_planning_prompt, render_validation_prompt,
    Exemplars, ParseFailure, PromptStyle, StepQuery, ValidationAnswer,
};
pub use reference::{reference_plan, search_plan, ReferencePlanner, SearchOptions};

/// One planning round's input. `round` counts from 0.
#[derive(Clone, Debug)]
pub struct PlannerRequest<'a> {
    pub problem: &'a Problem,
    pub feedback: Option<&'a str>,
    pub round: usize,
}

impl<'a> PlannerRequest<'a> {
    pub fn new(problem: &'a Problem) -> Self {
        PlannerRequest {
            problem,
            feedback: None,
            round: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum PlannerError {
    #[error("no plan found: {0}")]
    Unsolvable(String),
    #[error(transparent)]
    Parse(#[from] ParseFailure),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

pub trait Planner: Send {
    /// Short identifier recorded in manifests and logs.
    fn id(&self) -> String;

    fn plan(&mut self, request: &PlannerRequest<'_>) -> Result<Plan, PlannerError>;
}
