//! Campaigns: every method on every generated case, reduced to one metrics
//! row per (method, domain, N).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::correction::{
    run_correction, CorrectionStatus, ExternalValidator, InverseValidator, LlmValidator, NoValidator, Validator,
};
use crate::planner::prompt::PromptStyle;
use crate::planner::{Corruption, FaultyPlanner, LlmClient, LlmPlanner, Planner, ReferencePlanner};

use super::generate::{gen_case, BenchmarkCase};
use super::{derive_seed, oracle_check, DomainId};

pub use crate::correction::{accuracy, score_correction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    NoValidator,
    ExternalValidator,
    SelfCorrStandard,
    #[serde(rename = "inverseprompt")]
    InversePrompt,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::NoValidator,
        Method::ExternalValidator,
        Method::SelfCorrStandard,
        Method::InversePrompt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::NoValidator => "no-validator",
            Method::ExternalValidator => "external-validator",
            Method::SelfCorrStandard => "self-corr-standard",
            Method::InversePrompt => "inverseprompt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Where plans come from.
#[derive(Clone)]
pub enum Backend {
    Reference,
    Fault(Corruption),
    Llm(Arc<LlmClient>),
}

impl Backend {
    pub fn id(&self) -> String {
        match self {
            Backend::Reference => "reference".into(),
            Backend::Fault(c) => format!("fault:{c}"),
            Backend::Llm(client) => format!("llm:{}", client.config.model),
        }
    }

    fn planner(&self, seed: u64) -> Box<dyn Planner> {
        match self {
            Backend::Reference => Box::new(ReferencePlanner::default()),
            Backend::Fault(c) => Box::new(FaultyPlanner::new(*c, seed)),
            Backend::Llm(client) => Box::new(LlmPlanner::new(client.clone())),
        }
    }

    fn validator(&self, method: Method) -> Result<Box<dyn Validator>, CampaignError> {
        Ok(match (method, self) {
            (Method::NoValidator, _) => Box::new(NoValidator),
            (Method::ExternalValidator, _) => Box::new(ExternalValidator),
            (Method::InversePrompt, Backend::Llm(c)) => Box::new(LlmValidator::new(c.clone(), PromptStyle::Inverse)),
            (Method::InversePrompt, _) => Box::new(InverseValidator),
            (Method::SelfCorrStandard, Backend::Llm(c)) => {
                Box::new(LlmValidator::new(c.clone(), PromptStyle::Standard))
            }
            (Method::SelfCorrStandard, _) => return Err(CampaignError::NeedsLlm(method)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CampaignError {
    #[error("method {0} needs an llm backend")]
    NeedsLlm(Method),
    #[error("cannot start worker threads: {0}")]
    Threads(String),
}

#[derive(Clone)]
pub struct CampaignConfig {
    pub domains: Vec<DomainId>,
    pub ns: Vec<usize>,
    pub cases: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub cap: usize,
    pub backend: Backend,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

/// The outcome of one method on one case.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseResult {
    pub method: Method,
    pub domain_id: DomainId,
    #[serde(rename = "N")]
    pub n: usize,
    pub index: usize,
    pub seed: u64,
    pub status: CorrectionStatus,
    pub rounds_used: usize,
    /// The oracle accepts the plan the loop ended with.
    pub success: bool,
    /// The validator's verdict on the round-1 plan, and the oracle's.
    pub first_judgment: Option<bool>,
    pub first_truth: Option<bool>,
    pub plan_length: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: Method,
    pub domain_id: DomainId,
    #[serde(rename = "N")]
    pub n: usize,
    pub cases: usize,
    pub success_rate: f64,
    pub correction_accuracy: Option<f64>,
    /// Entry `i` counts cases that used `i + 1` rounds.
    pub attempts_histogram: Vec<usize>,
    /// Over successful cases.
    pub mean_plan_length: Option<f64>,
    pub planner_errors: usize,
}

fn run_case(case: &BenchmarkCase, index: usize, method: Method, config: &CampaignConfig) -> CaseResult {
    let mut planner = config.backend.planner(case.seed);
    let mut validator = config.backend.validator(method).expect("methods checked before the run");
    let out = run_correction(&case.problem, planner.as_mut(), validator.as_mut(), config.cap);
    let success = out.final_plan.as_ref().is_some_and(|p| oracle_check(&case.problem, p));
    let first_plan = out.round_log.first().and_then(|r| r.plan.as_ref());
    CaseResult {
        method,
        domain_id: case.domain_id,
        n: case.n,
        index,
        seed: case.seed,
        status: out.status,
        rounds_used: out.rounds_used,
        success,
        first_judgment: out.first_judgment(),
        first_truth: first_plan.map(|p| oracle_check(&case.problem, p)),
        plan_length: out.final_plan.as_ref().filter(|_| success).map(|p| p.len()),
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize(results: &[CaseResult], cap: usize) -> Vec<MetricsRow> {
    let mut keys: Vec<(Method, DomainId, usize)> = results.iter().map(|r| (r.method, r.domain_id, r.n)).collect();
    keys.dedup();
    keys.into_iter()
        .map(|(method, domain_id, n)| {
            let cell: Vec<&CaseResult> = results
                .iter()
                .filter(|r| (r.method, r.domain_id, r.n) == (method, domain_id, n))
                .collect();
            let mut histogram = vec![0; cap];
            for r in &cell {
                histogram[r.rounds_used.clamp(1, cap) - 1] += 1;
            }
            MetricsRow {
                method,
                domain_id,
                n,
                cases: cell.len(),
                success_rate: cell.iter().filter(|r| r.success).count() as f64 / cell.len() as f64 * 100.0,
                correction_accuracy: accuracy(
                    cell.iter()
                        .filter_map(|r| Some((r.first_judgment?, r.first_truth?))),
                ),
                attempts_histogram: histogram,
                mean_plan_length: mean(cell.iter().filter_map(|r| r.plan_length.map(|l| l as f64))),
                planner_errors: cell.iter().filter(|r| r.status == CorrectionStatus::PlannerError).count(),
            }
        })
        .collect()
}

/// Generates the cases and runs every method on each. Results come back in
/// (method, domain, N, case) order whatever the thread count.
pub fn run_campaign(config: &CampaignConfig) -> Result<(Vec<MetricsRow>, Vec<CaseResult>), CampaignError> {
    for &m in &config.methods {
        config.backend.validator(m)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| CampaignError::Threads(e.to_string()))?;
    let specs: Vec<(DomainId, usize, usize)> = config
        .domains
        .iter()
        .flat_map(|&d| config.ns.iter().flat_map(move |&n| (0..config.cases).map(move |i| (d, n, i))))
        .collect();
    let results = pool.install(|| {
        let cases: Vec<BenchmarkCase> = specs
            .par_iter()
            .map(|&(d, n, i)| gen_case(d, n, derive_seed(config.seed, d, n, i)))
            .collect();
        let jobs: Vec<(Method, usize)> = config
            .methods
            .iter()
            .flat_map(|&m| (0..cases.len()).map(move |c| (m, c)))
            .collect();
        jobs.par_iter()
            .map(|&(m, c)| run_case(&cases[c], specs[c].2, m, config))
            .collect::<Vec<_>>()
    });
    Ok((summarize(&results, config.cap), results))
}

fn pct(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into())
}

/// One line per row: method, domain, N, cases, success, accuracy, mean
/// plan length, planner errors.
pub fn render_table(rows: &[MetricsRow]) -> String {
    let header = ["method", "domain", "N", "cases", "success%", "accuracy%", "mean-len", "errors"];
    let body: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.method.to_string(),
                r.domain_id.to_string(),
                r.n.to_string(),
                r.cases.to_string(),
                format!("{:.1}", r.success_rate),
                pct(r.correction_accuracy),
                pct(r.mean_plan_length),
                r.planner_errors.to_string(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for line in &body {
        for (w, cell) in widths.iter_mut().zip(line) {
            *w = (*w).max(cell.len());
        }
    }
    let fmt_line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = fmt_line(header.to_vec());
    for line in &body {
        out.push_str(&fmt_line(line.iter().map(String::as_str).collect()));
    }
    out
}

/// Attempts needed per case, one block per row, as counts and bars.
pub fn render_histograms(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!("{} {} N={} (rounds used, round 1 is the first plan)\n", r.method, r.domain_id, r.n));
        for (i, count) in r.attempts_histogram.iter().enumerate() {
            let line = format!("  {:>2} | {:>3} {}", i + 1, count, "#".repeat(*count));
            out.push_str(line.trim_end());
            out.push('\n');
        }
    }
    out
}
