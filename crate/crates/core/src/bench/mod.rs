//! Benchmark problems, the rule-based success oracle and campaign metrics.

pub mod campaign;
pub mod generate;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atom::Atom;
use crate::domain::Problem;
use crate::plan::Plan;
use crate::transition::apply_strict;

pub use campaign::{
    render_histograms, render_table, run_campaign, summarize, Backend, CampaignConfig, CampaignError,
    CaseResult, Method, MetricsRow,
};
pub use generate::{gen_ballmoving, gen_blocksworld, gen_case, gen_cooking, min_n, BenchmarkCase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainId {
    Ballmoving,
    Blocksworld,
    Cooking,
}

impl DomainId {
    pub const ALL: [DomainId; 3] = [DomainId::Ballmoving, DomainId::Blocksworld, DomainId::Cooking];

    pub fn name(self) -> &'static str {
        match self {
            DomainId::Ballmoving => "ballmoving",
            DomainId::Blocksworld => "blocksworld",
            DomainId::Cooking => "cooking",
        }
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DomainId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainId::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown domain `{s}`"))
    }
}

/// Stable sub-seed for one case of a campaign.
pub fn derive_seed(seed: u64, domain: DomainId, n: usize, index: usize) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{domain}/{n}/{index}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum OracleVerdict {
    Feasible,
    /// `step` is 1-based.
    StepFailure { step: usize, reason: String },
    GoalMiss { unmet: BTreeSet<Atom> },
}

/// Runs the plan in the strict simulator. A step fails when its action is
/// not executable or when its claimed state is not the actual successor.
pub fn oracle_judge(problem: &Problem, plan: &Plan) -> OracleVerdict {
    let mut state = problem.init.clone();
    for (i, step) in plan.steps.iter().enumerate() {
        match apply_strict(&problem.domain, &state, &step.action) {
            Ok(o) => state = o.next,
            Err(e) => {
                return OracleVerdict::StepFailure {
                    step: i + 1,
                    reason: e.to_string(),
                }
            }
        }
        if step.claimed_next.as_ref().is_some_and(|c| *c != state) {
            return OracleVerdict::StepFailure {
                step: i + 1,
                reason: "claimed state is not the successor".into(),
            };
        }
    }
    let unmet: BTreeSet<Atom> = problem.goal.iter().filter(|g| !state.contains(g)).cloned().collect();
    if unmet.is_empty() {
        OracleVerdict::Feasible
    } else {
        OracleVerdict::GoalMiss { unmet }
    }
}

pub fn oracle_check(problem: &Problem, plan: &Plan) -> bool {
    oracle_judge(problem, plan) == OracleVerdict::Feasible
}
