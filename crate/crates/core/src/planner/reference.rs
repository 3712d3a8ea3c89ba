//! Shortest-plan search over strict transitions.
//!
//! States are bitsets over the atoms that can ever hold. The search is A*
//! with a landmark count: every unmet goal atom, and every atom required by
//! all of its achievers, must still be added by some action. The estimate
//! is admissible and consistent, so the first goal state expanded lies at
//! minimum depth. Without the estimate the search is plain breadth-first.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use crate::atom::{Atom, State};
use crate::domain::{Domain, GroundAction, Problem};
use crate::plan::{Plan, PlanStep};
use crate::transition::apply_strict;

use super::{Planner, PlannerError, PlannerRequest};

type Bits = Box<[u64]>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchOptions {
    /// Most states the search may generate before giving up.
    pub node_budget: usize,
    /// Drop ground actions that cannot contribute to the goal.
    pub prune_irrelevant: bool,
    pub heuristic: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            node_budget: 1_000_000,
            prune_irrelevant: true,
            heuristic: true,
        }
    }
}

impl SearchOptions {
    /// Blind breadth-first search over every reachable ground action.
    pub fn exhaustive() -> Self {
        SearchOptions {
            prune_irrelevant: false,
            heuristic: false,
            ..Default::default()
        }
    }
}

struct CompiledAction {
    ground: GroundAction,
    pre: Bits,
    add: Bits,
    del: Bits,
    /// Added atoms that are not also deleted; none may already hold.
    fresh: Bits,
    /// Atoms that would clash with an added atom on a single-valued key.
    clash: Bits,
}

struct Compiled {
    index: HashMap<Atom, usize>,
    words: usize,
    actions: Vec<CompiledAction>,
    goal: Bits,
    goal_ids: Vec<usize>,
    /// Per goal atom: atoms every achiever requires. `None` when nothing
    /// achieves it.
    common: Vec<Option<Bits>>,
    max_cover: usize,
}

fn empty(words: usize) -> Bits {
    vec![0u64; words].into_boxed_slice()
}

fn set_bit(bits: &mut Bits, i: usize) {
    bits[i / 64] |= 1 << (i % 64);
}

fn has_bit(bits: &Bits, i: usize) -> bool {
    bits[i / 64] & (1 << (i % 64)) != 0
}

fn subset(a: &Bits, b: &Bits) -> bool {
    a.iter().zip(b.iter()).all(|(x, y)| x & !y == 0)
}

fn disjoint(a: &Bits, b: &Bits) -> bool {
    a.iter().zip(b.iter()).all(|(x, y)| x & y == 0)
}

fn count(bits: &Bits) -> usize {
    bits.iter().map(|w| w.count_ones() as usize).sum()
}

/// Actions whose preconditions can all become true, ignoring deletes.
fn relaxed_reachable(init: &State, actions: Vec<GroundAction>) -> (BTreeSet<Atom>, Vec<GroundAction>) {
    let mut reached: BTreeSet<Atom> = init.atoms().clone();
    let mut pending = actions;
    let mut kept = Vec::new();
    loop {
        let before = kept.len();
        let mut rest = Vec::with_capacity(pending.len());
        for a in pending {
            if a.pre.iter().all(|p| reached.contains(p)) {
                reached.extend(a.add.iter().cloned());
                kept.push(a);
            } else {
                rest.push(a);
            }
        }
        pending = rest;
        if kept.len() == before {
            break;
        }
    }
    kept.sort_by(|a, b| (&a.name, &a.args).cmp(&(&b.name, &b.args)));
    (reached, kept)
}

/// Actions that add an atom the goal depends on, transitively through
/// preconditions.
fn relevant(goal: &State, actions: Vec<GroundAction>) -> Vec<GroundAction> {
    let mut needed: BTreeSet<Atom> = goal.atoms().clone();
    let mut keep = vec![false; actions.len()];
    loop {
        let mut changed = false;
        for (i, a) in actions.iter().enumerate() {
            if !keep[i] && a.add.iter().any(|z| needed.contains(z)) {
                keep[i] = true;
                changed = true;
                needed.extend(a.pre.iter().cloned());
            }
        }
        if !changed {
            break;
        }
    }
    actions
        .into_iter()
        .zip(keep)
        .filter_map(|(a, k)| k.then_some(a))
        .collect()
}

fn compile(problem: &Problem, options: &SearchOptions) -> Result<Compiled, PlannerError> {
    let domain: &Domain = &problem.domain;
    let (reached, mut actions) = relaxed_reachable(&problem.init, domain.ground_all());
    if let Some(g) = problem.goal.iter().find(|g| !reached.contains(g)) {
        return Err(PlannerError::Unsolvable(format!("no action sequence can make {g} hold")));
    }
    if options.prune_irrelevant {
        actions = relevant(&problem.goal, actions);
    }

    let mut universe: BTreeSet<Atom> = problem.init.atoms().clone();
    universe.extend(problem.goal.iter().cloned());
    for a in &actions {
        universe.extend(a.add.iter().cloned());
        universe.extend(a.pre.iter().cloned());
    }
    let atoms: Vec<Atom> = universe.into_iter().collect();
    let index: HashMap<Atom, usize> = atoms.iter().cloned().enumerate().map(|(i, a)| (a, i)).collect();
    let words = atoms.len().div_ceil(64).max(1);
    let to_bits = |set: &mut dyn Iterator<Item = &Atom>| {
        let mut b = empty(words);
        for a in set {
            set_bit(&mut b, index[a]);
        }
        b
    };

    let compiled: Vec<CompiledAction> = actions
        .into_iter()
        .map(|g| {
            let pre = to_bits(&mut g.pre.iter());
            let add = to_bits(&mut g.add.iter());
            let del = to_bits(&mut g.del.iter());
            let fresh = to_bits(&mut g.add.difference(&g.del));
            let mut clash = empty(words);
            for (i, y) in atoms.iter().enumerate() {
                if !g.add.contains(y) && g.add.iter().any(|z| domain.conflicting(z, y)) {
                    set_bit(&mut clash, i);
                }
            }
            CompiledAction {
                ground: g,
                pre,
                add,
                del,
                fresh,
                clash,
            }
        })
        .collect();

    let goal = to_bits(&mut problem.goal.iter());
    let goal_ids: Vec<usize> = problem.goal.iter().map(|g| index[g]).collect();
    let common: Vec<Option<Bits>> = goal_ids
        .iter()
        .map(|&g| {
            compiled
                .iter()
                .filter(|a| has_bit(&a.add, g))
                .map(|a| a.pre.clone())
                .reduce(|acc, p| acc.iter().zip(p.iter()).map(|(x, y)| x & y).collect())
        })
        .collect();
    let mut landmarks = goal.clone();
    for c in common.iter().flatten() {
        for (w, x) in landmarks.iter_mut().zip(c.iter()) {
            *w |= x;
        }
    }
    let max_cover = compiled
        .iter()
        .map(|a| a.add.iter().zip(landmarks.iter()).map(|(x, y)| (x & y).count_ones() as usize).sum())
        .max()
        .unwrap_or(1)
        .max(1);

    Ok(Compiled {
        index,
        words,
        actions: compiled,
        goal,
        goal_ids,
        common,
        max_cover,
    })
}

impl Compiled {
    fn state_bits(&self, state: &State) -> Bits {
        let mut b = empty(self.words);
        for a in state.iter() {
            set_bit(&mut b, self.index[a]);
        }
        b
    }

    /// Lower bound on the remaining plan length; `None` when some unmet
    /// goal atom has no achiever.
    fn estimate(&self, state: &Bits) -> Option<u32> {
        let mut pending = empty(self.words);
        for (k, &g) in self.goal_ids.iter().enumerate() {
            if has_bit(state, g) {
                continue;
            }
            set_bit(&mut pending, g);
            let common = self.common[k].as_ref()?;
            for ((w, c), s) in pending.iter_mut().zip(common.iter()).zip(state.iter()) {
                *w |= c & !s;
            }
        }
        Some(count(&pending).div_ceil(self.max_cover) as u32)
    }

    fn successor(&self, a: &CompiledAction, state: &Bits) -> Option<Bits> {
        if !subset(&a.pre, state) || !disjoint(&a.fresh, state) {
            return None;
        }
        let next: Bits = state
            .iter()
            .zip(a.del.iter())
            .zip(a.add.iter())
            .map(|((s, d), z)| (s & !d) | z)
            .collect();
        disjoint(&next, &a.clash).then_some(next)
    }
}

struct Node {
    parent: usize,
    action: usize,
    g: u32,
}

/// Searches for a shortest plan, filling claimed states by strict
/// application.
pub fn search_plan(problem: &Problem, options: &SearchOptions) -> Result<Plan, PlannerError> {
    let compiled = compile(problem, options)?;
    let start = compiled.state_bits(&problem.init);
    let estimate = |s: &Bits| if options.heuristic { compiled.estimate(s) } else { Some(0) };
    let Some(h0) = estimate(&start) else {
        return Err(PlannerError::Unsolvable("a goal atom has no achiever".into()));
    };

    let mut nodes = vec![Node {
        parent: usize::MAX,
        action: usize::MAX,
        g: 0,
    }];
    let mut states: Vec<Bits> = vec![start.clone()];
    let mut best: HashMap<Bits, usize> = HashMap::from([(start, 0)]);
    let mut open = BinaryHeap::from([Reverse((h0, h0, 0usize))]);

    while let Some(Reverse((_, _, id))) = open.pop() {
        let state = states[id].clone();
        if best[&state] != id {
            continue;
        }
        if subset(&compiled.goal, &state) {
            return Ok(rebuild(problem, &compiled, &nodes, id));
        }
        let g = nodes[id].g + 1;
        for (k, action) in compiled.actions.iter().enumerate() {
            let Some(next) = compiled.successor(action, &state) else {
                continue;
            };
            if let Some(&seen) = best.get(&next) {
                if nodes[seen].g <= g {
                    continue;
                }
            }
            let Some(h) = estimate(&next) else {
                continue;
            };
            if nodes.len() >= options.node_budget {
                return Err(PlannerError::Unsolvable(format!(
                    "node budget of {} exhausted",
                    options.node_budget
                )));
            }
            let child = nodes.len();
            nodes.push(Node {
                parent: id,
                action: k,
                g,
            });
            states.push(next.clone());
            best.insert(next, child);
            open.push(Reverse((g + h, h, child)));
        }
    }
    Err(PlannerError::Unsolvable("every reachable state explored".into()))
}

fn rebuild(problem: &Problem, compiled: &Compiled, nodes: &[Node], mut id: usize) -> Plan {
    let mut actions = Vec::new();
    while nodes[id].parent != usize::MAX {
        actions.push(compiled.actions[nodes[id].action].ground.clone());
        id = nodes[id].parent;
    }
    actions.reverse();
    let mut state = problem.init.clone();
    let steps = actions
        .into_iter()
        .map(|action| {
            state = apply_strict(&problem.domain, &state, &action)
                .expect("search only follows strict transitions")
                .next;
            PlanStep {
                action,
                claimed_next: Some(state.clone()),
            }
        })
        .collect();
    Plan::new(steps)
}

/// A shortest plan under the default search options.
pub fn reference_plan(problem: &Problem) -> Result<Plan, PlannerError> {
    search_plan(problem, &SearchOptions::default())
}

#[derive(Clone, Debug, Default)]
pub struct ReferencePlanner {
    pub options: SearchOptions,
}

impl Planner for ReferencePlanner {
    fn id(&self) -> String {
        "reference".into()
    }

    fn plan(&mut self, request: &PlannerRequest<'_>) -> Result<Plan, PlannerError> {
        search_plan(request.problem, &self.options)
    }
}
