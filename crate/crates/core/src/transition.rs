//! State transitions: precondition checks, strict and optimistic
//! application, goal tests.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::atom::{render_atom_list, Atom, State};
use crate::domain::{Domain, GroundAction};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ApplyOutcome {
    pub next: State,
    /// Preconditions that did not hold and were asserted (optimistic mode).
    pub assumed: BTreeSet<Atom>,
    /// Atoms removed to keep single-valued predicates single-valued.
    pub displaced: BTreeSet<Atom>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ApplyError {
    #[error("preconditions not satisfied: {}", render_atom_list(.missing))]
    PreconditionViolation { missing: BTreeSet<Atom> },
    #[error("adds atoms that already hold: {}", render_atom_list(.atoms))]
    FreshAddViolation { atoms: BTreeSet<Atom> },
    #[error("adding {} would displace {}", render_atom_list(.added), render_atom_list(.displaced))]
    SingleValuedConflict {
        added: BTreeSet<Atom>,
        displaced: BTreeSet<Atom>,
    },
}

/// `pre(a) \ s`; empty exactly when `a`'s preconditions hold in `s`.
pub fn check_preconditions(state: &State, action: &GroundAction) -> BTreeSet<Atom> {
    action
        .pre
        .iter()
        .filter(|a| !state.contains(a))
        .cloned()
        .collect()
}

/// Added atoms that already hold without being deleted. Such additions
/// would not be undone exactly by the inverse.
pub fn fresh_add_violations(state: &State, action: &GroundAction) -> BTreeSet<Atom> {
    action
        .add
        .iter()
        .filter(|a| state.contains(a) && !action.del.contains(a))
        .cloned()
        .collect()
}

/// `(s \ del) ∪ add` with no applicability checks.
pub fn apply_effects(state: &State, add: &BTreeSet<Atom>, del: &BTreeSet<Atom>) -> State {
    let mut next: BTreeSet<Atom> = state.atoms().difference(del).cloned().collect();
    next.extend(add.iter().cloned());
    State::from(next)
}

/// Inserts `atom`, removing atoms that share a single-valued key with it.
fn assert_displacing(
    domain: &Domain,
    atoms: &mut BTreeSet<Atom>,
    atom: &Atom,
    keep: &BTreeSet<Atom>,
    displaced: &mut BTreeSet<Atom>,
) {
    if atoms.contains(atom) {
        return;
    }
    let clashing: Vec<Atom> = atoms
        .iter()
        .filter(|b| !keep.contains(*b) && domain.conflicting(atom, b))
        .cloned()
        .collect();
    for b in clashing {
        atoms.remove(&b);
        displaced.insert(b);
    }
    atoms.insert(atom.clone());
}

/// Applies `action` only if it is executable: preconditions hold, every
/// added atom is fresh, and no single-valued atom gets displaced.
pub fn apply_strict(
    domain: &Domain,
    state: &State,
    action: &GroundAction,
) -> Result<ApplyOutcome, ApplyError> {
    let missing = check_preconditions(state, action);
    if !missing.is_empty() {
        return Err(ApplyError::PreconditionViolation { missing });
    }
    let stale = fresh_add_violations(state, action);
    if !stale.is_empty() {
        return Err(ApplyError::FreshAddViolation { atoms: stale });
    }
    let next = apply_effects(state, &action.add, &action.del);
    let mut added = BTreeSet::new();
    let mut displaced = BTreeSet::new();
    for z in &action.add {
        for y in next.iter() {
            if !action.add.contains(y) && domain.conflicting(z, y) {
                added.insert(z.clone());
                displaced.insert(y.clone());
            }
        }
    }
    if !displaced.is_empty() {
        return Err(ApplyError::SingleValuedConflict { added, displaced });
    }
    Ok(ApplyOutcome {
        next,
        assumed: BTreeSet::new(),
        displaced: BTreeSet::new(),
    })
}

/// Applies `action` as if its unmet preconditions held: they are asserted
/// first (displacing single-valued conflicts), then deletes are removed,
/// then adds are inserted, with adds winning any remaining conflict.
pub fn apply_optimistic(domain: &Domain, state: &State, action: &GroundAction) -> ApplyOutcome {
    let assumed = check_preconditions(state, action);
    let mut displaced = BTreeSet::new();
    let mut atoms = state.atoms().clone();
    for x in &action.pre {
        assert_displacing(domain, &mut atoms, x, &action.pre, &mut displaced);
    }
    for d in &action.del {
        atoms.remove(d);
    }
    for z in &action.add {
        assert_displacing(domain, &mut atoms, z, &action.add, &mut displaced);
    }
    ApplyOutcome {
        next: State::from(atoms),
        assumed,
        displaced,
    }
}

/// Subset test: every goal atom holds in `state`.
pub fn satisfies_goal(state: &State, goal: &State) -> bool {
    state.holds_all(goal)
}
