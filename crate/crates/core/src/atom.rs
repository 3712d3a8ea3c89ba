//! Ground atoms and closed-world states.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ParseError;
use crate::syntax::Lexer;

/// A ground predicate instance such as `(at ball1 room2)`.
///
/// Ordering is lexicographic on the predicate, then on the argument list,
/// which agrees with ordering the rendered text.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    predicate: String,
    args: Vec<String>,
}

impl Atom {
    pub fn new<P, I, S>(predicate: P, args: I) -> Self
    where
        P: Into<String>,
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Atom {
            predicate: predicate.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    pub fn predicate(&self) -> &str {
        &self.predicate
    }

    pub fn args(&self) -> &[String] {
        &self.args
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.predicate)?;
        for arg in &self.args {
            write!(f, " {arg}")?;
        }
        f.write_str(")")
    }
}

impl FromStr for Atom {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut lexer = Lexer::new(s);
        let atom = lexer.atom()?;
        lexer.expect_end()?;
        Ok(atom)
    }
}

impl Serialize for Atom {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Atom {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A finite set of atoms under the closed-world assumption.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(BTreeSet<Atom>);

impl State {
    pub fn new() -> Self {
        State(BTreeSet::new())
    }

    pub fn atoms(&self) -> &BTreeSet<Atom> {
        &self.0
    }

    pub fn into_atoms(self) -> BTreeSet<Atom> {
        self.0
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.0.contains(atom)
    }

    pub fn insert(&mut self, atom: Atom) -> bool {
        self.0.insert(atom)
    }

    pub fn remove(&mut self, atom: &Atom) -> bool {
        self.0.remove(atom)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Atom> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when every atom of `atoms` holds in this state.
    pub fn holds_all<'a>(&self, atoms: impl IntoIterator<Item = &'a Atom>) -> bool {
        atoms.into_iter().all(|a| self.0.contains(a))
    }
}

impl FromIterator<Atom> for State {
    fn from_iter<T: IntoIterator<Item = Atom>>(iter: T) -> Self {
        State(iter.into_iter().collect())
    }
}

impl Extend<Atom> for State {
    fn extend<T: IntoIterator<Item = Atom>>(&mut self, iter: T) {
        self.0.extend(iter)
    }
}

impl From<BTreeSet<Atom>> for State {
    fn from(atoms: BTreeSet<Atom>) -> Self {
        State(atoms)
    }
}

impl<'a> IntoIterator for &'a State {
    type Item = &'a Atom;
    type IntoIter = std::collections::btree_set::Iter<'a, Atom>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl IntoIterator for State {
    type Item = Atom;
    type IntoIter = std::collections::btree_set::IntoIter<Atom>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for atom in &self.0 {
            write!(f, "{atom}")?;
        }
        f.write_str("}")
    }
}

impl FromStr for State {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_state(s)
    }
}

/// Parses the brace notation `{(p a b)(q c)}`. Duplicates collapse.
pub fn parse_state(text: &str) -> Result<State, ParseError> {
    let mut lexer = Lexer::new(text);
    let atoms = lexer.atom_set()?;
    lexer.expect_end()?;
    Ok(State(atoms))
}

pub fn render_state(state: &State) -> String {
    state.to_string()
}

/// Renders a set of atoms the way the difference line shows them:
/// concatenated atoms, or `(none)` for an empty side.
pub fn render_atom_list<'a>(atoms: impl IntoIterator<Item = &'a Atom>) -> String {
    let text: String = atoms.into_iter().map(|a| a.to_string()).collect();
    if text.is_empty() {
        "(none)".to_string()
    } else {
        text
    }
}
