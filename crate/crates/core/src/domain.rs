//! Action schemas, domains, problems and grounding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::atom::{Atom, State};
use crate::error::{GroundError, ParseError};
use crate::syntax::{Lexer, Token};

/// An argument of an atom template: a schema variable or a constant object.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(String),
    Const(String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) | Term::Const(v) => f.write_str(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AtomTemplate {
    pub predicate: String,
    pub terms: Vec<Term>,
}

impl AtomTemplate {
    fn vars(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            Term::Const(_) => None,
        })
    }

    fn substitute(&self, binding: &BTreeMap<String, String>) -> Result<Atom, GroundError> {
        let args = self
            .terms
            .iter()
            .map(|t| match t {
                Term::Const(c) => Ok(c.clone()),
                Term::Var(v) => binding
                    .get(v)
                    .cloned()
                    .ok_or_else(|| GroundError::UnboundVariable(v.clone())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Atom::new(self.predicate.clone(), args))
    }
}

impl fmt::Display for AtomTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.predicate)?;
        for t in &self.terms {
            write!(f, " {t}")?;
        }
        f.write_str(")")
    }
}

/// A predicate whose key arguments admit at most one value per state,
/// e.g. `robot-at` keyed on the robot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SingleValuedDecl {
    pub predicate: String,
    pub key_positions: Vec<usize>,
    pub value_positions: Vec<usize>,
}

impl SingleValuedDecl {
    pub fn arity(&self) -> usize {
        self.key_positions.len() + self.value_positions.len()
    }

    /// The key tuple of `atom` under this declaration, if it applies.
    pub fn key_of<'a>(&self, atom: &'a Atom) -> Option<Vec<&'a str>> {
        (atom.predicate() == self.predicate && atom.arity() == self.arity())
            .then(|| self.key_positions.iter().map(|&i| atom.args()[i].as_str()).collect())
    }

    pub fn value_of<'a>(&self, atom: &'a Atom) -> Option<Vec<&'a str>> {
        (atom.predicate() == self.predicate && atom.arity() == self.arity())
            .then(|| self.value_positions.iter().map(|&i| atom.args()[i].as_str()).collect())
    }

    /// Distinct atoms that share a key under this declaration.
    pub fn conflicts(&self, a: &Atom, b: &Atom) -> bool {
        a != b
            && matches!((self.key_of(a), self.key_of(b)), (Some(ka), Some(kb)) if ka == kb)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InverseDecl {
    pub action: String,
    /// Argument `i` of the inverse is argument `permutation[i]` of the original.
    pub permutation: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionSchema {
    pub name: String,
    pub params: Vec<String>,
    pub pre: BTreeSet<AtomTemplate>,
    pub add: BTreeSet<AtomTemplate>,
    pub del: BTreeSet<AtomTemplate>,
    pub inverse: Option<InverseDecl>,
}

impl ActionSchema {
    /// Checks the load-time invariants: variables declared, add and del
    /// disjoint, del contained in pre.
    pub fn check(&self) -> Result<(), ParseError> {
        let err = |message: String| ParseError::Schema {
            action: self.name.clone(),
            message,
        };
        let params: BTreeSet<&str> = self.params.iter().map(String::as_str).collect();
        if params.len() != self.params.len() {
            return Err(err("duplicate parameter".into()));
        }
        for t in self.pre.iter().chain(&self.add).chain(&self.del) {
            if let Some(v) = t.vars().find(|v| !params.contains(v)) {
                return Err(err(format!("undeclared variable {v} in {t}")));
            }
        }
        if let Some(t) = self.add.intersection(&self.del).next() {
            return Err(err(format!("{t} is both added and deleted")));
        }
        if let Some(t) = self.del.difference(&self.pre).next() {
            return Err(err(format!("deleted atom {t} is not a precondition")));
        }
        Ok(())
    }
}

/// An instantiated schema with its ground precondition and effect sets.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundAction {
    pub name: String,
    pub args: Vec<String>,
    pub pre: BTreeSet<Atom>,
    pub add: BTreeSet<Atom>,
    pub del: BTreeSet<Atom>,
}

impl GroundAction {
    /// Builds an action from explicit sets, bypassing any schema.
    pub fn from_sets(
        name: impl Into<String>,
        args: Vec<String>,
        pre: BTreeSet<Atom>,
        add: BTreeSet<Atom>,
        del: BTreeSet<Atom>,
    ) -> Self {
        GroundAction {
            name: name.into(),
            args,
            pre,
            add,
            del,
        }
    }

    /// Same add and delete sets.
    pub fn same_effects(&self, other: &GroundAction) -> bool {
        self.add == other.add && self.del == other.del
    }

    pub fn call(&self) -> ActionCall {
        ActionCall {
            name: self.name.clone(),
            args: self.args.clone(),
        }
    }
}

impl fmt::Display for GroundAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.call().fmt(f)
    }
}

/// An action as written, `(name arg…)`, not yet resolved against a domain.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionCall {
    pub name: String,
    pub args: Vec<String>,
}

impl fmt::Display for ActionCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.name)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Domain {
    pub name: String,
    pub objects: Vec<String>,
    pub single_valued: Vec<SingleValuedDecl>,
    pub schemas: Vec<ActionSchema>,
}

impl Domain {
    pub fn schema(&self, name: &str) -> Option<&ActionSchema> {
        self.schemas.iter().find(|s| s.name == name)
    }

    pub fn has_object(&self, name: &str) -> bool {
        self.objects.iter().any(|o| o == name)
    }

    /// Replaces the object list, keeping schemas and declarations.
    pub fn with_objects(&self, objects: Vec<String>) -> Domain {
        Domain {
            objects,
            ..self.clone()
        }
    }

    /// Instantiates `schema` under `binding`.
    pub fn ground(
        &self,
        schema: &ActionSchema,
        binding: &BTreeMap<String, String>,
    ) -> Result<GroundAction, GroundError> {
        let mut args = Vec::with_capacity(schema.params.len());
        for p in &schema.params {
            let obj = binding
                .get(p)
                .ok_or_else(|| GroundError::UnboundVariable(p.clone()))?;
            if !self.has_object(obj) {
                return Err(GroundError::UnknownObject(obj.clone()));
            }
            args.push(obj.clone());
        }
        let sub = |set: &BTreeSet<AtomTemplate>| {
            set.iter()
                .map(|t| t.substitute(binding))
                .collect::<Result<BTreeSet<_>, _>>()
        };
        Ok(GroundAction {
            name: schema.name.clone(),
            args,
            pre: sub(&schema.pre)?,
            add: sub(&schema.add)?,
            del: sub(&schema.del)?,
        })
    }

    /// Resolves a positional call such as `(pick ball1 room2)`.
    pub fn instantiate(&self, call: &ActionCall) -> Result<GroundAction, GroundError> {
        let schema = self
            .schema(&call.name)
            .ok_or_else(|| GroundError::UnknownAction(call.name.clone()))?;
        if schema.params.len() != call.args.len() {
            return Err(GroundError::Arity {
                action: call.name.clone(),
                expected: schema.params.len(),
                got: call.args.len(),
            });
        }
        let binding = schema
            .params
            .iter()
            .cloned()
            .zip(call.args.iter().cloned())
            .collect();
        self.ground(schema, &binding)
    }

    /// Every grounding of every schema over the declared objects, in
    /// lexicographic order of the rendered action.
    pub fn ground_all(&self) -> Vec<GroundAction> {
        let mut out = Vec::new();
        for schema in &self.schemas {
            let n = schema.params.len();
            let width = self.objects.len();
            let Some(total) = width.checked_pow(n as u32) else {
                continue;
            };
            for mut code in 0..total {
                let mut binding = BTreeMap::new();
                for p in schema.params.iter().rev() {
                    binding.insert(p.clone(), self.objects[code % width].clone());
                    code /= width;
                }
                if let Ok(g) = self.ground(schema, &binding) {
                    out.push(g);
                }
            }
        }
        out.sort_by(|a, b| (&a.name, &a.args).cmp(&(&b.name, &b.args)));
        out
    }

    /// Predicate name and arity pairs used anywhere in the domain.
    pub fn predicates(&self) -> BTreeSet<(String, usize)> {
        let mut out = BTreeSet::new();
        for s in &self.schemas {
            for t in s.pre.iter().chain(&s.add).chain(&s.del) {
                out.insert((t.predicate.clone(), t.terms.len()));
            }
        }
        for d in &self.single_valued {
            out.insert((d.predicate.clone(), d.arity()));
        }
        out
    }

    /// Rewrites hyphen-joined spellings such as `(arm-ball1)` into the
    /// unary atom `(arm ball1)` when the prefix is a unary predicate of
    /// this domain and the suffix a declared object.
    pub fn normalize_atom(&self, atom: &Atom) -> Atom {
        if atom.arity() != 0 {
            return atom.clone();
        }
        let preds = self.predicates();
        let name = atom.predicate();
        if preds.contains(&(name.to_string(), 0)) {
            return atom.clone();
        }
        for (i, _) in name.match_indices('-') {
            let (head, tail) = (&name[..i], &name[i + 1..]);
            if preds.contains(&(head.to_string(), 1)) && self.has_object(tail) {
                return Atom::new(head, [tail]);
            }
        }
        atom.clone()
    }

    pub fn normalize_state(&self, state: &State) -> State {
        state.iter().map(|a| self.normalize_atom(a)).collect()
    }

    /// Atoms of `state` that violate a single-valued declaration, as pairs.
    pub fn single_valued_violations(&self, state: &State) -> Vec<(Atom, Atom)> {
        let mut out = Vec::new();
        for decl in &self.single_valued {
            let mut seen: BTreeMap<Vec<&str>, &Atom> = BTreeMap::new();
            for atom in state.iter() {
                if let Some(key) = decl.key_of(atom) {
                    if let Some(prev) = seen.get(&key) {
                        out.push(((*prev).clone(), atom.clone()));
                    } else {
                        seen.insert(key, atom);
                    }
                }
            }
        }
        out
    }

    /// True when `a` and `b` are distinct atoms sharing a single-valued key.
    pub fn conflicting(&self, a: &Atom, b: &Atom) -> bool {
        self.single_valued.iter().any(|d| d.conflicts(a, b))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Problem {
    pub name: String,
    pub domain: Arc<Domain>,
    pub init: State,
    pub goal: State,
}

impl Problem {
    /// Builds a problem and checks that objects are declared and the
    /// initial state respects the single-valued declarations.
    pub fn new(
        name: impl Into<String>,
        domain: Arc<Domain>,
        init: State,
        goal: State,
    ) -> Result<Self, ParseError> {
        let init = domain.normalize_state(&init);
        let goal = domain.normalize_state(&goal);
        for atom in init.iter().chain(goal.iter()) {
            if let Some(o) = atom.args().iter().find(|o| !domain.has_object(o)) {
                return Err(ParseError::UnknownObject(o.clone()));
            }
        }
        if let Some((a, b)) = domain.single_valued_violations(&init).into_iter().next() {
            return Err(ParseError::Problem(format!(
                "initial state holds both {a} and {b}"
            )));
        }
        Ok(Problem {
            name: name.into(),
            domain,
            init,
            goal,
        })
    }

    /// Same domain and goal, different initial state.
    pub fn with_init(&self, init: State) -> Result<Self, ParseError> {
        Problem::new(self.name.clone(), self.domain.clone(), init, self.goal.clone())
    }
}

// ---------------------------------------------------------------------------
// reading

fn template(lexer: &mut Lexer<'_>) -> Result<AtomTemplate, ParseError> {
    lexer.expect(Token::LParen)?;
    let predicate = lexer.word("a predicate name")?;
    let mut terms = Vec::new();
    loop {
        let offset = lexer.offset();
        match lexer.next()? {
            Some((_, Token::RParen)) => break,
            Some((_, Token::Word(w))) => terms.push(Term::Const(w)),
            Some((_, Token::Var(v))) => terms.push(Term::Var(v)),
            Some((at, _)) => return Err(ParseError::syntax(at, "a term or `)`")),
            None => return Err(ParseError::syntax(offset, "a term or `)`")),
        }
    }
    Ok(AtomTemplate { predicate, terms })
}

fn template_set(lexer: &mut Lexer<'_>) -> Result<BTreeSet<AtomTemplate>, ParseError> {
    lexer.expect(Token::LBrace)?;
    let mut out = BTreeSet::new();
    while !lexer.peek_is(&Token::RBrace)? {
        if lexer.at_end()? {
            return Err(ParseError::syntax(lexer.offset(), "`}`"));
        }
        out.insert(template(lexer)?);
    }
    lexer.expect(Token::RBrace)?;
    Ok(out)
}

fn single_valued(lexer: &mut Lexer<'_>) -> Result<Vec<SingleValuedDecl>, ParseError> {
    let mut out = Vec::new();
    while lexer.peek_is(&Token::LParen)? {
        let start = lexer.expect(Token::LParen)?;
        let predicate = lexer.word("a predicate name")?;
        let mut key_positions = Vec::new();
        while !lexer.peek_is(&Token::Pipe)? {
            key_positions.push(lexer.int()?);
        }
        lexer.expect(Token::Pipe)?;
        let mut value_positions = Vec::new();
        while !lexer.peek_is(&Token::RParen)? {
            value_positions.push(lexer.int()?);
        }
        lexer.expect(Token::RParen)?;
        let mut all: Vec<usize> = key_positions.iter().chain(&value_positions).copied().collect();
        all.sort_unstable();
        if all != (0..all.len()).collect::<Vec<_>>() {
            return Err(ParseError::syntax(
                start,
                "key and value positions forming a partition of the argument positions",
            ));
        }
        out.push(SingleValuedDecl {
            predicate,
            key_positions,
            value_positions,
        });
    }
    Ok(out)
}

fn action(lexer: &mut Lexer<'_>) -> Result<ActionSchema, ParseError> {
    let name = lexer.word("an action name")?;
    lexer.keyword("params")?;
    lexer.expect(Token::LParen)?;
    let mut params = Vec::new();
    loop {
        let offset = lexer.offset();
        match lexer.next()? {
            Some((_, Token::RParen)) => break,
            Some((_, Token::Var(v))) => params.push(v),
            Some((at, _)) => return Err(ParseError::syntax(at, "a variable or `)`")),
            None => return Err(ParseError::syntax(offset, "a variable or `)`")),
        }
    }
    lexer.keyword("pre")?;
    let pre = template_set(lexer)?;
    lexer.keyword("add")?;
    let add = template_set(lexer)?;
    lexer.keyword("del")?;
    let del = template_set(lexer)?;
    let inverse = if lexer.peek_is(&Token::Keyword("inverse".into()))? {
        lexer.next()?;
        let action = lexer.word("an action name")?;
        lexer.expect(Token::LParen)?;
        let mut permutation = Vec::new();
        while !lexer.peek_is(&Token::RParen)? {
            permutation.push(lexer.int()?);
        }
        lexer.expect(Token::RParen)?;
        Some(InverseDecl {
            action,
            permutation,
        })
    } else {
        None
    };
    lexer.expect(Token::RParen)?;
    Ok(ActionSchema {
        name,
        params,
        pre,
        add,
        del,
        inverse,
    })
}

/// Reads a domain file: objects, single-valued declarations and schemas.
pub fn parse_domain(text: &str) -> Result<Domain, ParseError> {
    let mut lexer = Lexer::new(text);
    lexer.expect(Token::LParen)?;
    let head = lexer.offset();
    if lexer.word("`domain`")? != "domain" {
        return Err(ParseError::syntax(head, "`domain`"));
    }
    let name = lexer.word("a domain name")?;

    lexer.expect(Token::LParen)?;
    lexer.keyword("objects")?;
    let mut objects = Vec::new();
    while !lexer.peek_is(&Token::RParen)? {
        let o = lexer.word("an object name")?;
        if !objects.contains(&o) {
            objects.push(o);
        }
    }
    lexer.expect(Token::RParen)?;

    let mut decls = Vec::new();
    let mut schemas: Vec<ActionSchema> = Vec::new();
    while lexer.peek_is(&Token::LParen)? {
        lexer.expect(Token::LParen)?;
        let offset = lexer.offset();
        match lexer.next()? {
            Some((_, Token::Keyword(k))) if k == "single-valued" && schemas.is_empty() => {
                decls.extend(single_valued(&mut lexer)?);
                lexer.expect(Token::RParen)?;
            }
            Some((_, Token::Keyword(k))) if k == "action" => {
                let schema = action(&mut lexer)?;
                if schemas.iter().any(|s| s.name == schema.name) {
                    return Err(ParseError::Schema {
                        action: schema.name,
                        message: "defined twice".into(),
                    });
                }
                schemas.push(schema);
            }
            Some((at, _)) => return Err(ParseError::syntax(at, "`:single-valued` or `:action`")),
            None => return Err(ParseError::syntax(offset, "`:action`")),
        }
    }
    lexer.expect(Token::RParen)?;
    lexer.expect_end()?;

    let domain = Domain {
        name,
        objects,
        single_valued: decls,
        schemas,
    };
    for schema in &domain.schemas {
        schema.check()?;
        for t in schema.pre.iter().chain(&schema.add).chain(&schema.del) {
            for term in &t.terms {
                if let Term::Const(c) = term {
                    if !domain.has_object(c) {
                        return Err(ParseError::UnknownObject(c.clone()));
                    }
                }
            }
        }
        if let Some(inv) = &schema.inverse {
            let err = |message: String| ParseError::Schema {
                action: schema.name.clone(),
                message,
            };
            let target = domain
                .schema(&inv.action)
                .ok_or_else(|| err(format!("declared inverse `{}` is not defined", inv.action)))?;
            let mut sorted = inv.permutation.clone();
            sorted.sort_unstable();
            if target.params.len() != inv.permutation.len()
                || sorted.iter().any(|&i| i >= schema.params.len())
                || sorted.windows(2).any(|w| w[0] == w[1])
            {
                return Err(err("inverse argument map is not valid".into()));
            }
        }
    }
    crate::validator::check_declared_inverses(&domain).map_err(|e| match e {
        crate::validator::InverseError::InverseMismatch { action, declared } => ParseError::Schema {
            action,
            message: format!("declared inverse {declared} does not undo its effects"),
        },
    })?;
    Ok(domain)
}

fn render_templates(set: &BTreeSet<AtomTemplate>) -> String {
    let inner: String = set.iter().map(|t| t.to_string()).collect();
    format!("{{{inner}}}")
}

/// Canonical text of a domain; `parse_domain` reads it back unchanged.
pub fn render_domain(domain: &Domain) -> String {
    let mut out = format!("(domain {}\n", domain.name);
    out.push_str(&format!("  (:objects {})\n", domain.objects.join(" ")));
    out.push_str("  (:single-valued");
    for d in &domain.single_valued {
        let keys: Vec<String> = d.key_positions.iter().map(|i| i.to_string()).collect();
        let vals: Vec<String> = d.value_positions.iter().map(|i| i.to_string()).collect();
        let mut decl = format!(" ({}", d.predicate);
        for k in &keys {
            decl.push_str(&format!(" {k}"));
        }
        decl.push_str(" |");
        for v in &vals {
            decl.push_str(&format!(" {v}"));
        }
        decl.push(')');
        out.push_str(&decl);
    }
    out.push_str(")\n");
    for s in &domain.schemas {
        out.push_str(&format!(
            "  (:action {}\n    :params ({})\n    :pre {}\n    :add {}\n    :del {}",
            s.name,
            s.params.join(" "),
            render_templates(&s.pre),
            render_templates(&s.add),
            render_templates(&s.del),
        ));
        if let Some(inv) = &s.inverse {
            let perm: Vec<String> = inv.permutation.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!("\n    :inverse {} ({})", inv.action, perm.join(" ")));
        }
        out.push_str(")\n");
    }
    out.push_str(")\n");
    out
}

/// Reads `(problem NAME (:domain NAME) (:init {…}) (:goal {…}))` against
/// an already loaded domain.
pub fn parse_problem(text: &str, domain: Arc<Domain>) -> Result<Problem, ParseError> {
    let mut lexer = Lexer::new(text);
    lexer.expect(Token::LParen)?;
    let head = lexer.offset();
    if lexer.word("`problem`")? != "problem" {
        return Err(ParseError::syntax(head, "`problem`"));
    }
    let name = lexer.word("a problem name")?;
    lexer.expect(Token::LParen)?;
    lexer.keyword("domain")?;
    let at = lexer.offset();
    let domain_name = lexer.word("a domain name")?;
    if domain_name != domain.name {
        return Err(ParseError::syntax(at, format!("domain `{}`", domain.name)));
    }
    lexer.expect(Token::RParen)?;
    lexer.expect(Token::LParen)?;
    lexer.keyword("init")?;
    let init = State::from(lexer.atom_set()?);
    lexer.expect(Token::RParen)?;
    lexer.expect(Token::LParen)?;
    lexer.keyword("goal")?;
    let goal = State::from(lexer.atom_set()?);
    lexer.expect(Token::RParen)?;
    lexer.expect(Token::RParen)?;
    lexer.expect_end()?;
    Problem::new(name, domain, init, goal)
}

pub fn render_problem(problem: &Problem) -> String {
    format!(
        "(problem {}\n  (:domain {})\n  (:init {})\n  (:goal {}))\n",
        problem.name, problem.domain.name, problem.init, problem.goal
    )
}
