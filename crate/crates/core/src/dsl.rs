//! The `.wsp` text format.
//!
//! One statement per line; `#` starts a comment. See the README for the
//! grammar. [`parse`] resolves every name and reports errors with a line
//! and column; [`serialize`] writes the canonical form, which parses back
//! to an equal document.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::conditional::{crosses_xor, ConditionalSchema, Operator, WorkflowFormula};
use crate::error::{contract, invalid, Result};
use crate::model::{Constraint, StepDag, StepId, UserId, UserRelation, WorkflowSchema};
use crate::solve::SolveResult;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

fn err<T>(pos: Pos, message: impl Into<String>) -> std::result::Result<T, ParseError> {
    Err(ParseError {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    })
}

type PResult<T> = std::result::Result<T, ParseError>;

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Colon,
    Comma,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Semi,
    Star,
    Arrow,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Colon => "`:`".into(),
            Tok::Comma => "`,`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Star => "`*`".into(),
            Tok::Arrow => "`->`".into(),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex_line(text: &str, line: usize) -> PResult<Vec<(Tok, Pos)>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: i + 1 };
        let single = match c {
            ':' => Some(Tok::Colon),
            ',' => Some(Tok::Comma),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            ';' => Some(Tok::Semi),
            '*' => Some(Tok::Star),
            _ => None,
        };
        if let Some(t) = single {
            out.push((t, pos));
            i += 1;
        } else if c == '#' {
            break;
        } else if c.is_whitespace() {
            i += 1;
        } else if c == '-' {
            if chars.get(i + 1) == Some(&'>') {
                out.push((Tok::Arrow, pos));
                i += 2;
            } else {
                return err(pos, "expected `->`");
            }
        } else if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
        } else {
            return err(pos, format!("unexpected character `{c}`"));
        }
    }
    Ok(out)
}

type Name = (String, Pos);

#[derive(Debug)]
enum RawRelation {
    Eq,
    Ne,
    Named(Name),
}

#[derive(Debug)]
enum RawAuth {
    All,
    Users(Vec<Name>),
}

#[derive(Debug, Default)]
struct Raw {
    steps: Vec<Name>,
    edges: Vec<(Name, Name)>,
    users: Vec<Name>,
    relations: Vec<(Name, Vec<(Name, Name)>)>,
    auth: Vec<(Name, RawAuth)>,
    constraints: Vec<(RawRelation, Vec<Name>, Vec<Name>, Pos)>,
    formula: Option<(WorkflowFormula, Pos, Vec<Name>)>,
}

struct LineParser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    end: Pos,
}

impl LineParser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.at).map_or(self.end, |(_, p)| *p)
    }

    fn unexpected<T>(&self, wanted: &str) -> PResult<T> {
        match self.peek() {
            Some(t) => err(self.pos(), format!("expected {wanted}, found {}", t.describe())),
            None => err(self.pos(), format!("expected {wanted}, found end of line")),
        }
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok) -> PResult<()> {
        if self.eat(&t) {
            Ok(())
        } else {
            self.unexpected(&t.describe())
        }
    }

    fn ident(&mut self) -> PResult<Name> {
        match self.toks.get(self.at) {
            Some((Tok::Ident(s), p)) => {
                let r = (s.clone(), *p);
                self.at += 1;
                Ok(r)
            }
            _ => self.unexpected("a name"),
        }
    }

    fn at_end(&self) -> bool {
        self.at >= self.toks.len()
    }

    fn finish(&self) -> PResult<()> {
        if self.at_end() {
            Ok(())
        } else {
            self.unexpected("end of line")
        }
    }

    fn ident_list(&mut self) -> PResult<Vec<Name>> {
        let mut out = vec![self.ident()?];
        while self.eat(&Tok::Comma) {
            out.push(self.ident()?);
        }
        Ok(out)
    }

    fn scope(&mut self) -> PResult<Vec<Name>> {
        if self.eat(&Tok::LBrace) {
            let names = self.ident_list()?;
            self.expect(Tok::RBrace)?;
            Ok(names)
        } else {
            Ok(vec![self.ident()?])
        }
    }

    // formula := xor_expr ; precedence `;` > `par` > `xor`
    fn formula(&mut self, leaves: &mut Vec<Name>) -> PResult<WorkflowFormula> {
        self.level(Operator::Xor, leaves)
    }

    fn is_op(&self, op: Operator) -> bool {
        match (op, self.peek()) {
            (Operator::Serial, Some(Tok::Semi)) => true,
            (Operator::Parallel, Some(Tok::Ident(s))) => s == "par",
            (Operator::Xor, Some(Tok::Ident(s))) => s == "xor",
            _ => false,
        }
    }

    fn level(&mut self, op: Operator, leaves: &mut Vec<Name>) -> PResult<WorkflowFormula> {
        let tighter = match op {
            Operator::Xor => Some(Operator::Parallel),
            Operator::Parallel => Some(Operator::Serial),
            Operator::Serial => None,
        };
        let start = self.pos();
        let mut parts = vec![self.operand(tighter, leaves)?];
        while self.is_op(op) {
            self.at += 1;
            parts.push(self.operand(tighter, leaves)?);
        }
        if parts.len() == 1 {
            return Ok(parts.pop().unwrap());
        }
        WorkflowFormula::compose(op, parts).or_else(|e| err(start, strip_kind(&e)))
    }

    fn operand(&mut self, tighter: Option<Operator>, leaves: &mut Vec<Name>) -> PResult<WorkflowFormula> {
        match tighter {
            Some(op) => self.level(op, leaves),
            None => self.atom(leaves),
        }
    }

    fn atom(&mut self, leaves: &mut Vec<Name>) -> PResult<WorkflowFormula> {
        if self.eat(&Tok::LParen) {
            let f = self.formula(leaves)?;
            self.expect(Tok::RParen)?;
            return Ok(f);
        }
        let (name, pos) = self.ident()?;
        if name == "par" || name == "xor" {
            return err(pos, format!("`{name}` is an operator, not a step"));
        }
        leaves.push((name.clone(), pos));
        Ok(WorkflowFormula::Step(name))
    }
}

fn strip_kind(e: &crate::error::Error) -> String {
    match e {
        crate::error::Error::InvalidSchema(m) | crate::error::Error::Contract(m) => m.clone(),
        other => other.to_string(),
    }
}

fn parse_raw(text: &str) -> PResult<Raw> {
    let mut raw = Raw::default();
    for (i, line_text) in text.lines().enumerate() {
        let line = i + 1;
        let toks = lex_line(line_text, line)?;
        if toks.is_empty() {
            continue;
        }
        let end = Pos {
            line,
            column: line_text.chars().count() + 1,
        };
        let mut p = LineParser { toks, at: 0, end };
        let (head, head_pos) = p.ident()?;
        match head.as_str() {
            "steps" => {
                p.expect(Tok::Colon)?;
                raw.steps.extend(p.ident_list()?);
            }
            "users" => {
                p.expect(Tok::Colon)?;
                raw.users.extend(p.ident_list()?);
            }
            "edges" => {
                p.expect(Tok::Colon)?;
                loop {
                    let a = p.ident()?;
                    p.expect(Tok::Arrow)?;
                    let b = p.ident()?;
                    raw.edges.push((a, b));
                    if !p.eat(&Tok::Comma) {
                        break;
                    }
                }
            }
            "relation" => {
                let name = p.ident()?;
                p.expect(Tok::Colon)?;
                let mut pairs = Vec::new();
                if !p.at_end() {
                    loop {
                        p.expect(Tok::LParen)?;
                        let a = p.ident()?;
                        p.expect(Tok::Comma)?;
                        let b = p.ident()?;
                        p.expect(Tok::RParen)?;
                        pairs.push((a, b));
                        if !p.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                raw.relations.push((name, pairs));
            }
            "auth" => {
                p.expect(Tok::Colon)?;
                let step = p.ident()?;
                p.expect(Tok::Arrow)?;
                let rhs = if p.eat(&Tok::Star) {
                    RawAuth::All
                } else {
                    RawAuth::Users(p.ident_list()?)
                };
                raw.auth.push((step, rhs));
            }
            "constraint" => {
                p.expect(Tok::Colon)?;
                let at = p.pos();
                let (kind, kind_pos) = p.ident()?;
                let relation = match kind.as_str() {
                    "eq" => RawRelation::Eq,
                    "ne" => RawRelation::Ne,
                    "rel" => RawRelation::Named(p.ident()?),
                    _ => return err(kind_pos, format!("expected `eq`, `ne` or `rel`, found `{kind}`")),
                };
                p.expect(Tok::LParen)?;
                let s1 = p.scope()?;
                p.expect(Tok::Comma)?;
                let s2 = p.scope()?;
                p.expect(Tok::RParen)?;
                raw.constraints.push((relation, s1, s2, at));
            }
            "formula" => {
                p.expect(Tok::Colon)?;
                if raw.formula.is_some() {
                    return err(head_pos, "only one formula is allowed");
                }
                let at = p.pos();
                let mut leaves = Vec::new();
                let f = p.formula(&mut leaves)?;
                raw.formula = Some((f, at, leaves));
            }
            other => return err(head_pos, format!("unknown statement `{other}`")),
        }
        p.finish()?;
    }
    Ok(raw)
}

/// How a constraint names its relation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RelationName {
    Eq,
    Ne,
    /// Index into [`SchemaDocument::relations`].
    Named(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationDecl {
    pub name: String,
    /// User index pairs, sorted.
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintDecl {
    pub relation: RelationName,
    /// Step indices, sorted and distinct.
    pub scope1: Vec<usize>,
    pub scope2: Vec<usize>,
}

/// A parsed `.wsp` file with every name resolved to an index.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SchemaDocument {
    /// Declaration order, or the formula's leaf order when there is one.
    pub steps: Vec<String>,
    /// Sorted, distinct.
    pub edges: Vec<(usize, usize)>,
    pub users: Vec<String>,
    /// Sorted by name.
    pub relations: Vec<RelationDecl>,
    /// Authorized users per step, sorted.
    pub auth: Vec<Vec<usize>>,
    pub constraints: Vec<ConstraintDecl>,
    pub formula: Option<WorkflowFormula>,
}

fn index_names(names: &[Name], what: &str) -> PResult<HashMap<String, usize>> {
    let mut map = HashMap::new();
    for (i, (n, p)) in names.iter().enumerate() {
        if map.insert(n.clone(), i).is_some() {
            return err(*p, format!("duplicate {what} `{n}`"));
        }
    }
    Ok(map)
}

fn lookup(map: &HashMap<String, usize>, (name, pos): &Name, what: &str) -> PResult<usize> {
    match map.get(name) {
        Some(&i) => Ok(i),
        None => err(*pos, format!("unknown {what} `{name}`")),
    }
}

fn resolve(raw: Raw) -> PResult<SchemaDocument> {
    let mut steps = raw.steps.clone();
    if let Some((f, fpos, leaves)) = &raw.formula {
        if let Some(((_, a), _)) = raw.edges.first() {
            return err(*a, "edges cannot be given together with a formula");
        }
        index_names(leaves, "step in formula")?;
        if !raw.steps.is_empty() {
            let declared: BTreeSet<&str> = raw.steps.iter().map(|(s, _)| s.as_str()).collect();
            let used: BTreeSet<&str> = f.leaves().into_iter().collect();
            if declared != used || declared.len() != raw.steps.len() {
                return err(raw.steps[0].1, "declared steps differ from the steps of the formula");
            }
        }
        steps = leaves.clone();
        let _ = fpos;
    }
    let step_ix = index_names(&steps, "step")?;
    for (s, p) in &steps {
        if s == "par" || s == "xor" {
            return err(*p, format!("`{s}` is reserved"));
        }
    }
    let user_ix = index_names(&raw.users, "user")?;

    let mut edges = Vec::with_capacity(raw.edges.len());
    for (a, b) in &raw.edges {
        edges.push((lookup(&step_ix, a, "step")?, lookup(&step_ix, b, "step")?));
    }
    edges.sort_unstable();
    edges.dedup();
    if let Some(((_, first), _)) = raw.edges.first() {
        let ids = edges.iter().map(|&(a, b)| (StepId::new(a), StepId::new(b)));
        if let Err(e) = StepDag::new(steps.iter().map(|(s, _)| s.clone()), ids) {
            return err(*first, strip_kind(&e));
        }
    }

    let mut rel_names: Vec<&Name> = raw.relations.iter().map(|(n, _)| n).collect();
    let mut seen = HashMap::new();
    for n in &rel_names {
        if seen.insert(n.0.clone(), ()).is_some() {
            return err(n.1, format!("duplicate relation `{}`", n.0));
        }
    }
    rel_names.sort_by(|a, b| a.0.cmp(&b.0));
    let rel_ix: HashMap<String, usize> = rel_names.iter().enumerate().map(|(i, n)| (n.0.clone(), i)).collect();
    let mut relations: Vec<RelationDecl> = rel_names
        .iter()
        .map(|n| RelationDecl {
            name: n.0.clone(),
            pairs: Vec::new(),
        })
        .collect();
    for (name, pairs) in &raw.relations {
        let mut resolved = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            resolved.push((lookup(&user_ix, a, "user")?, lookup(&user_ix, b, "user")?));
        }
        resolved.sort_unstable();
        resolved.dedup();
        relations[rel_ix[&name.0]].pairs = resolved;
    }

    let mut auth: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); steps.len()];
    for (step, rhs) in &raw.auth {
        let s = lookup(&step_ix, step, "step")?;
        match rhs {
            RawAuth::All => auth[s].extend(0..raw.users.len()),
            RawAuth::Users(us) => {
                for u in us {
                    auth[s].insert(lookup(&user_ix, u, "user")?);
                }
            }
        }
    }

    let mut constraints = Vec::with_capacity(raw.constraints.len());
    for (rel, s1, s2, at) in &raw.constraints {
        let relation = match rel {
            RawRelation::Eq => RelationName::Eq,
            RawRelation::Ne => RelationName::Ne,
            RawRelation::Named(n) => RelationName::Named(lookup(&rel_ix, n, "relation")?),
        };
        let scope = |names: &Vec<Name>| -> PResult<Vec<usize>> {
            let mut v = names
                .iter()
                .map(|n| lookup(&step_ix, n, "step"))
                .collect::<PResult<Vec<_>>>()?;
            v.sort_unstable();
            v.dedup();
            Ok(v)
        };
        let (scope1, scope2) = (scope(s1)?, scope(s2)?);
        if let Some((f, _, _)) = &raw.formula {
            let named: BTreeSet<&str> = scope1.iter().chain(&scope2).map(|&i| steps[i].0.as_str()).collect();
            if crosses_xor(f, &named) {
                return err(*at, "constraint relates steps in different branches of an xor");
            }
        }
        constraints.push(ConstraintDecl {
            relation,
            scope1,
            scope2,
        });
    }

    Ok(SchemaDocument {
        steps: steps.into_iter().map(|(s, _)| s).collect(),
        edges,
        users: raw.users.into_iter().map(|(u, _)| u).collect(),
        relations,
        auth: auth.into_iter().map(|s| s.into_iter().collect()).collect(),
        constraints,
        formula: raw.formula.map(|(f, _, _)| f),
    })
}

/// Parse a `.wsp` document.
pub fn parse(text: &str) -> std::result::Result<SchemaDocument, ParseError> {
    resolve(parse_raw(text)?)
}

/// A formula on its own, as written after `formula:`.
pub fn parse_formula(text: &str) -> std::result::Result<WorkflowFormula, ParseError> {
    if text.contains('\n') {
        let line = text.lines().count();
        return err(Pos { line, column: 1 }, "a formula must fit on one line");
    }
    let toks = lex_line(text, 1)?;
    let mut p = LineParser {
        toks,
        at: 0,
        end: Pos {
            line: 1,
            column: text.chars().count() + 1,
        },
    };
    let mut leaves = Vec::new();
    let f = p.formula(&mut leaves)?;
    p.finish()?;
    index_names(&leaves, "step in formula")?;
    Ok(f)
}

fn scope_text(doc: &SchemaDocument, scope: &[usize]) -> String {
    if scope.len() == 1 {
        doc.steps[scope[0]].clone()
    } else {
        let names: Vec<&str> = scope.iter().map(|&i| doc.steps[i].as_str()).collect();
        format!("{{{}}}", names.join(", "))
    }
}

/// Canonical text of a document.
pub fn serialize(doc: &SchemaDocument) -> String {
    let mut out = String::new();
    match &doc.formula {
        Some(f) => writeln!(out, "formula: {f}").unwrap(),
        None if !doc.steps.is_empty() => writeln!(out, "steps: {}", doc.steps.join(", ")).unwrap(),
        None => {}
    }
    if !doc.edges.is_empty() {
        let edges: Vec<String> = doc
            .edges
            .iter()
            .map(|&(a, b)| format!("{} -> {}", doc.steps[a], doc.steps[b]))
            .collect();
        writeln!(out, "edges: {}", edges.join(", ")).unwrap();
    }
    if !doc.users.is_empty() {
        writeln!(out, "users: {}", doc.users.join(", ")).unwrap();
    }
    for r in &doc.relations {
        let pairs: Vec<String> = r
            .pairs
            .iter()
            .map(|&(a, b)| format!("({}, {})", doc.users[a], doc.users[b]))
            .collect();
        if pairs.is_empty() {
            writeln!(out, "relation {}:", r.name).unwrap();
        } else {
            writeln!(out, "relation {}: {}", r.name, pairs.join(", ")).unwrap();
        }
    }
    for (s, users) in doc.auth.iter().enumerate() {
        if users.is_empty() {
            continue;
        }
        if users.len() == doc.users.len() {
            writeln!(out, "auth: {} -> *", doc.steps[s]).unwrap();
        } else {
            let names: Vec<&str> = users.iter().map(|&u| doc.users[u].as_str()).collect();
            writeln!(out, "auth: {} -> {}", doc.steps[s], names.join(", ")).unwrap();
        }
    }
    for c in &doc.constraints {
        let head = match c.relation {
            RelationName::Eq => "eq".to_string(),
            RelationName::Ne => "ne".to_string(),
            RelationName::Named(i) => format!("rel {}", doc.relations[i].name),
        };
        writeln!(
            out,
            "constraint: {head}({}, {})",
            scope_text(doc, &c.scope1),
            scope_text(doc, &c.scope2)
        )
        .unwrap();
    }
    out
}

impl SchemaDocument {
    fn user_relations(&self) -> Vec<UserRelation> {
        self.relations
            .iter()
            .map(|r| {
                UserRelation::explicit(
                    r.name.clone(),
                    r.pairs.iter().map(|&(a, b)| (UserId::new(a), UserId::new(b))),
                )
            })
            .collect()
    }

    fn build_constraints(&self) -> Result<Vec<Constraint>> {
        let rels = self.user_relations();
        self.constraints
            .iter()
            .map(|c| {
                let relation = match c.relation {
                    RelationName::Eq => UserRelation::Diagonal,
                    RelationName::Ne => UserRelation::NotDiagonal,
                    RelationName::Named(i) => rels[i].clone(),
                };
                Constraint::new(
                    relation,
                    c.scope1.iter().map(|&s| StepId::new(s)).collect::<Vec<_>>(),
                    c.scope2.iter().map(|&s| StepId::new(s)).collect::<Vec<_>>(),
                )
            })
            .collect()
    }

    fn auth_pairs(&self) -> Vec<(StepId, UserId)> {
        self.auth
            .iter()
            .enumerate()
            .flat_map(|(s, us)| us.iter().map(move |&u| (StepId::new(s), UserId::new(u))))
            .collect()
    }

    fn schema_with_edges(&self, with_edges: bool) -> Result<WorkflowSchema> {
        let edges: Vec<(StepId, StepId)> = if with_edges {
            self.edges.iter().map(|&(a, b)| (StepId::new(a), StepId::new(b))).collect()
        } else {
            Vec::new()
        };
        let dag = StepDag::new(self.steps.iter().cloned(), edges)?;
        WorkflowSchema::new(dag, self.users.clone(), self.auth_pairs(), self.build_constraints()?)
    }

    /// The schema described by the document. With a formula, the order on
    /// the steps comes from the formula.
    pub fn to_schema(&self) -> Result<WorkflowSchema> {
        match &self.formula {
            Some(_) => Ok(self.to_conditional()?.base().clone()),
            None => self.schema_with_edges(true),
        }
    }

    pub fn to_conditional(&self) -> Result<ConditionalSchema> {
        let f = self
            .formula
            .clone()
            .ok_or_else(|| invalid("the document has no formula"))?;
        ConditionalSchema::new(f, &self.schema_with_edges(false)?)
    }

    /// Steps, order and constraints alone, for questions that choose their
    /// own users. Relations must be `=` or `!=`.
    pub fn template(&self) -> Result<(StepDag, Vec<Constraint>)> {
        if let Some(c) = self.constraints.iter().find(|c| matches!(c.relation, RelationName::Named(_))) {
            let RelationName::Named(i) = c.relation else { unreachable!() };
            return Err(crate::error::Error::UnsupportedRelation {
                relation: self.relations[i].name.clone(),
                context: "a template cannot refer to particular users".into(),
            });
        }
        let edges: Vec<(StepId, StepId)> = if self.formula.is_some() {
            Vec::new()
        } else {
            self.edges.iter().map(|&(a, b)| (StepId::new(a), StepId::new(b))).collect()
        };
        let dag = StepDag::new(self.steps.iter().cloned(), edges)?;
        let constraints = crate::model::normalize_constraints(self.build_constraints()?);
        Ok((dag, constraints))
    }

    /// Describe a schema whose nodes are all processing steps.
    pub fn from_schema(schema: &WorkflowSchema) -> Result<Self> {
        let dag = schema.dag();
        if dag.len() != schema.step_count() {
            return Err(contract("only graphs without orchestration nodes can be written out"));
        }
        let mut doc = SchemaDocument {
            steps: schema.steps().iter().map(|&s| schema.step_name(s).to_string()).collect(),
            edges: dag.edges().iter().map(|&(a, b)| (a.index(), b.index())).collect(),
            users: schema.users().to_vec(),
            relations: Vec::new(),
            auth: schema
                .steps()
                .iter()
                .map(|&s| schema.authorized_users(s).iter().map(|u| u.index()).collect())
                .collect(),
            constraints: Vec::new(),
            formula: None,
        };
        let mut rels: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
        for c in schema.constraints() {
            if let UserRelation::Explicit(r) = c.relation() {
                rels.entry(r.name().to_string()).or_insert_with(|| {
                    r.sorted_pairs().into_iter().map(|(a, b)| (a.index(), b.index())).collect()
                });
            }
        }
        doc.relations = rels.into_iter().map(|(name, pairs)| RelationDecl { name, pairs }).collect();
        doc.set_constraints(schema, schema.constraints())?;
        Ok(doc)
    }

    /// Replace the constraint list with `constraints`, which refer to the
    /// steps of `schema` by id; steps are matched by name and explicit
    /// relations must already be declared here.
    pub fn set_constraints(&mut self, schema: &WorkflowSchema, constraints: &[Constraint]) -> Result<()> {
        let step_ix: HashMap<&str, usize> = self.steps.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let scope = |ids: &[StepId]| -> Result<Vec<usize>> {
            let mut v = ids
                .iter()
                .map(|&s| {
                    step_ix
                        .get(schema.step_name(s))
                        .copied()
                        .ok_or_else(|| contract(format!("step `{}` is not in the document", schema.step_name(s))))
                })
                .collect::<Result<Vec<_>>>()?;
            v.sort_unstable();
            Ok(v)
        };
        let mut out = Vec::with_capacity(constraints.len());
        for c in constraints {
            let relation = match c.relation() {
                UserRelation::Diagonal => RelationName::Eq,
                UserRelation::NotDiagonal => RelationName::Ne,
                UserRelation::Explicit(r) => RelationName::Named(
                    self.relations
                        .iter()
                        .position(|d| d.name == r.name())
                        .ok_or_else(|| contract(format!("relation `{}` is not declared", r.name())))?,
                ),
            };
            out.push(ConstraintDecl {
                relation,
                scope1: scope(c.scope1())?,
                scope2: scope(c.scope2())?,
            });
        }
        self.constraints = out;
        Ok(())
    }
}

/// `key: value` lines for a solver result, then one `assign: step -> user`
/// line per step of a SAT witness.
pub fn emit_result(schema: &WorkflowSchema, result: &SolveResult) -> String {
    let mut out = String::new();
    writeln!(out, "status: {}", result.status).unwrap();
    writeln!(out, "plans_examined: {}", result.stats.plans_examined).unwrap();
    writeln!(out, "expressions_examined: {}", result.stats.expressions_examined).unwrap();
    writeln!(out, "partitions_examined: {}", result.stats.partitions_examined).unwrap();
    if let Some(plan) = &result.witness {
        out.push_str(&emit_plan(schema, plan));
    }
    out
}

/// One `assign: step -> user` line per assigned step.
pub fn emit_plan(schema: &WorkflowSchema, plan: &crate::model::Plan) -> String {
    let mut out = String::new();
    for (s, u) in schema.plan_pairs(plan) {
        writeln!(out, "assign: {s} -> {u}").unwrap();
    }
    out
}
