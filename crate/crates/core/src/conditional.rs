//! Conditional workflows built from serial, parallel and xor composition.
//!
//! A [`WorkflowFormula`] describes the workflow; each way of resolving its
//! xor choices gives an execution set, and restricting a schema to an
//! execution set gives a derived deterministic schema. A conditional schema
//! is weakly satisfiable when some derived schema is satisfiable and
//! strongly satisfiable when all of them are.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use crate::error::{contract, invalid, Error, Resource, Result};
use crate::model::{Constraint, NodeKind, StepDag, StepId, WorkflowSchema};
use crate::solve::{solve_auto, SolveResult, SolverConfig};

/// A workflow formula. Operators are n-ary; nested uses of the same
/// operator are flattened by the constructors.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum WorkflowFormula {
    Step(String),
    Serial(Vec<WorkflowFormula>),
    Parallel(Vec<WorkflowFormula>),
    Xor(Vec<WorkflowFormula>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operator {
    Serial,
    Parallel,
    Xor,
}

impl Operator {
    pub fn symbol(self) -> &'static str {
        match self {
            Operator::Serial => ";",
            Operator::Parallel => "par",
            Operator::Xor => "xor",
        }
    }
}

impl WorkflowFormula {
    pub fn step(name: impl Into<String>) -> Self {
        WorkflowFormula::Step(name.into())
    }

    pub fn serial(children: impl IntoIterator<Item = WorkflowFormula>) -> Result<Self> {
        Self::compose(Operator::Serial, children)
    }

    pub fn parallel(children: impl IntoIterator<Item = WorkflowFormula>) -> Result<Self> {
        Self::compose(Operator::Parallel, children)
    }

    pub fn xor(children: impl IntoIterator<Item = WorkflowFormula>) -> Result<Self> {
        Self::compose(Operator::Xor, children)
    }

    /// Compose at least two sub-formulas with disjoint steps.
    pub fn compose(op: Operator, children: impl IntoIterator<Item = WorkflowFormula>) -> Result<Self> {
        let mut flat = Vec::new();
        for c in children {
            match (op, c) {
                (Operator::Serial, WorkflowFormula::Serial(cs))
                | (Operator::Parallel, WorkflowFormula::Parallel(cs))
                | (Operator::Xor, WorkflowFormula::Xor(cs)) => flat.extend(cs),
                (_, c) => flat.push(c),
            }
        }
        if flat.len() < 2 {
            return Err(invalid(format!("`{}` needs at least two operands", op.symbol())));
        }
        let f = match op {
            Operator::Serial => WorkflowFormula::Serial(flat),
            Operator::Parallel => WorkflowFormula::Parallel(flat),
            Operator::Xor => WorkflowFormula::Xor(flat),
        };
        f.validate()?;
        Ok(f)
    }

    pub fn operator(&self) -> Option<Operator> {
        match self {
            WorkflowFormula::Step(_) => None,
            WorkflowFormula::Serial(_) => Some(Operator::Serial),
            WorkflowFormula::Parallel(_) => Some(Operator::Parallel),
            WorkflowFormula::Xor(_) => Some(Operator::Xor),
        }
    }

    pub fn children(&self) -> &[WorkflowFormula] {
        match self {
            WorkflowFormula::Step(_) => &[],
            WorkflowFormula::Serial(cs) | WorkflowFormula::Parallel(cs) | WorkflowFormula::Xor(cs) => cs,
        }
    }

    /// Step names, left to right.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            WorkflowFormula::Step(s) => out.push(s),
            _ => self.children().iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    /// Check operand counts and that no step occurs twice.
    pub fn validate(&self) -> Result<()> {
        fn arity(f: &WorkflowFormula) -> Result<()> {
            if let Some(op) = f.operator() {
                if f.children().len() < 2 {
                    return Err(invalid(format!("`{}` needs at least two operands", op.symbol())));
                }
                f.children().iter().try_for_each(arity)?;
            }
            Ok(())
        }
        arity(self)?;
        let mut seen = HashSet::new();
        for s in self.leaves() {
            if !seen.insert(s) {
                return Err(invalid(format!("step `{s}` occurs more than once in the formula")));
            }
        }
        Ok(())
    }

    /// Swap every serial operator for a parallel one and vice versa.
    pub fn swap_serial_parallel(&self) -> Self {
        match self {
            WorkflowFormula::Step(s) => WorkflowFormula::Step(s.clone()),
            WorkflowFormula::Serial(cs) => {
                WorkflowFormula::Parallel(cs.iter().map(Self::swap_serial_parallel).collect())
            }
            WorkflowFormula::Parallel(cs) => {
                WorkflowFormula::Serial(cs.iter().map(Self::swap_serial_parallel).collect())
            }
            WorkflowFormula::Xor(cs) => WorkflowFormula::Xor(cs.iter().map(Self::swap_serial_parallel).collect()),
        }
    }
}

/// Fully parenthesized except at the top level.
impl fmt::Display for WorkflowFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkflowFormula::Step(s) => f.write_str(s),
            _ => {
                let sep = format!(" {} ", self.operator().unwrap().symbol());
                for (i, c) in self.children().iter().enumerate() {
                    if i > 0 {
                        f.write_str(&sep)?;
                    }
                    match c {
                        WorkflowFormula::Step(s) => f.write_str(s)?,
                        _ => write!(f, "({c})")?,
                    }
                }
                Ok(())
            }
        }
    }
}

struct GraphBuilder {
    kinds: Vec<NodeKind>,
    names: Vec<Option<String>>,
    merged_into: Vec<Option<usize>>,
    edges: Vec<(usize, usize)>,
}

impl GraphBuilder {
    fn add(&mut self, kind: NodeKind, name: Option<String>) -> usize {
        self.kinds.push(kind);
        self.names.push(name);
        self.merged_into.push(None);
        self.kinds.len() - 1
    }

    fn merge(&mut self, from: usize, into: usize) {
        self.merged_into[from] = Some(into);
        for e in &mut self.edges {
            if e.0 == from {
                e.0 = into;
            }
            if e.1 == from {
                e.1 = into;
            }
        }
    }

    fn resolve(&self, mut v: usize) -> usize {
        while let Some(w) = self.merged_into[v] {
            v = w;
        }
        v
    }

    fn plain(&self, v: usize) -> bool {
        matches!(self.kinds[v], NodeKind::Start | NodeKind::Finish | NodeKind::Mid)
    }

    /// Returns the fragment's entry and exit nodes.
    fn build(&mut self, f: &WorkflowFormula) -> (usize, usize) {
        match f {
            WorkflowFormula::Step(s) => {
                let a = self.add(NodeKind::Start, None);
                let s = self.add(NodeKind::Step, Some(s.clone()));
                let w = self.add(NodeKind::Finish, None);
                self.edges.push((a, s));
                self.edges.push((s, w));
                (a, w)
            }
            WorkflowFormula::Serial(cs) => {
                let (entry, mut exit) = self.build(&cs[0]);
                for c in &cs[1..] {
                    let (e, x) = self.build(c);
                    match (self.plain(exit), self.plain(e)) {
                        (true, true) => {
                            self.merge(e, exit);
                            self.kinds[exit] = NodeKind::Mid;
                        }
                        (false, true) => self.merge(e, exit),
                        (true, false) => self.merge(exit, e),
                        (false, false) => self.edges.push((exit, e)),
                    }
                    exit = x;
                }
                (self.resolve(entry), self.resolve(exit))
            }
            WorkflowFormula::Parallel(cs) | WorkflowFormula::Xor(cs) => {
                let (split_kind, join_kind) = if matches!(f, WorkflowFormula::Parallel(_)) {
                    (NodeKind::ParallelSplit, NodeKind::ParallelJoin)
                } else {
                    (NodeKind::XorSplit, NodeKind::XorJoin)
                };
                let split = self.add(split_kind, None);
                let join = self.add(join_kind, None);
                for c in cs {
                    let (e, x) = self.build(c);
                    if self.plain(e) {
                        self.merge(e, split);
                    } else {
                        self.edges.push((split, e));
                    }
                    if self.plain(x) {
                        self.merge(x, join);
                    } else {
                        self.edges.push((x, join));
                    }
                }
                (split, join)
            }
        }
    }
}

/// The step graph of a formula, including its orchestration nodes.
///
/// A lone step gets a start and a finish node. Serial composition joins the
/// finish of one part to the start of the next in a single mid node;
/// parallel and xor composition add split and join gateways, which absorb
/// the start and finish nodes of their operands. Orchestration nodes are
/// named with a leading `@`.
pub fn build_graph(formula: &WorkflowFormula) -> Result<StepDag> {
    formula.validate()?;
    let mut g = GraphBuilder {
        kinds: Vec::new(),
        names: Vec::new(),
        merged_into: Vec::new(),
        edges: Vec::new(),
    };
    g.build(formula);
    let mut position = vec![usize::MAX; g.kinds.len()];
    let mut nodes = Vec::new();
    let mut counters: BTreeMap<&str, usize> = BTreeMap::new();
    #[allow(clippy::needless_range_loop)]
    for v in 0..g.kinds.len() {
        if g.merged_into[v].is_some() {
            continue;
        }
        position[v] = nodes.len();
        let name = match (&g.names[v], g.kinds[v]) {
            (Some(s), _) => s.clone(),
            (None, kind) => {
                let label = match kind {
                    NodeKind::Start => "start",
                    NodeKind::Finish => "finish",
                    NodeKind::Mid => "mid",
                    NodeKind::ParallelSplit => "par",
                    NodeKind::ParallelJoin => "par_join",
                    NodeKind::XorSplit => "xor",
                    NodeKind::XorJoin => "xor_join",
                    NodeKind::Step => unreachable!("steps are named"),
                };
                let n = counters.entry(label).or_insert(0);
                *n += 1;
                format!("@{label}{n}")
            }
        };
        nodes.push((name, g.kinds[v]));
    }
    let edges: Vec<(StepId, StepId)> = g
        .edges
        .iter()
        .map(|&(a, b)| (StepId::new(position[a]), StepId::new(position[b])))
        .collect();
    StepDag::with_kinds(nodes, edges)
}

/// Steps that make up one complete run, in the formula's leaf order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExecutionSet {
    pub steps: Vec<String>,
}

impl ExecutionSet {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn contains(&self, step: &str) -> bool {
        self.steps.iter().any(|s| s == step)
    }
}

impl fmt::Display for ExecutionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.steps.join(", "))
    }
}

/// Number of execution sets, computed bottom-up without listing them.
pub fn sharp(formula: &WorkflowFormula) -> u128 {
    match formula {
        WorkflowFormula::Step(_) => 1,
        WorkflowFormula::Serial(cs) | WorkflowFormula::Parallel(cs) => {
            cs.iter().fold(1u128, |acc, c| acc.saturating_mul(sharp(c)))
        }
        WorkflowFormula::Xor(cs) => cs.iter().fold(0u128, |acc, c| acc.saturating_add(sharp(c))),
    }
}

/// Size of the largest execution set, computed bottom-up.
pub fn flat(formula: &WorkflowFormula) -> u128 {
    match formula {
        WorkflowFormula::Step(_) => 1,
        WorkflowFormula::Serial(cs) | WorkflowFormula::Parallel(cs) => cs.iter().map(flat).sum(),
        WorkflowFormula::Xor(cs) => cs.iter().map(flat).max().unwrap_or(0),
    }
}

/// Default cap on listed execution sets.
pub const DEFAULT_EXECUTION_SET_CAP: u64 = 1 << 20;

/// All execution sets, in derivation order: products vary the last operand
/// fastest and xor lists its operands' sets left to right.
pub fn execution_sets(formula: &WorkflowFormula, cap: u64) -> Result<Vec<ExecutionSet>> {
    formula.validate()?;
    let count = sharp(formula);
    if count > cap as u128 {
        return Err(Error::ResourceLimit {
            resource: Resource::ExecutionSets,
            requested: count,
            cap: cap as u128,
        });
    }
    let leaves = formula.leaves();
    let position: BTreeMap<&str, usize> = leaves.iter().enumerate().map(|(i, &s)| (s, i)).collect();

    fn sets(f: &WorkflowFormula, position: &BTreeMap<&str, usize>) -> Vec<Vec<usize>> {
        match f {
            WorkflowFormula::Step(s) => vec![vec![position[s.as_str()]]],
            WorkflowFormula::Xor(cs) => cs.iter().flat_map(|c| sets(c, position)).collect(),
            WorkflowFormula::Serial(cs) | WorkflowFormula::Parallel(cs) => {
                let mut acc = vec![Vec::new()];
                for c in cs {
                    let part = sets(c, position);
                    let mut next = Vec::with_capacity(acc.len() * part.len());
                    for a in &acc {
                        for p in &part {
                            let mut u = a.clone();
                            u.extend_from_slice(p);
                            next.push(u);
                        }
                    }
                    acc = next;
                }
                acc
            }
        }
    }

    Ok(sets(formula, &position)
        .into_iter()
        .map(|mut s| {
            s.sort_unstable();
            ExecutionSet {
                steps: s.into_iter().map(|i| leaves[i].to_string()).collect(),
            }
        })
        .collect())
}

/// Where a constraint sits in the formula tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    /// Preorder index of the smallest subformula containing every step the
    /// constraint names.
    pub node: usize,
    /// Operator of that subformula; `None` for a single step.
    pub operator: Option<Operator>,
}

/// Preorder index and operator of the lowest subformula containing `steps`.
fn lowest_cover(formula: &WorkflowFormula, steps: &BTreeSet<&str>) -> Placement {
    fn count(f: &WorkflowFormula, steps: &BTreeSet<&str>) -> usize {
        f.leaves().iter().filter(|s| steps.contains(*s)).count()
    }
    fn size(f: &WorkflowFormula) -> usize {
        1 + f.children().iter().map(size).sum::<usize>()
    }
    let mut node = formula;
    let mut index = 0;
    'descend: loop {
        let mut offset = index + 1;
        for c in node.children() {
            if count(c, steps) == steps.len() {
                node = c;
                index = offset;
                continue 'descend;
            }
            offset += size(c);
        }
        return Placement {
            node: index,
            operator: node.operator(),
        };
    }
}

/// Do `steps` lie in different operands of some xor?
pub(crate) fn crosses_xor(formula: &WorkflowFormula, steps: &BTreeSet<&str>) -> bool {
    lowest_cover(formula, steps).operator == Some(Operator::Xor)
}

/// A workflow formula with users, authorizations and constraints.
#[derive(Clone, Debug)]
pub struct ConditionalSchema {
    formula: WorkflowFormula,
    graph: StepDag,
    base: WorkflowSchema,
    placements: Vec<Placement>,
}

impl ConditionalSchema {
    /// Attach a formula to `template`, whose steps must be exactly the
    /// formula's steps and which must have no edges of its own: the order
    /// comes from the formula. Constraints whose steps lie in different
    /// operands of an xor are rejected.
    pub fn new(formula: WorkflowFormula, template: &WorkflowSchema) -> Result<Self> {
        formula.validate()?;
        if !template.dag().edges().is_empty() {
            return Err(invalid("a conditional schema takes its order from the formula"));
        }
        let leaves = formula.leaves();
        let declared: BTreeSet<&str> = template.steps().iter().map(|&s| template.step_name(s)).collect();
        let in_formula: BTreeSet<&str> = leaves.iter().copied().collect();
        if declared != in_formula || template.steps().len() != template.dag().len() {
            return Err(invalid("the declared steps differ from the steps of the formula"));
        }
        let graph = build_graph(&formula)?;
        // processing steps in leaf order, ordered as in the full graph
        let graph_ids: Vec<StepId> = leaves.iter().map(|s| graph.id(s).expect("leaf in graph")).collect();
        let edges: Vec<(StepId, StepId)> = graph
            .covering_pairs(&graph_ids)
            .into_iter()
            .map(|(a, b)| {
                let pa = graph_ids.iter().position(|&x| x == a).unwrap();
                let pb = graph_ids.iter().position(|&x| x == b).unwrap();
                (StepId::new(pa), StepId::new(pb))
            })
            .collect();
        let dag = StepDag::new(leaves.iter().copied(), edges)?;
        let remap = |s: StepId| dag.id(template.step_name(s)).expect("same step names");
        let auth: Vec<_> = template.auth_pairs().map(|(s, u)| (remap(s), u)).collect();
        let constraints: Vec<Constraint> = template.constraints().iter().map(|c| c.map_steps(remap)).collect();
        let base = WorkflowSchema::new(dag, template.users().to_vec(), auth, constraints)?;

        let mut placements = Vec::with_capacity(base.constraints().len());
        for c in base.constraints() {
            let names: BTreeSet<&str> = c.steps().into_iter().map(|s| base.step_name(s)).collect();
            let p = lowest_cover(&formula, &names);
            if p.operator == Some(Operator::Xor) {
                return Err(invalid(format!(
                    "constraint `{}` relates steps in different branches of an xor",
                    base.display_constraint(c)
                )));
            }
            placements.push(p);
        }
        Ok(ConditionalSchema {
            formula,
            graph,
            base,
            placements,
        })
    }

    pub fn formula(&self) -> &WorkflowFormula {
        &self.formula
    }

    /// The full graph with orchestration nodes.
    pub fn graph(&self) -> &StepDag {
        &self.graph
    }

    /// All steps with their order, users, authorizations and constraints.
    pub fn base(&self) -> &WorkflowSchema {
        &self.base
    }

    /// Placement of each constraint of `base()`, in the same order.
    pub fn placements(&self) -> &[Placement] {
        &self.placements
    }
}

/// A deterministic schema for one execution set.
#[derive(Clone, Debug)]
pub struct DerivedSchema {
    pub execution_set: ExecutionSet,
    pub schema: WorkflowSchema,
}

/// One deterministic schema per execution set, ordered by size and then by
/// the positions of their steps in the formula.
///
/// The order on a derived schema is the base order restricted to its steps.
/// Authorizations are restricted to its steps, and each constraint keeps the
/// parts of its scopes inside the set; it is dropped if either part is empty.
pub fn derive_schemas(cs: &ConditionalSchema, cap: u64) -> Result<Vec<DerivedSchema>> {
    let base = &cs.base;
    let mut sets = execution_sets(&cs.formula, cap)?;
    let position = |s: &str| base.step_id(s).expect("leaf").index();
    sets.sort_by_cached_key(|e| (e.len(), e.steps.iter().map(|s| position(s)).collect::<Vec<_>>()));

    let mut out = Vec::with_capacity(sets.len());
    for set in sets {
        let ids: Vec<StepId> = set.steps.iter().map(|s| base.step_id(s).unwrap()).collect();
        let mut local = vec![None; base.dag().len()];
        for (i, &s) in ids.iter().enumerate() {
            local[s.index()] = Some(StepId::new(i));
        }
        let edges: Vec<(StepId, StepId)> = base
            .dag()
            .covering_pairs(&ids)
            .into_iter()
            .map(|(a, b)| (local[a.index()].unwrap(), local[b.index()].unwrap()))
            .collect();
        let dag = StepDag::new(set.steps.iter().cloned(), edges)?;
        let auth: Vec<_> = ids
            .iter()
            .enumerate()
            .flat_map(|(i, &s)| base.authorized_users(s).iter().map(move |&u| (StepId::new(i), u)))
            .collect();
        let constraints: Vec<Constraint> = base
            .constraints()
            .iter()
            .filter_map(|c| {
                let s1: Vec<StepId> = c.scope1().iter().filter_map(|s| local[s.index()]).collect();
                let s2: Vec<StepId> = c.scope2().iter().filter_map(|s| local[s.index()]).collect();
                Constraint::new(c.relation().clone(), s1, s2).ok()
            })
            .collect();
        let schema = WorkflowSchema::new(dag, base.users().to_vec(), auth, constraints)?;
        out.push(DerivedSchema {
            execution_set: set,
            schema,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Satisfiability {
    /// Some derived schema is satisfiable.
    Weak,
    /// Every derived schema is satisfiable.
    Strong,
}

#[derive(Clone, Debug)]
pub struct ConditionalVerdict {
    pub mode: Satisfiability,
    pub holds: bool,
    /// Every derived schema with its result, in `derive_schemas` order.
    pub per_set: Vec<(DerivedSchema, SolveResult)>,
}

impl ConditionalVerdict {
    /// Execution sets that no valid plan can complete.
    pub fn unsatisfiable_sets(&self) -> impl Iterator<Item = &ExecutionSet> {
        self.per_set
            .iter()
            .filter(|(_, r)| !r.is_sat())
            .map(|(d, _)| &d.execution_set)
    }
}

/// Solve every derived schema and combine the results for `mode`.
pub fn satisfiable(
    cs: &ConditionalSchema,
    mode: Satisfiability,
    config: &SolverConfig,
) -> Result<ConditionalVerdict> {
    let derived = derive_schemas(cs, DEFAULT_EXECUTION_SET_CAP)?;
    let mut per_set = Vec::with_capacity(derived.len());
    for d in derived {
        let r = solve_auto(&d.schema, config)?;
        per_set.push((d, r));
    }
    let holds = match mode {
        Satisfiability::Weak => per_set.iter().any(|(_, r)| r.is_sat()),
        Satisfiability::Strong => per_set.iter().all(|(_, r)| r.is_sat()),
    };
    Ok(ConditionalVerdict { mode, holds, per_set })
}

/// The largest number of execution sets a formula on `k` steps can have.
pub fn max_execution_sets(k: usize) -> Result<u128> {
    if k == 0 {
        return Err(contract("a formula has at least one step"));
    }
    let pow3 = |e: usize| (0..e).fold(1u128, |acc, _| acc.saturating_mul(3));
    Ok(match (k / 3, k % 3) {
        (0, 1) => 1,
        (a, 0) => pow3(a),
        (a, 1) => 4u128.saturating_mul(pow3(a - 1)),
        (a, _) => 2u128.saturating_mul(pow3(a)),
    })
}

/// A serial chain of two- and three-way xors over steps `s1..sk` whose
/// number of execution sets is [`max_execution_sets`]`(k)`.
pub fn build_max_xor_workflow(k: usize) -> Result<WorkflowFormula> {
    if k == 0 {
        return Err(contract("a formula has at least one step"));
    }
    if k == 1 {
        return Ok(WorkflowFormula::step("s1"));
    }
    let widths: Vec<usize> = match k % 3 {
        0 => vec![3; k / 3],
        1 => {
            let mut w = vec![3; k / 3 - 1];
            w.extend([2, 2]);
            w
        }
        _ => {
            let mut w = vec![3; k / 3];
            w.push(2);
            w
        }
    };
    let mut next = 1;
    let mut blocks = Vec::with_capacity(widths.len());
    for w in widths {
        let steps: Vec<WorkflowFormula> = (next..next + w).map(|i| WorkflowFormula::step(format!("s{i}"))).collect();
        next += w;
        blocks.push(WorkflowFormula::xor(steps)?);
    }
    if blocks.len() == 1 {
        Ok(blocks.pop().unwrap())
    } else {
        WorkflowFormula::serial(blocks)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    fn s(name: &str) -> WorkflowFormula {
        WorkflowFormula::step(name)
    }

    /// `(s1 ; s2) ; (((s3 ; s5) xor s3p) par s4) ; s6`
    pub fn purchase_order_formula() -> WorkflowFormula {
        let branch = WorkflowFormula::xor([WorkflowFormula::serial([s("s3"), s("s5")]).unwrap(), s("s3p")]).unwrap();
        let middle = WorkflowFormula::parallel([branch, s("s4")]).unwrap();
        WorkflowFormula::serial([WorkflowFormula::serial([s("s1"), s("s2")]).unwrap(), middle, s("s6")]).unwrap()
    }
}
