//! Schemas, user relations, constraints and plans.
//!
//! Steps and users are interned: a [`StepId`] or [`UserId`] is an index into
//! the owning schema's name table, and every enumeration in the crate follows
//! index order. Orchestration nodes (start, finish and gateway nodes produced
//! by workflow composition) may live in a [`StepDag`], but they carry no
//! authorizations, no constraints and no entry in a [`Plan`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use crate::error::{contract, invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StepId(u32);

impl StepId {
    pub fn new(index: usize) -> Self {
        StepId(u32::try_from(index).expect("step index overflows u32"))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(u32);

impl UserId {
    pub fn new(index: usize) -> Self {
        UserId(u32::try_from(index).expect("user index overflows u32"))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Role of a node in a step graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    /// A processing step: users perform it and constraints may name it.
    Step,
    Start,
    Finish,
    /// Finish of one sub-workflow merged with the start of the next.
    Mid,
    ParallelSplit,
    ParallelJoin,
    XorSplit,
    XorJoin,
}

impl NodeKind {
    pub fn is_processing(self) -> bool {
        self == NodeKind::Step
    }

    pub fn is_gateway(self) -> bool {
        matches!(
            self,
            NodeKind::ParallelSplit | NodeKind::ParallelJoin | NodeKind::XorSplit | NodeKind::XorJoin
        )
    }
}

/// A directed acyclic graph of steps with its reachability order.
#[derive(Clone, Debug)]
pub struct StepDag {
    names: Vec<String>,
    kinds: Vec<NodeKind>,
    index: HashMap<String, StepId>,
    edges: Vec<(StepId, StepId)>,
    // reach[a][b] is true iff a <= b (reflexive-transitive closure)
    reach: Vec<Vec<bool>>,
}

impl StepDag {
    /// A graph whose nodes are all processing steps.
    pub fn new<S: Into<String>>(
        steps: impl IntoIterator<Item = S>,
        edges: impl IntoIterator<Item = (StepId, StepId)>,
    ) -> Result<Self> {
        Self::with_kinds(steps.into_iter().map(|s| (s.into(), NodeKind::Step)), edges)
    }

    pub fn with_kinds(
        nodes: impl IntoIterator<Item = (String, NodeKind)>,
        edges: impl IntoIterator<Item = (StepId, StepId)>,
    ) -> Result<Self> {
        let (names, kinds): (Vec<String>, Vec<NodeKind>) = nodes.into_iter().unzip();
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), StepId::new(i)).is_some() {
                return Err(invalid(format!("duplicate step `{name}`")));
            }
        }
        let n = names.len();
        let mut edges: Vec<(StepId, StepId)> = edges.into_iter().collect();
        for &(a, b) in &edges {
            if a.index() >= n || b.index() >= n {
                return Err(invalid(format!(
                    "edge ({}, {}) references an unknown node",
                    a.index(),
                    b.index()
                )));
            }
        }
        edges.sort_unstable();
        edges.dedup();

        let mut succ = vec![Vec::new(); n];
        let mut indegree = vec![0usize; n];
        for &(a, b) in &edges {
            succ[a.index()].push(b.index());
            indegree[b.index()] += 1;
        }
        // Kahn's algorithm; anything left over sits on a cycle.
        let mut queue: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(v) = queue.pop() {
            topo.push(v);
            for &w in &succ[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    queue.push(w);
                }
            }
        }
        if topo.len() != n {
            let on_cycle = (0..n).find(|&v| indegree[v] > 0).unwrap_or(0);
            return Err(invalid(format!(
                "step graph has a cycle through `{}`",
                names[on_cycle]
            )));
        }

        let mut reach = vec![vec![false; n]; n];
        for &v in topo.iter().rev() {
            reach[v][v] = true;
            for &w in &succ[v] {
                let (row_v, row_w) = if v < w {
                    let (lo, hi) = reach.split_at_mut(w);
                    (&mut lo[v], &hi[0])
                } else {
                    let (lo, hi) = reach.split_at_mut(v);
                    (&mut hi[0], &lo[w])
                };
                for (x, &y) in row_v.iter_mut().zip(row_w) {
                    *x |= y;
                }
            }
        }

        Ok(StepDag {
            names,
            kinds,
            index,
            edges,
            reach,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, step: StepId) -> &str {
        &self.names[step.index()]
    }

    pub fn kind(&self, step: StepId) -> NodeKind {
        self.kinds[step.index()]
    }

    pub fn id(&self, name: &str) -> Option<StepId> {
        self.index.get(name).copied()
    }

    pub fn edges(&self) -> &[(StepId, StepId)] {
        &self.edges
    }

    pub fn nodes(&self) -> impl Iterator<Item = StepId> + '_ {
        (0..self.names.len()).map(StepId::new)
    }

    pub fn processing_steps(&self) -> impl Iterator<Item = StepId> + '_ {
        self.nodes().filter(|&s| self.kind(s).is_processing())
    }

    /// `a <= b` in the reflexive-transitive closure.
    pub fn leq(&self, a: StepId, b: StepId) -> bool {
        self.reach[a.index()][b.index()]
    }

    pub fn lt(&self, a: StepId, b: StepId) -> bool {
        a != b && self.leq(a, b)
    }

    pub fn incomparable(&self, a: StepId, b: StepId) -> bool {
        !self.leq(a, b) && !self.leq(b, a)
    }

    /// Direct predecessors of `step`.
    pub fn predecessors(&self, step: StepId) -> impl Iterator<Item = StepId> + '_ {
        self.edges
            .iter()
            .filter(move |&&(_, b)| b == step)
            .map(|&(a, _)| a)
    }

    /// Nearest processing predecessors, looking through orchestration nodes.
    pub fn processing_predecessors(&self, step: StepId) -> BTreeSet<StepId> {
        let mut out = BTreeSet::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<StepId> = self.predecessors(step).collect();
        while let Some(p) = stack.pop() {
            if !seen.insert(p) {
                continue;
            }
            if self.kind(p).is_processing() {
                out.insert(p);
            } else {
                stack.extend(self.predecessors(p));
            }
        }
        out
    }

    /// Covering pairs of the order restricted to `subset`: `(a, b)` with
    /// `a < b` and no `c` in `subset` strictly between them.
    pub fn covering_pairs(&self, subset: &[StepId]) -> Vec<(StepId, StepId)> {
        let mut out = Vec::new();
        for &a in subset {
            for &b in subset {
                if !self.lt(a, b) {
                    continue;
                }
                let covered = subset
                    .iter()
                    .any(|&c| c != a && c != b && self.lt(a, c) && self.lt(c, b));
                if !covered {
                    out.push((a, b));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// A binary relation on users, `rho` in `(rho, S1, S2)`.
#[derive(Clone, Debug)]
pub enum UserRelation {
    /// `=`: same user.
    Diagonal,
    /// `!=`: different users.
    NotDiagonal,
    Explicit(ExplicitRelation),
}

/// A named, explicitly listed relation.
#[derive(Clone, Debug)]
pub struct ExplicitRelation {
    name: Arc<str>,
    pairs: Arc<HashSet<(UserId, UserId)>>,
}

impl ExplicitRelation {
    pub fn new(name: impl Into<String>, pairs: impl IntoIterator<Item = (UserId, UserId)>) -> Self {
        let name: String = name.into();
        ExplicitRelation {
            name: name.into(),
            pairs: Arc::new(pairs.into_iter().collect()),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn pairs(&self) -> &HashSet<(UserId, UserId)> {
        &self.pairs
    }

    /// Pairs in `(first, second)` order.
    pub fn sorted_pairs(&self) -> Vec<(UserId, UserId)> {
        let mut v: Vec<_> = self.pairs.iter().copied().collect();
        v.sort_unstable();
        v
    }
}

impl UserRelation {
    pub fn explicit(
        name: impl Into<String>,
        pairs: impl IntoIterator<Item = (UserId, UserId)>,
    ) -> Self {
        UserRelation::Explicit(ExplicitRelation::new(name, pairs))
    }

    pub fn contains(&self, a: UserId, b: UserId) -> bool {
        match self {
            UserRelation::Diagonal => a == b,
            UserRelation::NotDiagonal => a != b,
            UserRelation::Explicit(r) => r.pairs.contains(&(a, b)),
        }
    }

    /// True for `=` and `!=`.
    pub fn is_equality_kind(&self) -> bool {
        !matches!(self, UserRelation::Explicit(_))
    }

    /// Complement over a universe of `user_count` users.
    ///
    /// Explicit relations are materialized over `U x U`, so this costs
    /// `O(n^2)` time and memory for them.
    pub fn complement(&self, user_count: usize) -> UserRelation {
        match self {
            UserRelation::Diagonal => UserRelation::NotDiagonal,
            UserRelation::NotDiagonal => UserRelation::Diagonal,
            UserRelation::Explicit(r) => {
                let mut pairs = HashSet::new();
                for a in 0..user_count {
                    for b in 0..user_count {
                        let p = (UserId::new(a), UserId::new(b));
                        if !r.pairs.contains(&p) {
                            pairs.insert(p);
                        }
                    }
                }
                let name = match r.name.strip_prefix('!') {
                    Some(inner) => inner.to_string(),
                    None => format!("!{}", r.name),
                };
                UserRelation::Explicit(ExplicitRelation {
                    name: name.into(),
                    pairs: Arc::new(pairs),
                })
            }
        }
    }

    /// `{(u', u) : (u, u') in rho}`.
    pub fn transpose(&self) -> UserRelation {
        match self {
            UserRelation::Explicit(r) => {
                let name = match r.name.strip_prefix('~') {
                    Some(inner) => inner.to_string(),
                    None => format!("~{}", r.name),
                };
                UserRelation::Explicit(ExplicitRelation {
                    name: name.into(),
                    pairs: Arc::new(r.pairs.iter().map(|&(a, b)| (b, a)).collect()),
                })
            }
            other => other.clone(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            UserRelation::Explicit(r) => r.pairs.iter().all(|&(a, b)| r.pairs.contains(&(b, a))),
            _ => true,
        }
    }
}

// Semantic equality: explicit relations compare by their pair sets.
impl PartialEq for UserRelation {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (UserRelation::Diagonal, UserRelation::Diagonal) => true,
            (UserRelation::NotDiagonal, UserRelation::NotDiagonal) => true,
            (UserRelation::Explicit(a), UserRelation::Explicit(b)) => a.pairs == b.pairs,
            _ => false,
        }
    }
}

impl Eq for UserRelation {}

impl fmt::Display for UserRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UserRelation::Diagonal => f.write_str("="),
            UserRelation::NotDiagonal => f.write_str("!="),
            UserRelation::Explicit(r) => f.write_str(&r.name),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintType {
    Type1,
    Type2,
    Type3,
}

/// A workflow constraint `(rho, S1, S2)`: satisfied by a plan when some
/// `s1 in S1`, `s2 in S2` have `(plan(s1), plan(s2)) in rho`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Constraint {
    relation: UserRelation,
    scope1: Vec<StepId>,
    scope2: Vec<StepId>,
}

impl Constraint {
    pub fn new(
        relation: UserRelation,
        scope1: impl IntoIterator<Item = StepId>,
        scope2: impl IntoIterator<Item = StepId>,
    ) -> Result<Self> {
        let scope1 = sorted_scope(scope1);
        let scope2 = sorted_scope(scope2);
        if scope1.is_empty() || scope2.is_empty() {
            return Err(invalid("constraint scopes must be nonempty"));
        }
        Ok(Constraint {
            relation,
            scope1,
            scope2,
        })
    }

    pub fn type1(relation: UserRelation, s1: StepId, s2: StepId) -> Self {
        Constraint {
            relation,
            scope1: vec![s1],
            scope2: vec![s2],
        }
    }

    pub fn relation(&self) -> &UserRelation {
        &self.relation
    }

    pub fn scope1(&self) -> &[StepId] {
        &self.scope1
    }

    pub fn scope2(&self) -> &[StepId] {
        &self.scope2
    }

    pub fn constraint_type(&self) -> ConstraintType {
        match (self.scope1.len() == 1, self.scope2.len() == 1) {
            (true, true) => ConstraintType::Type1,
            (true, false) | (false, true) => ConstraintType::Type2,
            (false, false) => ConstraintType::Type3,
        }
    }

    /// Endpoints of a Type 1 constraint.
    pub fn as_type1(&self) -> Option<(StepId, StepId)> {
        match (self.scope1.as_slice(), self.scope2.as_slice()) {
            ([a], [b]) => Some((*a, *b)),
            _ => None,
        }
    }

    /// All steps named by either scope, sorted.
    pub fn steps(&self) -> Vec<StepId> {
        let mut v: Vec<StepId> = self.scope1.iter().chain(&self.scope2).copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Number of Type 1 disjuncts, `|S1| * |S2|`.
    pub fn pair_count(&self) -> usize {
        self.scope1.len() * self.scope2.len()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (StepId, StepId)> + '_ {
        self.scope1
            .iter()
            .flat_map(move |&a| self.scope2.iter().map(move |&b| (a, b)))
    }

    /// The same constraint over a different relation.
    pub fn with_relation(&self, relation: UserRelation) -> Constraint {
        Constraint {
            relation,
            scope1: self.scope1.clone(),
            scope2: self.scope2.clone(),
        }
    }

    pub(crate) fn map_steps(&self, f: impl Fn(StepId) -> StepId) -> Constraint {
        Constraint {
            relation: self.relation.clone(),
            scope1: sorted_scope(self.scope1.iter().map(|&s| f(s))),
            scope2: sorted_scope(self.scope2.iter().map(|&s| f(s))),
        }
    }
}

fn sorted_scope(it: impl IntoIterator<Item = StepId>) -> Vec<StepId> {
    let mut v: Vec<StepId> = it.into_iter().collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Ingest rewrite for Type 2 constraints `(rho, s, S')` with `s in S'`:
/// `(=, s, S')` holds for every plan and is dropped, `(!=, s, S')` becomes
/// `(!=, s, S' \ {s})`.
pub fn normalize_constraints(constraints: Vec<Constraint>) -> Vec<Constraint> {
    let mut out = Vec::with_capacity(constraints.len());
    for mut c in constraints {
        if c.constraint_type() == ConstraintType::Type2 && c.relation.is_equality_kind() {
            let single_first = c.scope1.len() == 1;
            let (single, set) = if single_first {
                (c.scope1[0], &mut c.scope2)
            } else {
                (c.scope2[0], &mut c.scope1)
            };
            if set.contains(&single) {
                match c.relation {
                    UserRelation::Diagonal => continue,
                    UserRelation::NotDiagonal => set.retain(|&s| s != single),
                    UserRelation::Explicit(_) => unreachable!(),
                }
            }
        }
        out.push(c);
    }
    out
}

/// A plan: one user per processing step.
///
/// Stored densely over all graph nodes; orchestration nodes hold `None`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Plan {
    assignment: Vec<Option<UserId>>,
}

impl Plan {
    pub fn new(assignment: Vec<Option<UserId>>) -> Self {
        Plan { assignment }
    }

    /// Build a plan for `dag` from `(step, user)` pairs.
    pub fn from_pairs(dag: &StepDag, pairs: impl IntoIterator<Item = (StepId, UserId)>) -> Self {
        let mut assignment = vec![None; dag.len()];
        for (s, u) in pairs {
            assignment[s.index()] = Some(u);
        }
        Plan { assignment }
    }

    pub fn get(&self, step: StepId) -> Option<UserId> {
        self.assignment.get(step.index()).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub(crate) fn set(&mut self, step: StepId, user: UserId) {
        self.assignment[step.index()] = Some(user);
    }

    pub fn iter(&self) -> impl Iterator<Item = (StepId, UserId)> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, u)| u.map(|u| (StepId::new(i), u)))
    }

    fn user_at(&self, step: StepId) -> Result<UserId> {
        self.get(step)
            .ok_or_else(|| contract(format!("step #{} is outside the plan domain", step.index())))
    }
}

/// Does `plan` satisfy `c`?
pub fn satisfies_constraint(plan: &Plan, c: &Constraint) -> Result<bool> {
    for &s in c.scope1.iter().chain(&c.scope2) {
        plan.user_at(s)?;
    }
    Ok(c.pairs().any(|(a, b)| {
        c.relation
            .contains(plan.get(a).expect("checked"), plan.get(b).expect("checked"))
    }))
}

/// Every step of the schema assigned to a user authorized for it.
pub fn is_authorized(schema: &WorkflowSchema, plan: &Plan) -> Result<bool> {
    schema.check_plan_domain(plan)?;
    Ok(schema
        .steps()
        .iter()
        .all(|&s| schema.is_user_authorized(s, plan.get(s).expect("domain checked"))))
}

/// Authorized and satisfying every constraint.
pub fn is_valid(schema: &WorkflowSchema, plan: &Plan) -> Result<bool> {
    if !is_authorized(schema, plan)? {
        return Ok(false);
    }
    for c in schema.constraints() {
        if !satisfies_constraint(plan, c)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// A constrained workflow authorization schema `((S, E), U, A, C)`.
#[derive(Clone, Debug)]
pub struct WorkflowSchema {
    dag: StepDag,
    steps: Vec<StepId>,
    users: Arc<Vec<String>>,
    user_index: Arc<HashMap<String, UserId>>,
    // auth[node] sorted ascending; empty for orchestration nodes
    auth: Vec<Vec<UserId>>,
    constraints: Vec<Constraint>,
}

impl WorkflowSchema {
    /// Validates and normalizes. Every processing step needs an authorized
    /// user; orchestration nodes may carry neither authorizations nor
    /// constraints.
    pub fn new(
        dag: StepDag,
        users: Vec<String>,
        auth: impl IntoIterator<Item = (StepId, UserId)>,
        constraints: Vec<Constraint>,
    ) -> Result<Self> {
        let mut user_index = HashMap::with_capacity(users.len());
        for (i, u) in users.iter().enumerate() {
            if user_index.insert(u.clone(), UserId::new(i)).is_some() {
                return Err(invalid(format!("duplicate user `{u}`")));
            }
        }
        Self::assemble(dag, Arc::new(users), Arc::new(user_index), auth, constraints)
    }

    fn assemble(
        dag: StepDag,
        users: Arc<Vec<String>>,
        user_index: Arc<HashMap<String, UserId>>,
        auth: impl IntoIterator<Item = (StepId, UserId)>,
        constraints: Vec<Constraint>,
    ) -> Result<Self> {
        let mut table = vec![Vec::new(); dag.len()];
        for (s, u) in auth {
            if s.index() >= dag.len() {
                return Err(invalid(format!("authorization for unknown step #{}", s.index())));
            }
            if u.index() >= users.len() {
                return Err(invalid(format!("authorization for unknown user #{}", u.index())));
            }
            if !dag.kind(s).is_processing() {
                return Err(invalid(format!(
                    "orchestration node `{}` cannot be authorized",
                    dag.name(s)
                )));
            }
            table[s.index()].push(u);
        }
        for list in &mut table {
            list.sort_unstable();
            list.dedup();
        }
        let steps: Vec<StepId> = dag.processing_steps().collect();
        for &s in &steps {
            if table[s.index()].is_empty() {
                return Err(invalid(format!("step `{}` has no authorized user", dag.name(s))));
            }
        }
        for c in &constraints {
            for s in c.steps() {
                if s.index() >= dag.len() {
                    return Err(invalid(format!("constraint names unknown step #{}", s.index())));
                }
                if !dag.kind(s).is_processing() {
                    return Err(invalid(format!(
                        "constraint names orchestration node `{}`",
                        dag.name(s)
                    )));
                }
            }
            if let UserRelation::Explicit(r) = &c.relation {
                if r.pairs.iter().any(|&(a, b)| a.index() >= users.len() || b.index() >= users.len()) {
                    return Err(invalid(format!("relation `{}` names an unknown user", r.name)));
                }
            }
        }
        Ok(WorkflowSchema {
            dag,
            steps,
            users,
            user_index,
            auth: table,
            constraints: normalize_constraints(constraints),
        })
    }

    pub fn dag(&self) -> &StepDag {
        &self.dag
    }

    /// Processing steps in id order.
    pub fn steps(&self) -> &[StepId] {
        &self.steps
    }

    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn step_name(&self, s: StepId) -> &str {
        self.dag.name(s)
    }

    pub fn step_id(&self, name: &str) -> Option<StepId> {
        self.dag.id(name)
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn user_ids(&self) -> impl Iterator<Item = UserId> {
        (0..self.users.len()).map(UserId::new)
    }

    pub fn user_name(&self, u: UserId) -> &str {
        &self.users[u.index()]
    }

    pub fn user_id(&self, name: &str) -> Option<UserId> {
        self.user_index.get(name).copied()
    }

    /// Users authorized for `step`, ascending.
    pub fn authorized_users(&self, step: StepId) -> &[UserId] {
        &self.auth[step.index()]
    }

    pub fn is_user_authorized(&self, step: StepId, user: UserId) -> bool {
        self.auth[step.index()].binary_search(&user).is_ok()
    }

    /// All `(step, user)` authorization pairs in id order.
    pub fn auth_pairs(&self) -> impl Iterator<Item = (StepId, UserId)> + '_ {
        self.steps
            .iter()
            .flat_map(move |&s| self.auth[s.index()].iter().map(move |&u| (s, u)))
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Same steps, users and authorizations with a different constraint set.
    pub fn with_constraints(&self, constraints: Vec<Constraint>) -> Result<Self> {
        Self::assemble(
            self.dag.clone(),
            self.users.clone(),
            self.user_index.clone(),
            self.auth_pairs().collect::<Vec<_>>(),
            constraints,
        )
    }

    /// Same graph, users and constraints with a different authorization policy.
    pub fn with_auth(&self, auth: impl IntoIterator<Item = (StepId, UserId)>) -> Result<Self> {
        Self::assemble(
            self.dag.clone(),
            self.users.clone(),
            self.user_index.clone(),
            auth,
            self.constraints.clone(),
        )
    }

    /// True when every constraint relation is `=` or `!=`.
    pub fn uses_only_equality_relations(&self) -> bool {
        self.constraints.iter().all(|c| c.relation.is_equality_kind())
    }

    pub(crate) fn check_plan_domain(&self, plan: &Plan) -> Result<()> {
        if plan.len() != self.dag.len() {
            return Err(contract(format!(
                "plan covers {} nodes but the schema has {}",
                plan.len(),
                self.dag.len()
            )));
        }
        for s in self.dag.nodes() {
            let assigned = plan.get(s).is_some();
            let processing = self.dag.kind(s).is_processing();
            if assigned != processing {
                return Err(contract(format!(
                    "plan domain mismatch at `{}`",
                    self.dag.name(s)
                )));
            }
            if let Some(u) = plan.get(s) {
                if u.index() >= self.users.len() {
                    return Err(contract(format!("plan assigns unknown user #{}", u.index())));
                }
            }
        }
        Ok(())
    }

    /// Render a constraint in the text-format syntax.
    pub fn display_constraint(&self, c: &Constraint) -> String {
        let scope = |s: &[StepId]| -> String {
            if s.len() == 1 {
                self.step_name(s[0]).to_string()
            } else {
                let names: Vec<&str> = s.iter().map(|&x| self.step_name(x)).collect();
                format!("{{{}}}", names.join(", "))
            }
        };
        let head = match &c.relation {
            UserRelation::Diagonal => "eq".to_string(),
            UserRelation::NotDiagonal => "ne".to_string(),
            UserRelation::Explicit(r) => format!("rel {}", r.name),
        };
        format!("{head}({}, {})", scope(&c.scope1), scope(&c.scope2))
    }

    /// Render a plan as `step -> user` pairs in step order.
    pub fn plan_pairs(&self, plan: &Plan) -> Vec<(String, String)> {
        plan.iter()
            .map(|(s, u)| (self.step_name(s).to_string(), self.user_name(u).to_string()))
            .collect()
    }
}

/// Name-based builder for schemas.
#[derive(Clone, Debug, Default)]
pub struct SchemaBuilder {
    steps: Vec<String>,
    edges: Vec<(String, String)>,
    users: Vec<String>,
    auth: Vec<(String, String)>,
    relations: BTreeMap<String, Vec<(String, String)>>,
    constraints: Vec<(RelationRef, Vec<String>, Vec<String>)>,
}

/// How a builder constraint names its relation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RelationRef {
    Eq,
    Ne,
    Named(String),
}

impl SchemaBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(mut self, name: impl Into<String>) -> Self {
        self.steps.push(name.into());
        self
    }

    pub fn steps<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.steps.extend(names.into_iter().map(Into::into));
        self
    }

    pub fn edge(mut self, from: impl Into<String>, to: impl Into<String>) -> Self {
        self.edges.push((from.into(), to.into()));
        self
    }

    pub fn users<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.users.extend(names.into_iter().map(Into::into));
        self
    }

    pub fn authorize(mut self, step: impl Into<String>, user: impl Into<String>) -> Self {
        self.auth.push((step.into(), user.into()));
        self
    }

    /// Authorize every declared user for every declared step.
    pub fn authorize_all(mut self) -> Self {
        for s in &self.steps {
            for u in &self.users {
                self.auth.push((s.clone(), u.clone()));
            }
        }
        self
    }

    pub fn relation<A: Into<String>, B: Into<String>>(
        mut self,
        name: impl Into<String>,
        pairs: impl IntoIterator<Item = (A, B)>,
    ) -> Self {
        self.relations.insert(
            name.into(),
            pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect(),
        );
        self
    }

    pub fn constraint<A: Into<String>, B: Into<String>>(
        mut self,
        relation: RelationRef,
        scope1: impl IntoIterator<Item = A>,
        scope2: impl IntoIterator<Item = B>,
    ) -> Self {
        self.constraints.push((
            relation,
            scope1.into_iter().map(Into::into).collect(),
            scope2.into_iter().map(Into::into).collect(),
        ));
        self
    }

    pub fn eq(self, a: impl Into<String>, b: impl Into<String>) -> Self {
        self.constraint(RelationRef::Eq, [a.into()], [b.into()])
    }

    pub fn ne(self, a: impl Into<String>, b: impl Into<String>) -> Self {
        self.constraint(RelationRef::Ne, [a.into()], [b.into()])
    }

    pub fn build(self) -> Result<WorkflowSchema> {
        let dag = self.build_dag()?;
        let user_of = |name: &str| -> Result<UserId> {
            self.users
                .iter()
                .position(|u| u == name)
                .map(UserId::new)
                .ok_or_else(|| invalid(format!("unknown user `{name}`")))
        };
        let step_of = |name: &str| -> Result<StepId> {
            dag.id(name)
                .ok_or_else(|| invalid(format!("unknown step `{name}`")))
        };
        let mut relations = HashMap::new();
        for (name, pairs) in &self.relations {
            let pairs = pairs
                .iter()
                .map(|(a, b)| Ok((user_of(a)?, user_of(b)?)))
                .collect::<Result<Vec<_>>>()?;
            relations.insert(name.clone(), UserRelation::explicit(name.clone(), pairs));
        }
        let auth = self
            .auth
            .iter()
            .map(|(s, u)| Ok((step_of(s)?, user_of(u)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut constraints = Vec::new();
        for (rel, s1, s2) in &self.constraints {
            let relation = match rel {
                RelationRef::Eq => UserRelation::Diagonal,
                RelationRef::Ne => UserRelation::NotDiagonal,
                RelationRef::Named(n) => relations
                    .get(n)
                    .cloned()
                    .ok_or_else(|| invalid(format!("unknown relation `{n}`")))?,
            };
            let s1 = s1.iter().map(|s| step_of(s)).collect::<Result<Vec<_>>>()?;
            let s2 = s2.iter().map(|s| step_of(s)).collect::<Result<Vec<_>>>()?;
            constraints.push(Constraint::new(relation, s1, s2)?);
        }
        WorkflowSchema::new(dag, self.users.clone(), auth, constraints)
    }

    fn build_dag(&self) -> Result<StepDag> {
        let index: HashMap<&str, usize> = self
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|(a, b)| {
                let a = index
                    .get(a.as_str())
                    .ok_or_else(|| invalid(format!("unknown step `{a}`")))?;
                let b = index
                    .get(b.as_str())
                    .ok_or_else(|| invalid(format!("unknown step `{b}`")))?;
                Ok((StepId::new(*a), StepId::new(*b)))
            })
            .collect::<Result<Vec<_>>>()?;
        StepDag::new(self.steps.iter().cloned(), edges)
    }
}
