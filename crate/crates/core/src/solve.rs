//! Decision procedures for WSP.
//!
//! [`solve_naive`] tries every plan and is the reference oracle.
//! [`solve_fpt`] handles `=`/`!=` constraints of every type: it expands the
//! constraint set into simple expressions and solves each one as a Type 1
//! instance by merging `=`-connected steps, setting aside steps with enough
//! users, and backtracking over the rest. Its running time grows with the
//! number of steps and constraints, not with `n^k`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use log::{debug, warn};
use rayon::prelude::*;

use crate::error::{contract, Error, Resource, Result};
use crate::expr::{enumerate_simple_expressions, nth_simple_expression, to_cnf, ConstraintExpression};
use crate::model::{
    is_authorized, is_valid, Constraint, ConstraintType, Plan, StepDag, StepId, UserId,
    UserRelation, WorkflowSchema,
};
use crate::reduce::{complete_free, merge_equal_steps, split_rich, Blocks};

/// Search limits. Exceeding one is an error, never a silent UNSAT.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolverConfig {
    pub max_plans: u64,
    pub max_expressions: u64,
    pub max_partitions: u64,
    /// Schedules enumerated by the ordered solver.
    pub max_extensions: u64,
    /// Worker threads for independent sub-searches; 1 keeps runs reproducible.
    pub threads: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_plans: 10_000_000,
            max_expressions: 1 << 24,
            max_partitions: bell(12) as u64,
            max_extensions: 1 << 20,
            threads: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Status {
    Sat,
    Unsat,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Sat => "SAT",
            Status::Unsat => "UNSAT",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SolveStats {
    /// Full plans (naive) or single step-user placements (search) tried.
    pub plans_examined: u64,
    pub expressions_examined: u64,
    pub partitions_examined: u64,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolveResult {
    pub status: Status,
    /// Present exactly when `status` is SAT.
    pub witness: Option<Plan>,
    pub stats: SolveStats,
}

impl SolveResult {
    pub fn is_sat(&self) -> bool {
        self.status == Status::Sat
    }

    fn sat(plan: Plan, stats: SolveStats) -> Self {
        SolveResult {
            status: Status::Sat,
            witness: Some(plan),
            stats,
        }
    }

    fn unsat(stats: SolveStats) -> Self {
        SolveResult {
            status: Status::Unsat,
            witness: None,
            stats,
        }
    }
}

/// Shared counter against a cap.
pub(crate) struct Budget {
    used: AtomicU64,
    cap: u64,
    resource: Resource,
}

impl Budget {
    pub(crate) fn new(cap: u64, resource: Resource) -> Self {
        Budget {
            used: AtomicU64::new(0),
            cap,
            resource,
        }
    }

    pub(crate) fn charge(&self, n: u64) -> Result<()> {
        let now = self.used.fetch_add(n, Ordering::Relaxed).saturating_add(n);
        if now > self.cap {
            return Err(Error::ResourceLimit {
                resource: self.resource,
                requested: now as u128,
                cap: self.cap as u128,
            });
        }
        Ok(())
    }

    pub(crate) fn used(&self) -> u64 {
        self.used.load(Ordering::Relaxed).min(self.cap)
    }
}

/// Run `f(0..n)` and return the lowest index with `Some`. Errors stop the
/// search; in parallel mode the reported error may come from any index.
pub(crate) fn first_success<T, F>(threads: usize, n: u64, f: F) -> Result<Option<(u64, T)>>
where
    T: Send,
    F: Fn(u64) -> Result<Option<T>> + Sync + Send,
{
    if threads <= 1 || n <= 1 {
        for i in 0..n {
            if let Some(t) = f(i)? {
                return Ok(Some((i, t)));
            }
        }
        return Ok(None);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| contract(format!("cannot start worker threads: {e}")))?;
    pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| f(i).map(|o| o.map(|t| (i, t))).transpose())
            .find_map_first(|r| r)
            .transpose()
    })
}

/// Bell number `B(k)`, saturating.
pub fn bell(k: usize) -> u128 {
    // Bell triangle
    let mut row = vec![1u128];
    for _ in 0..k {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().unwrap());
        for &x in &row {
            let v = next.last().unwrap().saturating_add(x);
            next.push(v);
        }
        row = next;
    }
    row[0]
}

fn saturating_pow(base: u128, exp: usize) -> u128 {
    let mut acc = 1u128;
    for _ in 0..exp {
        acc = acc.saturating_mul(base);
    }
    acc
}

/// Try every plan, first step most significant, users in id order.
pub fn solve_naive(schema: &WorkflowSchema, config: &SolverConfig) -> Result<SolveResult> {
    let start = Instant::now();
    let steps = schema.steps();
    let k = steps.len();
    let n = schema.user_count();
    let total = saturating_pow(n as u128, k);
    if total > config.max_plans as u128 {
        return Err(Error::ResourceLimit {
            resource: Resource::Plans,
            requested: total,
            cap: config.max_plans as u128,
        });
    }
    let mut stats = SolveStats::default();
    if n == 0 && k > 0 {
        stats.elapsed = start.elapsed();
        return Ok(SolveResult::unsat(stats));
    }
    let mut digits = vec![0usize; k];
    let mut plan = Plan::from_pairs(schema.dag(), steps.iter().map(|&s| (s, UserId::new(0))));
    loop {
        stats.plans_examined += 1;
        if is_valid(schema, &plan)? {
            stats.elapsed = start.elapsed();
            return Ok(SolveResult::sat(plan, stats));
        }
        // advance the odometer, last step fastest
        let mut i = k;
        loop {
            if i == 0 {
                stats.elapsed = start.elapsed();
                return Ok(SolveResult::unsat(stats));
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < n {
                plan.set(steps[i], UserId::new(digits[i]));
                break;
            }
            digits[i] = 0;
            plan.set(steps[i], UserId::new(0));
        }
    }
}

/// Backtracking over the core blocks in index order, users in id order.
fn search_core(blocks: &Blocks, core: &[usize], budget: &Budget) -> Result<Option<Vec<Option<UserId>>>> {
    let k = blocks.members.len();
    let mut is_core = vec![false; k];
    for &b in core {
        is_core[b] = true;
    }
    // for each core block, the core neighbours assigned before it
    let mut earlier = vec![Vec::new(); k];
    for &(a, b) in &blocks.ne {
        if is_core[a] && is_core[b] {
            earlier[a.max(b)].push(a.min(b));
        }
    }
    let mut assignment = vec![None; k];

    fn go(
        depth: usize,
        blocks: &Blocks,
        core: &[usize],
        earlier: &[Vec<usize>],
        assignment: &mut [Option<UserId>],
        budget: &Budget,
    ) -> Result<bool> {
        let Some(&b) = core.get(depth) else {
            return Ok(true);
        };
        for &u in &blocks.auth[b] {
            budget.charge(1)?;
            if earlier[b].iter().any(|&p| assignment[p] == Some(u)) {
                continue;
            }
            assignment[b] = Some(u);
            if go(depth + 1, blocks, core, earlier, assignment, budget)? {
                return Ok(true);
            }
        }
        assignment[b] = None;
        Ok(false)
    }

    if go(0, blocks, core, &earlier, &mut assignment, budget)? {
        Ok(Some(assignment))
    } else {
        Ok(None)
    }
}

/// Solve a dense Type 1 `=`/`!=` instance over steps `0..auth.len()`.
/// Returns one user per step.
pub(crate) fn solve_type1(
    auth: &[&[UserId]],
    eq: &[(usize, usize)],
    ne: &[(usize, usize)],
    budget: &Budget,
) -> Result<Option<Vec<UserId>>> {
    let blocks = match merge_equal_steps(auth, eq, ne) {
        Ok(b) => b,
        Err(_) => return Ok(None),
    };
    let split = split_rich(&blocks);
    let Some(mut assignment) = search_core(&blocks, &split.core, budget)? else {
        return Ok(None);
    };
    complete_free(&blocks, &split, &mut assignment);
    Ok(Some(
        blocks
            .block_of
            .iter()
            .map(|&b| assignment[b].expect("every block assigned"))
            .collect(),
    ))
}

fn require_equality_relations(constraints: &[Constraint], context: &str) -> Result<()> {
    for c in constraints {
        if let UserRelation::Explicit(r) = c.relation() {
            return Err(Error::UnsupportedRelation {
                relation: r.name().to_string(),
                context: context.to_string(),
            });
        }
    }
    Ok(())
}

/// Warn when the constraint counts exceed the worst-case number of distinct
/// Type 2 (`k 2^(k-1)`) or Type 3 (`2^(2k)`) constraints.
fn warn_on_constraint_counts(schema: &WorkflowSchema) {
    let k = schema.step_count() as u32;
    let (mut t2, mut t3) = (0u128, 0u128);
    for c in schema.constraints() {
        match c.constraint_type() {
            ConstraintType::Type2 => t2 += 1,
            ConstraintType::Type3 => t3 += 1,
            ConstraintType::Type1 => {}
        }
    }
    let t2_cap = (k as u128).saturating_mul(1u128.checked_shl(k.saturating_sub(1)).unwrap_or(u128::MAX));
    let t3_cap = 1u128.checked_shl(2 * k).unwrap_or(u128::MAX);
    if t2 > t2_cap {
        warn!("{t2} Type 2 constraints on {k} steps; at most {t2_cap} are distinct");
    }
    if t3 > t3_cap {
        warn!("{t3} Type 3 constraints on {k} steps; at most {t3_cap} are distinct");
    }
}

/// Solve a schema whose relations are all `=` or `!=`.
pub fn solve_fpt(schema: &WorkflowSchema, config: &SolverConfig) -> Result<SolveResult> {
    let start = Instant::now();
    require_equality_relations(schema.constraints(), "the FPT solver needs `=`/`!=`")?;
    warn_on_constraint_counts(schema);

    let steps = schema.steps();
    let dense: BTreeMap<StepId, usize> = steps.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let auth: Vec<&[UserId]> = steps.iter().map(|&s| schema.authorized_users(s)).collect();
    let cnf = to_cnf(schema.constraints());
    let total = enumerate_simple_expressions(&cnf, config.max_expressions)?.len_total();
    debug!("{} simple expressions over {} steps", total, steps.len());

    let budget = Budget::new(config.max_plans, Resource::Plans);
    let tried = AtomicU64::new(0);
    let found = first_success(config.threads, total, |i| {
        tried.fetch_add(1, Ordering::Relaxed);
        let simple = nth_simple_expression(&cnf, i);
        let (mut eq, mut ne) = (Vec::new(), Vec::new());
        for lit in &simple.literals {
            let pair = (dense[&lit.s1], dense[&lit.s2]);
            match lit.relation {
                UserRelation::Diagonal => eq.push(pair),
                _ => ne.push(pair),
            }
        }
        solve_type1(&auth, &eq, &ne, &budget)
    })?;

    let mut stats = SolveStats {
        plans_examined: budget.used(),
        expressions_examined: match &found {
            Some((i, _)) if config.threads <= 1 => i + 1,
            _ => tried.load(Ordering::Relaxed),
        },
        ..SolveStats::default()
    };
    let result = match found {
        Some((_, users)) => {
            let plan = Plan::from_pairs(schema.dag(), steps.iter().copied().zip(users));
            if !is_valid(schema, &plan)? {
                return Err(contract("internal: search produced an invalid plan"));
            }
            SolveResult::sat(plan, stats.clone())
        }
        None => SolveResult::unsat(stats.clone()),
    };
    stats.elapsed = start.elapsed();
    Ok(SolveResult { stats, ..result })
}

/// `solve_fpt` when every relation is `=`/`!=`, otherwise `solve_naive`.
pub fn solve_auto(schema: &WorkflowSchema, config: &SolverConfig) -> Result<SolveResult> {
    if schema.uses_only_equality_relations() {
        solve_fpt(schema, config)
    } else {
        solve_naive(schema, config)
    }
}

/// Restricted growth strings of length `k` in lexicographic order.
struct Partitions {
    rgs: Vec<usize>,
    // max of rgs[..=i]
    prefix_max: Vec<usize>,
    started: bool,
    done: bool,
}

impl Partitions {
    fn new(k: usize) -> Self {
        Partitions {
            rgs: vec![0; k],
            prefix_max: vec![0; k],
            started: false,
            done: false,
        }
    }

    fn advance(&mut self) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(&self.rgs);
        }
        let k = self.rgs.len();
        let mut i = k;
        while i > 1 {
            i -= 1;
            if self.rgs[i] <= self.prefix_max[i - 1] {
                self.rgs[i] += 1;
                self.prefix_max[i] = self.prefix_max[i - 1].max(self.rgs[i]);
                for j in i + 1..k {
                    self.rgs[j] = 0;
                    self.prefix_max[j] = self.prefix_max[i];
                }
                return Some(&self.rgs);
            }
        }
        self.done = true;
        None
    }
}

/// Solve using an expression over `(=, s, s')` literals, possibly negated.
///
/// Every plan induces a partition of the steps (same block iff same user)
/// that fixes the truth value of every literal. Partitions are enumerated;
/// for each one satisfying `e` the blocks are given pairwise distinct users
/// and the result is checked against `e`. The schema's own constraint list
/// is ignored: `e` takes its place.
pub fn solve_negative(
    schema: &WorkflowSchema,
    e: &ConstraintExpression,
    config: &SolverConfig,
) -> Result<SolveResult> {
    let start = Instant::now();
    let steps = schema.steps();
    let k = steps.len();
    let mut bad = None;
    e.for_each_primitive(&mut |p| {
        if bad.is_none() && p.relation != UserRelation::Diagonal {
            bad = Some(p.relation.to_string());
        }
    });
    if let Some(relation) = bad {
        return Err(Error::UnsupportedRelation {
            relation,
            context: "partition search takes `(=, s, s')` literals only".into(),
        });
    }
    let count = bell(k);
    if count > config.max_partitions as u128 {
        return Err(Error::ResourceLimit {
            resource: Resource::Partitions,
            requested: count,
            cap: config.max_partitions as u128,
        });
    }
    let dense: BTreeMap<StepId, usize> = steps.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    for p in e.primitives() {
        if !dense.contains_key(&p.s1) || !dense.contains_key(&p.s2) {
            return Err(contract("expression names a step outside the schema"));
        }
    }
    let auth: Vec<&[UserId]> = steps.iter().map(|&s| schema.authorized_users(s)).collect();
    let n = schema.user_count();
    let budget = Budget::new(config.max_plans, Resource::Plans);
    let mut stats = SolveStats::default();
    let mut parts = Partitions::new(k);
    while let Some(rgs) = parts.advance() {
        stats.partitions_examined += 1;
        let blocks = rgs.iter().max().map_or(0, |m| m + 1);
        if blocks > n {
            continue;
        }
        let holds = e.eval_with(&mut |p| Ok(rgs[dense[&p.s1]] == rgs[dense[&p.s2]]))?;
        if !holds {
            continue;
        }
        let mut first = vec![usize::MAX; blocks];
        let mut eq = Vec::new();
        for (i, &b) in rgs.iter().enumerate() {
            if first[b] == usize::MAX {
                first[b] = i;
            } else {
                eq.push((first[b], i));
            }
        }
        let mut ne = Vec::new();
        for a in 0..blocks {
            for b in a + 1..blocks {
                ne.push((first[a], first[b]));
            }
        }
        if let Some(users) = solve_type1(&auth, &eq, &ne, &budget)? {
            let plan = Plan::from_pairs(schema.dag(), steps.iter().copied().zip(users));
            if is_authorized(schema, &plan)? && e.eval(&plan)? {
                stats.plans_examined = budget.used();
                stats.elapsed = start.elapsed();
                return Ok(SolveResult::sat(plan, stats));
            }
        }
    }
    stats.plans_examined = budget.used();
    stats.elapsed = start.elapsed();
    Ok(SolveResult::unsat(stats))
}

/// Answer of [`min_users`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinUsers {
    /// Least number of fully authorized users admitting a valid plan.
    pub users: Option<usize>,
    pub solver_calls: usize,
}

/// Fully authorized schema on `dag` with users `m1..mm`.
pub fn full_authorization_schema(
    dag: &StepDag,
    constraints: &[Constraint],
    m: usize,
) -> Result<WorkflowSchema> {
    let users: Vec<String> = (1..=m).map(|i| format!("m{i}")).collect();
    let auth: Vec<(StepId, UserId)> = dag
        .processing_steps()
        .flat_map(|s| (0..m).map(move |u| (s, UserId::new(u))))
        .collect();
    WorkflowSchema::new(dag.clone(), users, auth, constraints.to_vec())
}

/// Binary search for the least number of users, each authorized for every
/// step, that makes the constraints satisfiable.
pub fn min_users(dag: &StepDag, constraints: &[Constraint], config: &SolverConfig) -> Result<MinUsers> {
    require_equality_relations(constraints, "minimum-user search needs `=`/`!=`")?;
    let k = dag.processing_steps().count();
    if k == 0 {
        return Ok(MinUsers {
            users: Some(0),
            solver_calls: 0,
        });
    }
    let mut calls = 0;
    let mut sat = |m: usize| -> Result<bool> {
        calls += 1;
        Ok(solve_fpt(&full_authorization_schema(dag, constraints, m)?, config)?.is_sat())
    };
    if !sat(k)? {
        return Ok(MinUsers {
            users: None,
            solver_calls: calls,
        });
    }
    let (mut lo, mut hi) = (1, k);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if sat(mid)? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(MinUsers {
        users: Some(lo),
        solver_calls: calls,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Grant {
    /// The request can be granted; the plan completes it validly.
    Allow(Plan),
    Deny,
}

/// May `user` perform `step` now, given the steps already performed?
///
/// Builds the instance in which performed steps and the requested step are
/// pinned to their users and every other step keeps its authorizations,
/// then solves it.
pub fn check_step_grant(
    schema: &WorkflowSchema,
    partial: &BTreeMap<StepId, UserId>,
    step: StepId,
    user: UserId,
    config: &SolverConfig,
) -> Result<Grant> {
    let dag = schema.dag();
    let known = |s: StepId| s.index() < dag.len() && dag.kind(s).is_processing();
    if !known(step) {
        return Err(contract("requested step is not a processing step"));
    }
    if user.index() >= schema.user_count() {
        return Err(contract("requested user is unknown"));
    }
    if partial.contains_key(&step) {
        return Err(contract(format!("step `{}` has already been performed", dag.name(step))));
    }
    for (&s, &u) in partial {
        if !known(s) {
            return Err(contract("partial plan names a non-processing step"));
        }
        if !schema.is_user_authorized(s, u) {
            return Err(contract(format!(
                "partial plan is not authorized at `{}`",
                dag.name(s)
            )));
        }
    }
    if let Some(p) = dag
        .processing_predecessors(step)
        .into_iter()
        .find(|p| !partial.contains_key(p))
    {
        return Err(contract(format!(
            "step `{}` is not ready: `{}` has not been performed",
            dag.name(step),
            dag.name(p)
        )));
    }
    if !schema.is_user_authorized(step, user) {
        return Err(contract(format!(
            "user `{}` is not authorized for `{}`",
            schema.user_name(user),
            dag.name(step)
        )));
    }
    let mut auth = Vec::new();
    for &s in schema.steps() {
        if let Some(&u) = partial.get(&s) {
            auth.push((s, u));
        } else if s == step {
            auth.push((s, user));
        } else {
            auth.extend(schema.authorized_users(s).iter().map(|&u| (s, u)));
        }
    }
    let pinned = schema.with_auth(auth)?;
    let result = solve_auto(&pinned, config)?;
    Ok(match result.witness {
        Some(plan) => Grant::Allow(plan),
        None => Grant::Deny,
    })
}
