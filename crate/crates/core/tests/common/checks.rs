//! One function per cross-check; each returns a description of the first
//! disagreement it finds.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use wsp_core::dsl::{serialize, SchemaDocument};
use wsp_core::expr::negate_to_equality_form;
use wsp_core::model::is_valid;
use wsp_core::owsp::{linear_extensions, satisfies_ordered, solve_owsp, OwspMode};
use wsp_core::reduce::{complete_free_steps, prune_rich_steps, reduce_eq, Reduction};
use wsp_core::solve::{
    check_step_grant, full_authorization_schema, min_users, solve_auto, solve_fpt, solve_naive,
    solve_negative, Grant,
};
use wsp_core::violate::{find_violating_plan, prune_constraints, violation_expression};
use wsp_core::{Constraint, Plan, SolverConfig, StepDag, StepId, WorkflowSchema};

use super::*;

pub type Check = Result<(), String>;

pub fn dump(schema: &WorkflowSchema) -> String {
    SchemaDocument::from_schema(schema)
        .map(|d| serialize(&d))
        .unwrap_or_else(|e| format!("<unprintable: {e}>"))
}

fn fail<T>(what: impl std::fmt::Display, schema: &WorkflowSchema) -> Result<T, String> {
    Err(format!("{what}\n{}", dump(schema)))
}

fn e2s(e: wsp_core::Error) -> String {
    e.to_string()
}

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

pub fn fpt_matches_naive(schema: &WorkflowSchema) -> Check {
    let truth = oracle_sat(schema);
    let naive = solve_naive(schema, &cfg()).map_err(e2s)?;
    let fpt = solve_fpt(schema, &cfg()).map_err(e2s)?;
    if naive.is_sat() != truth {
        return fail(format!("naive says {}, brute force says {truth}", naive.status), schema);
    }
    if fpt.status != naive.status {
        return fail(format!("fpt {} but naive {}", fpt.status, naive.status), schema);
    }
    for (who, r) in [("naive", &naive), ("fpt", &fpt)] {
        if let Some(w) = &r.witness {
            if !is_valid(schema, w).map_err(e2s)? || !oracle_valid(schema, w) {
                return fail(format!("{who} witness is not valid"), schema);
            }
        }
    }
    Ok(())
}

/// Sound merging: same answer as brute force, witnesses lift, and a valid
/// plan of the original collapses to a valid plan of the merged schema.
pub fn reduction_is_sound(schema: &WorkflowSchema) -> Check {
    let truth = oracle_sat(schema);
    let merged = match reduce_eq(schema).map_err(e2s)? {
        Reduction::Unsat(reason) => {
            if truth {
                return fail(format!("reduced to UNSAT ({reason:?}) but satisfiable"), schema);
            }
            return Ok(());
        }
        Reduction::Merged(m) => m,
    };
    let r = solve_naive(&merged.schema, &cfg()).map_err(e2s)?;
    if r.is_sat() != truth {
        return fail(format!("merged schema {} but original sat = {truth}", r.status), schema);
    }
    if let Some(w) = &r.witness {
        let lifted = merged.lift(schema, w).map_err(e2s)?;
        if !oracle_valid(schema, &lifted) {
            return fail("lifted plan is not valid", schema);
        }
    }
    if let Some(p) = all_plans(schema.step_count(), schema.user_count()).find(|p| oracle_valid(schema, p)) {
        let mut v = vec![None; merged.schema.dag().len()];
        for (b, members) in &merged.members {
            v[b.index()] = p.get(members[0]);
        }
        if !is_valid(&merged.schema, &Plan::new(v)).map_err(e2s)? {
            return fail("valid plan does not collapse to a valid merged plan", schema);
        }
    }
    // the core keeps satisfiability, and a core plan extends to everything
    let split = prune_rich_steps(&merged).map_err(e2s)?;
    let core_sat = oracle_sat(&split.core.schema);
    if core_sat != truth {
        return fail(format!("core sat = {core_sat}, merged sat = {truth}"), schema);
    }
    if core_sat {
        let core_plan = solve_naive(&split.core.schema, &cfg()).map_err(e2s)?.witness.unwrap();
        let full = complete_free_steps(&merged, &split, &core_plan).map_err(e2s)?;
        if !is_valid(&merged.schema, &full).map_err(e2s)? {
            return fail("completed free steps give an invalid plan", schema);
        }
    }
    Ok(())
}

pub fn negative_matches_naive(schema: &WorkflowSchema) -> Check {
    let e = negate_to_equality_form(schema.constraints()).map_err(e2s)?;
    let neg = solve_negative(schema, &e, &cfg()).map_err(e2s)?;
    let naive = solve_naive(schema, &cfg()).map_err(e2s)?;
    if neg.status != naive.status {
        return fail(format!("negative {} but naive {}", neg.status, naive.status), schema);
    }
    if let Some(w) = &neg.witness {
        if !oracle_valid(schema, w) {
            return fail("negative-form witness is not valid", schema);
        }
    }
    Ok(())
}

/// Truth of `plan violates c` against the expression, for every plan.
pub fn violation_expression_is_exact(schema: &WorkflowSchema) -> Check {
    let n = schema.user_count();
    for c in schema.constraints() {
        let e = violation_expression(c, n);
        for p in all_plans(schema.step_count(), n) {
            if e.eval(&p).map_err(e2s)? == oracle_satisfies(&p, c) {
                return fail(format!("violation expression wrong for {}", schema.display_constraint(c)), schema);
            }
        }
    }
    Ok(())
}

pub fn violation_search_matches_oracle(schema: &WorkflowSchema) -> Check {
    let n = schema.user_count();
    let mut truth = None;
    'plans: for p in all_plans(schema.step_count(), n) {
        if !oracle_authorized(schema, &p) {
            continue;
        }
        for (i, c) in schema.constraints().iter().enumerate() {
            if !oracle_satisfies(&p, c) {
                truth = Some(i);
                break 'plans;
            }
        }
    }
    let v = find_violating_plan(schema, &cfg()).map_err(e2s)?;
    if v.result.is_sat() != truth.is_some() {
        return fail(format!("find_violating_plan {} but oracle found {truth:?}", v.result.status), schema);
    }
    if let (Some(w), Some(i)) = (&v.result.witness, v.constraint) {
        if !oracle_authorized(schema, w) || oracle_satisfies(w, &schema.constraints()[i]) {
            return fail("violating witness does not violate its constraint", schema);
        }
    }
    let (pruned, _) = prune_constraints(schema, &cfg()).map_err(e2s)?;
    let before = oracle_sat(schema);
    let after = solve_auto(&pruned, &cfg()).map_err(e2s)?.is_sat();
    if before != after || oracle_sat(&pruned) != before {
        return fail(format!("pruning changed satisfiability: {before} -> {after}"), schema);
    }
    Ok(())
}

/// Type 1 `=`/`!=` constraints that only point forward in the index order,
/// with both directions present on incomparable steps.
pub fn random_well_formed(rng: &mut ChaCha8Rng, p: &Params) -> WorkflowSchema {
    let k = rng.gen_range(p.k.0.max(1)..=p.k.1);
    let n = rng.gen_range(p.n.0..=p.n.1);
    let c = rng.gen_range(p.c.0..=p.c.1);
    let edges = random_edges(rng, k, p.edge_density);
    let auth = random_auth(rng, k, n, p.auth_density);
    let dag = StepDag::new((0..k).map(|i| format!("s{i}")), edges.iter().map(|&(a, b)| (StepId::new(a), StepId::new(b)))).unwrap();
    let mut cs = Vec::new();
    for _ in 0..c {
        if k < 2 {
            break;
        }
        let a = rng.gen_range(0..k - 1);
        let b = rng.gen_range(a + 1..k);
        let rel = random_relation(rng);
        let (sa, sb) = (StepId::new(a), StepId::new(b));
        cs.push(Constraint::type1(rel.clone(), sa, sb));
        if dag.incomparable(sa, sb) {
            cs.push(Constraint::type1(rel, sb, sa));
        }
    }
    build(k, &edges, n, &auth, cs)
}

/// Random Type 1 constraints in either direction between incomparable
/// steps and forward between comparable ones.
pub fn random_ordered(rng: &mut ChaCha8Rng, p: &Params) -> WorkflowSchema {
    let k = rng.gen_range(p.k.0.max(2)..=p.k.1.max(2));
    let n = rng.gen_range(p.n.0..=p.n.1);
    let c = rng.gen_range(p.c.0..=p.c.1);
    let edges = random_edges(rng, k, p.edge_density);
    let auth = random_auth(rng, k, n, p.auth_density);
    let dag = StepDag::new((0..k).map(|i| format!("s{i}")), edges.iter().map(|&(a, b)| (StepId::new(a), StepId::new(b)))).unwrap();
    let mut cs = Vec::new();
    for _ in 0..c {
        let a = rng.gen_range(0..k);
        let b = rng.gen_range(0..k);
        let (sa, sb) = (StepId::new(a), StepId::new(b));
        if dag.lt(sb, sa) {
            continue;
        }
        cs.push(Constraint::type1(random_relation(rng), sa, sb));
    }
    build(k, &edges, n, &auth, cs)
}

/// Under a well-formed schema the schedule does not matter: a plan's
/// ordered validity is the same for every schedule and equals plain validity.
pub fn schedule_independence(schema: &WorkflowSchema) -> Check {
    let dag = schema.dag();
    let schedules = linear_extensions(dag, 1 << 16).map_err(e2s)?;
    for p in all_plans(schema.step_count(), schema.user_count()) {
        let plain = schema.constraints().iter().all(|c| oracle_satisfies(&p, c));
        for sched in &schedules {
            let mut ordered = true;
            for c in schema.constraints() {
                ordered &= satisfies_ordered(sched, &p, c).map_err(e2s)?;
            }
            if ordered != plain {
                return fail(format!("schedule {} changes validity", sched.display(dag)), schema);
            }
        }
    }
    Ok(())
}

/// Existential and universal ordered satisfiability against a direct
/// enumeration of schedules and plans.
pub fn owsp_matches_oracle(schema: &WorkflowSchema, well_formed: bool) -> Check {
    let orders = oracle_linear_extensions(schema.dag());
    let lib = linear_extensions(schema.dag(), 1 << 16).map_err(e2s)?;
    if lib.len() != orders.len() {
        return fail(format!("{} schedules listed, {} exist", lib.len(), orders.len()), schema);
    }
    let plans: Vec<Plan> = all_plans(schema.step_count(), schema.user_count())
        .filter(|p| oracle_authorized(schema, p))
        .collect();
    let admits = |order: &Vec<usize>| {
        plans
            .iter()
            .any(|p| schema.constraints().iter().all(|c| oracle_satisfies_ordered(order, p, c)))
    };
    let exists = orders.iter().any(admits);
    let all = orders.iter().all(admits);
    let ex = solve_owsp(schema, OwspMode::Exists, &cfg()).map_err(e2s)?;
    let al = solve_owsp(schema, OwspMode::All, &cfg()).map_err(e2s)?;
    if ex.holds != exists || al.holds != all {
        return fail(
            format!("EXISTS {} / ALL {} but oracle {exists} / {all}", ex.holds, al.holds),
            schema,
        );
    }
    if let (Some(s), Some(p)) = (&ex.schedule, &ex.plan) {
        let order: Vec<usize> = s.steps.iter().map(|s| s.index()).collect();
        if !oracle_authorized(schema, p) || !schema.constraints().iter().all(|c| oracle_satisfies_ordered(&order, p, c)) {
            return fail("EXISTS witness does not hold", schema);
        }
    }
    let wsp = oracle_sat(schema);
    if wsp && !al.holds {
        return fail("plain WSP satisfiable but not every schedule is", schema);
    }
    if well_formed && ex.holds != wsp {
        return fail(format!("well-formed: EXISTS {} but WSP {wsp}", ex.holds), schema);
    }
    Ok(())
}

/// Satisfiability only ever turns on as users are added, the binary search
/// finds the least count, and it needs few solver calls.
pub fn min_users_is_least(dag: &StepDag, cs: &[Constraint]) -> Check {
    let k = dag.processing_steps().count();
    let sat_at = |m: usize| -> Result<bool, String> {
        let s = full_authorization_schema(dag, cs, m).map_err(e2s)?;
        Ok(oracle_sat(&s))
    };
    let mut first = None;
    for m in 1..=k {
        let now = sat_at(m)?;
        if let (Some(f), false) = (first, now) {
            return Err(format!("SAT with {f} users but not with {m}"));
        }
        if now && first.is_none() {
            first = Some(m);
        }
    }
    let r = min_users(dag, cs, &cfg()).map_err(e2s)?;
    if k > 0 && r.users != first {
        return Err(format!("min_users {:?}, brute force {first:?}", r.users));
    }
    let bound = if k <= 1 { 1 } else { (usize::BITS - (k - 1).leading_zeros()) as usize + 1 };
    if r.solver_calls > bound {
        return Err(format!("{} solver calls for k = {k}", r.solver_calls));
    }
    Ok(())
}

/// A granted request comes with a valid completion; a denied one has none.
pub fn grant_is_exact(rng: &mut ChaCha8Rng, schema: &WorkflowSchema) -> Check {
    let k = schema.step_count();
    // index order is a topological order of the generated graphs
    let done = rng.gen_range(0..k);
    let mut partial = BTreeMap::new();
    for s in 0..done {
        let auth = schema.authorized_users(StepId::new(s));
        partial.insert(StepId::new(s), auth[rng.gen_range(0..auth.len())]);
    }
    let step = StepId::new(done);
    let auth = schema.authorized_users(step);
    let user = auth[rng.gen_range(0..auth.len())];
    let extends = |p: &Plan| p.get(step) == Some(user) && partial.iter().all(|(&s, &u)| p.get(s) == Some(u));
    let truth = all_plans(k, schema.user_count()).any(|p| extends(&p) && oracle_valid(schema, &p));
    let ready = schema.dag().processing_predecessors(step).iter().all(|s| partial.contains_key(s));
    match check_step_grant(schema, &partial, step, user, &cfg()) {
        Err(_) if !ready => Ok(()),
        Err(e) => fail(format!("grant failed: {e}"), schema),
        Ok(_) if !ready => fail("granted a step that is not ready", schema),
        Ok(Grant::Allow(p)) => {
            if !extends(&p) || !oracle_valid(schema, &p) {
                return fail("ALLOW witness does not extend the request validly", schema);
            }
            Ok(())
        }
        Ok(Grant::Deny) if truth => fail("DENY but a valid completion exists", schema),
        Ok(Grant::Deny) => Ok(()),
    }
}

/// Constraint lists with only `=`/`!=` Type 1 pairs, for user-count questions.
pub fn random_template(rng: &mut ChaCha8Rng, k: usize, c: usize) -> (StepDag, Vec<Constraint>) {
    let edges = random_edges(rng, k, 0.3);
    let dag = StepDag::new((0..k).map(|i| format!("s{i}")), edges.iter().map(|&(a, b)| (StepId::new(a), StepId::new(b)))).unwrap();
    let cs = random_constraints(rng, k, c, Shapes::Type1);
    (dag, cs)
}
