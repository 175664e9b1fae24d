//! Random instances and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

pub mod checks;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wsp_core::model::ConstraintType;
use wsp_core::{Constraint, Plan, StepDag, StepId, UserId, UserRelation, WorkflowSchema};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Which constraint shapes a generator may produce.
#[derive(Clone, Copy, Debug)]
pub enum Shapes {
    Type1,
    Mixed,
}

#[derive(Clone, Copy, Debug)]
pub struct Params {
    pub k: (usize, usize),
    pub n: (usize, usize),
    pub c: (usize, usize),
    pub shapes: Shapes,
    /// Chance that a given user is authorized for a given step.
    pub auth_density: f64,
    /// Chance of an edge `i -> j` for each `i < j`.
    pub edge_density: f64,
}

impl Params {
    pub fn small(shapes: Shapes) -> Self {
        Params {
            k: (1, 5),
            n: (1, 4),
            c: (0, 6),
            shapes,
            auth_density: 0.7,
            edge_density: 0.3,
        }
    }
}

pub fn random_edges(rng: &mut ChaCha8Rng, k: usize, p: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            if rng.gen_bool(p) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Every step gets at least one user.
pub fn random_auth(rng: &mut ChaCha8Rng, k: usize, n: usize, p: f64) -> Vec<Vec<usize>> {
    (0..k)
        .map(|_| {
            let mut us: Vec<usize> = (0..n).filter(|_| rng.gen_bool(p)).collect();
            if us.is_empty() {
                us.push(rng.gen_range(0..n));
            }
            us
        })
        .collect()
}

fn random_scope(rng: &mut ChaCha8Rng, k: usize, max: usize) -> Vec<usize> {
    let size = rng.gen_range(1..=max.min(k));
    let mut all: Vec<usize> = (0..k).collect();
    all.shuffle(rng);
    all.truncate(size);
    all.sort_unstable();
    all
}

pub fn random_relation(rng: &mut ChaCha8Rng) -> UserRelation {
    if rng.gen_bool(0.5) {
        UserRelation::Diagonal
    } else {
        UserRelation::NotDiagonal
    }
}

pub fn random_constraints(rng: &mut ChaCha8Rng, k: usize, c: usize, shapes: Shapes) -> Vec<Constraint> {
    (0..c)
        .map(|_| {
            let rel = random_relation(rng);
            let (a, b) = match shapes {
                Shapes::Type1 => (random_scope(rng, k, 1), random_scope(rng, k, 1)),
                Shapes::Mixed => match rng.gen_range(0..3) {
                    0 => (random_scope(rng, k, 1), random_scope(rng, k, 1)),
                    1 => (random_scope(rng, k, 1), random_scope(rng, k, 3)),
                    _ => {
                        let s = random_scope(rng, k, 3);
                        (s.clone(), s)
                    }
                },
            };
            Constraint::new(rel, a.into_iter().map(StepId::new).collect::<Vec<_>>(), b.into_iter().map(StepId::new).collect::<Vec<_>>())
                .unwrap()
        })
        .collect()
}

pub fn build(k: usize, edges: &[(usize, usize)], n: usize, auth: &[Vec<usize>], cs: Vec<Constraint>) -> WorkflowSchema {
    let dag = StepDag::new(
        (0..k).map(|i| format!("s{i}")),
        edges.iter().map(|&(a, b)| (StepId::new(a), StepId::new(b))),
    )
    .unwrap();
    let pairs = auth
        .iter()
        .enumerate()
        .flat_map(|(s, us)| us.iter().map(move |&u| (StepId::new(s), UserId::new(u))));
    WorkflowSchema::new(dag, (0..n).map(|i| format!("u{i}")).collect(), pairs, cs).unwrap()
}

pub fn random_schema(rng: &mut ChaCha8Rng, p: &Params) -> WorkflowSchema {
    let k = rng.gen_range(p.k.0..=p.k.1);
    let n = rng.gen_range(p.n.0..=p.n.1);
    let c = rng.gen_range(p.c.0..=p.c.1);
    let edges = random_edges(rng, k, p.edge_density);
    let auth = random_auth(rng, k, n, p.auth_density);
    let cs = random_constraints(rng, k, c, p.shapes);
    build(k, &edges, n, &auth, cs)
}

/// Odometer over all total plans, authorized or not, last step fastest.
pub fn all_plans(k: usize, n: usize) -> impl Iterator<Item = Plan> {
    let total = (n as u64).pow(k as u32);
    (0..total).map(move |mut i| {
        let mut v = vec![None; k];
        for slot in v.iter_mut().rev() {
            *slot = Some(UserId::new((i % n as u64) as usize));
            i /= n as u64;
        }
        Plan::new(v)
    })
}

pub fn oracle_satisfies(plan: &Plan, c: &Constraint) -> bool {
    c.scope1().iter().any(|&a| {
        c.scope2()
            .iter()
            .any(|&b| c.relation().contains(plan.get(a).unwrap(), plan.get(b).unwrap()))
    })
}

pub fn oracle_authorized(schema: &WorkflowSchema, plan: &Plan) -> bool {
    schema
        .steps()
        .iter()
        .all(|&s| schema.authorized_users(s).contains(&plan.get(s).unwrap()))
}

pub fn oracle_valid(schema: &WorkflowSchema, plan: &Plan) -> bool {
    oracle_authorized(schema, plan) && schema.constraints().iter().all(|c| oracle_satisfies(plan, c))
}

/// Brute force over every plan.
pub fn oracle_sat(schema: &WorkflowSchema) -> bool {
    all_plans(schema.step_count(), schema.user_count()).any(|p| oracle_valid(schema, &p))
}

pub fn only_type1(schema: &WorkflowSchema) -> bool {
    schema
        .constraints()
        .iter()
        .all(|c| c.constraint_type() == ConstraintType::Type1)
}

/// Every permutation of the steps that respects the edges.
pub fn oracle_linear_extensions(dag: &StepDag) -> Vec<Vec<usize>> {
    fn go(dag: &StepDag, placed: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        let k = used.len();
        if placed.len() == k {
            let ok = dag.edges().iter().all(|&(a, b)| {
                let pa = placed.iter().position(|&x| x == a.index()).unwrap();
                let pb = placed.iter().position(|&x| x == b.index()).unwrap();
                pa < pb
            });
            if ok {
                out.push(placed.clone());
            }
            return;
        }
        for s in 0..k {
            if !used[s] {
                used[s] = true;
                placed.push(s);
                go(dag, placed, used, out);
                placed.pop();
                used[s] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(dag, &mut Vec::new(), &mut vec![false; dag.len()], &mut out);
    out
}

/// Type 1 satisfaction under a schedule, straight from the definition.
pub fn oracle_satisfies_ordered(order: &[usize], plan: &Plan, c: &Constraint) -> bool {
    let (s, t) = c.as_type1().unwrap();
    let ps = order.iter().position(|&x| x == s.index()).unwrap();
    let pt = order.iter().position(|&x| x == t.index()).unwrap();
    if ps > pt {
        return true;
    }
    c.relation().contains(plan.get(s).unwrap(), plan.get(t).unwrap())
}

/// The largest number of execution sets of a formula on `k` steps, by the
/// closed form: blocks of three xor'd steps composed serially.
pub fn max_sets_closed_form(k: usize) -> u128 {
    match (k, k % 3) {
        (1, _) => 1,
        (_, 0) => 3u128.pow((k / 3) as u32),
        (_, 1) => 4 * 3u128.pow((k / 3 - 1) as u32),
        _ => 2 * 3u128.pow((k / 3) as u32),
    }
}
