//! Step merging for Type 1 `=`/`!=` instances and the rich-step rule.
//!
//! Steps joined by `=` constraints collapse into supersteps (connected
//! components of the `=` graph). A superstep may only be performed by a
//! user authorized for all of its members, and `!=` constraints move onto
//! the supersteps. A `!=` constraint inside one component, or a superstep
//! with no common user, makes the instance unsatisfiable before any search.
//!
//! After merging only `!=` remains. With `k` supersteps, a superstep with
//! at least `k` authorized users can always be given a user no other
//! superstep uses, so only the supersteps with fewer users need searching.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{contract, Result};
use crate::model::{Constraint, Plan, StepDag, StepId, UserId, UserRelation, WorkflowSchema};

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Supersteps over a dense step numbering `0..k`.
#[derive(Clone, Debug)]
pub(crate) struct Blocks {
    pub block_of: Vec<usize>,
    /// Members ascending; blocks are numbered by their smallest member.
    pub members: Vec<Vec<usize>>,
    pub auth: Vec<Vec<UserId>>,
    /// `!=` edges between distinct blocks, `(lo, hi)`, deduplicated.
    pub ne: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Conflict {
    /// A `!=` constraint between two steps of one `=` component.
    SameBlock(usize, usize),
    /// Members of the block share no authorized user.
    NoCommonUser(usize),
}

fn intersect_sorted(a: &[UserId], b: &[UserId]) -> Vec<UserId> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(a.len().min(b.len()));
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Merge `=`-connected steps. `auth[i]` must be sorted.
pub(crate) fn merge_equal_steps(
    auth: &[&[UserId]],
    eq: &[(usize, usize)],
    ne: &[(usize, usize)],
) -> std::result::Result<Blocks, Conflict> {
    let k = auth.len();
    let mut uf = UnionFind::new(k);
    for &(a, b) in eq {
        uf.union(a, b);
    }
    let mut root_block = vec![usize::MAX; k];
    let mut block_of = vec![0; k];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (s, slot) in block_of.iter_mut().enumerate() {
        let r = uf.find(s);
        if root_block[r] == usize::MAX {
            root_block[r] = members.len();
            members.push(Vec::new());
        }
        *slot = root_block[r];
        members[root_block[r]].push(s);
    }

    let mut edges = Vec::with_capacity(ne.len());
    for &(a, b) in ne {
        let (ba, bb) = (block_of[a], block_of[b]);
        if ba == bb {
            return Err(Conflict::SameBlock(a, b));
        }
        edges.push((ba.min(bb), ba.max(bb)));
    }
    edges.sort_unstable();
    edges.dedup();

    let mut block_auth = Vec::with_capacity(members.len());
    for (b, ms) in members.iter().enumerate() {
        let mut users = auth[ms[0]].to_vec();
        for &m in &ms[1..] {
            users = intersect_sorted(&users, auth[m]);
        }
        if users.is_empty() {
            return Err(Conflict::NoCommonUser(b));
        }
        block_auth.push(users);
    }

    Ok(Blocks {
        block_of,
        members,
        auth: block_auth,
        ne: edges,
    })
}

/// Blocks that need searching versus blocks with at least as many
/// authorized users as there are blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Split {
    pub core: Vec<usize>,
    pub free: Vec<usize>,
}

pub(crate) fn split_rich(blocks: &Blocks) -> Split {
    let k = blocks.members.len();
    let (free, core): (Vec<usize>, Vec<usize>) =
        (0..k).partition(|&b| blocks.auth[b].len() >= k);
    Split { core, free }
}

/// Give every free block, in index order, its least authorized user that
/// differs from every `!=` neighbour already assigned.
pub(crate) fn complete_free(blocks: &Blocks, split: &Split, assignment: &mut [Option<UserId>]) {
    let k = blocks.members.len();
    let mut neighbours = vec![Vec::new(); k];
    for &(a, b) in &blocks.ne {
        neighbours[a].push(b);
        neighbours[b].push(a);
    }
    for &f in &split.free {
        let taken: Vec<UserId> = neighbours[f].iter().filter_map(|&n| assignment[n]).collect();
        let user = blocks.auth[f]
            .iter()
            .copied()
            .find(|u| !taken.contains(u))
            .expect("a block with >= k users always has a free user");
        assignment[f] = Some(user);
    }
}

/// Why a Type 1 `=`/`!=` schema is unsatisfiable without search.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UnsatReason {
    /// `(!=, s1, s2)` where `s1` and `s2` are joined by `=` constraints.
    ConflictingConstraint { s1: StepId, s2: StepId },
    /// No user is authorized for every member of a superstep.
    NoCommonUser { members: Vec<StepId> },
}

/// A schema whose steps are supersteps, with only Type 1 `!=` constraints.
///
/// The merged graph has no edges: merging can identify steps on both ends
/// of a path, and satisfiability does not depend on the order.
#[derive(Clone, Debug)]
pub struct MergedSchema {
    pub schema: WorkflowSchema,
    /// Original step to superstep.
    pub block_of: BTreeMap<StepId, StepId>,
    /// Superstep to its original steps, ascending.
    pub members: BTreeMap<StepId, Vec<StepId>>,
}

impl MergedSchema {
    /// Carry a plan of the merged schema back to the original steps.
    pub fn lift(&self, original: &WorkflowSchema, plan: &Plan) -> Result<Plan> {
        let mut pairs = Vec::with_capacity(self.block_of.len());
        for (&orig, &block) in &self.block_of {
            let user = plan
                .get(block)
                .ok_or_else(|| contract(format!("superstep `{}` unassigned", self.schema.step_name(block))))?;
            pairs.push((orig, user));
        }
        Ok(Plan::from_pairs(original.dag(), pairs))
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Reduction {
    Merged(MergedSchema),
    Unsat(UnsatReason),
}

pub(crate) fn superstep_name(schema: &WorkflowSchema, first_member: StepId) -> String {
    format!("b:{}", schema.step_name(first_member))
}

/// Merge the steps of a Type 1 `=`/`!=` schema along its `=` constraints.
pub fn reduce_eq(schema: &WorkflowSchema) -> Result<Reduction> {
    let steps = schema.steps();
    let dense: BTreeMap<StepId, usize> = steps.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut eq = Vec::new();
    let mut ne = Vec::new();
    for c in schema.constraints() {
        let (a, b) = c
            .as_type1()
            .ok_or_else(|| contract("step merging needs Type 1 constraints"))?;
        let pair = (dense[&a], dense[&b]);
        match c.relation() {
            UserRelation::Diagonal => eq.push(pair),
            UserRelation::NotDiagonal => ne.push(pair),
            UserRelation::Explicit(r) => {
                return Err(contract(format!(
                    "step merging needs `=`/`!=` constraints, found `{}`",
                    r.name()
                )))
            }
        }
    }
    let auth: Vec<&[UserId]> = steps.iter().map(|&s| schema.authorized_users(s)).collect();
    let blocks = match merge_equal_steps(&auth, &eq, &ne) {
        Ok(b) => b,
        Err(Conflict::SameBlock(a, b)) => {
            return Ok(Reduction::Unsat(UnsatReason::ConflictingConstraint {
                s1: steps[a],
                s2: steps[b],
            }))
        }
        Err(Conflict::NoCommonUser(block)) => {
            // recompute membership for the report
            let mut uf = UnionFind::new(steps.len());
            for &(a, b) in &eq {
                uf.union(a, b);
            }
            let mut roots = Vec::new();
            for s in 0..steps.len() {
                let r = uf.find(s);
                if !roots.contains(&r) {
                    roots.push(r);
                }
            }
            let root = roots[block];
            let members = (0..steps.len())
                .filter(|&s| uf.find(s) == root)
                .map(|s| steps[s])
                .collect();
            return Ok(Reduction::Unsat(UnsatReason::NoCommonUser { members }));
        }
    };
    let all: Vec<usize> = (0..blocks.members.len()).collect();
    Ok(Reduction::Merged(merged_schema(schema, &blocks, &all)?))
}

/// Build a schema over the listed blocks only.
fn merged_schema(original: &WorkflowSchema, blocks: &Blocks, keep: &[usize]) -> Result<MergedSchema> {
    let steps = original.steps();
    let position: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let names: Vec<String> = keep
        .iter()
        .map(|&b| superstep_name(original, steps[blocks.members[b][0]]))
        .collect();
    let dag = StepDag::new(names, [])?;
    let auth: Vec<(StepId, UserId)> = keep
        .iter()
        .enumerate()
        .flat_map(|(i, &b)| blocks.auth[b].iter().map(move |&u| (StepId::new(i), u)))
        .collect();
    let constraints: Vec<Constraint> = blocks
        .ne
        .iter()
        .filter_map(|&(a, b)| {
            let (pa, pb) = (position.get(&a)?, position.get(&b)?);
            Some(Constraint::type1(
                UserRelation::NotDiagonal,
                StepId::new(*pa),
                StepId::new(*pb),
            ))
        })
        .collect();
    let schema = WorkflowSchema::new(dag, original.users().to_vec(), auth, constraints)?;
    let mut block_of = BTreeMap::new();
    let mut members = BTreeMap::new();
    for (i, &b) in keep.iter().enumerate() {
        let ms: Vec<StepId> = blocks.members[b].iter().map(|&m| steps[m]).collect();
        for &m in &ms {
            block_of.insert(m, StepId::new(i));
        }
        members.insert(StepId::new(i), ms);
    }
    Ok(MergedSchema {
        schema,
        block_of,
        members,
    })
}

/// Rebuild dense blocks from a merged schema.
fn blocks_of(merged: &MergedSchema) -> Result<Blocks> {
    let schema = &merged.schema;
    let k = schema.step_count();
    let mut ne = Vec::new();
    for c in schema.constraints() {
        match (c.as_type1(), c.relation()) {
            (Some((a, b)), UserRelation::NotDiagonal) => {
                ne.push((a.index().min(b.index()), a.index().max(b.index())))
            }
            _ => return Err(contract("a merged schema carries only Type 1 `!=` constraints")),
        }
    }
    ne.sort_unstable();
    ne.dedup();
    Ok(Blocks {
        block_of: (0..k).collect(),
        members: (0..k).map(|b| vec![b]).collect(),
        auth: (0..k)
            .map(|b| schema.authorized_users(StepId::new(b)).to_vec())
            .collect(),
        ne,
    })
}

/// The searchable core of a merged schema and the supersteps left out.
#[derive(Clone, Debug)]
pub struct RichStepSplit {
    /// Supersteps with fewer authorized users than there are supersteps,
    /// with the `!=` constraints among them. `block_of` and `members` refer
    /// to the original steps of those supersteps.
    pub core: MergedSchema,
    /// Supersteps of the input merged schema left to greedy completion.
    pub free_steps: BTreeSet<StepId>,
    /// For each core superstep, its id in the input merged schema.
    pub core_origin: Vec<StepId>,
}

/// Split off supersteps with at least `k` authorized users, `k` being the
/// number of supersteps.
pub fn prune_rich_steps(merged: &MergedSchema) -> Result<RichStepSplit> {
    let blocks = blocks_of(merged)?;
    let split = split_rich(&blocks);
    let schema = &merged.schema;
    let names: Vec<String> = split
        .core
        .iter()
        .map(|&b| schema.step_name(StepId::new(b)).to_string())
        .collect();
    let pos: BTreeMap<usize, usize> = split.core.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let dag = StepDag::new(names, [])?;
    let auth: Vec<(StepId, UserId)> = split
        .core
        .iter()
        .enumerate()
        .flat_map(|(i, &b)| blocks.auth[b].iter().map(move |&u| (StepId::new(i), u)))
        .collect();
    let constraints = blocks
        .ne
        .iter()
        .filter_map(|&(a, b)| {
            Some(Constraint::type1(
                UserRelation::NotDiagonal,
                StepId::new(*pos.get(&a)?),
                StepId::new(*pos.get(&b)?),
            ))
        })
        .collect();
    let core_schema = WorkflowSchema::new(dag, schema.users().to_vec(), auth, constraints)?;
    let mut block_of = BTreeMap::new();
    let mut members = BTreeMap::new();
    for (i, &b) in split.core.iter().enumerate() {
        let ms = merged.members[&StepId::new(b)].clone();
        for &m in &ms {
            block_of.insert(m, StepId::new(i));
        }
        members.insert(StepId::new(i), ms);
    }
    Ok(RichStepSplit {
        core: MergedSchema {
            schema: core_schema,
            block_of,
            members,
        },
        free_steps: split.free.iter().map(|&b| StepId::new(b)).collect(),
        core_origin: split.core.iter().map(|&b| StepId::new(b)).collect(),
    })
}

/// Extend a valid plan of the core to a plan of the whole merged schema.
pub fn complete_free_steps(
    merged: &MergedSchema,
    split: &RichStepSplit,
    core_plan: &Plan,
) -> Result<Plan> {
    let blocks = blocks_of(merged)?;
    let mut assignment = vec![None; blocks.members.len()];
    for (i, &origin) in split.core_origin.iter().enumerate() {
        let u = core_plan
            .get(StepId::new(i))
            .ok_or_else(|| contract("core plan does not cover every core superstep"))?;
        assignment[origin.index()] = Some(u);
    }
    let dense_split = Split {
        core: split.core_origin.iter().map(|s| s.index()).collect(),
        free: split.free_steps.iter().map(|s| s.index()).collect(),
    };
    complete_free(&blocks, &dense_split, &mut assignment);
    Ok(Plan::new(assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::purchase_order;
    use crate::model::{is_valid, SchemaBuilder};

    fn merged(r: Reduction) -> MergedSchema {
        match r {
            Reduction::Merged(m) => m,
            Reduction::Unsat(why) => panic!("unexpected UNSAT: {why:?}"),
        }
    }

    fn member_names(m: &MergedSchema, original: &WorkflowSchema) -> Vec<Vec<String>> {
        m.members
            .values()
            .map(|ms| ms.iter().map(|&s| original.step_name(s).to_string()).collect())
            .collect()
    }

    #[test]
    fn purchase_order_merges_s1_and_s3() {
        let schema = purchase_order(&["u1", "u2"]);
        let m = merged(reduce_eq(&schema).unwrap());
        assert_eq!(
            member_names(&m, &schema),
            vec![vec!["s1", "s3"], vec!["s2"], vec!["s4"], vec!["s5"], vec!["s6"]]
        );
        let shown: Vec<String> = m
            .schema
            .constraints()
            .iter()
            .map(|c| m.schema.display_constraint(c))
            .collect();
        // (!=, s3, s5) and (!=, s1, s4) now start at the merged block
        assert_eq!(
            shown,
            vec!["ne(b:s1, b:s2)", "ne(b:s1, b:s4)", "ne(b:s1, b:s5)", "ne(b:s4, b:s6)"]
        );
        assert!(m.schema.dag().edges().is_empty());
    }

    #[test]
    fn contradiction_is_unsat_without_search() {
        let schema = SchemaBuilder::new()
            .steps(["a", "b"])
            .users(["u"])
            .authorize_all()
            .eq("a", "b")
            .ne("a", "b")
            .build()
            .unwrap();
        let r = reduce_eq(&schema).unwrap();
        assert!(matches!(r, Reduction::Unsat(UnsatReason::ConflictingConstraint { .. })));
    }

    #[test]
    fn transitive_equality_conflict() {
        let schema = SchemaBuilder::new()
            .steps(["a", "b", "c"])
            .users(["u", "v"])
            .authorize_all()
            .eq("a", "b")
            .eq("b", "c")
            .ne("c", "a")
            .build()
            .unwrap();
        assert!(matches!(reduce_eq(&schema).unwrap(), Reduction::Unsat(_)));
    }

    #[test]
    fn no_equalities_keeps_every_step() {
        let schema = SchemaBuilder::new()
            .steps(["a", "b", "c"])
            .users(["u", "v"])
            .authorize_all()
            .ne("a", "b")
            .build()
            .unwrap();
        let m = merged(reduce_eq(&schema).unwrap());
        assert_eq!(m.schema.step_count(), 3);
        assert_eq!(member_names(&m, &schema), vec![vec!["a"], vec!["b"], vec!["c"]]);
        assert_eq!(m.schema.constraints().len(), 1);
    }

    #[test]
    fn empty_intersection_is_unsat() {
        let schema = SchemaBuilder::new()
            .steps(["a", "b"])
            .users(["u", "v"])
            .authorize("a", "u")
            .authorize("b", "v")
            .eq("a", "b")
            .build()
            .unwrap();
        let r = reduce_eq(&schema).unwrap();
        let Reduction::Unsat(UnsatReason::NoCommonUser { members }) = r else {
            panic!("expected NoCommonUser")
        };
        assert_eq!(members.len(), 2);
    }

    #[test]
    fn superstep_auth_is_intersection() {
        let schema = SchemaBuilder::new()
            .steps(["a", "b"])
            .users(["u", "v", "w"])
            .authorize("a", "u")
            .authorize("a", "v")
            .authorize("b", "v")
            .authorize("b", "w")
            .eq("a", "b")
            .build()
            .unwrap();
        let m = merged(reduce_eq(&schema).unwrap());
        assert_eq!(m.schema.authorized_users(StepId::new(0)), &[UserId::new(1)]);
    }

    #[test]
    fn rejects_type2_constraints() {
        let schema = SchemaBuilder::new()
            .steps(["a", "b", "c"])
            .users(["u"])
            .authorize_all()
            .constraint(crate::model::RelationRef::Ne, ["a"], ["b", "c"])
            .build()
            .unwrap();
        assert!(reduce_eq(&schema).is_err());
    }

    #[test]
    fn rich_step_thresholds() {
        // three steps, ten users everywhere: every step is free
        let users: Vec<String> = (0..10).map(|i| format!("u{i}")).collect();
        let schema = SchemaBuilder::new()
            .steps(["a", "b", "c"])
            .users(users.clone())
            .authorize_all()
            .ne("a", "b")
            .ne("b", "c")
            .build()
            .unwrap();
        let m = merged(reduce_eq(&schema).unwrap());
        let split = prune_rich_steps(&m).unwrap();
        assert_eq!(split.core.schema.step_count(), 0);
        assert_eq!(split.free_steps.len(), 3);
        let empty_core = Plan::new(vec![]);
        let plan = complete_free_steps(&m, &split, &empty_core).unwrap();
        assert!(is_valid(&m.schema, &plan).unwrap());
        assert!(is_valid(&schema, &m.lift(&schema, &plan).unwrap()).unwrap());

        // one step with 2 users, two with 5: threshold 3 keeps one step
        let mut b = SchemaBuilder::new().steps(["a", "b", "c"]).users(users);
        for u in ["u0", "u1"] {
            b = b.authorize("a", u);
        }
        for u in ["u0", "u1", "u2", "u3", "u4"] {
            b = b.authorize("b", u).authorize("c", u);
        }
        let schema = b.ne("a", "b").build().unwrap();
        let m = merged(reduce_eq(&schema).unwrap());
        let split = prune_rich_steps(&m).unwrap();
        assert_eq!(split.core.schema.step_count(), 1);
        assert_eq!(split.core_origin, vec![StepId::new(0)]);
        // the a-b constraint crosses into the free part, so the core has none
        assert!(split.core.schema.constraints().is_empty());
    }

    #[test]
    fn purchase_order_with_five_users_is_all_free() {
        let schema = purchase_order(&["u1", "u2", "u3", "u4", "u5"]);
        let m = merged(reduce_eq(&schema).unwrap());
        assert_eq!(m.schema.step_count(), 5);
        let split = prune_rich_steps(&m).unwrap();
        assert!(split.core.schema.steps().is_empty());
        let plan = complete_free_steps(&m, &split, &Plan::new(vec![])).unwrap();
        let lifted = m.lift(&schema, &plan).unwrap();
        assert!(is_valid(&schema, &lifted).unwrap());
    }
}
