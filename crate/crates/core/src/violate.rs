//! Can an authorized plan break a constraint?
//!
//! A plan violates `(rho, S1, S2)` exactly when every pair in `S1 x S2` is
//! related by the complement of `rho`. Whether some authorized plan
//! violates some constraint is a disjunction over the constraints, and
//! each disjunct is an ordinary WSP instance with Type 1 constraints.
//! Constraints no authorized plan can violate are redundant.

use crate::error::Result;
use crate::expr::ConstraintExpression;
use crate::model::{Constraint, Plan, WorkflowSchema};
use crate::solve::{first_success, solve_auto, SolveResult, SolveStats, SolverConfig, Status};

/// An expression satisfied exactly by the plans that violate `c`.
///
/// Explicit relations are complemented over all `user_count` users.
pub fn violation_expression(c: &Constraint, user_count: usize) -> ConstraintExpression {
    let complement = c.relation().complement(user_count);
    let mut lits: Vec<ConstraintExpression> = c
        .pairs()
        .map(|(a, b)| ConstraintExpression::primitive(complement.clone(), a, b))
        .collect();
    if lits.len() == 1 {
        lits.pop().unwrap()
    } else {
        ConstraintExpression::And(lits)
    }
}

/// The Type 1 constraints whose conjunction is [`violation_expression`].
pub fn violation_constraints(c: &Constraint, user_count: usize) -> Vec<Constraint> {
    let complement = c.relation().complement(user_count);
    c.pairs()
        .map(|(a, b)| Constraint::type1(complement.clone(), a, b))
        .collect()
}

/// The instance whose valid plans are the authorized plans violating `c`.
pub fn violation_schema(schema: &WorkflowSchema, c: &Constraint) -> Result<WorkflowSchema> {
    schema.with_constraints(violation_constraints(c, schema.user_count()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    /// SAT when some authorized plan violates a constraint; the witness is
    /// such a plan.
    pub result: SolveResult,
    /// Index of the first constraint, in list order, that can be violated.
    pub constraint: Option<usize>,
}

/// Look for an authorized plan violating at least one constraint, trying
/// the constraints in order.
pub fn find_violating_plan(schema: &WorkflowSchema, config: &SolverConfig) -> Result<Violation> {
    let cs = schema.constraints();
    let found = first_success(config.threads, cs.len() as u64, |i| {
        let r = solve_auto(&violation_schema(schema, &cs[i as usize])?, config)?;
        Ok(r.is_sat().then_some(r))
    })?;
    Ok(match found {
        Some((i, r)) => Violation {
            result: r,
            constraint: Some(i as usize),
        },
        None => Violation {
            result: SolveResult {
                status: Status::Unsat,
                witness: None,
                stats: SolveStats::default(),
            },
            constraint: None,
        },
    })
}

/// Per-constraint answer: a violating plan, or `None` if none exists.
pub fn constraint_violability(schema: &WorkflowSchema, config: &SolverConfig) -> Result<Vec<Option<Plan>>> {
    schema
        .constraints()
        .iter()
        .map(|c| Ok(solve_auto(&violation_schema(schema, c)?, config)?.witness))
        .collect()
}

/// Drop the constraints that no authorized plan can violate. Returns the
/// reduced schema and the removed constraints in list order.
pub fn prune_constraints(
    schema: &WorkflowSchema,
    config: &SolverConfig,
) -> Result<(WorkflowSchema, Vec<Constraint>)> {
    let verdicts = constraint_violability(schema, config)?;
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for (c, v) in schema.constraints().iter().zip(verdicts) {
        if v.is_some() {
            kept.push(c.clone());
        } else {
            removed.push(c.clone());
        }
    }
    Ok((schema.with_constraints(kept)?, removed))
}
