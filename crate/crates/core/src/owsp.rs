//! Ordered WSP: a plan is paired with an execution schedule, and a
//! constraint `(rho, s, s')` only binds when `s` runs before `s'`.

use std::fmt;

use crate::error::{contract, Error, Resource, Result};
use crate::model::{Constraint, Plan, StepDag, StepId, WorkflowSchema};
use crate::solve::{first_success, solve_auto, SolverConfig};

/// A linear extension of the step order, processing steps only.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExecutionSchedule {
    pub steps: Vec<StepId>,
}

impl ExecutionSchedule {
    pub fn position(&self, step: StepId) -> Option<usize> {
        self.steps.iter().position(|&s| s == step)
    }

    /// Is this a permutation of the processing steps compatible with the order?
    pub fn is_valid_for(&self, dag: &StepDag) -> bool {
        let mut expected: Vec<StepId> = dag.processing_steps().collect();
        let mut got = self.steps.clone();
        expected.sort_unstable();
        got.sort_unstable();
        if expected != got {
            return false;
        }
        self.steps
            .iter()
            .enumerate()
            .all(|(i, &a)| self.steps[i + 1..].iter().all(|&b| !dag.lt(b, a)))
    }

    pub fn display(&self, dag: &StepDag) -> String {
        let names: Vec<&str> = self.steps.iter().map(|&s| dag.name(s)).collect();
        names.join(" ")
    }
}

impl fmt::Display for ExecutionSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.steps.iter().map(|s| format!("#{}", s.index())).collect();
        f.write_str(&ids.join(" "))
    }
}

/// Lazy lexicographic enumeration of linear extensions.
pub struct LinearExtensions {
    steps: Vec<StepId>,
    // preds[i]: positions in `steps` that must come before steps[i]
    preds: Vec<Vec<usize>>,
    prefix: Vec<usize>,
    used: Vec<bool>,
    started: bool,
    done: bool,
}

impl LinearExtensions {
    pub fn new(dag: &StepDag) -> Self {
        let steps: Vec<StepId> = dag.processing_steps().collect();
        let preds = steps
            .iter()
            .map(|&b| {
                steps
                    .iter()
                    .enumerate()
                    .filter(|&(_, &a)| dag.lt(a, b))
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        let k = steps.len();
        LinearExtensions {
            steps,
            preds,
            prefix: Vec::with_capacity(k),
            used: vec![false; k],
            started: false,
            done: false,
        }
    }

    fn available(&self, i: usize) -> bool {
        !self.used[i] && self.preds[i].iter().all(|&p| self.used[p])
    }

    fn push(&mut self, i: usize) {
        self.used[i] = true;
        self.prefix.push(i);
    }

    /// Complete the prefix with the smallest available step at each depth.
    fn fill(&mut self) {
        while self.prefix.len() < self.steps.len() {
            let next = (0..self.steps.len())
                .find(|&i| self.available(i))
                .expect("an acyclic order always has a minimal remaining step");
            self.push(next);
        }
    }

    fn current(&self) -> ExecutionSchedule {
        ExecutionSchedule {
            steps: self.prefix.iter().map(|&i| self.steps[i]).collect(),
        }
    }
}

impl Iterator for LinearExtensions {
    type Item = ExecutionSchedule;

    fn next(&mut self) -> Option<ExecutionSchedule> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            self.fill();
            return Some(self.current());
        }
        while let Some(last) = self.prefix.pop() {
            self.used[last] = false;
            if let Some(c) = (last + 1..self.steps.len()).find(|&i| self.available(i)) {
                self.push(c);
                self.fill();
                return Some(self.current());
            }
        }
        self.done = true;
        None
    }
}

/// All linear extensions, or an error if there are more than `cap`.
pub fn linear_extensions(dag: &StepDag, cap: u64) -> Result<Vec<ExecutionSchedule>> {
    let mut out = Vec::new();
    for e in LinearExtensions::new(dag) {
        if out.len() as u64 >= cap {
            return Err(Error::ResourceLimit {
                resource: Resource::LinearExtensions,
                requested: cap as u128 + 1,
                cap: cap as u128,
            });
        }
        out.push(e);
    }
    Ok(out)
}

/// Does `(schedule, plan)` satisfy the Type 1 constraint `c`?
///
/// `(rho, s, s')` holds when `s'` runs first, or when `s` runs first and
/// the users are related. A constraint on a single step is checked as usual.
pub fn satisfies_ordered(schedule: &ExecutionSchedule, plan: &Plan, c: &Constraint) -> Result<bool> {
    let (s, t) = c
        .as_type1()
        .ok_or_else(|| contract("ordered satisfaction is defined for Type 1 constraints only"))?;
    let user = |x: StepId| {
        plan.get(x)
            .ok_or_else(|| contract(format!("step #{} is outside the plan", x.index())))
    };
    let (u, v) = (user(s)?, user(t)?);
    if s == t {
        return Ok(c.relation().contains(u, v));
    }
    let ps = schedule
        .position(s)
        .ok_or_else(|| contract(format!("step #{} is not in the schedule", s.index())))?;
    let pt = schedule
        .position(t)
        .ok_or_else(|| contract(format!("step #{} is not in the schedule", t.index())))?;
    Ok(pt < ps || c.relation().contains(u, v))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WellFormedness {
    WellFormed,
    /// `constraint` relates incomparable steps but `counterpart` is absent.
    Missing {
        constraint: Constraint,
        counterpart: Constraint,
    },
}

impl WellFormedness {
    pub fn is_well_formed(&self) -> bool {
        matches!(self, WellFormedness::WellFormed)
    }
}

/// Every Type 1 constraint `(rho, s, s')` on incomparable steps must come
/// with `(rho~, s', s)`, `rho~` being the transpose of `rho`.
pub fn is_well_formed(schema: &WorkflowSchema) -> Result<WellFormedness> {
    let dag = schema.dag();
    let cs = schema.constraints();
    let mut type1 = Vec::with_capacity(cs.len());
    for c in cs {
        type1.push(
            c.as_type1()
                .ok_or_else(|| contract("well-formedness is defined for Type 1 constraints only"))?,
        );
    }
    for (c, &(s, t)) in cs.iter().zip(&type1) {
        if s == t || !dag.incomparable(s, t) {
            continue;
        }
        let counterpart = Constraint::type1(c.relation().transpose(), t, s);
        let present = cs
            .iter()
            .zip(&type1)
            .any(|(d, &pair)| pair == (t, s) && d.relation() == counterpart.relation());
        if !present {
            return Ok(WellFormedness::Missing {
                constraint: c.clone(),
                counterpart,
            });
        }
    }
    Ok(WellFormedness::WellFormed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OwspMode {
    /// Some schedule admits a valid plan.
    Exists,
    /// Every schedule admits a valid plan.
    All,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OwspResult {
    pub mode: OwspMode,
    pub holds: bool,
    /// For `Exists`, the satisfying schedule; for `All`, a schedule with no
    /// valid plan when the answer is negative.
    pub schedule: Option<ExecutionSchedule>,
    /// The plan accompanying a satisfying schedule.
    pub plan: Option<Plan>,
    pub extensions_examined: u64,
}

/// The constraints still binding under `schedule`: those whose first step
/// runs before the second, and those on a single step.
pub fn residual_constraints(schema: &WorkflowSchema, schedule: &ExecutionSchedule) -> Result<Vec<Constraint>> {
    let mut out = Vec::new();
    for c in schema.constraints() {
        let (s, t) = c
            .as_type1()
            .ok_or_else(|| contract("ordered WSP takes Type 1 constraints only"))?;
        if s == t || schedule.position(s) < schedule.position(t) {
            out.push(c.clone());
        }
    }
    Ok(out)
}

/// Solve ordered WSP by solving the residual instance of every schedule.
///
/// Constraints `(rho, s, s')` with `s' < s` in the step order are rejected.
pub fn solve_owsp(schema: &WorkflowSchema, mode: OwspMode, config: &SolverConfig) -> Result<OwspResult> {
    let dag = schema.dag();
    for c in schema.constraints() {
        let (s, t) = c
            .as_type1()
            .ok_or_else(|| contract("ordered WSP takes Type 1 constraints only"))?;
        if dag.lt(t, s) {
            return Err(contract(format!(
                "constraint `{}` names a later step first",
                schema.display_constraint(c)
            )));
        }
    }
    let schedules = linear_extensions(dag, config.max_extensions)?;
    let residual_sat = |i: u64| -> Result<Option<Plan>> {
        let sigma = &schedules[i as usize];
        let residual = schema.with_constraints(residual_constraints(schema, sigma)?)?;
        Ok(solve_auto(&residual, config)?.witness)
    };
    match mode {
        OwspMode::Exists => {
            let found = first_success(config.threads, schedules.len() as u64, residual_sat)?;
            Ok(match found {
                Some((i, plan)) => OwspResult {
                    mode,
                    holds: true,
                    schedule: Some(schedules[i as usize].clone()),
                    plan: Some(plan),
                    extensions_examined: i + 1,
                },
                None => OwspResult {
                    mode,
                    holds: false,
                    schedule: None,
                    plan: None,
                    extensions_examined: schedules.len() as u64,
                },
            })
        }
        OwspMode::All => {
            let failing = first_success(config.threads, schedules.len() as u64, |i| {
                Ok(residual_sat(i)?.is_none().then_some(()))
            })?;
            Ok(match failing {
                Some((i, ())) => OwspResult {
                    mode,
                    holds: false,
                    schedule: Some(schedules[i as usize].clone()),
                    plan: None,
                    extensions_examined: i + 1,
                },
                None => OwspResult {
                    mode,
                    holds: true,
                    schedule: None,
                    plan: None,
                    extensions_examined: schedules.len() as u64,
                },
            })
        }
    }
}
