//! Constraint expressions: `and`/`or`/`not` trees over Type 1 literals.
//!
//! A constraint `(rho, S1, S2)` is the disjunction of the Type 1 literals
//! `(rho, s1, s2)` over `S1 x S2`, so a constraint set is a CNF whose
//! literals are all positive. Picking one literal per clause gives a
//! *simple* expression, i.e. a set of Type 1 constraints; a plan satisfies
//! the CNF iff it satisfies at least one simple expression.

use std::fmt;

use crate::error::{contract, Error, Resource, Result};
use crate::model::{Constraint, Plan, StepId, UserRelation};

/// A Type 1 literal `(rho, s1, s2)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Primitive {
    pub relation: UserRelation,
    pub s1: StepId,
    pub s2: StepId,
}

impl Primitive {
    pub fn new(relation: UserRelation, s1: StepId, s2: StepId) -> Self {
        Primitive { relation, s1, s2 }
    }

    pub fn eval(&self, plan: &Plan) -> Result<bool> {
        let a = plan
            .get(self.s1)
            .ok_or_else(|| contract(format!("step #{} is outside the plan", self.s1.index())))?;
        let b = plan
            .get(self.s2)
            .ok_or_else(|| contract(format!("step #{} is outside the plan", self.s2.index())))?;
        Ok(self.relation.contains(a, b))
    }

    pub fn to_constraint(&self) -> Constraint {
        Constraint::type1(self.relation.clone(), self.s1, self.s2)
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, #{}, #{})", self.relation, self.s1.index(), self.s2.index())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConstraintExpression {
    Primitive(Primitive),
    /// Empty conjunction is true.
    And(Vec<ConstraintExpression>),
    /// Empty disjunction is false.
    Or(Vec<ConstraintExpression>),
    Not(Box<ConstraintExpression>),
}

impl ConstraintExpression {
    pub fn primitive(relation: UserRelation, s1: StepId, s2: StepId) -> Self {
        ConstraintExpression::Primitive(Primitive::new(relation, s1, s2))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: ConstraintExpression) -> Self {
        ConstraintExpression::Not(Box::new(inner))
    }

    /// The disjunction of a constraint's Type 1 literals. A Type 1
    /// constraint becomes its literal.
    pub fn from_constraint(c: &Constraint) -> Self {
        let mut lits: Vec<ConstraintExpression> = c
            .pairs()
            .map(|(a, b)| Self::primitive(c.relation().clone(), a, b))
            .collect();
        if lits.len() == 1 {
            lits.pop().unwrap()
        } else {
            ConstraintExpression::Or(lits)
        }
    }

    pub fn eval(&self, plan: &Plan) -> Result<bool> {
        self.eval_with(&mut |p| p.eval(plan))
    }

    /// Evaluate with a caller-supplied truth value for each literal.
    pub fn eval_with(&self, leaf: &mut dyn FnMut(&Primitive) -> Result<bool>) -> Result<bool> {
        match self {
            ConstraintExpression::Primitive(p) => leaf(p),
            ConstraintExpression::And(cs) => {
                for c in cs {
                    if !c.eval_with(leaf)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            ConstraintExpression::Or(cs) => {
                for c in cs {
                    if c.eval_with(leaf)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            ConstraintExpression::Not(c) => Ok(!c.eval_with(leaf)?),
        }
    }

    /// Visit every literal, left to right.
    pub fn for_each_primitive(&self, f: &mut dyn FnMut(&Primitive)) {
        match self {
            ConstraintExpression::Primitive(p) => f(p),
            ConstraintExpression::And(cs) | ConstraintExpression::Or(cs) => {
                cs.iter().for_each(|c| c.for_each_primitive(f))
            }
            ConstraintExpression::Not(c) => c.for_each_primitive(f),
        }
    }

    pub fn primitives(&self) -> Vec<Primitive> {
        let mut out = Vec::new();
        self.for_each_primitive(&mut |p| out.push(p.clone()));
        out
    }
}

/// One CNF clause: the literals of a single source constraint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clause {
    /// Index of the constraint this clause came from.
    pub source: usize,
    pub literals: Vec<Primitive>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CnfExpression {
    pub clauses: Vec<Clause>,
}

impl CnfExpression {
    pub fn eval(&self, plan: &Plan) -> Result<bool> {
        for clause in &self.clauses {
            let mut sat = false;
            for lit in &clause.literals {
                if lit.eval(plan)? {
                    sat = true;
                    break;
                }
            }
            if !sat {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `prod |clause_i|`, saturating.
    pub fn simple_expression_count(&self) -> u128 {
        self.clauses
            .iter()
            .fold(1u128, |acc, c| acc.saturating_mul(c.literals.len() as u128))
    }

    pub fn to_expression(&self) -> ConstraintExpression {
        ConstraintExpression::And(
            self.clauses
                .iter()
                .map(|c| {
                    ConstraintExpression::Or(
                        c.literals
                            .iter()
                            .cloned()
                            .map(ConstraintExpression::Primitive)
                            .collect(),
                    )
                })
                .collect(),
        )
    }
}

/// Clause `i` is the disjunction over `S1 x S2` of constraint `i`.
pub fn to_cnf(constraints: &[Constraint]) -> CnfExpression {
    let clauses = constraints
        .iter()
        .enumerate()
        .map(|(i, c)| Clause {
            source: i,
            literals: c
                .pairs()
                .map(|(a, b)| Primitive::new(c.relation().clone(), a, b))
                .collect(),
        })
        .collect();
    CnfExpression { clauses }
}

/// One literal chosen from every clause.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimpleExpression {
    /// `choices[i]` indexes into clause `i`.
    pub choices: Vec<usize>,
    pub literals: Vec<Primitive>,
}

impl SimpleExpression {
    pub fn eval(&self, plan: &Plan) -> Result<bool> {
        for lit in &self.literals {
            if !lit.eval(plan)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn to_constraints(&self) -> Vec<Constraint> {
        self.literals.iter().map(Primitive::to_constraint).collect()
    }
}

/// Odometer over literal choices; the last clause turns fastest.
///
/// Any index interval can be enumerated on its own, so disjoint intervals
/// can go to different workers.
#[derive(Clone, Debug)]
pub struct SimpleExpressions<'a> {
    cnf: &'a CnfExpression,
    next: u64,
    end: u64,
}

/// All simple expressions of `cnf`, or an error if there are more than `cap`.
pub fn enumerate_simple_expressions(cnf: &CnfExpression, cap: u64) -> Result<SimpleExpressions<'_>> {
    let total = cnf.simple_expression_count();
    if total > cap as u128 {
        return Err(Error::ResourceLimit {
            resource: Resource::SimpleExpressions,
            requested: total,
            cap: cap as u128,
        });
    }
    Ok(SimpleExpressions {
        cnf,
        next: 0,
        end: total as u64,
    })
}

impl<'a> SimpleExpressions<'a> {
    pub fn len_total(&self) -> u64 {
        self.end
    }

    /// Restrict to indices in `start..end` of the full enumeration.
    pub fn range(mut self, start: u64, end: u64) -> Self {
        self.end = end.min(self.end);
        self.next = start.min(self.end);
        self
    }

    /// The simple expression at position `index` in odometer order.
    pub fn nth_expression(&self, index: u64) -> SimpleExpression {
        nth_simple_expression(self.cnf, index)
    }
}

pub(crate) fn nth_simple_expression(cnf: &CnfExpression, mut index: u64) -> SimpleExpression {
    let mut choices = vec![0usize; cnf.clauses.len()];
    for (i, clause) in cnf.clauses.iter().enumerate().rev() {
        let m = clause.literals.len() as u64;
        choices[i] = (index % m) as usize;
        index /= m;
    }
    let literals = choices
        .iter()
        .zip(&cnf.clauses)
        .map(|(&j, c)| c.literals[j].clone())
        .collect();
    SimpleExpression { choices, literals }
}

impl Iterator for SimpleExpressions<'_> {
    type Item = SimpleExpression;

    fn next(&mut self) -> Option<SimpleExpression> {
        if self.next >= self.end {
            return None;
        }
        let e = nth_simple_expression(self.cnf, self.next);
        self.next += 1;
        Some(e)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.end - self.next) as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for SimpleExpressions<'_> {}

/// Rewrite `=`/`!=` constraints using only `(=, s, s')` literals, with
/// negation standing in for `!=`.
///
/// Each constraint becomes its (possibly negated) literal when it is Type 1
/// and the disjunction of them otherwise; the result is their conjunction.
pub fn negate_to_equality_form(constraints: &[Constraint]) -> Result<ConstraintExpression> {
    let mut conj = Vec::with_capacity(constraints.len());
    for c in constraints {
        let negate = match c.relation() {
            UserRelation::Diagonal => false,
            UserRelation::NotDiagonal => true,
            UserRelation::Explicit(r) => {
                return Err(Error::UnsupportedRelation {
                    relation: r.name().to_string(),
                    context: "equality form only covers `=` and `!=`".into(),
                })
            }
        };
        let mut lits: Vec<ConstraintExpression> = c
            .pairs()
            .map(|(a, b)| {
                let eq = ConstraintExpression::primitive(UserRelation::Diagonal, a, b);
                if negate {
                    ConstraintExpression::not(eq)
                } else {
                    eq
                }
            })
            .collect();
        conj.push(if lits.len() == 1 {
            lits.pop().unwrap()
        } else {
            ConstraintExpression::Or(lits)
        });
    }
    Ok(ConstraintExpression::And(conj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::purchase_order;
    use crate::model::{satisfies_constraint, UserId};
    use proptest::prelude::*;

    fn s(i: usize) -> StepId {
        StepId::new(i)
    }

    fn plan(users: &[usize]) -> Plan {
        Plan::new(users.iter().map(|&u| Some(UserId::new(u))).collect())
    }

    #[test]
    fn negated_equality_on_distinct_users() {
        let e = ConstraintExpression::not(ConstraintExpression::primitive(
            UserRelation::Diagonal,
            s(0),
            s(1),
        ));
        assert!(e.eval(&plan(&[0, 1])).unwrap());
        assert!(!e.eval(&plan(&[1, 1])).unwrap());
    }

    #[test]
    fn conjunction_of_clauses() {
        let e = ConstraintExpression::And(vec![
            ConstraintExpression::Or(vec![ConstraintExpression::primitive(
                UserRelation::NotDiagonal,
                s(0),
                s(1),
            )]),
            ConstraintExpression::primitive(UserRelation::Diagonal, s(0), s(2)),
        ]);
        assert!(e.eval(&plan(&[0, 1, 0])).unwrap());
        assert!(!e.eval(&plan(&[0, 1, 1])).unwrap());
    }

    #[test]
    fn empty_and_or_conventions() {
        let p = plan(&[0]);
        assert!(ConstraintExpression::And(vec![]).eval(&p).unwrap());
        assert!(!ConstraintExpression::Or(vec![]).eval(&p).unwrap());
    }

    #[test]
    fn leaf_outside_plan_is_an_error() {
        let e = ConstraintExpression::primitive(UserRelation::Diagonal, s(0), s(5));
        assert!(e.eval(&plan(&[0, 1])).is_err());
    }

    #[test]
    fn cnf_clause_sizes() {
        let t1 = Constraint::type1(UserRelation::NotDiagonal, s(0), s(1));
        let cnf = to_cnf(&[t1]);
        assert_eq!(cnf.clauses.len(), 1);
        assert_eq!(cnf.clauses[0].literals.len(), 1);

        let t2 = Constraint::new(UserRelation::NotDiagonal, [s(0), s(1)], [s(2)]).unwrap();
        let cnf = to_cnf(&[t2]);
        assert_eq!(
            cnf.clauses[0].literals,
            vec![
                Primitive::new(UserRelation::NotDiagonal, s(0), s(2)),
                Primitive::new(UserRelation::NotDiagonal, s(1), s(2)),
            ]
        );

        let po = purchase_order(&["u1"]);
        let cnf = to_cnf(po.constraints());
        assert_eq!(cnf.clauses.len(), 5);
        assert!(cnf.clauses.iter().all(|c| c.literals.len() == 1));
        assert!(cnf.clauses.iter().enumerate().all(|(i, c)| c.source == i));
    }

    #[test]
    fn simple_expression_counts() {
        let po = purchase_order(&["u1"]);
        let cnf = to_cnf(po.constraints());
        assert_eq!(enumerate_simple_expressions(&cnf, 1 << 24).unwrap().count(), 1);

        let a = Constraint::new(UserRelation::Diagonal, [s(0)], [s(1), s(2)]).unwrap();
        let b = Constraint::new(UserRelation::Diagonal, [s(0)], [s(1), s(2), s(3)]).unwrap();
        let cnf = to_cnf(&[a, b]);
        let all: Vec<_> = enumerate_simple_expressions(&cnf, 100).unwrap().collect();
        assert_eq!(all.len(), 6);
        // odometer: the last clause turns fastest
        assert_eq!(all[0].choices, vec![0, 0]);
        assert_eq!(all[1].choices, vec![0, 1]);
        assert_eq!(all[3].choices, vec![1, 0]);

        let t3 = Constraint::new(UserRelation::NotDiagonal, [s(0), s(1), s(2)], [s(0), s(1), s(2)])
            .unwrap();
        let cnf = to_cnf(&[t3]);
        assert_eq!(enumerate_simple_expressions(&cnf, 100).unwrap().count(), 9);
    }

    #[test]
    fn simple_expression_cap() {
        let t3 = Constraint::new(UserRelation::NotDiagonal, [s(0), s(1), s(2)], [s(0), s(1), s(2)])
            .unwrap();
        let cnf = to_cnf(&[t3.clone(), t3]);
        let err = enumerate_simple_expressions(&cnf, 80).unwrap_err();
        assert_eq!(
            err,
            Error::ResourceLimit {
                resource: Resource::SimpleExpressions,
                requested: 81,
                cap: 80
            }
        );
    }

    #[test]
    fn ranges_partition_the_enumeration() {
        let a = Constraint::new(UserRelation::Diagonal, [s(0), s(1)], [s(2), s(3)]).unwrap();
        let b = Constraint::new(UserRelation::Diagonal, [s(0)], [s(1), s(2), s(3)]).unwrap();
        let cnf = to_cnf(&[a, b]);
        let full: Vec<_> = enumerate_simple_expressions(&cnf, 100).unwrap().collect();
        let mut pieces = Vec::new();
        for (lo, hi) in [(0, 5), (5, 6), (6, 12)] {
            pieces.extend(enumerate_simple_expressions(&cnf, 100).unwrap().range(lo, hi));
        }
        assert_eq!(full, pieces);
    }

    #[test]
    fn equality_form_shapes() {
        let ne = Constraint::type1(UserRelation::NotDiagonal, s(0), s(1));
        assert_eq!(
            negate_to_equality_form(&[ne]).unwrap(),
            ConstraintExpression::And(vec![ConstraintExpression::not(
                ConstraintExpression::primitive(UserRelation::Diagonal, s(0), s(1))
            )])
        );

        let po = purchase_order(&["u1", "u2"]);
        let e = negate_to_equality_form(po.constraints()).unwrap();
        let ConstraintExpression::And(parts) = &e else {
            panic!("expected a conjunction")
        };
        let positive = parts
            .iter()
            .filter(|p| matches!(p, ConstraintExpression::Primitive(_)))
            .count();
        let negated = parts
            .iter()
            .filter(|p| matches!(p, ConstraintExpression::Not(_)))
            .count();
        assert_eq!((positive, negated), (1, 4));
        assert!(e
            .primitives()
            .iter()
            .all(|p| p.relation == UserRelation::Diagonal));

        let empty = negate_to_equality_form(&[]).unwrap();
        assert_eq!(empty, ConstraintExpression::And(vec![]));
        assert!(empty.eval(&plan(&[0, 1])).unwrap());

        let explicit = Constraint::type1(UserRelation::explicit("r", []), s(0), s(1));
        assert!(matches!(
            negate_to_equality_form(&[explicit]),
            Err(Error::UnsupportedRelation { .. })
        ));
    }

    fn arb_constraint(k: usize) -> impl Strategy<Value = Constraint> {
        let scope = || proptest::collection::btree_set(0..k, 1..=3.min(k));
        (scope(), scope(), any::<bool>()).prop_map(|(a, b, ne)| {
            let rel = if ne {
                UserRelation::NotDiagonal
            } else {
                UserRelation::Diagonal
            };
            Constraint::new(rel, a.into_iter().map(s), b.into_iter().map(s)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn disjunction_matches_constraint(
            c in arb_constraint(5),
            users in proptest::collection::vec(0..3usize, 5),
        ) {
            let p = plan(&users);
            prop_assert_eq!(
                ConstraintExpression::from_constraint(&c).eval(&p).unwrap(),
                satisfies_constraint(&p, &c).unwrap()
            );
        }

        #[test]
        fn cnf_matches_constraint_set(
            cs in proptest::collection::vec(arb_constraint(5), 0..5),
            users in proptest::collection::vec(0..3usize, 5),
        ) {
            let p = plan(&users);
            let direct = cs.iter().all(|c| satisfies_constraint(&p, c).unwrap());
            prop_assert_eq!(to_cnf(&cs).eval(&p).unwrap(), direct);
            prop_assert_eq!(to_cnf(&cs).to_expression().eval(&p).unwrap(), direct);
            prop_assert_eq!(negate_to_equality_form(&cs).unwrap().eval(&p).unwrap(), direct);
        }

        #[test]
        fn simple_expressions_cover_the_cnf(
            cs in proptest::collection::vec(arb_constraint(4), 0..4),
            users in proptest::collection::vec(0..3usize, 4),
        ) {
            let p = plan(&users);
            let cnf = to_cnf(&cs);
            let all: Vec<_> = enumerate_simple_expressions(&cnf, 1 << 20).unwrap().collect();
            prop_assert_eq!(all.len() as u128, cnf.simple_expression_count());
            let mut seen = std::collections::HashSet::new();
            for e in &all {
                prop_assert!(seen.insert(e.choices.clone()));
                if e.eval(&p).unwrap() {
                    prop_assert!(cnf.eval(&p).unwrap());
                }
            }
            if cnf.eval(&p).unwrap() {
                prop_assert!(all.iter().any(|e| e.eval(&p).unwrap()));
            }
        }
    }
}
