//! Workflow satisfiability: decide whether users can be assigned to the
//! steps of a workflow so that authorizations and separation/binding of
//! duty constraints all hold.
//!
//! The crate covers plain WSP with constraints of every type, conditional
//! workflows built from serial, parallel and xor composition, the ordered
//! variant in which constraints depend on execution order, and analysis of
//! which constraints an authorized plan can violate.
//!
//! ```
//! use wsp_core::model::SchemaBuilder;
//! use wsp_core::solve::{solve_fpt, SolverConfig};
//!
//! let schema = SchemaBuilder::new()
//!     .steps(["request", "approve"])
//!     .users(["alice", "bob"])
//!     .authorize_all()
//!     .ne("request", "approve")
//!     .build()
//!     .unwrap();
//! let result = solve_fpt(&schema, &SolverConfig::default()).unwrap();
//! assert!(result.is_sat());
//! ```

pub mod conditional;
pub mod dsl;
pub mod error;
pub mod expr;
pub mod model;
pub mod owsp;
pub mod reduce;
pub mod solve;
pub mod violate;

pub use error::{Error, Resource, Result};
pub use model::{Constraint, Plan, StepDag, StepId, UserId, UserRelation, WorkflowSchema};
pub use solve::{SolveResult, SolverConfig, Status};
