//! Difficulty-scaled candidate search for text-to-SQL.
//!
//! A task is scored for difficulty, which sets both the number of outer
//! iterations and the refinement depth. Each iteration seeds one chain per
//! schema subset in the pool; chains generate, execute, critique and mutate
//! queries, and every scored candidate lands in a buffer. The pool evolves
//! between iterations, and the final answer is the query whose execution
//! output collects the largest total reward.

pub mod diversity;
pub mod eval;
pub mod evolution;
pub mod executor;
pub mod fixtures;
pub mod llm;
pub mod schema;
pub mod search;
pub mod sqltext;
pub mod util;
pub mod voting;

pub use evolution::{crossover, evolve_pool, mutate_subset, seed_pool, EvolutionError, SeedPool};
pub use executor::{execute, output_key, ExecutionResult, Limits, OutputKey, Sandbox};
pub use llm::{Critique, Gateway, LlmBackend, Role, RoleSettings, Transcript};
pub use schema::{load_schema, FullSchema, SchemaSubset, Task};
pub use search::{depth_limit, run_task, BufferEntry, IterationsMode, SearchConfig, SolutionReport};
pub use sqltext::canonicalize_sql;
pub use voting::{reward, select, Strategy};
