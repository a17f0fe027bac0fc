//! Learned compound-index advisor for document databases.
//!
//! The pipeline: synthesize a query workload, generate rule-based index
//! demonstrations, pretrain a Q-network from them, refine it online against a
//! simulated planner/cost model, and serve index decisions for new queries.
//!
//! Modules roughly follow the data flow:
//!
//! * [`query`] — query AST, state tokenizer, and the positional action codec
//! * [`workload`] — schema definition and synthetic query generation
//! * [`sim`] — deterministic document-store environment (planner, cost and
//!   size models, reward)
//! * [`nn`] — from-scratch embedding + dense network with Adam
//! * [`agent`] — Q-learning-from-demonstrations agent behind an
//!   act/observe interface
//! * [`demos`] — indexing rules and demonstration generation
//! * [`controller`] — execution modes (pretrain, online training,
//!   evaluation, baselines, serving)

pub mod agent;
pub mod controller;
pub mod demos;
pub mod nn;
pub mod query;
pub mod sim;
pub mod workload;
