//! Deterministic simulator of a Storm-like streaming cluster and a learned
//! DAG scheduler trained with advantage actor-critic.

pub mod agent;
pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod diff;
pub mod gnn;
pub mod recipes;
pub mod sim;
pub mod trace;
pub mod train;
