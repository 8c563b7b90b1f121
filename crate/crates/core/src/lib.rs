//! Adaptive data-level query partitioning between resource-constrained data
//! sources and a shared stream processor, plus an epoch-synchronous
//! simulator of the whole monitoring pipeline.
#![no_std]

extern crate alloc;

pub mod operators;
pub mod query;
pub mod partition;
pub mod proxy;
pub mod runtime;
pub mod baselines;
pub mod workloads;
pub mod sim;
