//! Credit scoring with graph machine learning on synthetic super-app data.
//!
//! The crate covers the whole pipeline: relation graphs over users and the
//! entities they share ([`graph`]), a synthetic population with planted
//! homophily ([`datagen`]), per-user graph features ([`features`]),
//! gradient-boosted trees ([`gbdt`]), graph neural networks ([`gnn`]),
//! statistical and cost-sensitive evaluation ([`eval`]) and the experiment
//! driver ([`pipeline`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod eval;
pub mod features;
pub mod gbdt;
pub mod gnn;
pub mod graph;
pub mod pipeline;
pub mod rng;
pub mod table;
