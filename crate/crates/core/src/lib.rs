#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod lip_core;
pub mod planner;
pub mod safety;
pub mod tracksim;
pub mod trajopt;
pub mod worldmodel;
