#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod clustering;
pub mod coordinator;
pub mod distfit;
pub mod peer;
pub mod simnet;
pub mod wire;
