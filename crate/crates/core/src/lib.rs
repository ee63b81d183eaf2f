// `!(x > 0.0)` is used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod harness;
pub mod inner_loop;
pub mod integrator;
pub mod nmhe;
pub mod nmpc;
pub mod ocp;
pub mod sim;
pub mod vehicle;
