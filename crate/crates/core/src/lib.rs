// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angle;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod fitting;
pub mod magnetometry;
pub mod model;
pub mod scenario;
pub mod signal;
