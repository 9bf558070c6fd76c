// Negated comparisons reject NaN; index loops follow the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fuser;
pub mod harness;
pub mod lm;
pub mod netsim;
pub mod nncore;
pub mod protocol;

pub use error::{Error, Result};
