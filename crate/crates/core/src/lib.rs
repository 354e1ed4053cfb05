// Validation deliberately uses `!(x > 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod model;
pub mod policy;
pub mod specfun;
pub mod verify_mc;
pub mod verify_pde;
