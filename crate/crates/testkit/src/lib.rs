//! Independent oracles for the test suites.
//!
//! Everything here is deliberately written without reference to the library's
//! implementation paths: straight nested loops, central finite differences,
//! and adaptive quadrature. Tests compare the library against these.

pub mod gradcheck;
pub mod quadrature;
pub mod reference;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use quadrature::student_t_upper_tail;
pub use reference::{conv2d_ref, fuse_ref};
