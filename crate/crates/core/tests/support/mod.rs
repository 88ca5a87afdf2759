//! Checks shared by the test suites and the acceptance run.
#![allow(dead_code)]

pub mod ball;
pub mod grad;
pub mod invariants;
pub mod oracle;
