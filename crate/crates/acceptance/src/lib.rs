//! Fixtures for the acceptance suite: reference tables, the synthetic
//! patrol benchmark and the three-pass field replay.

pub mod field;
pub mod passes;
pub mod tables;
