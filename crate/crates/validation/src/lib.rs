//! Acceptance suite for the workspace. The checks live in `tests/acceptance.rs`;
//! this crate has no library code of its own.
