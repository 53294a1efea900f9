//! Test-time learning with an evolving library of knowledge abstractions.
//!
//! An agent samples skills and insights from a weighted [`library::Library`],
//! solves tasks with them in context, extracts new abstractions from its best
//! attempt, consolidates them into the library and re-weights entries by
//! information gain and future information gain ([`credit`]).

pub mod config;
pub mod cost;
pub mod credit;
pub mod engine;
pub mod error;
pub mod extraction;
pub mod ids;
pub mod library;
pub mod persistence;
pub mod providers;
pub mod simworld;
