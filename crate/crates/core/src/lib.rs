//! Seed-reproducible simulator for Spiral-of-Silence dynamics among rating
//! agents, with the trend and concentration metrics used to detect them.
//!
//! Agents rate one movie at a time in a randomized order. Depending on the
//! scenario, each agent sees a persona description, the running average of
//! earlier ratings, both, or neither. The resulting sequences are summarised
//! with the majority-conforming opinion (MCO) series, Mann–Kendall `S`,
//! Spearman `rho`, late-window excess kurtosis and interquartile range.

pub mod agents;
pub mod aggregation;
pub mod analysis;
pub mod export;
pub mod files;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod simulation;

pub use model::{
    validate_config, MovieItem, Persona, RatingEvent, RatingScale, RatingSequence, RatingValue,
    Scenario, ScenarioConfig, SyntheticPolicy,
};
pub use seed::derive_seed;
