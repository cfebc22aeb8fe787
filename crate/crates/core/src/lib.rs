//! Simulation toolkit for multi-task multi-armed bandits with ε-dissimilar
//! players: instance generation, activation schedules, policies, regret
//! analytics and empirical concentration checks.

pub mod env;
pub mod experiment;
pub mod metrics;
pub mod policies;
pub mod protocol;
pub mod rng;
pub mod validator;
