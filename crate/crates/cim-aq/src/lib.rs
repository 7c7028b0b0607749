//! Reinforcement-learning mixed-precision search.
//!
//! A DDPG agent walks the CIM layers of a model once per episode, emitting a
//! continuous `(weight, activation)` action per layer that is decoded into
//! bit widths, projected onto the active hardware constraints, scored by an
//! accuracy oracle plus the analytic cost model, and rewarded once per
//! episode. The crate provides the agent ([`ddpg`]), the layer environment
//! ([`env`]), two accuracy oracles ([`oracle`]), and the search driver with a
//! brute-force reference optimizer ([`search`]).

pub mod ddpg;
pub mod env;
pub mod nn;
pub mod oracle;
pub mod search;

pub use ddpg::Agent;
pub use env::{accuracy_target, action_to_bits, reward, LayerSpace, Role};
pub use oracle::{AccuracyOracle, SyntheticOracle, ToyQatOracle};
pub use search::{brute_force_best, search, SearchParams, SearchResult};
