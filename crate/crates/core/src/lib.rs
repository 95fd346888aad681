#![no_std]
//! Probabilistic shields for Markov decision processes.
//!
//! The crate is `no_std` (with `alloc`); file formats, the CLI and parallel
//! simulation live in the `probshield` companion crate.

extern crate alloc;

pub mod agents;
pub mod constructed;
pub mod dist;
pub mod eval;
pub mod error;
pub mod fixtures;
pub mod history;
pub mod lp;
pub mod memoryless;
pub mod ids;
pub mod mdp;
pub mod num;
pub mod oracle;
pub mod shields;
pub mod valuation;

pub use dist::{Dist, DistKey};
pub use error::{Error, Result};
pub use history::{History, HistoryRef, Path, Step};
pub use ids::{ActionId, StateId};
pub use mdp::{Mdp, MdpBuilder, Transition};
pub use num::{NumericMode, Prob, Rational};
pub use valuation::{Analysis, Objective, ValueVector};
pub use shields::{Shield, ShieldDecision, MarkovShield};
pub use constructed::{construct_offline, ConstructedShield, HistoryTrie, OnlineShield};
pub use agents::{make_agent, Agent, AgentKind, AgentParams};
pub use eval::{exact_eval, EvalReport, ExactEval, Method, SimConfig};
pub use memoryless::MemorylessShield;
