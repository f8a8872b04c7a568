//! Angelfish and multi-leader Angelfish DAG-BFT consensus.
//!
//! The crate is organised bottom-up: value types and their canonical
//! encoding, simulated signatures, reliable broadcast, the local DAG store,
//! the per-party protocol state machine, a deterministic discrete-event
//! simulator and a scenario harness with safety and liveness checkers.

pub mod broadcast;
pub mod codec;
pub mod crypto;
pub mod dag;
pub mod harness;
pub mod node;
pub mod schedule;
pub mod sim;
pub mod types;

pub use broadcast::{Dest, RbcEngine, RbcEvent};
pub use codec::{Message, MessageKind, RbcMessage};
pub use crypto::{AggregateSignature, Keyring, Signature};
pub use dag::DagStore;
pub use node::{Node, NodeConfig, NodeEvent, Output, RejectReason};
pub use schedule::{LeaderSchedule, ProposerPolicy};
pub use types::*;
