//! A lockstep dining philosophers environment for measuring how agents
//! coordinate under resource contention.
//!
//! [`table`] holds the state machine, [`policy`] the agent seam with scripted
//! baselines, [`llm`] the chat-model adapter, [`metrics`] the coordination
//! metrics, and [`runner`] / [`transcript`] / [`report`] the orchestration,
//! replayable JSONL transcripts and rendered tables.

pub mod condition;
pub mod error;
pub mod llm;
pub mod metrics;
pub mod policy;
pub mod report;
pub mod runner;
pub mod table;
pub mod transcript;

pub use condition::ConditionCode;
pub use error::{Error, Result};
pub use metrics::{ConditionReport, EpisodeResult};
pub use policy::{EpisodeConfig, Mode, Policy, PolicyContext, PolicyKind};
pub use runner::{run_condition, run_episode, PolicySpec, RunConfig};
pub use table::{
    Action, Decision, ForkId, Observation, PhilosopherId, Status, StepEvents, TableState,
};
pub use transcript::{verify, Transcript};
