//! Agent seam and scripted baseline policies.
//!
//! Every agent, scripted or LLM-backed, sees only an [`Observation`] and its
//! [`PolicyContext`]. The scripted policies are deterministic instruments for
//! checking the environment and the metrics; none of them sends messages
//! except [`AnnouncePolicy`], which exists to exercise the message bus.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{Action, Decision, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simultaneous,
    Sequential,
}

/// Episode-level facts a policy may know.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub mode: Mode,
    pub n: usize,
    pub comms: bool,
}

/// Per-philosopher decision context. Each philosopher owns an independent
/// random stream derived from the episode seed, so decisions do not depend on
/// the order in which philosophers are polled.
#[derive(Debug, Clone)]
pub struct PolicyContext {
    pub episode: EpisodeConfig,
    /// Simulation timestep about to be applied, starting at 0.
    pub timestep: u32,
    rng: ChaCha8Rng,
}

impl PolicyContext {
    pub fn new(episode: EpisodeConfig, episode_seed: u64, philosopher: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        rng.set_stream(philosopher as u64);
        PolicyContext {
            episode,
            timestep: 0,
            rng,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Raw request/response text exchanged with a remote model for one decision.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    /// Request body, identical for every attempt.
    pub request: String,
    pub attempts: Vec<Attempt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
    pub tokens: u64,
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    fn decide(&mut self, obs: &Observation, ctx: &mut PolicyContext) -> Result<Decision>;

    /// Whether `decide` blocks on I/O, so a simultaneous timestep should poll
    /// philosophers concurrently.
    fn is_remote(&self) -> bool {
        false
    }

    /// Takes the model exchange behind the most recent decision, if any.
    fn take_exchange(&mut self) -> Option<Exchange> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn grab(self) -> Action {
        match self {
            Side::Left => Action::GrabLeft,
            Side::Right => Action::GrabRight,
        }
    }

    fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

fn holds(obs: &Observation, side: Side) -> bool {
    match side {
        Side::Left => obs.holds_left,
        Side::Right => obs.holds_right,
    }
}

fn available(obs: &Observation, side: Side) -> bool {
    match side {
        Side::Left => obs.left_fork_available,
        Side::Right => obs.right_fork_available,
    }
}

/// First fork `first`, then the other; never releases.
fn ordered_grab(obs: &Observation, first: Side) -> Action {
    let second = first.other();
    if !holds(obs, first) && available(obs, first) {
        first.grab()
    } else if holds(obs, first) && available(obs, second) {
        second.grab()
    } else {
        Action::Wait
    }
}

/// Grabs one side first, then the other, and never lets go. Everyone running
/// this at once in simultaneous mode deadlocks after one timestep.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    first: Side,
}

impl GreedyPolicy {
    pub fn new(first: Side) -> Self {
        GreedyPolicy { first }
    }
}

pub fn greedy_decision(obs: &Observation, first: Side) -> Decision {
    Decision::new(ordered_grab(obs, first))
}

impl Policy for GreedyPolicy {
    fn name(&self) -> &str {
        match self.first {
            Side::Left => "greedy-left",
            Side::Right => "greedy-right",
        }
    }

    fn decide(&mut self, obs: &Observation, _ctx: &mut PolicyContext) -> Result<Decision> {
        Ok(greedy_decision(obs, self.first))
    }
}

/// Resource hierarchy: take the lower-numbered adjacent fork first.
#[derive(Debug, Clone, Default)]
pub struct DijkstraPolicy;

pub fn dijkstra_decision(obs: &Observation, n: usize) -> Decision {
    let left = obs.self_id.left_fork();
    let right = obs.self_id.right_fork(n);
    let lower = if left < right {
        Side::Left
    } else {
        Side::Right
    };
    Decision::new(ordered_grab(obs, lower))
}

impl Policy for DijkstraPolicy {
    fn name(&self) -> &str {
        "dijkstra"
    }

    fn decide(&mut self, obs: &Observation, ctx: &mut PolicyContext) -> Result<Decision> {
        Ok(dijkstra_decision(obs, ctx.episode.n))
    }
}

/// Uniform over the four actions.
#[derive(Debug, Clone, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, _obs: &Observation, ctx: &mut PolicyContext) -> Result<Decision> {
        let action = Action::ALL[ctx.rng().gen_range(0..Action::ALL.len())];
        Ok(Decision::new(action))
    }
}

/// Greedy-left that gives up a single fork when the other is taken.
#[derive(Debug, Clone, Default)]
pub struct PolitePolicy;

pub fn polite_decision(obs: &Observation) -> Decision {
    let holding_one = obs.holds_left != obs.holds_right;
    let other_blocked = (obs.holds_left && !obs.right_fork_available)
        || (obs.holds_right && !obs.left_fork_available);
    if holding_one && other_blocked {
        Decision::new(Action::Release)
    } else {
        greedy_decision(obs, Side::Left)
    }
}

impl Policy for PolitePolicy {
    fn name(&self) -> &str {
        "polite"
    }

    fn decide(&mut self, obs: &Observation, _ctx: &mut PolicyContext) -> Result<Decision> {
        Ok(polite_decision(obs))
    }
}

/// Dijkstra ordering that announces each action to its neighbors, e.g.
/// "I will grab left". Used to exercise message delivery and consistency
/// scoring with a known-truthful speaker.
#[derive(Debug, Clone, Default)]
pub struct AnnouncePolicy;

impl Policy for AnnouncePolicy {
    fn name(&self) -> &str {
        "announce"
    }

    fn decide(&mut self, obs: &Observation, ctx: &mut PolicyContext) -> Result<Decision> {
        let decision = dijkstra_decision(obs, ctx.episode.n);
        let text = match decision.action {
            Action::GrabLeft => "I will grab left",
            Action::GrabRight => "I will grab right",
            Action::Release => "I will release my forks",
            Action::Wait => "I will wait",
        };
        Ok(decision.with_message(Some(text)))
    }
}

/// Names accepted on the command line for scripted policies and the LLM
/// adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    GreedyLeft,
    GreedyRight,
    Dijkstra,
    Random,
    Polite,
    Announce,
    Llm,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::GreedyLeft,
        PolicyKind::GreedyRight,
        PolicyKind::Dijkstra,
        PolicyKind::Random,
        PolicyKind::Polite,
        PolicyKind::Announce,
        PolicyKind::Llm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::GreedyLeft => "greedy-left",
            PolicyKind::GreedyRight => "greedy-right",
            PolicyKind::Dijkstra => "dijkstra",
            PolicyKind::Random => "random",
            PolicyKind::Polite => "polite",
            PolicyKind::Announce => "announce",
            PolicyKind::Llm => "llm",
        }
    }

    /// Builds a scripted policy; `None` for [`PolicyKind::Llm`], which needs
    /// an endpoint.
    pub fn scripted(self) -> Option<Box<dyn Policy>> {
        Some(match self {
            PolicyKind::GreedyLeft => Box::new(GreedyPolicy::new(Side::Left)),
            PolicyKind::GreedyRight => Box::new(GreedyPolicy::new(Side::Right)),
            PolicyKind::Dijkstra => Box::new(DijkstraPolicy),
            PolicyKind::Random => Box::new(RandomPolicy),
            PolicyKind::Polite => Box::new(PolitePolicy),
            PolicyKind::Announce => Box::new(AnnouncePolicy),
            PolicyKind::Llm => return None,
        })
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownPolicy(s.to_string()))
    }
}
