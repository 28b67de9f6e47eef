//! The dining table state machine.
//!
//! Philosopher `i` sits between fork `i` (their left) and fork `(i + 1) % n`
//! (their right). Under this convention every philosopher grabbing their
//! left fork on a fresh table is contention-free and ends in a circular wait.
//!
//! A timestep is applied in four phases: releases, grabs (ascending
//! philosopher id, so the lower id wins a contested fork), eating with
//! automatic release, and the timestep increment. Eating never persists to a
//! decision point: every philosopher is [`Status::Hungry`] whenever a policy
//! is asked to decide.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest message, in characters, a philosopher may send per turn.
pub const MAX_MESSAGE_CHARS: usize = 240;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhilosopherId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ForkId(pub usize);

impl fmt::Display for PhilosopherId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Philosopher {}", self.0)
    }
}

impl PhilosopherId {
    pub fn left_fork(self) -> ForkId {
        ForkId(self.0)
    }

    pub fn right_fork(self, n: usize) -> ForkId {
        ForkId((self.0 + 1) % n)
    }

    /// The neighbor sharing this philosopher's left fork.
    pub fn left_neighbor(self, n: usize) -> PhilosopherId {
        PhilosopherId((self.0 + n - 1) % n)
    }

    /// The neighbor sharing this philosopher's right fork.
    pub fn right_neighbor(self, n: usize) -> PhilosopherId {
        PhilosopherId((self.0 + 1) % n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    GrabLeft,
    GrabRight,
    Release,
    Wait,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::GrabLeft,
        Action::GrabRight,
        Action::Release,
        Action::Wait,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::GrabLeft => "GRAB_LEFT",
            Action::GrabRight => "GRAB_RIGHT",
            Action::Release => "RELEASE",
            Action::Wait => "WAIT",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown action `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Hungry,
    Eating,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Hungry => "HUNGRY",
            Status::Eating => "EATING",
        }
    }
}

/// One philosopher's output for a turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default)]
    pub thinking: String,
    pub parse_ok: bool,
}

impl Decision {
    pub fn new(action: Action) -> Self {
        Decision {
            action,
            message: None,
            thinking: String::new(),
            parse_ok: true,
        }
    }

    /// The fallback for output that could not be understood.
    pub fn unparsed(thinking: impl Into<String>) -> Self {
        Decision {
            action: Action::Wait,
            message: None,
            thinking: thinking.into(),
            parse_ok: false,
        }
    }

    pub fn with_message(mut self, message: Option<&str>) -> Self {
        self.message = normalize_message(message);
        self
    }

    pub fn with_thinking(mut self, thinking: impl Into<String>) -> Self {
        self.thinking = thinking.into();
        self
    }
}

/// Trims a message, maps empty text and the literal `None` to absent, and
/// truncates to [`MAX_MESSAGE_CHARS`].
pub fn normalize_message(message: Option<&str>) -> Option<String> {
    let text = message?.trim();
    if text.is_empty() || text.eq_ignore_ascii_case("none") {
        return None;
    }
    Some(text.chars().take(MAX_MESSAGE_CHARS).collect())
}

/// Messages delivered to one philosopher from the previous timestep.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborMessages {
    pub left: Option<String>,
    pub right: Option<String>,
}

/// What a single philosopher can see.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub self_id: PhilosopherId,
    pub status: Status,
    pub meals_eaten: u32,
    pub holds_left: bool,
    pub holds_right: bool,
    pub left_fork_available: bool,
    pub right_fork_available: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_message: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrabOutcome {
    Succeeded,
    Failed,
    /// The fork was already held by the grabbing philosopher.
    NoOp,
}

/// What happened to one philosopher during a timestep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhilosopherEvent {
    pub philosopher: PhilosopherId,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grab: Option<GrabOutcome>,
    /// Forks dropped by an explicit RELEASE.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub released: Vec<ForkId>,
    pub ate: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub auto_released: Vec<ForkId>,
}

impl PhilosopherEvent {
    /// Status shown for this philosopher inside the timestep record.
    pub fn status(&self) -> Status {
        if self.ate {
            Status::Eating
        } else {
            Status::Hungry
        }
    }
}

/// Per-philosopher events of one applied timestep, in ascending id order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEvents {
    pub philosophers: Vec<PhilosopherEvent>,
}

impl StepEvents {
    pub fn meals_served(&self) -> usize {
        self.philosophers.iter().filter(|e| e.ate).count()
    }
}

/// Full simulation state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableState {
    fork_owner: Vec<Option<PhilosopherId>>,
    status: Vec<Status>,
    meals: Vec<u32>,
    timestep: u32,
}

impl TableState {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidConfiguration(format!(
                "a table needs at least 3 philosophers, got {n}"
            )));
        }
        Ok(TableState {
            fork_owner: vec![None; n],
            status: vec![Status::Hungry; n],
            meals: vec![0; n],
            timestep: 0,
        })
    }

    /// Builds an arbitrary state, checking the structural invariants: equal
    /// vector lengths, n ≥ 3, and every fork owned only by a philosopher
    /// adjacent to it.
    pub fn from_parts(
        fork_owner: Vec<Option<PhilosopherId>>,
        status: Vec<Status>,
        meals: Vec<u32>,
        timestep: u32,
    ) -> Result<Self> {
        let n = fork_owner.len();
        if n < 3 {
            return Err(Error::InvalidConfiguration(format!(
                "a table needs at least 3 philosophers, got {n}"
            )));
        }
        if status.len() != n || meals.len() != n {
            return Err(Error::InvalidArgument(format!(
                "state vectors disagree on n: forks {n}, status {}, meals {}",
                status.len(),
                meals.len()
            )));
        }
        for (fork, owner) in fork_owner.iter().enumerate() {
            if let Some(p) = owner {
                let adjacent = p.0 < n && (p.left_fork().0 == fork || p.right_fork(n).0 == fork);
                if !adjacent {
                    return Err(Error::InvalidArgument(format!(
                        "fork {fork} cannot be held by philosopher {}",
                        p.0
                    )));
                }
            }
        }
        Ok(TableState {
            fork_owner,
            status,
            meals,
            timestep,
        })
    }

    pub fn n(&self) -> usize {
        self.fork_owner.len()
    }

    pub fn timestep(&self) -> u32 {
        self.timestep
    }

    pub fn meals(&self) -> &[u32] {
        &self.meals
    }

    pub fn statuses(&self) -> &[Status] {
        &self.status
    }

    pub fn fork_owners(&self) -> &[Option<PhilosopherId>] {
        &self.fork_owner
    }

    pub fn owner(&self, fork: ForkId) -> Option<PhilosopherId> {
        self.fork_owner[fork.0]
    }

    pub fn forks_held(&self, pid: PhilosopherId) -> usize {
        self.fork_owner.iter().filter(|o| **o == Some(pid)).count()
    }

    pub fn free_forks(&self) -> usize {
        self.fork_owner.iter().filter(|o| o.is_none()).count()
    }

    /// The philosopher whose turn it is in sequential mode.
    pub fn next_in_turn(&self) -> PhilosopherId {
        PhilosopherId(self.timestep as usize % self.n())
    }

    fn check_pid(&self, pid: PhilosopherId) -> Result<()> {
        if pid.0 >= self.n() {
            return Err(Error::InvalidArgument(format!(
                "philosopher {} out of range for n={}",
                pid.0,
                self.n()
            )));
        }
        Ok(())
    }

    /// Local view for `pid`. Pass `inbox` only when communication is enabled.
    pub fn observe(
        &self,
        pid: PhilosopherId,
        inbox: Option<&NeighborMessages>,
    ) -> Result<Observation> {
        self.check_pid(pid)?;
        let n = self.n();
        let left = self.owner(pid.left_fork());
        let right = self.owner(pid.right_fork(n));
        let (left_message, right_message) = match inbox {
            Some(m) => (m.left.clone(), m.right.clone()),
            None => (None, None),
        };
        Ok(Observation {
            self_id: pid,
            status: self.status[pid.0],
            meals_eaten: self.meals[pid.0],
            holds_left: left == Some(pid),
            holds_right: right == Some(pid),
            left_fork_available: left.is_none(),
            right_fork_available: right.is_none(),
            left_message,
            right_message,
        })
    }

    /// Applies one decision per philosopher against the same snapshot.
    pub fn apply_simultaneous(&self, decisions: &[Decision]) -> Result<(TableState, StepEvents)> {
        if decisions.len() != self.n() {
            return Err(Error::InvalidArgument(format!(
                "expected {} decisions, got {}",
                self.n(),
                decisions.len()
            )));
        }
        let actions: Vec<(PhilosopherId, Action)> = decisions
            .iter()
            .enumerate()
            .map(|(i, d)| (PhilosopherId(i), d.action))
            .collect();
        Ok(self.apply(&actions))
    }

    /// Applies the action of the philosopher whose turn it is. One action is
    /// one timestep.
    pub fn apply_sequential(
        &self,
        pid: PhilosopherId,
        decision: &Decision,
    ) -> Result<(TableState, StepEvents)> {
        self.check_pid(pid)?;
        let expected = self.next_in_turn();
        if pid != expected {
            return Err(Error::InvalidArgument(format!(
                "philosopher {} acted out of turn; it is philosopher {}'s turn",
                pid.0, expected.0
            )));
        }
        Ok(self.apply(&[(pid, decision.action)]))
    }

    /// `actions` must be sorted by ascending philosopher id.
    fn apply(&self, actions: &[(PhilosopherId, Action)]) -> (TableState, StepEvents) {
        let n = self.n();
        let mut next = self.clone();
        let mut events: Vec<PhilosopherEvent> = actions
            .iter()
            .map(|&(philosopher, action)| PhilosopherEvent {
                philosopher,
                action,
                grab: None,
                released: Vec::new(),
                ate: false,
                auto_released: Vec::new(),
            })
            .collect();

        for event in events.iter_mut().filter(|e| e.action == Action::Release) {
            event.released = next.drop_forks(event.philosopher);
        }

        for event in events.iter_mut() {
            let fork = match event.action {
                Action::GrabLeft => event.philosopher.left_fork(),
                Action::GrabRight => event.philosopher.right_fork(n),
                _ => continue,
            };
            let slot = &mut next.fork_owner[fork.0];
            event.grab = Some(match *slot {
                Some(owner) if owner == event.philosopher => GrabOutcome::NoOp,
                Some(_) => GrabOutcome::Failed,
                None => {
                    *slot = Some(event.philosopher);
                    GrabOutcome::Succeeded
                }
            });
        }

        // Only actors can newly reach two forks.
        for event in events.iter_mut() {
            if next.forks_held(event.philosopher) == 2 {
                event.ate = true;
                next.meals[event.philosopher.0] += 1;
                event.auto_released = next.drop_forks(event.philosopher);
            }
        }

        next.status.fill(Status::Hungry);
        next.timestep += 1;
        (
            next,
            StepEvents {
                philosophers: events,
            },
        )
    }

    fn drop_forks(&mut self, pid: PhilosopherId) -> Vec<ForkId> {
        let mut dropped = Vec::new();
        for (fork, owner) in self.fork_owner.iter_mut().enumerate() {
            if *owner == Some(pid) {
                *owner = None;
                dropped.push(ForkId(fork));
            }
        }
        dropped
    }

    /// Structural deadlock: every philosopher is hungry and holds exactly
    /// one fork.
    pub fn is_deadlocked(&self) -> bool {
        self.status.iter().all(|s| *s == Status::Hungry)
            && (0..self.n()).all(|i| self.forks_held(PhilosopherId(i)) == 1)
    }
}
