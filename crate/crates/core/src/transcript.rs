//! JSONL episode transcripts and the replay verifier.
//!
//! One file per episode: a `header` line, one `step` line per applied
//! timestep, then a `footer` line with the episode result (or an `aborted`
//! line when the episode stopped on a run error). Every post-state is
//! recorded so that [`verify`] can re-derive the whole episode from the
//! recorded decisions.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::condition::ConditionCode;
use crate::error::{Error, Result};
use crate::llm::CallAccounting;
use crate::metrics::{EpisodeResult, MessageSample};
use crate::policy::{Exchange, Mode};
use crate::table::{
    Decision, NeighborMessages, Observation, PhilosopherId, StepEvents, TableState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSummary {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub condition: ConditionCode,
    pub episode: u32,
    /// Base seed of the run; the episode seed is `seed + episode`.
    pub seed: u64,
    pub episode_seed: u64,
    pub max_timesteps: u32,
    pub policies: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<EndpointSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhilosopherExchange {
    pub philosopher: PhilosopherId,
    pub exchange: Exchange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Timestep count after this step was applied.
    pub timestep: u32,
    /// The acting philosopher in sequential mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<PhilosopherId>,
    pub observations: Vec<Observation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exchanges: Vec<PhilosopherExchange>,
    pub decisions: Vec<Decision>,
    pub events: StepEvents,
    pub state: TableState,
    pub deadlocked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Header(Header),
    Step(StepRecord),
    Footer { result: EpisodeResult },
    Aborted { timestep: u32, error: String },
}

/// An episode transcript held in memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub records: Vec<Record>,
}

impl Transcript {
    pub fn push(&mut self, record: Record) {
        self.records.push(record);
    }

    pub fn header(&self) -> Option<&Header> {
        match self.records.first() {
            Some(Record::Header(h)) => Some(h),
            _ => None,
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            Record::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn result(&self) -> Option<&EpisodeResult> {
        self.records.iter().find_map(|r| match r {
            Record::Footer { result } => Some(result),
            _ => None,
        })
    }

    /// Every decision's message paired with the action taken.
    pub fn message_samples(&self) -> Vec<MessageSample> {
        self.steps()
            .flat_map(|s| s.decisions.iter())
            .map(|d| MessageSample {
                message: d.message.clone(),
                action: d.action,
            })
            .collect()
    }

    /// API usage recorded in the transcript's model exchanges.
    pub fn accounting(&self) -> Option<CallAccounting> {
        let mut acct = CallAccounting::default();
        let mut any = false;
        for step in self.steps() {
            for ex in &step.exchanges {
                any = true;
                for attempt in &ex.exchange.attempts {
                    acct.record_attempt(attempt);
                }
            }
            if !step.exchanges.is_empty() {
                acct.parse_failures += step.decisions.iter().filter(|d| !d.parse_ok).count() as u64;
            }
        }
        any.then_some(acct)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = fs::File::create(path)?;
        file.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|e| Error::Transcript {
                path: path.to_path_buf(),
                detail: format!("line {}: {e}", i + 1),
            })?;
            records.push(record);
        }
        Ok(Transcript { records })
    }
}

/// Delivers messages with a one-timestep delay. `delivered[i]` holds what
/// philosopher `i` sent in the previous timestep.
#[derive(Debug, Clone)]
pub struct MessageBus {
    n: usize,
    comms: bool,
    delivered: Vec<Option<String>>,
}

impl MessageBus {
    pub fn new(n: usize, comms: bool) -> Self {
        MessageBus {
            n,
            comms,
            delivered: vec![None; n],
        }
    }

    /// What `pid` sees this timestep; `None` when communication is off.
    pub fn inbox(&self, pid: PhilosopherId) -> Option<NeighborMessages> {
        self.comms.then(|| NeighborMessages {
            left: self.delivered[pid.left_neighbor(self.n).0].clone(),
            right: self.delivered[pid.right_neighbor(self.n).0].clone(),
        })
    }

    /// Replaces the delivered messages with those sent in the timestep just
    /// applied. Philosophers who did not act or sent nothing deliver nothing.
    pub fn advance<'a>(
        &mut self,
        sent: impl IntoIterator<Item = (PhilosopherId, Option<&'a str>)>,
    ) {
        self.delivered.fill(None);
        if !self.comms {
            return;
        }
        for (pid, message) in sent {
            self.delivered[pid.0] = message.map(str::to_string);
        }
    }
}

/// Summary of a successful replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplaySummary {
    pub steps: usize,
    pub final_state: TableState,
    pub result: Option<EpisodeResult>,
    pub aborted: bool,
}

fn mismatch(line: usize, detail: impl Into<String>) -> Error {
    Error::ReplayMismatch {
        line,
        detail: detail.into(),
    }
}

/// Re-runs the episode from its recorded decisions and checks every
/// recorded observation, event list, post-state, deadlock flag and the final
/// result. Observations are rebuilt from the pre-step state and the message
/// bus, which also checks snapshot isolation, sequential visibility and the
/// one-timestep message delay.
pub fn verify(transcript: &Transcript) -> Result<ReplaySummary> {
    let header = transcript
        .header()
        .ok_or_else(|| mismatch(1, "first record is not a header"))?;
    let code = header.condition;
    let n = code.n;
    let mut table = TableState::new(n)?;
    let mut bus = MessageBus::new(n, code.comms);
    let mut steps = 0;
    let mut deadlock_at = None;
    let mut result = None;
    let mut aborted = false;

    for (idx, record) in transcript.records.iter().enumerate().skip(1) {
        let line = idx + 1;
        if result.is_some() || aborted {
            return Err(mismatch(line, "record after end of episode"));
        }
        match record {
            Record::Header(_) => return Err(mismatch(line, "duplicate header")),
            Record::Step(step) => {
                if deadlock_at.is_some() {
                    return Err(mismatch(line, "step recorded after deadlock"));
                }
                if table.timestep() >= header.max_timesteps {
                    return Err(mismatch(line, "step beyond max_timesteps"));
                }
                let actors: Vec<PhilosopherId> = match code.mode {
                    Mode::Simultaneous => {
                        if step.actor.is_some() {
                            return Err(mismatch(line, "actor recorded in simultaneous mode"));
                        }
                        (0..n).map(PhilosopherId).collect()
                    }
                    Mode::Sequential => {
                        let expected = table.next_in_turn();
                        if step.actor != Some(expected) {
                            return Err(mismatch(
                                line,
                                format!(
                                    "actor {:?}, expected philosopher {}",
                                    step.actor, expected.0
                                ),
                            ));
                        }
                        vec![expected]
                    }
                };
                if step.observations.len() != actors.len() || step.decisions.len() != actors.len() {
                    return Err(mismatch(
                        line,
                        "observation/decision count does not match actors",
                    ));
                }
                for (pid, recorded) in actors.iter().zip(&step.observations) {
                    let expected = table.observe(*pid, bus.inbox(*pid).as_ref())?;
                    if *recorded != expected {
                        return Err(mismatch(
                            line,
                            format!("observation of philosopher {} differs from replay", pid.0),
                        ));
                    }
                }
                for d in &step.decisions {
                    if !d.parse_ok && d.action != crate::table::Action::Wait {
                        return Err(mismatch(line, "unparsed decision with non-WAIT action"));
                    }
                    if !code.comms && d.message.is_some() {
                        return Err(mismatch(line, "message sent with communication disabled"));
                    }
                }
                let (next, events) = match code.mode {
                    Mode::Simultaneous => table.apply_simultaneous(&step.decisions)?,
                    Mode::Sequential => table.apply_sequential(actors[0], &step.decisions[0])?,
                };
                if events != step.events {
                    return Err(mismatch(line, "events differ from replay"));
                }
                if next != step.state {
                    return Err(mismatch(line, "post-state differs from replay"));
                }
                if step.timestep != next.timestep() {
                    return Err(mismatch(line, "timestep label differs from replay"));
                }
                if step.deadlocked != next.is_deadlocked() {
                    return Err(mismatch(line, "deadlock flag differs from replay"));
                }
                bus.advance(
                    actors
                        .iter()
                        .copied()
                        .zip(step.decisions.iter().map(|d| d.message.as_deref())),
                );
                if next.is_deadlocked() {
                    deadlock_at = Some(next.timestep());
                }
                table = next;
                steps += 1;
            }
            Record::Footer { result: recorded } => {
                if deadlock_at.is_none() && table.timestep() != header.max_timesteps {
                    return Err(mismatch(line, "episode ended before deadlock or horizon"));
                }
                let mut expected =
                    EpisodeResult::new(table.meals().to_vec(), table.timestep(), deadlock_at);
                expected.transcript = recorded.transcript.clone();
                if *recorded != expected {
                    return Err(mismatch(line, "episode result differs from replay"));
                }
                result = Some(expected);
            }
            Record::Aborted { .. } => aborted = true,
        }
    }
    if result.is_none() && !aborted {
        return Err(mismatch(transcript.records.len(), "missing footer"));
    }
    Ok(ReplaySummary {
        steps,
        final_state: table,
        result,
        aborted,
    })
}

/// A message consumed at a timestep that was not sent by that neighbor in
/// the immediately preceding timestep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayViolation {
    pub timestep: u32,
    pub receiver: PhilosopherId,
    pub message: String,
}

/// Checks, from the transcript alone, that every message seen in an
/// observation was sent by the matching neighbor exactly one timestep
/// earlier. Returns the violations together with the number of consumed
/// messages examined.
pub fn check_message_delay(transcript: &Transcript) -> Result<(usize, Vec<DelayViolation>)> {
    let header = transcript
        .header()
        .ok_or_else(|| mismatch(1, "first record is not a header"))?;
    let n = header.condition.n;
    let steps: Vec<&StepRecord> = transcript.steps().collect();
    let sent_by = |step: &StepRecord, pid: PhilosopherId| -> Option<String> {
        let idx = match step.actor {
            Some(a) if a == pid => 0,
            Some(_) => return None,
            None => pid.0,
        };
        step.decisions.get(idx).and_then(|d| d.message.clone())
    };

    let mut consumed = 0;
    let mut violations = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        for obs in &step.observations {
            let pairs = [
                (&obs.left_message, obs.self_id.left_neighbor(n)),
                (&obs.right_message, obs.self_id.right_neighbor(n)),
            ];
            for (message, sender) in pairs {
                let Some(message) = message else { continue };
                consumed += 1;
                let previous = i.checked_sub(1).map(|p| steps[p]);
                let ok = previous.is_some_and(|prev| {
                    prev.timestep + 1 == step.timestep
                        && sent_by(prev, sender).as_deref() == Some(message.as_str())
                });
                if !ok {
                    violations.push(DelayViolation {
                        timestep: step.timestep,
                        receiver: obs.self_id,
                        message: message.clone(),
                    });
                }
            }
        }
    }
    Ok((consumed, violations))
}
