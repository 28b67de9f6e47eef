//! Episode and condition orchestration.
//!
//! Simultaneous mode builds every observation from the same pre-step
//! snapshot, collects all decisions (concurrently for remote policies), then
//! applies them in philosopher-id order. Sequential mode runs a fixed
//! round-robin 0, 1, …, n−1 where each single action is one timestep.
//! Episodes stop at the first structural deadlock or at `max_timesteps`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use crate::condition::ConditionCode;
use crate::error::{Error, Result};
use crate::llm::{ChatBackend, HttpChatBackend, LlmEndpointConfig, LlmPolicy, SharedAccounting};
use crate::metrics::{aggregate_condition, ConditionReport, EpisodeResult};
use crate::policy::{Mode, Policy, PolicyContext, PolicyKind};
use crate::table::{Decision, Observation, PhilosopherId, TableState};
use crate::transcript::{
    EndpointSummary, Header, MessageBus, PhilosopherExchange, Record, StepRecord, Transcript,
};

pub const DEFAULT_EPISODES: u32 = 20;
pub const DEFAULT_MAX_TIMESTEPS: u32 = 30;
pub const DEFAULT_SEED: u64 = 42;

/// One policy for every seat, or one per seat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicySpec {
    Uniform(PolicyKind),
    PerSlot(Vec<PolicyKind>),
}

impl PolicySpec {
    pub fn kinds(&self, n: usize) -> Result<Vec<PolicyKind>> {
        match self {
            PolicySpec::Uniform(k) => Ok(vec![*k; n]),
            PolicySpec::PerSlot(v) if v.len() == n => Ok(v.clone()),
            PolicySpec::PerSlot(v) => Err(Error::InvalidConfiguration(format!(
                "{} per-seat policies given for {n} philosophers",
                v.len()
            ))),
        }
    }

    pub fn uses_llm(&self) -> bool {
        match self {
            PolicySpec::Uniform(k) => *k == PolicyKind::Llm,
            PolicySpec::PerSlot(v) => v.contains(&PolicyKind::Llm),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Uniform(k) => write!(f, "{k}"),
            PolicySpec::PerSlot(v) => {
                let names: Vec<&str> = v.iter().map(|k| k.as_str()).collect();
                f.write_str(&names.join(","))
            }
        }
    }
}

/// `dijkstra` for a uniform table, `dijkstra,greedy-left,random` per seat.
impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kinds = s
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<Vec<PolicyKind>>>()?;
        Ok(match kinds.as_slice() {
            [single] => PolicySpec::Uniform(*single),
            _ => PolicySpec::PerSlot(kinds),
        })
    }
}

/// Chat backend plus shared accounting for LLM seats.
#[derive(Clone)]
pub struct LlmSetup {
    pub endpoint: LlmEndpointConfig,
    pub backend: Arc<dyn ChatBackend>,
    pub accounting: SharedAccounting,
    /// Scrubbed from transcripts.
    pub secret: Option<String>,
}

impl LlmSetup {
    pub fn new(endpoint: LlmEndpointConfig, backend: Arc<dyn ChatBackend>) -> Self {
        LlmSetup {
            endpoint,
            backend,
            accounting: SharedAccounting::default(),
            secret: None,
        }
    }

    /// HTTP backend with the key taken from the configured environment
    /// variable.
    pub fn from_env(endpoint: LlmEndpointConfig) -> Result<Self> {
        let backend = HttpChatBackend::from_env(&endpoint)?;
        let secret = backend.api_key().to_string();
        let mut setup = LlmSetup::new(endpoint, Arc::new(backend));
        setup.secret = Some(secret);
        Ok(setup)
    }
}

impl fmt::Debug for LlmSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmSetup")
            .field("endpoint", &self.endpoint)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub condition: ConditionCode,
    pub episodes: u32,
    pub max_timesteps: u32,
    pub seed: u64,
    pub policy: PolicySpec,
    pub llm: Option<LlmSetup>,
    /// Transcripts go to `<out_dir>/<condition>/ep<k>.jsonl` when set.
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(condition: ConditionCode, policy: PolicySpec) -> Self {
        RunConfig {
            condition,
            episodes: DEFAULT_EPISODES,
            max_timesteps: DEFAULT_MAX_TIMESTEPS,
            seed: DEFAULT_SEED,
            policy,
            llm: None,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::InvalidConfiguration(
                "episodes must be at least 1".into(),
            ));
        }
        if self.max_timesteps == 0 {
            return Err(Error::InvalidConfiguration(
                "max_timesteps must be at least 1".into(),
            ));
        }
        self.policy.kinds(self.condition.n)?;
        if self.policy.uses_llm() && self.llm.is_none() {
            return Err(Error::InvalidConfiguration(
                "policy `llm` needs an endpoint configuration".into(),
            ));
        }
        Ok(())
    }

    pub fn episode_seed(&self, episode: u32) -> u64 {
        self.seed.wrapping_add(u64::from(episode))
    }

    /// Fresh policy instances for one episode.
    pub fn build_policies(&self) -> Result<Vec<Box<dyn Policy>>> {
        self.policy
            .kinds(self.condition.n)?
            .into_iter()
            .map(|kind| match kind.scripted() {
                Some(p) => Ok(p),
                None => {
                    let llm = self.llm.as_ref().ok_or_else(|| {
                        Error::InvalidConfiguration(
                            "policy `llm` needs an endpoint configuration".into(),
                        )
                    })?;
                    let mut p = LlmPolicy::new(
                        llm.endpoint.clone(),
                        llm.backend.clone(),
                        llm.accounting.clone(),
                    );
                    if let Some(s) = &llm.secret {
                        p = p.with_secret(s.clone());
                    }
                    Ok(Box::new(p) as Box<dyn Policy>)
                }
            })
            .collect()
    }

    pub fn transcript_relpath(&self, episode: u32) -> String {
        format!("{}/ep{episode}.jsonl", self.condition)
    }
}

fn decide_all(
    policies: &mut [Box<dyn Policy>],
    observations: &[Observation],
    contexts: &mut [PolicyContext],
) -> Result<Vec<Decision>> {
    let remote = policies.iter().any(|p| p.is_remote());
    if !remote {
        return policies
            .iter_mut()
            .zip(observations)
            .zip(contexts.iter_mut())
            .map(|((p, o), c)| p.decide(o, c))
            .collect();
    }
    let outcomes: Vec<Result<Decision>> = std::thread::scope(|scope| {
        let handles: Vec<_> = policies
            .iter_mut()
            .zip(observations)
            .zip(contexts.iter_mut())
            .map(|((p, o), c)| scope.spawn(move || p.decide(o, c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("policy thread panicked"))
            .collect()
    });
    outcomes.into_iter().collect()
}

fn strip_messages(decisions: &mut [Decision], comms: bool) {
    if !comms {
        for d in decisions {
            d.message = None;
        }
    }
}

fn take_exchanges(
    policies: &mut [Box<dyn Policy>],
    actors: &[PhilosopherId],
) -> Vec<PhilosopherExchange> {
    actors
        .iter()
        .filter_map(|&pid| {
            policies[pid.0]
                .take_exchange()
                .map(|exchange| PhilosopherExchange {
                    philosopher: pid,
                    exchange,
                })
        })
        .collect()
}

/// Runs a single episode and returns its result with the full transcript.
///
/// On a run error the transcript, ending in an `aborted` record, is returned
/// alongside the error so callers can persist it.
pub fn run_episode(
    config: &RunConfig,
    episode: u32,
    policies: &mut [Box<dyn Policy>],
) -> std::result::Result<(EpisodeResult, Transcript), (Error, Transcript)> {
    let mut transcript = Transcript::default();
    match drive_episode(config, episode, policies, &mut transcript) {
        Ok(result) => Ok((result, transcript)),
        Err(e) => {
            let timestep = transcript.steps().last().map_or(0, |s| s.timestep);
            transcript.push(Record::Aborted {
                timestep,
                error: e.to_string(),
            });
            Err((e, transcript))
        }
    }
}

fn drive_episode(
    config: &RunConfig,
    episode: u32,
    policies: &mut [Box<dyn Policy>],
    transcript: &mut Transcript,
) -> Result<EpisodeResult> {
    let code = config.condition;
    let n = code.n;
    if policies.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} policies for {n} philosophers",
            policies.len()
        )));
    }
    if config.max_timesteps == 0 {
        return Err(Error::InvalidConfiguration(
            "max_timesteps must be at least 1".into(),
        ));
    }
    let episode_seed = config.episode_seed(episode);
    transcript.push(Record::Header(Header {
        condition: code,
        episode,
        seed: config.seed,
        episode_seed,
        max_timesteps: config.max_timesteps,
        policies: policies.iter().map(|p| p.name().to_string()).collect(),
        endpoint: config
            .llm
            .as_ref()
            .filter(|_| config.policy.uses_llm())
            .map(|l| EndpointSummary {
                base_url: l.endpoint.base_url.clone(),
                model: l.endpoint.model.clone(),
                temperature: l.endpoint.temperature,
                max_retries: l.endpoint.max_retries,
            }),
    }));

    let mut table = TableState::new(n)?;
    let mut bus = MessageBus::new(n, code.comms);
    let mut contexts: Vec<PolicyContext> = (0..n)
        .map(|i| PolicyContext::new(code.episode_config(), episode_seed, i))
        .collect();
    let mut deadlock_at = None;

    while deadlock_at.is_none() && table.timestep() < config.max_timesteps {
        for c in contexts.iter_mut() {
            c.timestep = table.timestep();
        }
        let (actors, observations, mut decisions) = match code.mode {
            Mode::Simultaneous => {
                let actors: Vec<PhilosopherId> = (0..n).map(PhilosopherId).collect();
                let observations = actors
                    .iter()
                    .map(|&pid| table.observe(pid, bus.inbox(pid).as_ref()))
                    .collect::<Result<Vec<_>>>()?;
                let decisions = decide_all(policies, &observations, &mut contexts)?;
                (actors, observations, decisions)
            }
            Mode::Sequential => {
                let pid = table.next_in_turn();
                let obs = table.observe(pid, bus.inbox(pid).as_ref())?;
                let decision = policies[pid.0].decide(&obs, &mut contexts[pid.0])?;
                (vec![pid], vec![obs], vec![decision])
            }
        };
        strip_messages(&mut decisions, code.comms);
        let exchanges = take_exchanges(policies, &actors);

        let (next, events) = match code.mode {
            Mode::Simultaneous => table.apply_simultaneous(&decisions)?,
            Mode::Sequential => table.apply_sequential(actors[0], &decisions[0])?,
        };
        bus.advance(
            actors
                .iter()
                .copied()
                .zip(decisions.iter().map(|d| d.message.as_deref())),
        );
        let deadlocked = next.is_deadlocked();
        if deadlocked {
            deadlock_at = Some(next.timestep());
        }
        transcript.push(Record::Step(StepRecord {
            timestep: next.timestep(),
            actor: (code.mode == Mode::Sequential).then(|| actors[0]),
            observations,
            exchanges,
            decisions,
            events,
            state: next.clone(),
            deadlocked,
        }));
        table = next;
    }

    let mut result = EpisodeResult::new(table.meals().to_vec(), table.timestep(), deadlock_at);
    if config.out_dir.is_some() {
        result.transcript = Some(config.transcript_relpath(episode));
    }
    transcript.push(Record::Footer {
        result: result.clone(),
    });
    Ok(result)
}

/// Everything produced by one condition run.
#[derive(Debug, Clone)]
pub struct ConditionOutcome {
    pub report: ConditionReport,
    pub results: Vec<EpisodeResult>,
    pub transcripts: Vec<Transcript>,
}

/// Runs every episode of a condition with policies from
/// [`RunConfig::build_policies`], writing transcripts when an output
/// directory is configured.
pub fn run_condition(config: &RunConfig) -> Result<ConditionOutcome> {
    config.validate()?;
    run_condition_with(config, |_| config.build_policies())
}

/// As [`run_condition`], with caller-supplied policies per episode.
pub fn run_condition_with<F>(config: &RunConfig, mut make_policies: F) -> Result<ConditionOutcome>
where
    F: FnMut(u32) -> Result<Vec<Box<dyn Policy>>>,
{
    if config.episodes == 0 {
        return Err(Error::InvalidConfiguration(
            "episodes must be at least 1".into(),
        ));
    }
    let mut results = Vec::with_capacity(config.episodes as usize);
    let mut transcripts = Vec::with_capacity(config.episodes as usize);
    for episode in 0..config.episodes {
        let mut policies = make_policies(episode)?;
        let outcome = run_episode(config, episode, &mut policies);
        let transcript = match &outcome {
            Ok((_, t)) | Err((_, t)) => t,
        };
        if let Some(dir) = &config.out_dir {
            transcript.write(&dir.join(config.transcript_relpath(episode)))?;
        }
        match outcome {
            Ok((result, transcript)) => {
                results.push(result);
                transcripts.push(transcript);
            }
            Err((e, _)) => {
                return Err(Error::Episode {
                    episode,
                    source: Box::new(e),
                })
            }
        }
    }
    let report = condition_report(&config.condition, &results, &transcripts)?;
    Ok(ConditionOutcome {
        report,
        results,
        transcripts,
    })
}

/// Aggregates finished episodes; consistency and API usage are read from
/// the transcripts.
pub fn condition_report(
    code: &ConditionCode,
    results: &[EpisodeResult],
    transcripts: &[Transcript],
) -> Result<ConditionReport> {
    let samples: Vec<_> = transcripts
        .iter()
        .flat_map(|t| t.message_samples())
        .collect();
    let mut report = aggregate_condition(
        &code.to_string(),
        results,
        code.comms.then_some(samples.as_slice()),
    )?;
    report.accounting = transcripts
        .iter()
        .filter_map(Transcript::accounting)
        .reduce(|mut a, b| {
            a.merge(&b);
            a
        });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcript::verify;

    fn config(code: &str, policy: &str) -> RunConfig {
        RunConfig::new(code.parse().unwrap(), policy.parse().unwrap())
    }

    #[test]
    fn policy_spec_parsing() {
        assert_eq!(
            "dijkstra".parse::<PolicySpec>().unwrap(),
            PolicySpec::Uniform(PolicyKind::Dijkstra)
        );
        let spec: PolicySpec = "dijkstra,random,polite".parse().unwrap();
        assert_eq!(spec.kinds(3).unwrap().len(), 3);
        assert!(spec.kinds(5).is_err());
        assert_eq!(spec.to_string(), "dijkstra,random,polite");
        assert!("dijkstra,nope".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn greedy_sim3_deadlocks_at_once() {
        let cfg = config("sim3nc", "greedy-left");
        let mut policies = cfg.build_policies().unwrap();
        let (r, t) = run_episode(&cfg, 0, &mut policies).unwrap();
        assert!(r.deadlocked);
        assert_eq!(r.deadlock_timestep, Some(1));
        assert_eq!(r.meals_per_philosopher, vec![0, 0, 0]);
        verify(&t).unwrap();
    }

    #[test]
    fn dijkstra_sim5_makes_progress() {
        let cfg = config("sim5nc", "dijkstra");
        let mut policies = cfg.build_policies().unwrap();
        let (r, t) = run_episode(&cfg, 0, &mut policies).unwrap();
        assert!(!r.deadlocked);
        assert_eq!(r.timesteps_used, 30);
        assert!(r.meals_total > 0);
        verify(&t).unwrap();
    }

    #[test]
    fn sequential_counts_single_actions() {
        let cfg = config("seq5nc", "random");
        let mut policies = cfg.build_policies().unwrap();
        let (r, t) = run_episode(&cfg, 3, &mut policies).unwrap();
        assert!(r.timesteps_used <= 30);
        let actors: Vec<usize> = t.steps().map(|s| s.actor.unwrap().0).collect();
        for (i, a) in actors.iter().enumerate() {
            assert_eq!(*a, i % 5);
        }
        verify(&t).unwrap();
    }

    #[test]
    fn llm_without_endpoint_is_rejected() {
        let cfg = config("sim3nc", "llm");
        assert!(matches!(
            cfg.validate(),
            Err(Error::InvalidConfiguration(_))
        ));
    }

    #[test]
    fn wrong_policy_count() {
        let cfg = config("sim3nc", "dijkstra");
        let mut policies = RunConfig::new(
            "sim5nc".parse().unwrap(),
            PolicySpec::Uniform(PolicyKind::Dijkstra),
        )
        .build_policies()
        .unwrap();
        let (err, t) = run_episode(&cfg, 0, &mut policies).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert!(matches!(t.records.last(), Some(Record::Aborted { .. })));
    }

    #[test]
    fn messages_dropped_without_comms() {
        let cfg = config("sim3nc", "announce");
        let outcome = run_condition(&RunConfig { episodes: 1, ..cfg }).unwrap();
        let t = &outcome.transcripts[0];
        assert!(t
            .steps()
            .all(|s| s.decisions.iter().all(|d| d.message.is_none())));
        assert_eq!(outcome.report.message_action_consistency, None);
    }
}
