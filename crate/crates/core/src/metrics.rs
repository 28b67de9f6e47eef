//! Coordination metrics: deadlock rate, throughput, Gini-based fairness,
//! time to deadlock, starvation, and message-action consistency, plus the
//! per-condition aggregate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::CallAccounting;
use crate::table::Action;

/// Outcome of one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub deadlocked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadlock_timestep: Option<u32>,
    pub meals_per_philosopher: Vec<u32>,
    pub meals_total: u32,
    pub timesteps_used: u32,
    /// Transcript location relative to the run's output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

impl EpisodeResult {
    pub fn new(meals: Vec<u32>, timesteps_used: u32, deadlock_timestep: Option<u32>) -> Self {
        EpisodeResult {
            deadlocked: deadlock_timestep.is_some(),
            deadlock_timestep,
            meals_total: meals.iter().sum(),
            meals_per_philosopher: meals,
            timesteps_used,
            transcript: None,
        }
    }
}

fn non_empty(results: &[EpisodeResult]) -> Result<()> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no episodes to aggregate".into()));
    }
    Ok(())
}

pub fn deadlock_rate(results: &[EpisodeResult]) -> Result<f64> {
    non_empty(results)?;
    let hits = results.iter().filter(|r| r.deadlocked).count();
    Ok(hits as f64 / results.len() as f64)
}

fn episode_throughput(r: &EpisodeResult) -> Result<f64> {
    if r.timesteps_used == 0 {
        return Err(Error::InvalidArgument(
            "episode used zero timesteps; throughput undefined".into(),
        ));
    }
    Ok(f64::from(r.meals_total) / f64::from(r.timesteps_used))
}

/// Mean over episodes of meals per timestep.
pub fn throughput(results: &[EpisodeResult]) -> Result<f64> {
    non_empty(results)?;
    let per_episode = results
        .iter()
        .map(episode_throughput)
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&per_episode))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gini {
    pub coefficient: f64,
    /// Nobody ate; the coefficient is defined as 0.
    pub zero_total: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fairness {
    pub value: f64,
    /// Nobody ate; all-equal-at-zero is reported as 1.0.
    pub zero_total: bool,
}

/// Integer pieces of the sorted-rank Gini formula: returns
/// `(2·Σ i·m_(i) − (N+1)·Σ m, Σ m)` with 1-based ranks over ascending meals.
fn gini_terms(meals: &[u32]) -> (i128, i128) {
    let mut sorted = meals.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as i128;
    let total: i128 = sorted.iter().map(|&m| i128::from(m)).sum();
    let ranked: i128 = sorted
        .iter()
        .enumerate()
        .map(|(i, &m)| (i as i128 + 1) * i128::from(m))
        .sum();
    (2 * ranked - (n + 1) * total, total)
}

pub fn gini(meals: &[u32]) -> Result<Gini> {
    if meals.is_empty() {
        return Err(Error::InvalidArgument(
            "gini of an empty meal vector".into(),
        ));
    }
    let (numerator, total) = gini_terms(meals);
    if total == 0 {
        return Ok(Gini {
            coefficient: 0.0,
            zero_total: true,
        });
    }
    let n = meals.len() as i128;
    Ok(Gini {
        coefficient: numerator as f64 / (n * total) as f64,
        zero_total: false,
    })
}

/// `1 − G·N/(N−1)`, evaluated as a single exact ratio so that one-hot
/// vectors give exactly 0 and constant vectors exactly 1.
pub fn fairness(meals: &[u32]) -> Result<Fairness> {
    if meals.is_empty() {
        return Err(Error::InvalidArgument(
            "fairness of an empty meal vector".into(),
        ));
    }
    if meals.len() == 1 {
        return Err(Error::InvalidArgument(
            "fairness normalization is undefined for a single philosopher".into(),
        ));
    }
    let (numerator, total) = gini_terms(meals);
    if total == 0 {
        return Ok(Fairness {
            value: 1.0,
            zero_total: true,
        });
    }
    let denominator = (meals.len() as i128 - 1) * total;
    Ok(Fairness {
        value: (denominator - numerator) as f64 / denominator as f64,
        zero_total: false,
    })
}

/// Mean deadlock timestep over the episodes that deadlocked.
pub fn time_to_deadlock(results: &[EpisodeResult]) -> Option<f64> {
    let times: Vec<f64> = results
        .iter()
        .filter_map(|r| r.deadlock_timestep.map(f64::from))
        .collect();
    (!times.is_empty()).then(|| mean(&times))
}

pub fn starvation_count(result: &EpisodeResult) -> usize {
    result
        .meals_per_philosopher
        .iter()
        .filter(|&&m| m == 0)
        .count()
}

/// Intent stated in a free-text message, if one can be read unambiguously.
///
/// Grab verbs (grab, take, pick, get and their inflections) with exactly one
/// of `left`/`right` give a grab; `wait` or `hold off` give WAIT; `release`,
/// `put down` or `drop` give RELEASE. Messages naming more than one intent, or
/// none, yield `None`.
pub fn extract_intent(message: &str) -> Option<Action> {
    let lower = message.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let has = |w: &str| words.contains(&w);
    let phrase = |a: &str, b: &str| words.windows(2).any(|p| p[0] == a && p[1] == b);

    const GRAB_VERBS: [&str; 14] = [
        "grab", "grabs", "grabbing", "grabbed", "take", "takes", "taking", "took", "pick", "picks",
        "picking", "get", "gets", "getting",
    ];
    let grab_verb = words.iter().any(|w| GRAB_VERBS.contains(w));
    let (left, right) = (has("left"), has("right"));

    let mut intents = Vec::new();
    if grab_verb {
        match (left, right) {
            (true, false) => intents.push(Action::GrabLeft),
            (false, true) => intents.push(Action::GrabRight),
            (true, true) => return None,
            (false, false) => {}
        }
    }
    if ["wait", "waits", "waiting"].iter().any(|w| has(w)) || phrase("hold", "off") {
        intents.push(Action::Wait);
    }
    if [
        "release",
        "releases",
        "releasing",
        "drop",
        "drops",
        "dropping",
    ]
    .iter()
    .any(|w| has(w))
        || phrase("put", "down")
    {
        intents.push(Action::Release);
    }
    match intents.as_slice() {
        [single] => Some(*single),
        _ => None,
    }
}

/// A sent message paired with the action its sender executed in the same
/// turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageSample {
    pub message: Option<String>,
    pub action: Action,
}

/// Percentage of messages with a readable intent whose intent matches the
/// executed action. `None` when no message carries a readable intent.
pub fn message_action_consistency<'a, I>(samples: I) -> Option<f64>
where
    I: IntoIterator<Item = &'a MessageSample>,
{
    let (mut matched, mut counted) = (0usize, 0usize);
    for s in samples {
        let Some(intent) = s.message.as_deref().and_then(extract_intent) else {
            continue;
        };
        counted += 1;
        if intent == s.action {
            matched += 1;
        }
    }
    (counted > 0).then(|| 100.0 * matched as f64 / counted as f64)
}

/// Aggregate metrics over all episodes of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub episodes: usize,
    pub deadlock_rate: f64,
    pub throughput_mean: f64,
    pub throughput_std: f64,
    pub fairness_mean: f64,
    pub fairness_std: f64,
    /// Episodes in which nobody ate; their fairness is taken as 1.0.
    pub fairness_zero_total_episodes: usize,
    pub time_to_deadlock: Option<f64>,
    pub starvation_mean: f64,
    pub message_action_consistency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accounting: Option<CallAccounting>,
}

/// `messages` is `None` when communication was disabled for the condition.
pub fn aggregate_condition(
    condition: &str,
    results: &[EpisodeResult],
    messages: Option<&[MessageSample]>,
) -> Result<ConditionReport> {
    non_empty(results)?;
    let throughputs = results
        .iter()
        .map(episode_throughput)
        .collect::<Result<Vec<_>>>()?;
    let fairness_values = results
        .iter()
        .map(|r| fairness(&r.meals_per_philosopher))
        .collect::<Result<Vec<_>>>()?;
    let fr: Vec<f64> = fairness_values.iter().map(|f| f.value).collect();
    let starvation: Vec<f64> = results.iter().map(|r| starvation_count(r) as f64).collect();

    Ok(ConditionReport {
        condition: condition.to_string(),
        episodes: results.len(),
        deadlock_rate: deadlock_rate(results)?,
        throughput_mean: mean(&throughputs),
        throughput_std: population_std(&throughputs),
        fairness_mean: mean(&fr),
        fairness_std: population_std(&fr),
        fairness_zero_total_episodes: fairness_values.iter().filter(|f| f.zero_total).count(),
        time_to_deadlock: time_to_deadlock(results),
        starvation_mean: mean(&starvation),
        message_action_consistency: messages.and_then(message_action_consistency),
        accounting: None,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation dividing by the number of values.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}
