mod common;

use std::sync::Arc;
use std::time::Duration;

use common::MockServer;
use dinebench::llm::{
    ChatBackend, HttpChatBackend, LlmEndpointConfig, LlmPolicy, SharedAccounting,
};
use dinebench::policy::{EpisodeConfig, Mode, Policy, PolicyContext, PolicyKind};
use dinebench::runner::{run_condition, LlmSetup, PolicySpec, RunConfig};
use dinebench::table::{Action, PhilosopherId, TableState};
use dinebench::Error;

use common::MOCK_KEY as KEY;

fn endpoint(server: &MockServer, retries: u32) -> LlmEndpointConfig {
    LlmEndpointConfig {
        base_url: server.base_url.clone(),
        model: "mock-model".into(),
        max_retries: retries,
        backoff_base: Duration::ZERO,
        timeout: Duration::from_secs(10),
        ..Default::default()
    }
}

fn setup(server: &MockServer, retries: u32) -> LlmSetup {
    let ep = endpoint(server, retries);
    let backend = HttpChatBackend::new(&ep, KEY.into());
    let mut s = LlmSetup::new(ep, Arc::new(backend));
    s.secret = Some(KEY.into());
    s
}

#[test]
fn single_http_decision() {
    let server = MockServer::start(0);
    let ep = endpoint(&server, 0);
    let acct = SharedAccounting::default();
    let mut policy = LlmPolicy::new(
        ep.clone(),
        Arc::new(HttpChatBackend::new(&ep, KEY.into())),
        acct.clone(),
    );
    let obs = TableState::new(5)
        .unwrap()
        .observe(PhilosopherId(4), None)
        .unwrap();
    let mut ctx = PolicyContext::new(
        EpisodeConfig {
            mode: Mode::Simultaneous,
            n: 5,
            comms: false,
        },
        42,
        4,
    );
    let d = policy.decide(&obs, &mut ctx).unwrap();
    assert_eq!(d.action, Action::GrabRight);
    let a = *acct.lock().unwrap();
    assert_eq!(a.calls, 1);
    assert_eq!(a.total_tokens, 104);
    let exchange = policy.take_exchange().unwrap();
    assert!(exchange.request.contains("\"temperature\":0.7"));
    assert!(exchange.request.contains("mock-model"));
}

#[test]
fn rate_limits_are_retried() {
    // Every second request is rejected: 4 decisions take 1 + 2 + 2 + 2 calls.
    let server = MockServer::start(2);
    let cfg = RunConfig {
        episodes: 1,
        max_timesteps: 4,
        llm: Some(setup(&server, 3)),
        ..RunConfig::new(
            "seq3nc".parse().unwrap(),
            PolicySpec::Uniform(PolicyKind::Llm),
        )
    };
    let outcome = run_condition(&cfg).unwrap();
    let acct = *cfg.llm.as_ref().unwrap().accounting.lock().unwrap();
    assert_eq!(acct.calls, 7);
    assert_eq!(server.counters.get(&server.counters.requests), 7);
    assert_eq!(server.counters.get(&server.counters.rate_limited), 3);
    assert_eq!(
        acct.total_tokens,
        server.counters.get(&server.counters.tokens_issued)
    );
    assert_eq!(outcome.report.accounting.unwrap(), acct);
}

#[test]
fn exhausted_retries_abort_the_run() {
    let server = MockServer::start(1);
    let cfg = RunConfig {
        episodes: 2,
        llm: Some(setup(&server, 2)),
        ..RunConfig::new(
            "sim3nc".parse().unwrap(),
            PolicySpec::Uniform(PolicyKind::Llm),
        )
    };
    let err = run_condition(&cfg).unwrap_err();
    match err {
        Error::Episode { episode: 0, source } => {
            assert!(
                matches!(*source, Error::Transport { attempts: 3, .. }),
                "{source}"
            )
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn missing_key_is_reported() {
    let ep = LlmEndpointConfig {
        api_key_env: "DINEBENCH_TEST_KEY_THAT_IS_NOT_SET".into(),
        ..Default::default()
    };
    assert!(matches!(
        HttpChatBackend::from_env(&ep),
        Err(Error::MissingApiKey(_))
    ));
}

#[test]
fn unauthorized_is_not_retried() {
    let server = MockServer::start(0);
    let ep = endpoint(&server, 0);
    let backend = HttpChatBackend::new(&ep, "sk-wrong".into());
    let request = dinebench::llm::ChatRequest {
        model: "m".into(),
        messages: vec![],
        temperature: 0.7,
        max_tokens: None,
    };
    let failure = backend.complete(&request).unwrap_err();
    assert!(!failure.retryable);
    assert!(failure.message.starts_with("HTTP 401"));
}

#[test]
fn key_never_reaches_transcripts() {
    let server = MockServer::start(0);
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        episodes: 1,
        max_timesteps: 5,
        llm: Some(setup(&server, 0)),
        out_dir: Some(dir.path().to_path_buf()),
        ..RunConfig::new(
            "sim3c".parse().unwrap(),
            PolicySpec::Uniform(PolicyKind::Llm),
        )
    };
    run_condition(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("sim3c/ep0.jsonl")).unwrap();
    assert!(text.contains("mock-model"));
    assert!(!text.contains(KEY));
}
