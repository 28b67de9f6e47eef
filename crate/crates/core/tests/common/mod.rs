#![allow(dead_code)]

//! Independent oracles and a mock chat endpoint shared by the integration
//! tests.

use std::collections::{HashSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use dinebench::table::{Action, Decision, Observation, PhilosopherId, Status, TableState};

/// Pairwise mean-difference Gini: Σ_i Σ_j |m_i − m_j| / (2 N Σ m).
pub fn pairwise_gini(meals: &[u32]) -> f64 {
    let n = meals.len() as f64;
    let total: f64 = meals.iter().map(|&m| f64::from(m)).sum();
    let mut diff = 0.0;
    for &a in meals {
        for &b in meals {
            diff += (f64::from(a) - f64::from(b)).abs();
        }
    }
    diff / (2.0 * n * total)
}

/// Wait-for graph: a hungry philosopher holding exactly one fork waits on
/// whoever owns its other fork. Returns true when the graph has a cycle and
/// every philosopher holds exactly one fork.
pub fn circular_wait_oracle(owners: &[Option<usize>], statuses: &[Status]) -> bool {
    let n = owners.len();
    let held_by = |p: usize| -> Vec<usize> { (0..n).filter(|&f| owners[f] == Some(p)).collect() };
    if !(0..n).all(|p| held_by(p).len() == 1) {
        return false;
    }
    let mut edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    for p in 0..n {
        if statuses[p] != Status::Hungry {
            continue;
        }
        let left = p;
        let right = (p + 1) % n;
        let wanted = if owners[left] == Some(p) { right } else { left };
        if let Some(q) = owners[wanted] {
            if q != p {
                edges[p].push(q);
            }
        }
    }
    has_cycle(&edges)
}

fn has_cycle(edges: &[Vec<usize>]) -> bool {
    // 0 = unvisited, 1 = on stack, 2 = done
    fn dfs(v: usize, edges: &[Vec<usize>], mark: &mut [u8]) -> bool {
        mark[v] = 1;
        for &w in &edges[v] {
            if mark[w] == 1 || (mark[w] == 0 && dfs(w, edges, mark)) {
                return true;
            }
        }
        mark[v] = 2;
        false
    }
    let mut mark = vec![0u8; edges.len()];
    (0..edges.len()).any(|v| mark[v] == 0 && dfs(v, edges, &mut mark))
}

/// Every legal fork-ownership assignment: each fork free or held by one of
/// its two adjacent philosophers.
pub fn all_ownerships(n: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = vec![Vec::new()];
    for fork in 0..n {
        let choices = [None, Some(fork), Some((fork + n - 1) % n)];
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<Option<usize>>| {
                choices.iter().map(move |c| {
                    let mut v = prefix.clone();
                    v.push(*c);
                    v
                })
            })
            .collect();
    }
    out
}

pub fn all_statuses(n: usize) -> Vec<Vec<Status>> {
    (0..1u32 << n)
        .map(|bits| {
            (0..n)
                .map(|i| {
                    if bits >> i & 1 == 1 {
                        Status::Eating
                    } else {
                        Status::Hungry
                    }
                })
                .collect()
        })
        .collect()
}

pub fn table_from(owners: &[Option<usize>], statuses: Vec<Status>) -> TableState {
    let n = owners.len();
    TableState::from_parts(
        owners.iter().map(|o| o.map(PhilosopherId)).collect(),
        statuses,
        vec![0; n],
        0,
    )
    .expect("legal ownership")
}

/// Breadth-first search over fork ownerships reachable from a fresh table
/// when, at every timestep, any subset of philosophers follows `policy` and
/// the rest wait. Meals are dropped from the state since the policies under
/// test ignore them. Returns the set of reachable ownerships.
pub fn reachable_ownerships<F>(n: usize, policy: F) -> HashSet<Vec<Option<PhilosopherId>>>
where
    F: Fn(&Observation) -> Decision,
{
    let start = TableState::new(n).unwrap();
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(start.fork_owners().to_vec());
    queue.push_back(start);
    while let Some(table) = queue.pop_front() {
        let proposed: Vec<Decision> = (0..n)
            .map(|i| policy(&table.observe(PhilosopherId(i), None).unwrap()))
            .collect();
        for mask in 0..1u32 << n {
            let decisions: Vec<Decision> = (0..n)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        proposed[i].clone()
                    } else {
                        Decision::new(Action::Wait)
                    }
                })
                .collect();
            let (next, _) = table.apply_simultaneous(&decisions).unwrap();
            let owners = next.fork_owners().to_vec();
            if seen.insert(owners.clone()) {
                let normalized =
                    TableState::from_parts(owners, vec![Status::Hungry; n], vec![0; n], 0).unwrap();
                queue.push_back(normalized);
            }
        }
    }
    seen
}

/// The only bearer token [`MockServer`] accepts.
pub const MOCK_KEY: &str = "sk-test-0123456789";

/// Counters kept by [`MockServer`].
#[derive(Debug, Default)]
pub struct MockCounters {
    pub requests: AtomicU64,
    pub rate_limited: AtomicU64,
    pub tokens_issued: AtomicU64,
    pub garbage_issued: AtomicU64,
}

impl MockCounters {
    pub fn get(&self, c: &AtomicU64) -> u64 {
        c.load(Ordering::SeqCst)
    }
}

/// A chat-completions endpoint on localhost.
///
/// Replies follow the resource-hierarchy rule read off the prompts, except
/// that philosopher 1 answers with unparseable prose once it has eaten. Every
/// `rate_limit_every`-th request (if non-zero) gets HTTP 429. Each reply
/// reports `100 + philosopher` total tokens.
pub struct MockServer {
    pub base_url: String,
    pub counters: Arc<MockCounters>,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(rate_limit_every: u64) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let addr = server.server_addr().to_ip().unwrap();
        let counters = Arc::new(MockCounters::default());
        let (srv, ctr) = (server.clone(), counters.clone());
        let handle = std::thread::spawn(move || {
            for mut request in srv.incoming_requests() {
                let n = ctr.requests.fetch_add(1, Ordering::SeqCst) + 1;
                let mut body = String::new();
                let _ = request.as_reader().read_to_string(&mut body);
                let authorized = request.headers().iter().any(|h| {
                    h.field.equiv("Authorization")
                        && h.value.as_str() == format!("Bearer {MOCK_KEY}")
                });
                if !authorized {
                    let _ = request
                        .respond(tiny_http::Response::from_string("no key").with_status_code(401));
                    continue;
                }
                if rate_limit_every > 0 && n % rate_limit_every == 0 {
                    ctr.rate_limited.fetch_add(1, Ordering::SeqCst);
                    let _ = request.respond(
                        tiny_http::Response::from_string("{\"error\":\"slow down\"}")
                            .with_status_code(429),
                    );
                    continue;
                }
                let (content, pid) = mock_reply(&body);
                if !content.contains("ACTION:") {
                    ctr.garbage_issued.fetch_add(1, Ordering::SeqCst);
                }
                let tokens = 100 + pid as u64;
                ctr.tokens_issued.fetch_add(tokens, Ordering::SeqCst);
                let reply = serde_json::json!({
                    "choices": [{"message": {"role": "assistant", "content": content}}],
                    "usage": {"total_tokens": tokens},
                });
                let _ = request.respond(tiny_http::Response::from_string(reply.to_string()));
            }
        });
        MockServer {
            base_url: format!("http://{addr}/v1"),
            counters,
            server,
            handle: Some(handle),
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn field<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(prefix))
        .map(str::trim)
}

/// Decides from the rendered prompts only, as a remote model would.
pub fn mock_reply(body: &str) -> (String, usize) {
    let request: serde_json::Value = serde_json::from_str(body).unwrap();
    let system = request["messages"][0]["content"]
        .as_str()
        .unwrap_or_default();
    let user = request["messages"][1]["content"]
        .as_str()
        .unwrap_or_default();
    let pid: usize = field(user, "You are Philosopher ")
        .and_then(|s| s.trim_end_matches('.').parse().ok())
        .unwrap_or(0);
    let n: usize = system
        .split("one of ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let meals: u32 = field(user, "- Meals eaten:")
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    if pid == 1 && meals > 0 {
        return ("I think I should eat now.".into(), pid);
    }
    let left = field(user, "- Left fork:").unwrap_or("unavailable");
    let right = field(user, "- Right fork:").unwrap_or("unavailable");
    let (lower, higher, lower_action, higher_action) = if pid + 1 < n {
        (left, right, "GRAB_LEFT", "GRAB_RIGHT")
    } else {
        (right, left, "GRAB_RIGHT", "GRAB_LEFT")
    };
    let action = if lower == "available" {
        lower_action
    } else if lower == "held by you" && higher == "available" {
        higher_action
    } else {
        "WAIT"
    };
    (format!("THINKING: lower fork first\nACTION: {action}"), pid)
}
