//! Batch scoring boundary. The internal linear model and any external scorer
//! produce the same per-item results, in input order.
//!
//! Wire format (one JSON object per line, UTF-8, `\n` terminated):
//!
//! ```text
//! request:  {"id":"<string>","text":"<string>"}
//! response: {"id":"<string>","probs":[p_yes,p_no,p_neither]}
//!       or  {"id":"<string>","error":"<string>"}
//! ```
//!
//! Responses may arrive in any order and are paired with requests by id.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::ModelArtifact;

/// Tolerance on Σp for externally produced distributions.
pub const SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ScoreResponse {
    Probs { id: String, probs: [f64; 3] },
    Error { id: String, error: String },
}

impl ScoreResponse {
    pub fn id(&self) -> &str {
        match self {
            ScoreResponse::Probs { id, .. } | ScoreResponse::Error { id, .. } => id,
        }
    }
}

/// Scoring result for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub id: String,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Probs([f64; 3]),
    Error(String),
}

impl ItemScore {
    pub fn probs(&self) -> Option<&[f64; 3]> {
        match &self.outcome {
            Outcome::Probs(p) => Some(p),
            Outcome::Error(_) => None,
        }
    }
}

pub fn encode_request(r: &ScoreRequest) -> String {
    serde_json::to_string(r).expect("request serializes")
}

pub fn encode_response(r: &ScoreResponse) -> String {
    serde_json::to_string(r).expect("response serializes")
}

pub fn parse_request(line: &str) -> std::result::Result<ScoreRequest, String> {
    serde_json::from_str(line).map_err(|e| e.to_string())
}

pub fn parse_response(line: &str) -> std::result::Result<ScoreResponse, String> {
    serde_json::from_str(line).map_err(|e| format!("malformed response: {e}"))
}

/// Checks one distribution against the wire contract.
pub fn check_probs(p: &[f64; 3]) -> std::result::Result<(), String> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(format!("probabilities must be finite and non-negative, got {p:?}"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOLERANCE {
        return Err(format!("probabilities sum to {s}, not 1 ± {SUM_TOLERANCE}"));
    }
    Ok(())
}

fn check_unique(requests: &[ScoreRequest]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in requests {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate request id {:?}", r.id)));
        }
    }
    Ok(())
}

pub fn score_with_internal(artifact: &ModelArtifact, requests: &[ScoreRequest]) -> Result<Vec<ItemScore>> {
    check_unique(requests)?;
    let texts: Vec<&str> = requests.iter().map(|r| r.text.as_str()).collect();
    let probs = artifact.score(&texts)?;
    Ok(requests
        .iter()
        .zip(probs)
        .map(|(r, p)| ItemScore {
            id: r.id.clone(),
            outcome: Outcome::Probs(p),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Program and arguments of a child process speaking the protocol over
    /// stdin/stdout.
    Process(Vec<String>),
    /// Base URL of an HTTP scorer; the batch is POSTed to `<url>/score`.
    Http(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalConfig {
    pub endpoint: Endpoint,
    /// Whole-batch deadline.
    pub timeout: Duration,
}

impl ExternalConfig {
    pub fn process(command: &[&str]) -> Self {
        ExternalConfig {
            endpoint: Endpoint::Process(command.iter().map(|s| s.to_string()).collect()),
            timeout: Duration::from_secs(600),
        }
    }
}

/// Splits a shell-style command line on whitespace, honoring double quotes.
pub fn split_command(cmd: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut has = false;
    for c in cmd.chars() {
        match c {
            '"' => {
                quoted = !quoted;
                has = true;
            }
            c if c.is_whitespace() && !quoted => {
                if has {
                    out.push(std::mem::take(&mut cur));
                    has = false;
                }
            }
            c => {
                cur.push(c);
                has = true;
            }
        }
    }
    if has {
        out.push(cur);
    }
    out
}

/// Scores through an external scorer. Transport failures (cannot start,
/// timeout, abnormal exit) fail the batch; a missing, duplicated or invalid
/// response only fails its own item.
pub fn score_with_external(config: &ExternalConfig, requests: &[ScoreRequest]) -> Result<Vec<ItemScore>> {
    check_unique(requests)?;
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let body: String = requests.iter().map(|r| encode_request(r) + "\n").collect();
    let lines = match &config.endpoint {
        Endpoint::Process(argv) => run_process(argv, body, config.timeout)?,
        Endpoint::Http(url) => post_http(url, &body, config.timeout)?,
    };
    Ok(pair_responses(requests, &lines))
}

fn run_process(argv: &[String], body: String, timeout: Duration) -> Result<Vec<String>> {
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| Error::InvalidInput("empty external scorer command".into()))?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| Error::Transport(format!("cannot start {program:?}: {e}")))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");

    let writer = std::thread::spawn(move || {
        // a scorer that exits early closes the pipe; that shows up as
        // missing responses, not as a writer failure
        let _ = stdin.write_all(body.as_bytes());
    });
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let lines: std::io::Result<Vec<String>> = BufReader::new(stdout).lines().collect();
        let _ = tx.send(lines);
    });
    let lines = match rx.recv_timeout(timeout) {
        Ok(r) => r.map_err(|e| Error::Transport(format!("reading scorer output: {e}")))?,
        Err(_) => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::Transport(format!("external scorer timed out after {timeout:?}")));
        }
    };
    let _ = writer.join();
    let status = child
        .wait()
        .map_err(|e| Error::Transport(format!("waiting for scorer: {e}")))?;
    if !status.success() {
        return Err(Error::Transport(format!("external scorer exited with {status}")));
    }
    Ok(lines)
}

fn post_http(url: &str, body: &str, timeout: Duration) -> Result<Vec<String>> {
    let target = format!("{}/score", url.trim_end_matches('/'));
    let agent = ureq::AgentBuilder::new().timeout(timeout).build();
    let response = agent
        .post(&target)
        .set("Content-Type", "application/x-ndjson")
        .send_string(body)
        .map_err(|e| Error::Transport(format!("POST {target}: {e}")))?;
    let text = response
        .into_string()
        .map_err(|e| Error::Transport(format!("reading {target}: {e}")))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Matches response lines to requests by id, preserving request order.
pub fn pair_responses(requests: &[ScoreRequest], lines: &[String]) -> Vec<ItemScore> {
    let mut by_id: BTreeMap<String, Outcome> = BTreeMap::new();
    let mut duplicated = BTreeSet::new();
    for line in lines.iter().filter(|l| !l.trim().is_empty()) {
        let (id, outcome) = match parse_response(line) {
            Ok(ScoreResponse::Probs { id, probs }) => {
                let o = match check_probs(&probs) {
                    Ok(()) => Outcome::Probs(probs),
                    Err(e) => Outcome::Error(e),
                };
                (id, o)
            }
            Ok(ScoreResponse::Error { id, error }) => (id, Outcome::Error(format!("scorer error: {error}"))),
            Err(e) => match salvage_id(line) {
                Some(id) => (id, Outcome::Error(e)),
                None => {
                    log::warn!("ignoring scorer output line without an id: {line}");
                    continue;
                }
            },
        };
        if by_id.insert(id.clone(), outcome).is_some() {
            duplicated.insert(id);
        }
    }
    requests
        .iter()
        .map(|r| {
            let outcome = if duplicated.contains(&r.id) {
                Outcome::Error("duplicate responses for this id".into())
            } else {
                by_id
                    .remove(&r.id)
                    .unwrap_or_else(|| Outcome::Error("no response for this id".into()))
            };
            ItemScore {
                id: r.id.clone(),
                outcome,
            }
        })
        .collect()
}

fn salvage_id(line: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(line).ok()?;
    v.get("id")?.as_str().map(str::to_string)
}

/// Behavior of the reference stub scorer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StubBehavior {
    /// Score by keyword cues instead of returning uniform distributions.
    pub keyword: bool,
    /// Ids that receive no response.
    pub drop: BTreeSet<String>,
    /// Ids that receive probabilities not summing to one.
    pub malformed: BTreeSet<String>,
    /// Shuffle response order with this seed.
    pub shuffle: Option<u64>,
}

fn stub_probs(text: &str, keyword: bool) -> [f64; 3] {
    if !keyword {
        return [1.0 / 3.0; 3];
    }
    let t = text.to_lowercase();
    if t.contains("mother") || t.contains("father") || t.contains("family history") {
        [0.1, 0.1, 0.8]
    } else if t.contains("intact") || t.contains("denies") || t.contains("normal") {
        [0.1, 0.8, 0.1]
    } else if t.contains("dementia") || t.contains("impairment") || t.contains("decline") {
        [0.8, 0.1, 0.1]
    } else {
        [0.2, 0.4, 0.4]
    }
}

/// Response lines for a batch of request lines. Lines that do not parse get
/// an error response carrying the id when one can be recovered.
pub fn stub_respond(lines: &[String], behavior: &StubBehavior) -> Vec<String> {
    let mut out: Vec<String> = lines
        .iter()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|line| {
            let resp = match parse_request(line) {
                Ok(req) if behavior.drop.contains(&req.id) => return None,
                Ok(req) if behavior.malformed.contains(&req.id) => ScoreResponse::Probs {
                    id: req.id,
                    probs: [0.5, 0.5, 0.5],
                },
                Ok(req) => ScoreResponse::Probs {
                    probs: stub_probs(&req.text, behavior.keyword),
                    id: req.id,
                },
                Err(e) => ScoreResponse::Error {
                    id: salvage_id(line).unwrap_or_default(),
                    error: format!("bad request: {e}"),
                },
            };
            Some(encode_response(&resp))
        })
        .collect();
    if let Some(seed) = behavior.shuffle {
        out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    out
}

/// HTTP form of the stub: answers `POST /score` with the batch's response
/// lines until the server is unblocked.
pub fn serve_stub_http(server: &tiny_http::Server, behavior: &StubBehavior) {
    for mut request in server.incoming_requests() {
        let mut body = String::new();
        let reply = if request.url() != "/score" || request.method() != &tiny_http::Method::Post {
            tiny_http::Response::from_string("POST /score only\n").with_status_code(404)
        } else if request.as_reader().read_to_string(&mut body).is_err() {
            tiny_http::Response::from_string("body is not UTF-8\n").with_status_code(400)
        } else {
            let lines: Vec<String> = body.lines().map(str::to_string).collect();
            let out: String = stub_respond(&lines, behavior).into_iter().map(|l| l + "\n").collect();
            tiny_http::Response::from_string(out)
        };
        if let Err(e) = request.respond(reply) {
            log::warn!("failed to send response: {e}");
        }
    }
}
