//! Annotation service over HTTP. All routing lives in [`Service::handle`], a
//! plain function of (method, url, body); [`run`] only moves bytes between
//! tiny_http and it, one request at a time, so mutations are serialized.
//!
//! Routes (JSON in, JSON out):
//!
//! | method | path                    | body                                              |
//! |--------|-------------------------|---------------------------------------------------|
//! | GET    | /next                   |                                                   |
//! | POST   | /label                  | `{sequence_id, label, annotator, overwrite?}`     |
//! | GET    | /patterns               |                                                   |
//! | POST   | /patterns               | `{regex, label, author}`                          |
//! | POST   | /patterns/preview       | `{regex, limit?}`                                 |
//! | POST   | /patterns/{id}/retire   |                                                   |
//! | GET    | /progress               |                                                   |
//!
//! Errors come back as `{"error": kind, "message": ..., "position"?: n}` with
//! 400 (bad request or regex), 404 (unknown id) or 409 (conflict).

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::annotation::{compile_pattern, rank_uncertain, AnnotationStore, Event};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::extract::Sequence;

pub const DEFAULT_PREVIEW_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: u16,
    pub body: Value,
}

impl Response {
    fn ok(body: Value) -> Self {
        Response { status: 200, body }
    }
}

pub struct Service {
    store: AnnotationStore,
    probabilities: BTreeMap<String, [f64; 3]>,
    log: Option<PathBuf>,
    preview_limit: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    sequence_id: String,
    label: Label,
    annotator: String,
    #[serde(default)]
    overwrite: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternBody {
    regex: String,
    label: Label,
    author: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PreviewBody {
    regex: String,
    limit: Option<usize>,
}

fn error_response(e: &Error) -> Response {
    let status = match e {
        Error::UnknownSequence(_) | Error::UnknownPattern(_) => 404,
        Error::ManualConflict(_) | Error::PatternConflict { .. } => 409,
        Error::InvalidRegex { .. } | Error::InvalidInput(_) | Error::Json(_) | Error::NotNormalized(_) => 400,
        _ => 500,
    };
    let mut body = json!({ "error": e.kind(), "message": e.to_string() });
    if let Error::InvalidRegex { position, .. } = e {
        body["position"] = json!(position);
    }
    Response { status, body }
}

fn not_found(path: &str) -> Response {
    Response {
        status: 404,
        body: json!({ "error": "not_found", "message": format!("no route for {path}") }),
    }
}

fn sequence_view(s: &Sequence) -> Value {
    let start = s.match_offset - s.window_start;
    json!({
        "sequence_id": s.sequence_id,
        "patient_id": s.patient_id,
        "note_id": s.note_id,
        "keyword": s.keyword,
        "text": s.text,
        "match_start": start,
        "match_end": start + s.match_length,
    })
}

fn parse<'a, T: Deserialize<'a>>(body: &'a str) -> Result<T> {
    serde_json::from_str(body).map_err(|e| Error::InvalidInput(format!("request body: {e}")))
}

impl Service {
    /// `log` receives every successful mutation as one event line.
    pub fn new(store: AnnotationStore, log: Option<PathBuf>) -> Self {
        Service {
            store,
            probabilities: BTreeMap::new(),
            log,
            preview_limit: DEFAULT_PREVIEW_LIMIT,
        }
    }

    /// Loads per-sequence class distributions; `/next` then serves the most
    /// uncertain unlabeled sequence first.
    pub fn with_probabilities(mut self, probabilities: BTreeMap<String, [f64; 3]>) -> Result<Self> {
        for (id, p) in &probabilities {
            crate::annotation::check_distribution(id, p, 1e-6)?;
        }
        self.probabilities = probabilities;
        Ok(self)
    }

    pub fn with_preview_limit(mut self, limit: usize) -> Self {
        self.preview_limit = limit;
        self
    }

    pub fn store(&self) -> &AnnotationStore {
        &self.store
    }

    pub fn handle(&mut self, method: &str, url: &str, body: &str) -> Response {
        let path = url.split('?').next().unwrap_or("");
        let segments: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
        let result = match (method, segments.as_slice()) {
            ("GET", ["next"]) => self.next(),
            ("POST", ["label"]) => self.label(body),
            ("GET", ["patterns"]) => Ok(Response::ok(json!(self.store.pattern_summaries()))),
            ("POST", ["patterns"]) => self.create_pattern(body),
            ("POST", ["patterns", "preview"]) => self.preview(body),
            ("POST", ["patterns", id, "retire"]) => self.retire(id),
            ("GET", ["progress"]) => Ok(Response::ok(json!(self.store.progress()))),
            _ => return not_found(path),
        };
        result.unwrap_or_else(|e| error_response(&e))
    }

    fn next(&self) -> Result<Response> {
        let unlabeled = self.store.unlabeled_ids();
        let remaining = unlabeled.len();
        let ranked = rank_uncertain(&self.store, &self.probabilities)?;
        let pick = ranked
            .first()
            .cloned()
            .or_else(|| unlabeled.iter().min().map(|s| s.to_string()));
        let Some(id) = pick else {
            return Ok(Response::ok(json!({ "sequence": null, "remaining": 0 })));
        };
        let seq = self.store.sequence(&id).expect("unlabeled id is in the store");
        Ok(Response::ok(json!({
            "sequence": sequence_view(seq),
            "probs": self.probabilities.get(&id),
            "remaining": remaining,
        })))
    }

    fn label(&mut self, body: &str) -> Result<Response> {
        let b: LabelBody = parse(body)?;
        let before = self.store.events().len();
        let a = self.store.annotate(&b.sequence_id, b.label, &b.annotator, b.overwrite)?;
        self.persist(before)?;
        Ok(Response::ok(json!(a)))
    }

    fn create_pattern(&mut self, body: &str) -> Result<Response> {
        let b: PatternBody = parse(body)?;
        let before = self.store.events().len();
        let (pattern, propagated) = self.store.add_always_pattern(&b.regex, b.label, &b.author)?;
        self.persist(before)?;
        Ok(Response {
            status: 201,
            body: json!({ "pattern": pattern, "propagation_count": propagated }),
        })
    }

    fn retire(&mut self, id: &str) -> Result<Response> {
        let before = self.store.events().len();
        let reverted = self.store.retire_pattern(id)?;
        self.persist(before)?;
        Ok(Response::ok(json!({ "pattern_id": id, "reverted": reverted })))
    }

    /// Unlabeled sequences the regex matches, with character spans of the
    /// first match in each.
    fn preview(&self, body: &str) -> Result<Response> {
        let b: PreviewBody = parse(body)?;
        let re = compile_pattern(&b.regex)?;
        let limit = b.limit.unwrap_or(self.preview_limit).min(self.preview_limit);
        let mut total = 0;
        let mut examples = Vec::new();
        for id in self.store.unlabeled_ids() {
            let s = self.store.sequence(id).expect("unlabeled id is in the store");
            if let Some(m) = re.find(&s.text) {
                total += 1;
                if examples.len() < limit {
                    let start = s.text[..m.start()].chars().count();
                    let len = m.as_str().chars().count();
                    examples.push(json!({
                        "sequence_id": id,
                        "text": s.text,
                        "match_start": start,
                        "match_end": start + len,
                    }));
                }
            }
        }
        Ok(Response::ok(json!({ "match_count": total, "examples": examples })))
    }

    fn persist(&self, from: usize) -> Result<()> {
        let Some(path) = &self.log else { return Ok(()) };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        for e in &self.store.events()[from..] {
            let line = serde_json::to_string::<Event>(e)?;
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Serves requests until the server is unblocked.
pub fn run(server: &tiny_http::Server, service: &mut Service) {
    let json_header: tiny_http::Header = "Content-Type: application/json".parse().expect("static header");
    let cors: tiny_http::Header = "Access-Control-Allow-Origin: *".parse().expect("static header");
    for mut request in server.incoming_requests() {
        let mut body = String::new();
        let response = if request.as_reader().read_to_string(&mut body).is_err() {
            Response {
                status: 400,
                body: json!({ "error": "invalid_input", "message": "body is not UTF-8" }),
            }
        } else if request.method() == &tiny_http::Method::Options {
            Response::ok(Value::Null)
        } else {
            let method = request.method().as_str().to_string();
            let url = request.url().to_string();
            log::debug!("{method} {url}");
            service.handle(&method, &url, &body)
        };
        let reply = tiny_http::Response::from_string(response.body.to_string())
            .with_status_code(response.status)
            .with_header(json_header.clone())
            .with_header(cors.clone())
            .with_header(
                "Access-Control-Allow-Headers: Content-Type"
                    .parse::<tiny_http::Header>()
                    .expect("static header"),
            );
        if let Err(e) = request.respond(reply) {
            log::warn!("failed to send response: {e}");
        }
    }
}
