mod common;

use std::sync::Arc;

use cogscan::annotation::{AnnotationStore, Clock, Event};
use cogscan::server::{run, Service};
use serde_json::{json, Value};

fn call(agent: &ureq::Agent, method: &str, url: &str, body: Option<Value>) -> (u16, Value) {
    let req = agent.request(method, url);
    let res = match body {
        Some(b) => req.send_string(&b.to_string()),
        None => req.call(),
    };
    let resp = match res {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => panic!("{method} {url}: {e}"),
    };
    let status = resp.status();
    (status, serde_json::from_str(&resp.into_string().unwrap()).unwrap())
}

#[test]
fn annotation_service_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let seqs = common::random_sequences(&mut common::rng(5), 12);
    let store = AnnotationStore::new(seqs.clone()).with_clock(Clock::epoch());
    let mut service = Service::new(store, Some(log.clone()));

    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
    let base = format!("http://{}", server.server_addr().to_ip().unwrap());
    let handle = {
        let server = Arc::clone(&server);
        std::thread::spawn(move || {
            run(&server, &mut service);
            service
        })
    };
    let agent = ureq::AgentBuilder::new().build();

    let (status, next) = call(&agent, "GET", &format!("{base}/next"), None);
    assert_eq!(status, 200);
    let first = next["sequence"]["sequence_id"].as_str().unwrap().to_string();
    assert_eq!(first, seqs[0].sequence_id);
    assert_eq!(next["remaining"], 12);

    let label = json!({"sequence_id": first, "label": "Yes", "annotator": "ann"});
    assert_eq!(call(&agent, "POST", &format!("{base}/label"), Some(label.clone())).0, 200);
    let (status, err) = call(&agent, "POST", &format!("{base}/label"), Some(label));
    assert_eq!(status, 409);
    assert_eq!(err["error"], "manual_conflict");

    let (status, preview) =
        call(&agent, "POST", &format!("{base}/patterns/preview"), Some(json!({"regex": "memory", "limit": 2})));
    assert_eq!(status, 200);
    assert!(preview["examples"].as_array().unwrap().len() <= 2);

    let (status, err) = call(
        &agent,
        "POST",
        &format!("{base}/patterns"),
        Some(json!({"regex": "(memory", "label": "No", "author": "ann"})),
    );
    assert_eq!(status, 400);
    assert_eq!(err["error"], "invalid_regex");
    assert!(err["position"].is_u64());

    let (status, added) = call(
        &agent,
        "POST",
        &format!("{base}/patterns"),
        Some(json!({"regex": "memory", "label": "No", "author": "ann"})),
    );
    assert_eq!(status, 201);
    let pid = added["pattern"]["pattern_id"].as_str().unwrap().to_string();
    let propagated = added["propagation_count"].as_u64().unwrap();
    assert_eq!(propagated, preview["match_count"].as_u64().unwrap());

    let (_, patterns) = call(&agent, "GET", &format!("{base}/patterns"), None);
    assert_eq!(patterns.as_array().unwrap().len(), 1);
    let (status, retired) = call(&agent, "POST", &format!("{base}/patterns/{pid}/retire"), None);
    assert_eq!(status, 200);
    assert_eq!(retired["reverted"].as_u64().unwrap(), propagated);
    assert_eq!(call(&agent, "POST", &format!("{base}/patterns/{pid}/retire"), None).0, 404);

    let (_, progress) = call(&agent, "GET", &format!("{base}/progress"), None);
    assert_eq!(progress["labeled"], 1);
    assert_eq!(call(&agent, "GET", &format!("{base}/nope"), None).0, 404);
    assert_eq!(call(&agent, "OPTIONS", &format!("{base}/label"), None).0, 200);

    server.unblock();
    let service = handle.join().unwrap();

    // the persisted log replays to the served state
    let events: Vec<Event> = cogscan::jsonl::read_strict(&log).unwrap();
    assert_eq!(events.len(), 3);
    let replayed = AnnotationStore::replay(seqs, &events).unwrap();
    assert_eq!(replayed.current(), service.store().current());
}
