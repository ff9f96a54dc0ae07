mod common;

use std::io::Write;

use axum::http::StatusCode;
use common::{copy_dir, is_correct, Client};
use serde_json::{json, Value};
use yesno_server::Store;

fn truth_of(c: &Value) -> Vec<u8> {
    c["labels"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as u8).collect()
}

/// Answers questions truthfully until `limit` answers or completion.
/// Returns every question seen.
async fn drive(c: &Client, id: &str, truth: &[u8], limit: usize) -> Vec<Value> {
    let mut seen = Vec::new();
    for _ in 0..limit {
        let (status, q) = c.question(id).await;
        assert_eq!(status, StatusCode::OK);
        if q["status"] == "complete" {
            seen.push(q);
            break;
        }
        let (status, _) = c.answer(id, q["question_id"].as_u64().unwrap(), is_correct(&q, truth)).await;
        assert_eq!(status, StatusCode::OK);
        seen.push(q);
    }
    seen
}

fn synthetic_truth(problem: &str, seed: u64) -> Vec<u8> {
    let p: yesno_core::synthetic::Problem = problem.parse().unwrap();
    yesno_core::synthetic::generate(p, seed).labels.iter().map(u8::from).collect()
}

fn events_path(root: &std::path::Path, id: &str) -> std::path::PathBuf {
    root.join("sessions").join(id).join("events.jsonl")
}

#[tokio::test]
async fn restart_continues_with_identical_questions() {
    let truth = synthetic_truth("c", 5);
    let create = json!({"synthetic": {"problem": "c", "seed": 5}, "config": {"al_method": "random", "seed": 3}});

    let live_dir = tempfile::tempdir().unwrap();
    let live = Client::new(Store::open(live_dir.path()).unwrap());
    let id = live.create(create).await;
    drive(&live, &id, &truth, 25).await;

    let crash_dir = tempfile::tempdir().unwrap();
    copy_dir(live_dir.path(), crash_dir.path());
    let restarted = Client::new(Store::open(crash_dir.path()).unwrap());

    let (_, before) = live.call("GET", &format!("/sessions/{id}"), None).await;
    let (_, after) = restarted.call("GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(before, after);

    let a = drive(&live, &id, &truth, 10_000).await;
    let b = drive(&restarted, &id, &truth, 10_000).await;
    assert_eq!(a, b);
    assert_eq!(truth_of(a.last().unwrap()), truth);
    let (_, ma) = live.call("GET", &format!("/sessions/{id}/metrics"), None).await;
    let (_, mb) = restarted.call("GET", &format!("/sessions/{id}/metrics"), None).await;
    assert_eq!(ma, mb);
}

#[tokio::test]
async fn restart_with_outstanding_question() {
    let truth = synthetic_truth("a", 2);
    let dir = tempfile::tempdir().unwrap();
    let live = Client::new(Store::open(dir.path()).unwrap());
    let id = live.create(json!({"synthetic": {"problem": "a", "seed": 2}})).await;
    drive(&live, &id, &truth, 1).await;
    let (_, q) = live.question(&id).await;
    assert_eq!(q["status"], "question");

    let crash = tempfile::tempdir().unwrap();
    copy_dir(dir.path(), crash.path());
    let c = Client::new(Store::open(crash.path()).unwrap());
    let (status, conflict) = c.question(&id).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(conflict["question"], {
        let mut v = q.clone();
        v.as_object_mut().unwrap().remove("status");
        v
    });
    let (status, _) = c.answer(&id, q["question_id"].as_u64().unwrap(), is_correct(&q, &truth)).await;
    assert_eq!(status, StatusCode::OK);
    let done = drive(&c, &id, &truth, 10_000).await;
    assert_eq!(truth_of(done.last().unwrap()), truth);
}

#[tokio::test]
async fn answered_twice_across_restart_is_idempotent() {
    let truth = synthetic_truth("b", 4);
    let dir = tempfile::tempdir().unwrap();
    let live = Client::new(Store::open(dir.path()).unwrap());
    let id = live.create(json!({"synthetic": {"problem": "b", "seed": 4}})).await;
    let (_, q) = live.question(&id).await;
    let qid = q["question_id"].as_u64().unwrap();
    let (_, first) = live.answer(&id, qid, is_correct(&q, &truth)).await;

    let crash = tempfile::tempdir().unwrap();
    copy_dir(dir.path(), crash.path());
    let c = Client::new(Store::open(crash.path()).unwrap());
    let (status, again) = c.answer(&id, qid, !is_correct(&q, &truth)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first, again);
}

#[tokio::test]
async fn torn_final_line_is_discarded() {
    let truth = synthetic_truth("a", 8);
    let dir = tempfile::tempdir().unwrap();
    let live = Client::new(Store::open(dir.path()).unwrap());
    let id = live.create(json!({"synthetic": {"problem": "a", "seed": 8}})).await;
    drive(&live, &id, &truth, 1).await;
    let (_, q) = live.question(&id).await;
    assert_eq!(q["status"], "question");

    let crash = tempfile::tempdir().unwrap();
    copy_dir(dir.path(), crash.path());
    let path = events_path(crash.path(), &id);
    let intact = std::fs::read(&path).unwrap();
    let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(br#"{"type":"answered","question_id":"#).unwrap();
    drop(f);

    let c = Client::new(Store::open(crash.path()).unwrap());
    let (status, conflict) = c.question(&id).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(conflict["question"]["question_id"], q["question_id"]);
    assert_eq!(std::fs::read(&path).unwrap(), intact);
    let (status, _) = c.answer(&id, q["question_id"].as_u64().unwrap(), is_correct(&q, &truth)).await;
    assert_eq!(status, StatusCode::OK);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
}

#[tokio::test]
async fn corrupt_log_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let live = Client::new(Store::open(dir.path()).unwrap());
    let id = live.create(json!({"synthetic": {"problem": "a", "seed": 1}})).await;
    let (_, q) = live.question(&id).await;
    live.answer(&id, q["question_id"].as_u64().unwrap(), true).await;

    // A complete but wrong line: the recorded guess no longer matches replay.
    let crash = tempfile::tempdir().unwrap();
    copy_dir(dir.path(), crash.path());
    let path = events_path(crash.path(), &id);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    first["predictor_version"] = json!(99);
    let rest: Vec<&str> = text.lines().skip(1).collect();
    std::fs::write(&path, format!("{first}\n{}\n", rest.join("\n"))).unwrap();
    let c = Client::new(Store::open(crash.path()).unwrap());
    let (status, body) = c.question(&id).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert!(body["error"].as_str().unwrap().contains("diverged"));

    let crash2 = tempfile::tempdir().unwrap();
    copy_dir(dir.path(), crash2.path());
    std::fs::write(events_path(crash2.path(), &id), "garbage\n").unwrap();
    let c = Client::new(Store::open(crash2.path()).unwrap());
    assert_eq!(c.question(&id).await.0, StatusCode::INTERNAL_SERVER_ERROR);
}

#[tokio::test]
async fn snapshot_mismatch_is_detected() {
    let truth: Vec<u8> = (0..30).map(|i| u8::from(i % 3 == 0)).collect();
    let items: Vec<Value> = (0..30).map(|i| json!({"id": i, "p": 0.5})).collect();
    let dir = tempfile::tempdir().unwrap();
    let live = Client::new(Store::open(dir.path()).unwrap());
    let id = live.create(json!({"dataset": {"items": items}})).await;
    drive(&live, &id, &truth, 20).await;
    let snap_path = dir.path().join("sessions").join(&id).join("snapshot.json");
    let mut snap: Value = serde_json::from_slice(&std::fs::read(&snap_path).unwrap()).unwrap();
    assert_eq!(snap["answers"], 20);

    let crash = tempfile::tempdir().unwrap();
    copy_dir(dir.path(), crash.path());
    let c = Client::new(Store::open(crash.path()).unwrap());
    assert_eq!(c.question(&id).await.0, StatusCode::OK);

    snap["answers"] = json!(1);
    let crash2 = tempfile::tempdir().unwrap();
    copy_dir(dir.path(), crash2.path());
    std::fs::write(crash2.path().join("sessions").join(&id).join("snapshot.json"), snap.to_string()).unwrap();
    let c = Client::new(Store::open(crash2.path()).unwrap());
    assert_eq!(c.question(&id).await.0, StatusCode::INTERNAL_SERVER_ERROR);
}
