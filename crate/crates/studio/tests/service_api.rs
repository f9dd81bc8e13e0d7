//! The session service over HTTP: creation, selection, replays, reports
//! and restart.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use icpl_core::envkit::{import_replay, EnvId};
use icpl_core::icpl::{IcplConfig, Mode};
use icpl_core::optcore::PpoConfig;
use icpl_studio::{http, Studio};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

fn tiny_config(k: usize, n: usize, mode: Mode, seed: u64) -> IcplConfig {
    IcplConfig {
        env: EnvId::PointmassRun,
        k,
        n,
        mode,
        seed,
        train: PpoConfig {
            total_steps: 512,
            rollout_steps: 256,
            minibatch_size: 64,
            epochs: 2,
            eval_interval: 256,
            eval_episodes: 1,
            trace_interval: 128,
            hidden: vec![16],
            ..PpoConfig::default()
        },
        workers: 1,
        ..IcplConfig::default()
    }
}

struct Server {
    base: String,
    client: Client,
    task: tokio::task::JoinHandle<()>,
}

impl Server {
    async fn start(data: &Path) -> (Server, Arc<Studio>) {
        let studio = Arc::new(Studio::open(data).unwrap());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let s = Arc::clone(&studio);
        let task = tokio::spawn(async move {
            http::serve(s, listener).await.unwrap();
        });
        (
            Server {
                base,
                client: Client::new(),
                task,
            },
            studio,
        )
    }

    async fn get(&self, path: &str) -> (StatusCode, String) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status(), r.text().await.unwrap())
    }

    async fn get_json(&self, path: &str) -> (StatusCode, Value) {
        let (s, body) = self.get(path).await;
        (s, serde_json::from_str(&body).unwrap())
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self
            .client
            .post(format!("{}{path}", self.base))
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = r.status();
        (status, r.json().await.unwrap())
    }

    async fn create(&self, cfg: &IcplConfig, key: Option<&str>) -> (StatusCode, Value) {
        self.post("/api/sessions", json!({ "config": cfg, "idempotency_key": key }))
            .await
    }

    /// Polls until the session reports `status`.
    async fn wait_for(&self, id: &str, status: &str) -> Value {
        let start = Instant::now();
        loop {
            let (code, v) = self.get_json(&format!("/api/sessions/{id}")).await;
            assert_eq!(code, StatusCode::OK, "{v}");
            if v["manifest"]["status"] == status {
                return v;
            }
            assert!(v.get("error").is_none(), "worker failed: {v}");
            assert!(start.elapsed() < Duration::from_secs(120), "timed out waiting for {status}: {v}");
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
    }

    async fn stop(self, studio: Arc<Studio>) {
        self.task.abort();
        let _ = self.task.await;
        tokio::task::spawn_blocking(move || studio.shutdown()).await.unwrap();
    }
}

fn error_kind(v: &Value) -> &str {
    v["error"].as_str().unwrap_or_default()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_and_unknown_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let (srv, studio) = Server::start(dir.path()).await;
    let (code, v) = srv.get_json("/healthz").await;
    assert_eq!((code, v["status"].as_str()), (StatusCode::OK, Some("ok")));
    let (code, v) = srv.get_json("/api/sessions/nope").await;
    assert_eq!((code, error_kind(&v)), (StatusCode::NOT_FOUND, "unknown_session"));
    let (code, v) = srv.get_json("/api/sessions").await;
    assert_eq!((code, v), (StatusCode::OK, json!([])));
    srv.stop(studio).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn creation_validates_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (srv, studio) = Server::start(dir.path()).await;

    let (code, v) = srv.create(&tiny_config(1, 2, Mode::Proxy, 0), None).await;
    assert_eq!((code, error_kind(&v)), (StatusCode::BAD_REQUEST, "config_invalid"));

    let cfg = tiny_config(2, 1, Mode::Human, 0);
    let (code, first) = srv.create(&cfg, Some("create-1")).await;
    assert_eq!(code, StatusCode::CREATED);
    assert_eq!(first["status"], "generating");
    assert_eq!(first["config"]["k"], 2);
    assert_eq!(first["config"]["backend_kind"], "scripted_mock");
    let (_, again) = srv.create(&cfg, Some("create-1")).await;
    assert_eq!(again["id"], first["id"]);
    assert_eq!(again["created_at"], first["created_at"]);
    let (_, list) = srv.get_json("/api/sessions").await;
    assert_eq!(list.as_array().unwrap().len(), 1);

    let id = first["id"].as_str().unwrap();
    assert!(dir.path().join("sessions").join(id).join("state.json").is_file());
    srv.stop(studio).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn proxy_session_runs_to_a_stable_report() {
    let dir = tempfile::tempdir().unwrap();
    let (srv, studio) = Server::start(dir.path()).await;
    let (code, m) = srv.create(&tiny_config(3, 2, Mode::Proxy, 5), None).await;
    assert_eq!(code, StatusCode::CREATED);
    assert_eq!(m["status"], "generating");
    let id = m["id"].as_str().unwrap().to_string();

    let (code, v) = srv.get_json(&format!("/api/sessions/{id}/pending")).await;
    assert_eq!((code, error_kind(&v)), (StatusCode::CONFLICT, "wrong_status"));

    let view = srv.wait_for(&id, "finished").await;
    assert_eq!(view["ledger_used"], view["ledger_budget"]);
    assert_eq!(view["selected_rts"].as_array().unwrap().len(), 2);

    let (code, v) = srv.get_json(&format!("/api/sessions/{id}/pending")).await;
    assert_eq!((code, error_kind(&v)), (StatusCode::CONFLICT, "wrong_status"));
    let (code, v) = srv
        .post(&format!("/api/sessions/{id}/selection"), json!({"iteration": 2, "best": 0, "worst": 1}))
        .await;
    assert_eq!((code, error_kind(&v)), (StatusCode::UNPROCESSABLE_ENTITY, "invalid_selection"));

    let (code, first) = srv.get(&format!("/api/sessions/{id}/report")).await;
    assert_eq!(code, StatusCode::OK);
    let (_, second) = srv.get(&format!("/api/sessions/{id}/report")).await;
    assert_eq!(first, second);
    let on_disk = std::fs::read_to_string(dir.path().join("sessions").join(&id).join("report.json")).unwrap();
    assert_eq!(on_disk, first);
    let report: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(report["ledger_used"], 7);
    assert_eq!(report["iterations"].as_array().unwrap().len(), 2);
    srv.stop(studio).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn human_session_through_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let (srv, studio) = Server::start(dir.path()).await;
    let (_, m) = srv.create(&tiny_config(4, 3, Mode::Human, 2), None).await;
    let id = m["id"].as_str().unwrap().to_string();
    let sel = format!("/api/sessions/{id}/selection");

    let (code, v) = srv.get_json(&format!("/api/sessions/{id}/report")).await;
    assert_eq!((code, error_kind(&v)), (StatusCode::CONFLICT, "not_finished"));

    for iter in 1..=3usize {
        let view = srv.wait_for(&id, "awaiting_selection").await;
        assert!(view.get("selected_rts").is_none());
        let (code, pending) = srv.get_json(&format!("/api/sessions/{id}/pending")).await;
        assert_eq!(code, StatusCode::OK);
        assert_eq!(pending["stage"], "selection");
        assert_eq!(pending["iteration"], iter);
        let entries = pending["entries"].as_array().unwrap();
        assert_eq!(entries.len(), 4);
        assert!(!pending.to_string().contains("metric"), "{pending}");
        for e in entries {
            let (code, body) = srv.get(e["replay_url"].as_str().unwrap()).await;
            assert_eq!(code, StatusCode::OK);
            let doc = import_replay(body.as_bytes()).unwrap();
            assert_eq!(doc.env_id, EnvId::PointmassRun);
        }
        let (code, v) = srv.get_json(&format!("/api/sessions/{id}/replays/{iter}/9")).await;
        assert_eq!((code, error_kind(&v)), (StatusCode::NOT_FOUND, "unknown_replay"));

        let (code, v) = srv.post(&sel, json!({"iteration": iter, "best": 1, "worst": 1})).await;
        assert_eq!((code, error_kind(&v)), (StatusCode::UNPROCESSABLE_ENTITY, "invalid_selection"));
        let (code, v) = srv.post(&sel, json!({"iteration": iter + 1, "best": 1, "worst": 0})).await;
        assert_eq!((code, error_kind(&v)), (StatusCode::CONFLICT, "stale_iteration"));

        let before = srv.get_json(&format!("/api/sessions/{id}")).await.1["ledger_used"].clone();
        let req = json!({"iteration": iter, "best": 2, "worst": 0, "idempotency_key": format!("pick-{iter}")});
        let (code, ack) = srv.post(&sel, req.clone()).await;
        assert_eq!(code, StatusCode::OK, "{ack}");
        let expected = if iter < 3 { "generating" } else { "awaiting_selection" };
        assert_eq!(ack["status"], expected);
        let (code, replayed) = srv.post(&sel, req).await;
        assert_eq!((code, &replayed), (StatusCode::OK, &ack));
        let after = srv.get_json(&format!("/api/sessions/{id}")).await.1["ledger_used"].clone();
        let charge = if iter < 3 { 6 } else { 5 };
        assert_eq!(after.as_u64().unwrap(), before.as_u64().unwrap() + charge);
    }

    let view = srv.wait_for(&id, "awaiting_selection").await;
    assert_eq!(view["awaiting_final_pick"], true);
    let (_, pending) = srv.get_json(&format!("/api/sessions/{id}/pending")).await;
    assert_eq!(pending["stage"], "final_pick");
    assert_eq!(pending["entries"].as_array().unwrap().len(), 3);
    let (code, v) = srv.post(&sel, json!({"iteration": 3, "best": 0, "worst": 1})).await;
    assert_eq!((code, error_kind(&v)), (StatusCode::CONFLICT, "wrong_status"));

    let fin = json!({"iteration": 2, "final_pick": true, "idempotency_key": "final"});
    let (code, ack) = srv.post(&sel, fin.clone()).await;
    assert_eq!((code, ack["status"].as_str()), (StatusCode::OK, Some("finished")));
    assert_eq!(srv.post(&sel, fin).await.1, ack);

    let (code, report) = srv.get_json(&format!("/api/sessions/{id}/report")).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(report["ledger_used"], 17);
    assert_eq!(report["ledger_budget"], 17);
    assert_eq!(report["final_program"], "2_2");
    assert_eq!(report["ledger_by_source"]["human"], 17);
    srv.stop(studio).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn restart_resumes_waiting_sessions_without_recharging() {
    let dir = tempfile::tempdir().unwrap();
    let (srv, studio) = Server::start(dir.path()).await;
    let (_, m) = srv.create(&tiny_config(2, 2, Mode::Human, 7), Some("k")).await;
    let id = m["id"].as_str().unwrap().to_string();
    srv.wait_for(&id, "awaiting_selection").await;
    let sel = format!("/api/sessions/{id}/selection");
    let req = json!({"iteration": 1, "best": 0, "worst": 1, "idempotency_key": "first"});
    let (_, ack) = srv.post(&sel, req.clone()).await;
    srv.wait_for(&id, "awaiting_selection").await;
    let curve = dir.path().join(format!("sessions/{id}/curves/1_0.json"));
    let stamp = std::fs::metadata(&curve).unwrap().modified().unwrap();
    srv.stop(studio).await;

    let (srv, studio) = Server::start(dir.path()).await;
    let view = srv.wait_for(&id, "awaiting_selection").await;
    assert_eq!(view["iteration"], 2);
    assert_eq!(view["ledger_used"], 2);
    let (code, replayed) = srv.post(&sel, req).await;
    assert_eq!((code, replayed), (StatusCode::OK, ack));
    let (_, again) = srv.create(&tiny_config(2, 2, Mode::Human, 7), Some("k")).await;
    assert_eq!(again["id"], id.as_str());

    let (code, _) = srv
        .post(&sel, json!({"iteration": 2, "best": 1, "worst": 0, "idempotency_key": "second"}))
        .await;
    assert_eq!(code, StatusCode::OK);
    srv.wait_for(&id, "awaiting_selection").await;
    srv.post(&sel, json!({"iteration": 1, "final_pick": true})).await;
    let (_, report) = srv.get_json(&format!("/api/sessions/{id}/report")).await;
    assert_eq!(report["ledger_used"], 3);
    assert_eq!(std::fs::metadata(&curve).unwrap().modified().unwrap(), stamp);
    srv.stop(studio).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_duplicate_submissions_charge_once() {
    let dir = tempfile::tempdir().unwrap();
    let (srv, studio) = Server::start(dir.path()).await;
    let (_, m) = srv.create(&tiny_config(3, 2, Mode::Human, 11), None).await;
    let id = m["id"].as_str().unwrap().to_string();
    srv.wait_for(&id, "awaiting_selection").await;
    let sel = format!("/api/sessions/{id}/selection");
    let req = json!({"iteration": 1, "best": 0, "worst": 2, "idempotency_key": "double-click"});
    let (a, b) = tokio::join!(srv.post(&sel, req.clone()), srv.post(&sel, req.clone()));
    assert_eq!(a.0, StatusCode::OK, "{}", a.1);
    assert_eq!(a, b);
    let view = srv.wait_for(&id, "awaiting_selection").await;
    assert_eq!(view["ledger_used"], 4);
    assert_eq!(view["selections"][0]["best"], 0);
    srv.stop(studio).await;
}
