//! Loop-level behaviour of the iterative reward search: prompts, backends,
//! selection, query accounting, persistence and batches.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Mutex;

use icpl_core::envkit::{EnvId, EnvSpec};
use icpl_core::icpl::mock::MockConfig;
use icpl_core::icpl::{
    advance, apply_final_pick, apply_human_selection, assemble_feedback_prompt, assemble_initial_prompt, digest,
    finalize, fts, mock_generate, run_experiment_batch, run_iteration, run_session, sample_candidates, AblationFlags,
    GenerationBackend, GenerationRequest, HttpChatBackend, IcplConfig, IcplError, IterationRecord, Message, MockBackend,
    Mode, MutationConfig, PromptBundle, Selection, SelectionSource, Session, SessionState, SessionStatus, SessionStore,
    BAD_MARKER, DIFF_MARKER, GOOD_MARKER, REQUEST_MARKER, TRACE_MARKER,
};
use icpl_core::optcore::{MetricCurve, PpoConfig};
use icpl_core::rewardlang::{diff, parse, RewardTrace, TraceCheckpoint};

fn tiny_train() -> PpoConfig {
    PpoConfig {
        total_steps: 512,
        rollout_steps: 256,
        minibatch_size: 64,
        epochs: 2,
        eval_interval: 256,
        eval_episodes: 1,
        trace_interval: 128,
        hidden: vec![16],
        ..PpoConfig::default()
    }
}

fn config(k: usize, n: usize, mode: Mode, seed: u64) -> IcplConfig {
    IcplConfig {
        env: EnvId::PointmassRun,
        k,
        n,
        mode,
        seed,
        train: tiny_train(),
        workers: 1,
        ..IcplConfig::default()
    }
}

fn mock(seed: u64) -> MockBackend {
    MockBackend {
        config: MockConfig {
            library: EnvId::PointmassRun,
            mutation: MutationConfig::default(),
        },
        seed,
    }
}

/// Wraps a backend and keeps every prompt it was sent.
struct Recording<B> {
    inner: B,
    prompts: Mutex<Vec<String>>,
}

impl<B: GenerationBackend> GenerationBackend for Recording<B> {
    fn generate(&self, request: &GenerationRequest<'_>) -> icpl_core::icpl::Result<Vec<String>> {
        self.prompts.lock().unwrap().push(digest(request.messages));
        self.inner.generate(request)
    }
}

struct Shared(std::sync::Arc<Recording<MockBackend>>);

impl GenerationBackend for Shared {
    fn generate(&self, r: &GenerationRequest<'_>) -> icpl_core::icpl::Result<Vec<String>> {
        self.0.generate(r)
    }
}

fn recording(seed: u64) -> std::sync::Arc<Recording<MockBackend>> {
    std::sync::Arc::new(Recording {
        inner: mock(seed),
        prompts: Mutex::new(Vec::new()),
    })
}

/// Emits unparseable text for the first `broken` call indices.
struct BrokenFirst {
    inner: MockBackend,
    broken: u64,
}

impl GenerationBackend for BrokenFirst {
    fn generate(&self, request: &GenerationRequest<'_>) -> icpl_core::icpl::Result<Vec<String>> {
        let good = self.inner.generate(request)?;
        Ok(good
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                if request.first_call + (i as u64) < self.broken {
                    "component = ;".to_string()
                } else {
                    t
                }
            })
            .collect())
    }
}

struct Garbage;

impl GenerationBackend for Garbage {
    fn generate(&self, request: &GenerationRequest<'_>) -> icpl_core::icpl::Result<Vec<String>> {
        Ok(vec!["I cannot help with that.".to_string(); request.n])
    }
}

struct Down;

impl GenerationBackend for Down {
    fn generate(&self, _: &GenerationRequest<'_>) -> icpl_core::icpl::Result<Vec<String>> {
        Err(IcplError::BackendUnavailable("connection refused".into()))
    }
}

// ---------------------------------------------------------------- prompts

#[test]
fn initial_prompt_lists_features_and_is_deterministic() {
    let spec = EnvSpec::builtin(EnvId::PointmassRun);
    let bundle = PromptBundle::for_env(&spec, None);
    let a = assemble_initial_prompt(&bundle, &spec, 6).unwrap();
    let b = assemble_initial_prompt(&bundle, &spec, 6).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
    for name in spec.feature_names() {
        assert!(a[0].content.contains(name), "missing feature {name}");
    }
    assert!(a[0].content.contains("clamp(e, lo, hi)"));
    assert!(a[1].content.contains(&bundle.task_description));
    assert!(!a.iter().any(|m| m.content.contains("{{")));
}

#[test]
fn empty_task_or_stray_slot_is_rejected() {
    let spec = EnvSpec::builtin(EnvId::CartpoleBalance);
    let mut bundle = PromptBundle::for_env(&spec, Some("   "));
    assert!(matches!(
        assemble_initial_prompt(&bundle, &spec, 4),
        Err(IcplError::TemplateSlotUnresolved(s)) if s == "task_description"
    ));
    bundle.task_description = "balance".into();
    bundle.tips.push_str("\n{{style_guide}}");
    assert!(matches!(
        assemble_initial_prompt(&bundle, &spec, 4),
        Err(IcplError::TemplateSlotUnresolved(s)) if s == "style_guide"
    ));
}

fn fake_trace(id: &str, base: f64) -> RewardTrace {
    RewardTrace {
        program_id: id.to_string(),
        checkpoints: (1..=3)
            .map(|i| TraceCheckpoint {
                env_step: 128 * i,
                component_means: BTreeMap::from([
                    ("speed".to_string(), base + i as f64),
                    ("effort".to_string(), 0.25 * i as f64),
                ]),
                total_mean: base,
                metric_value: 777.125 + i as f64,
            })
            .collect(),
    }
}

const PROGRAMS: [&str; 3] = [
    "component speed = feature(vx);\ncomponent effort = feature(action_sq);\ntotal = 1.0*speed - 2.0*effort;",
    "component speed = feature(vx);\ncomponent effort = feature(action_sq);\ntotal = 1.0*speed - 1.5*effort;",
    "component speed = tanh(feature(vx) / 2.0);\ncomponent effort = feature(action_sq);\ntotal = 1.0*speed - 0.5*effort;",
];

/// A proxy-style state with `iters` selected iterations of three candidates.
fn synthetic_state(iters: usize, flags: AblationFlags) -> SessionState {
    let mut cfg = config(3, 5, Mode::Proxy, 0);
    cfg.ablation = flags;
    let mut s = SessionState::new("synthetic", cfg).unwrap();
    for it in 1..=iters {
        let programs: Vec<String> = (0..3)
            .map(|k| parse(PROGRAMS[(k + it) % 3]).unwrap().with_meta(it, k).unparse())
            .collect();
        s.records.push(IterationRecord {
            index: it,
            programs,
            resample_count: 0,
            traces: (0..3).map(|k| fake_trace(&format!("{it}_{k}"), k as f64 + it as f64)).collect(),
            curves: vec![MetricCurve::default(); 3],
            rts: Some(vec![13.579246 + it as f64, 24.681357 + it as f64, 3.2468135]),
            selection: Some(Selection {
                good: 1,
                bad: 2,
                source: SelectionSource::Proxy,
            }),
        });
    }
    s
}

fn feedback(state: &SessionState) -> String {
    let spec = EnvSpec::builtin(EnvId::PointmassRun);
    let bundle = PromptBundle::for_env(&spec, None);
    let msgs = assemble_feedback_prompt(&bundle, &spec, state).unwrap();
    msgs.iter().map(|m| m.content.clone()).collect::<Vec<_>>().join("\n")
}

#[test]
fn two_iterations_give_one_diff_and_two_traces() {
    let text = feedback(&synthetic_state(2, AblationFlags::default()));
    assert_eq!(text.matches(GOOD_MARKER).count(), 1);
    assert_eq!(text.matches(BAD_MARKER).count(), 1);
    assert_eq!(text.matches(DIFF_MARKER).count(), 1);
    assert_eq!(text.matches(TRACE_MARKER).count(), 2);
    let pos = |m: &str| text.find(m).unwrap();
    assert!(pos(GOOD_MARKER) < pos(BAD_MARKER));
    assert!(pos(BAD_MARKER) < pos(DIFF_MARKER));
    assert!(pos(DIFF_MARKER) < pos(TRACE_MARKER));
    assert!(pos(TRACE_MARKER) < text.rfind(REQUEST_MARKER).unwrap());
}

#[test]
fn ablation_sections_follow_flags_in_all_combinations() {
    for flags in AblationFlags::all_section_combinations() {
        let text = feedback(&synthetic_state(3, flags));
        assert!(text.contains(GOOD_MARKER) && text.contains("Evaluation:"));
        assert_eq!(text.contains(BAD_MARKER), flags.use_bad_example, "{flags:?}");
        assert_eq!(text.contains(DIFF_MARKER), flags.use_diffs, "{flags:?}");
        assert_eq!(text.contains(TRACE_MARKER), flags.use_reward_trace, "{flags:?}");
        if flags.use_diffs {
            assert_eq!(text.matches(DIFF_MARKER).count(), 2);
        }
        if flags.use_reward_trace {
            assert_eq!(text.matches(TRACE_MARKER).count(), 3);
        }
    }
}

#[test]
fn stripped_feedback_keeps_only_the_good_program() {
    let flags = AblationFlags {
        use_reward_trace: false,
        use_diffs: false,
        use_bad_example: false,
        open_loop: false,
    };
    let text = feedback(&synthetic_state(2, flags));
    let good = parse(PROGRAMS[(1 + 2) % 3]).unwrap().with_meta(2, 1).unparse();
    assert!(text.contains(good.trim_end()));
    for m in [BAD_MARKER, DIFF_MARKER, TRACE_MARKER] {
        assert!(!text.contains(m));
    }
}

#[test]
fn feedback_never_shows_task_scores() {
    let state = synthetic_state(3, AblationFlags::default());
    let text = feedback(&state);
    for r in &state.records {
        for v in r.rts.as_ref().unwrap() {
            assert!(!text.contains(&format!("{v}")), "{v} leaked");
        }
        for t in &r.traces {
            for c in &t.checkpoints {
                assert!(!text.contains(&format!("{}", c.metric_value)));
            }
        }
    }
    assert!(!text.contains("777"));
}

#[test]
fn feedback_preconditions() {
    let spec = EnvSpec::builtin(EnvId::PointmassRun);
    let bundle = PromptBundle::for_env(&spec, None);
    let empty = synthetic_state(0, AblationFlags::default());
    assert!(matches!(assemble_feedback_prompt(&bundle, &spec, &empty), Err(IcplError::NoSelectionYet)));
    let mut pending = synthetic_state(2, AblationFlags::default());
    pending.records[1].selection = None;
    assert!(matches!(assemble_feedback_prompt(&bundle, &spec, &pending), Err(IcplError::NoSelectionYet)));
    let open = synthetic_state(
        2,
        AblationFlags {
            open_loop: true,
            ..AblationFlags::default()
        },
    );
    assert!(matches!(assemble_feedback_prompt(&bundle, &spec, &open), Err(IcplError::OpenLoopMode)));
}

// --------------------------------------------------------------- backends

#[test]
fn mock_is_a_pure_function() {
    let cfg = mock(0).config;
    let d = "some prompt";
    assert_eq!(mock_generate(&cfg, d, 11, 3), mock_generate(&cfg, d, 11, 3));
    let distinct: std::collections::HashSet<String> = (0..20).map(|i| mock_generate(&cfg, d, 11, i)).collect();
    assert!(distinct.len() > 10);
    assert_ne!(mock_generate(&cfg, d, 11, 0), mock_generate(&cfg, d, 12, 0));
}

#[test]
fn sampling_is_reproducible_call_for_call() {
    let spec = EnvSpec::builtin(EnvId::PointmassRun);
    let msgs = assemble_initial_prompt(&PromptBundle::for_env(&spec, None), &spec, 4).unwrap();
    let a = sample_candidates(&mock(11), &msgs, 4, &spec, 11, 0, 10).unwrap();
    let b = sample_candidates(&mock(11), &msgs, 4, &spec, 11, 0, 10).unwrap();
    assert_eq!(a.programs.len(), 4);
    assert_eq!(a.resample_count, 0);
    assert_eq!(a.calls, 4);
    let texts = |s: &icpl_core::icpl::Sampled| s.programs.iter().map(|p| p.unparse()).collect::<Vec<_>>();
    assert_eq!(texts(&a), texts(&b));
}

#[test]
fn broken_outputs_are_resampled_and_counted() {
    let spec = EnvSpec::builtin(EnvId::PointmassRun);
    let msgs = assemble_initial_prompt(&PromptBundle::for_env(&spec, None), &spec, 4).unwrap();
    let backend = BrokenFirst {
        inner: mock(11),
        broken: 2,
    };
    let s = sample_candidates(&backend, &msgs, 4, &spec, 11, 0, 10).unwrap();
    assert_eq!(s.programs.len(), 4);
    assert_eq!(s.resample_count, 2);
    assert_eq!(s.calls, 6);
}

#[test]
fn persistent_garbage_exhausts_and_transport_errors_propagate() {
    let spec = EnvSpec::builtin(EnvId::PointmassRun);
    let msgs = assemble_initial_prompt(&PromptBundle::for_env(&spec, None), &spec, 3).unwrap();
    assert!(matches!(
        sample_candidates(&Garbage, &msgs, 3, &spec, 0, 0, 10),
        Err(IcplError::GenerationExhausted { rounds: 10 })
    ));
    assert!(matches!(
        sample_candidates(&Down, &msgs, 3, &spec, 0, 0, 10),
        Err(IcplError::BackendUnavailable(_))
    ));
}

/// Serves one canned chat-completions response and returns the request.
fn one_shot_server(response_body: String) -> (String, std::thread::JoinHandle<(String, BTreeMap<String, String>, String)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut request_line = String::new();
        reader.read_line(&mut request_line).unwrap();
        let mut headers = BTreeMap::new();
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            let (k, v) = line.split_once(':').unwrap();
            headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
        let len: usize = headers.get("content-length").map_or(0, |v| v.parse().unwrap());
        let mut body = vec![0u8; len];
        reader.read_exact(&mut body).unwrap();
        let mut out = stream;
        write!(
            out,
            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
            response_body.len(),
            response_body
        )
        .unwrap();
        out.flush().unwrap();
        (request_line, headers, String::from_utf8(body).unwrap())
    });
    (addr, handle)
}

#[test]
fn http_backend_speaks_the_chat_protocol() {
    let program = "component speed = feature(vx);\ntotal = 1.0*speed;\n";
    let reply = serde_json::json!({
        "choices": [
            {"message": {"role": "assistant", "content": format!("Sure:\n```reward\n{program}```\n")}},
            {"message": {"role": "assistant", "content": [{"type": "text", "text": "```\nnot a program\n```"}]}}
        ]
    });
    let (addr, server) = one_shot_server(reply.to_string());
    let backend = HttpChatBackend {
        endpoint: format!("{addr}/v1"),
        model: "test-model".into(),
        temperature: 0.7,
        timeout: std::time::Duration::from_secs(10),
        api_key: Some("secret".into()),
    };
    let spec = EnvSpec::builtin(EnvId::PointmassRun);
    let msgs = assemble_initial_prompt(&PromptBundle::for_env(&spec, None), &spec, 2).unwrap();
    let texts = backend
        .generate(&GenerationRequest {
            messages: &msgs,
            n: 2,
            first_call: 0,
        })
        .unwrap();
    let (line, headers, body) = server.join().unwrap();
    assert!(line.starts_with("POST /v1/chat/completions "), "{line}");
    assert_eq!(headers["authorization"], "Bearer secret");
    let body: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["n"], 2);
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(texts.len(), 2);
    assert_eq!(icpl_core::icpl::extract_program(&texts[0]), program);
}

#[test]
fn http_backend_reads_its_environment_and_reports_outages() {
    std::env::set_var(icpl_core::icpl::API_BASE_VAR, "http://127.0.0.1:9");
    std::env::set_var(icpl_core::icpl::API_KEY_VAR, "k");
    let b = HttpChatBackend::from_env("http://unused", "m", 1.0, 2);
    std::env::remove_var(icpl_core::icpl::API_BASE_VAR);
    std::env::remove_var(icpl_core::icpl::API_KEY_VAR);
    assert_eq!(b.endpoint, "http://127.0.0.1:9");
    assert_eq!(b.api_key.as_deref(), Some("k"));
    let msgs = vec![Message {
        role: icpl_core::icpl::Role::User,
        content: "hi".into(),
    }];
    let r = b.generate(&GenerationRequest {
        messages: &msgs,
        n: 1,
        first_call: 0,
    });
    assert!(matches!(r, Err(IcplError::BackendUnavailable(_))));
}

// ---------------------------------------------------------------- sessions

#[test]
fn feedback_steers_the_mock_toward_the_selected_program() {
    for seed in 0..3 {
        let mut cfg = config(4, 2, Mode::Proxy, seed);
        cfg.train.total_steps = 256;
        let mut s = Session::create("steer", cfg.clone(), None).unwrap();
        run_iteration(&mut s).unwrap();
        run_iteration(&mut s).unwrap();
        let first = &s.state.records[0];
        let good = first.candidate(first.selection.unwrap().good).unwrap();
        let near = s.state.records[1]
            .candidates()
            .unwrap()
            .iter()
            .filter(|c| diff(&good, c).edits.len() <= 2)
            .count();
        assert!(near >= 3, "seed {seed}: only {near} of 4 near the good program");
    }
}

#[test]
fn open_loop_never_sends_feedback() {
    let mut cfg = config(3, 3, Mode::Proxy, 5);
    cfg.ablation.open_loop = true;
    let rec = recording(5);
    let mut s = Session::create("ol", cfg, None)
        .unwrap()
        .with_backend(Box::new(Shared(rec.clone())));
    advance(&mut s).unwrap();
    let prompts = rec.prompts.lock().unwrap();
    assert_eq!(prompts.len(), 3);
    assert!(prompts.iter().all(|p| p == &prompts[0] && !p.contains(GOOD_MARKER)));
    assert_eq!(s.state.status, SessionStatus::Finished);
    assert_eq!(s.state.records.len(), 3);
    assert!(s.state.records.iter().all(|r| r.programs.len() == 3));
}

#[test]
fn proxy_session_never_leaks_scores_into_prompts() {
    let cfg = config(3, 3, Mode::Proxy, 2);
    let rec = recording(2);
    let mut s = Session::create("leak", cfg, None)
        .unwrap()
        .with_backend(Box::new(Shared(rec.clone())));
    advance(&mut s).unwrap();
    let prompts = rec.prompts.lock().unwrap();
    assert_eq!(prompts.len(), 3);
    assert!(prompts[1].contains(GOOD_MARKER) && prompts[2].contains(TRACE_MARKER));
    for r in &s.state.records {
        for v in r.rts.as_ref().unwrap() {
            let needle = format!("{v}");
            assert!(prompts.iter().all(|p| !p.contains(&needle)), "rts {needle} leaked");
        }
    }
}

#[test]
fn proxy_scores_and_selection_invariants() {
    let s = run_session("proxy", config(3, 3, Mode::Proxy, 9), None).unwrap();
    let ts = finalize(&s.state).unwrap();
    for r in &s.state.records {
        let sel = r.selection.unwrap();
        let rts = r.rts.as_ref().unwrap();
        assert_ne!(sel.good, sel.bad);
        assert!(sel.good < 3 && sel.bad < 3);
        assert_eq!(sel.source, SelectionSource::Proxy);
        assert!(rts.iter().all(|&v| v <= rts[sel.good]));
        assert!(rts.iter().all(|&v| v >= rts[sel.bad]));
        assert!(ts >= rts[sel.good]);
        assert_eq!(r.traces.len(), 3);
        assert!(r.traces.iter().all(RewardTrace::is_well_formed));
    }
    let best = s.state.selected_scores().into_iter().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(ts, best);
    assert_eq!(s.ledger.used(), 2 * 2 * 3 - 1);
    assert_eq!(fts(&[9.3, 12.0, 11.1]), Some(12.0));
}

#[test]
fn unfinished_sessions_have_no_score() {
    let mut s = Session::create("x", config(2, 2, Mode::Proxy, 0), None).unwrap();
    assert!(matches!(finalize(&s.state), Err(IcplError::NotFinished)));
    run_iteration(&mut s).unwrap();
    assert!(matches!(finalize(&s.state), Err(IcplError::NotFinished)));
}

#[test]
fn single_candidate_sessions_are_rejected() {
    assert!(matches!(
        Session::create("k1", config(1, 3, Mode::Proxy, 0), None),
        Err(IcplError::ConfigInvalid(_))
    ));
}

/// Drives a human session with a scripted selector; returns it finished.
fn scripted_human(k: usize, n: usize, dir: &std::path::Path) -> Session {
    let store = SessionStore::new(dir).unwrap();
    let mut s = Session::create("human", config(k, n, Mode::Human, 4), Some(store)).unwrap();
    for it in 1..=n {
        assert_eq!(advance(&mut s).unwrap(), SessionStatus::AwaitingSelection);
        assert!(s.state.records[it - 1].rts.is_none());
        for c in 0..k {
            let doc = s.store().unwrap().read_replay(it, c).unwrap();
            assert!(!doc.frames.is_empty());
        }
        let before = s.ledger.used();
        let ack = apply_human_selection(&mut s, it, it % k, (it + 1) % k, Some(&format!("sel-{it}"))).unwrap();
        let expected = if it == n { 2 * (k - 1) - 1 } else { 2 * (k - 1) };
        assert_eq!(s.ledger.used() - before, expected);
        assert_eq!(ack.ledger_used, s.ledger.used());
    }
    assert!(s.state.awaiting_final_pick());
    assert!(matches!(finalize(&s.state), Err(IcplError::NotFinished)));
    apply_final_pick(&mut s, 2.min(n), Some("final")).unwrap();
    s
}

#[test]
fn human_sessions_charge_the_closed_form() {
    for (k, n, q) in [(6, 5, 49), (4, 3, 17)] {
        let dir = tempfile::tempdir().unwrap();
        let s = scripted_human(k, n, dir.path());
        assert_eq!(s.state.status, SessionStatus::Finished);
        assert_eq!(s.ledger.used(), q);
        let lines = std::fs::read_to_string(dir.path().join("ledger.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), q);
        let reopened = Session::open(SessionStore::new(dir.path()).unwrap()).unwrap();
        assert_eq!(reopened.ledger.used(), q);
        let pick = 2.min(n);
        let good = s.state.records[pick - 1].selection.unwrap().good;
        assert_eq!(finalize(&s.state).unwrap(), s.state.records[pick - 1].curve_score(good).unwrap());
    }
}

#[test]
fn human_selection_errors() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path()).unwrap();
    let mut s = Session::create("h", config(3, 2, Mode::Human, 1), Some(store)).unwrap();
    assert!(matches!(
        apply_human_selection(&mut s, 1, 0, 1, None),
        Err(IcplError::WrongStatus { .. })
    ));
    advance(&mut s).unwrap();
    assert!(matches!(apply_human_selection(&mut s, 1, 2, 2, None), Err(IcplError::InvalidSelection(_))));
    assert!(matches!(apply_human_selection(&mut s, 1, 0, 3, None), Err(IcplError::InvalidSelection(_))));
    assert!(matches!(
        apply_human_selection(&mut s, 2, 0, 1, None),
        Err(IcplError::StaleIteration { expected: 1, got: 2 })
    ));
    assert_eq!(s.ledger.used(), 0);
    apply_human_selection(&mut s, 1, 0, 1, None).unwrap();
    assert_eq!(s.ledger.used(), 4);
    advance(&mut s).unwrap();
    apply_human_selection(&mut s, 2, 1, 0, None).unwrap();
    apply_final_pick(&mut s, 1, None).unwrap();
    assert!(matches!(
        apply_human_selection(&mut s, 2, 0, 1, None),
        Err(IcplError::WrongStatus { .. })
    ));
    assert!(matches!(apply_final_pick(&mut s, 1, None), Err(IcplError::WrongStatus { .. })));
}

#[test]
fn repeated_selection_keys_are_no_ops() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path()).unwrap();
    let mut s = Session::create("idem", config(3, 2, Mode::Human, 3), Some(store)).unwrap();
    advance(&mut s).unwrap();
    let first = apply_human_selection(&mut s, 1, 2, 0, Some("key-1")).unwrap();
    let records = s.state.records.clone();
    let used = s.ledger.used();
    for _ in 0..5 {
        assert_eq!(apply_human_selection(&mut s, 1, 2, 0, Some("key-1")).unwrap(), first);
    }
    assert_eq!(s.state.records, records);
    assert_eq!(s.ledger.used(), used);
    let mut reopened = Session::open(SessionStore::new(dir.path()).unwrap()).unwrap();
    assert_eq!(apply_human_selection(&mut reopened, 1, 2, 0, Some("key-1")).unwrap(), first);
    assert_eq!(reopened.ledger.used(), used);
}

#[test]
fn crashes_resume_without_recharging_or_retraining() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path()).unwrap();
    let mut s = Session::create("crash", config(3, 3, Mode::Human, 8), Some(store)).unwrap();
    advance(&mut s).unwrap();
    let state_file = dir.path().join("state.json");
    let before_selection = std::fs::read(&state_file).unwrap();

    // Crash after the ledger was charged but before the state was saved.
    apply_human_selection(&mut s, 1, 1, 2, None).unwrap();
    let charged = s.ledger.used();
    drop(s);
    std::fs::write(&state_file, &before_selection).unwrap();
    let mut s = Session::open(SessionStore::new(dir.path()).unwrap()).unwrap();
    assert_eq!(s.state.status, SessionStatus::AwaitingSelection);
    apply_human_selection(&mut s, 1, 1, 2, None).unwrap();
    assert_eq!(s.ledger.used(), charged);

    // Crash in the middle of training iteration 2: one candidate unfinished.
    advance(&mut s).unwrap();
    let finished = s.state.records[1].clone();
    let mut st = s.state.clone();
    drop(s);
    st.status = SessionStatus::Training;
    st.records[1].traces.clear();
    st.records[1].curves.clear();
    std::fs::write(&state_file, serde_json::to_vec(&st).unwrap()).unwrap();
    std::fs::remove_file(dir.path().join("curves/2_1.json")).unwrap();
    let mut s = Session::open(SessionStore::new(dir.path()).unwrap()).unwrap();
    assert_eq!(advance(&mut s).unwrap(), SessionStatus::AwaitingSelection);
    assert_eq!(s.trainings_run(), 1);
    assert_eq!(s.state.records[1], finished);
    assert_eq!(s.ledger.used(), charged);
}

#[test]
fn stored_proxy_session_layout() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path()).unwrap();
    let s = run_session("layout", config(2, 2, Mode::Proxy, 6), Some(store)).unwrap();
    for it in 1..=2 {
        for k in 0..2 {
            for sub in ["programs", "traces", "curves"] {
                let ext = if sub == "programs" { "reward" } else { "json" };
                assert!(dir.path().join(format!("{sub}/{it}_{k}.{ext}")).exists());
            }
            assert!(!dir.path().join(format!("replays/{it}_{k}.json")).exists());
            let src = std::fs::read_to_string(dir.path().join(format!("programs/{it}_{k}.reward"))).unwrap();
            assert_eq!(src, s.state.records[it - 1].programs[k]);
        }
    }
    let restored = Session::open(SessionStore::new(dir.path()).unwrap()).unwrap();
    assert_eq!(restored.state, s.state);
    assert_eq!(restored.ledger.entries(), s.ledger.entries());
}

#[test]
fn batches_report_scores_and_open_loop_comparison() {
    let cfg = config(2, 3, Mode::Proxy, 20);
    let r = run_experiment_batch(&cfg, 2, true, None).unwrap();
    assert_eq!(r.runs.len(), 2);
    let ts: Vec<f64> = r.runs.iter().map(|x| x.ts).collect();
    assert_eq!(Some(r.fts), fts(&ts));
    assert_eq!(r.improvement.len(), 3);
    assert_eq!(r.improvement[0], 0.0);
    let ol = r.open_loop_comparison.as_ref().unwrap();
    assert!(ol.open_loop && ol.runs.len() == 2);
    // Same seeds, same first iteration.
    assert_eq!(r.runs[0].selected_rts[0], ol.runs[0].selected_rts[0]);
    assert!(matches!(
        run_experiment_batch(&config(2, 1, Mode::Human, 0), 1, false, None),
        Err(IcplError::ConfigInvalid(_))
    ));
}

#[test]
fn config_json_defaults_and_rejections() {
    let c: IcplConfig = serde_json::from_str(r#"{"env":"hover2d","k":4,"backend":{"kind":"scripted_mock","seed":3}}"#).unwrap();
    assert_eq!((c.k, c.n, c.env), (4, 5, EnvId::Hover2d));
    assert!(c.validate().is_ok());
    assert!(serde_json::from_str::<IcplConfig>(r#"{"kk":4}"#).is_err());
    let back: IcplConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(back, c);
}
