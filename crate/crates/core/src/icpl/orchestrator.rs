//! Session driver: sample, train in parallel, select, charge, repeat.
//!
//! State is saved before every long phase, so a session reopened from its
//! directory continues where it stopped. Finished training runs are found
//! by their curve files and never repeated; ledger charges carry
//! deterministic ids and are never repeated either.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backend::{build_backend, extract_program, GenerationBackend, GenerationRequest};
use super::prompt::{assemble_feedback_prompt, assemble_initial_prompt, Message, PromptBundle};
use super::store::SessionStore;
use super::{
    FinalOutcome, IcplConfig, IcplError, IterationRecord, Mode, Result, Selection, SelectionAck, SelectionSource,
    SessionState, SessionStatus,
};
use crate::envkit::{export_replay, rollout_episode, EnvSpec};
use crate::optcore::{mix_seed, ppo_train, Deterministic, MetricCurve, RewardSource};
use crate::prefcore::{LabelSource, QueryLedger};
use crate::rewardlang::{parse, probe_executability, validate, CompiledProgram, RewardProgram, RewardTrace, DEFAULT_PROBES};

const PROBE_SALT: u64 = 0x7052_6F62;
const REPLAY_SALT: u64 = 0x5265_706C;

/// A live session: persisted state plus the ledger, backend and optional
/// storage directory.
pub struct Session {
    pub state: SessionState,
    pub ledger: QueryLedger,
    store: Option<SessionStore>,
    backend: Box<dyn GenerationBackend>,
    bundle: PromptBundle,
    spec: EnvSpec,
    trained: AtomicUsize,
}

impl Session {
    /// Starts a session, in memory or in `store`. An existing state in the
    /// store is an error; use [`Session::open`] to resume.
    pub fn create(id: impl Into<String>, config: IcplConfig, store: Option<SessionStore>) -> Result<Self> {
        let state = SessionState::new(id, config)?;
        if let Some(s) = &store {
            if s.has_state() {
                return Err(IcplError::ConfigInvalid(format!("{} already holds a session", s.root().display())));
            }
        }
        let session = Session::assemble(state, store)?;
        session.persist()?;
        Ok(session)
    }

    /// Reopens a stored session at its last persisted status.
    pub fn open(store: SessionStore) -> Result<Self> {
        let state = store.load_state()?;
        state.config.validate()?;
        Session::assemble(state, Some(store))
    }

    fn assemble(state: SessionState, store: Option<SessionStore>) -> Result<Self> {
        let budget = state.config.query_budget()?;
        let ledger = match &store {
            Some(s) => QueryLedger::open(&s.ledger_path(), budget)?,
            None => QueryLedger::new(budget),
        };
        let spec = EnvSpec::builtin(state.config.env);
        let backend = build_backend(&state.config.backend, state.config.env, state.config.seed);
        let bundle = PromptBundle::for_env(&spec, state.config.task_description.as_deref());
        Ok(Session {
            state,
            ledger,
            store,
            backend,
            bundle,
            spec,
            trained: AtomicUsize::new(0),
        })
    }

    pub fn with_backend(mut self, backend: Box<dyn GenerationBackend>) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_bundle(mut self, bundle: PromptBundle) -> Self {
        self.bundle = bundle;
        self
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn bundle(&self) -> &PromptBundle {
        &self.bundle
    }

    pub fn store(&self) -> Option<&SessionStore> {
        self.store.as_ref()
    }

    /// Training runs started by this process.
    pub fn trainings_run(&self) -> usize {
        self.trained.load(Ordering::Relaxed)
    }

    pub fn persist(&self) -> Result<()> {
        match &self.store {
            Some(s) => s.save_state(&self.state),
            None => Ok(()),
        }
    }

    /// Messages for the next generation round.
    pub fn next_prompt(&self) -> Result<Vec<Message>> {
        let cfg = &self.state.config;
        if cfg.ablation.open_loop || self.state.records.is_empty() {
            assemble_initial_prompt(&self.bundle, &self.spec, cfg.k)
        } else {
            assemble_feedback_prompt(&self.bundle, &self.spec, &self.state)
        }
    }
}

fn wrong_status(expected: &str, actual: SessionStatus) -> IcplError {
    IcplError::WrongStatus {
        expected: expected.to_string(),
        actual,
    }
}

/// Extracts, parses, validates and probes one backend text.
fn executable(text: &str, spec: &EnvSpec, seed: u64) -> Option<RewardProgram> {
    let p = parse(&extract_program(text)).ok()?;
    validate(&p, spec).ok()?;
    probe_executability(&p, spec, DEFAULT_PROBES, seed).ok()?;
    Some(p)
}

/// Outcome of [`sample_candidates`].
#[derive(Debug, Clone)]
pub struct Sampled {
    pub programs: Vec<RewardProgram>,
    /// Replacement programs requested after the first round.
    pub resample_count: usize,
    /// Backend samples requested in total.
    pub calls: u64,
}

/// Requests `k` programs and replaces non-executable ones until `k` pass,
/// for at most `cap` replacement rounds.
pub fn sample_candidates(
    backend: &dyn GenerationBackend,
    messages: &[Message],
    k: usize,
    spec: &EnvSpec,
    seed: u64,
    first_call: u64,
    cap: usize,
) -> Result<Sampled> {
    let mut programs = Vec::with_capacity(k);
    let mut calls = 0u64;
    let mut resample_count = 0;
    let mut rounds = 0;
    loop {
        let need = k - programs.len();
        if need == 0 {
            break;
        }
        if calls > 0 {
            if rounds == cap {
                return Err(IcplError::GenerationExhausted { rounds });
            }
            rounds += 1;
            resample_count += need;
        }
        let texts = backend.generate(&GenerationRequest {
            messages,
            n: need,
            first_call: first_call + calls,
        })?;
        calls += need as u64;
        programs.extend(
            texts
                .iter()
                .take(need)
                .filter_map(|t| executable(t, spec, seed)),
        );
    }
    Ok(Sampled {
        programs,
        resample_count,
        calls,
    })
}

/// Charged queries for selecting in iteration `index` (1-based). The last
/// iteration carries the closed form's `-1`.
fn iteration_charge(k: usize, n: usize, index: usize) -> usize {
    2 * (k - 1) - usize::from(index == n)
}

fn charge_iteration(ledger: &mut QueryLedger, cfg: &IcplConfig, index: usize, source: LabelSource) -> Result<()> {
    for j in 0..iteration_charge(cfg.k, cfg.n, index) {
        let id = format!("iter{index}/q{j}");
        if !ledger.contains(&id) {
            ledger.charge(&id, source, None)?;
        }
    }
    Ok(())
}

/// Argmax and argmin with ties to the lowest index; the worst is chosen
/// among the others so the two always differ.
fn proxy_select(rts: &[f64]) -> Selection {
    let mut good = 0;
    for (i, &v) in rts.iter().enumerate() {
        if v > rts[good] {
            good = i;
        }
    }
    let mut bad = usize::from(good == 0);
    for (i, &v) in rts.iter().enumerate() {
        if i != good && v < rts[bad] {
            bad = i;
        }
    }
    Selection {
        good,
        bad,
        source: SelectionSource::Proxy,
    }
}

fn candidate_seed(cfg: &IcplConfig, index: usize, k: usize) -> u64 {
    mix_seed(cfg.seed, (index * 1000 + k) as u64)
}

/// Runs one iteration from `generating`, or finishes an interrupted
/// training phase.
pub fn run_iteration(session: &mut Session) -> Result<()> {
    match session.state.status {
        SessionStatus::Generating => {
            generate(session)?;
            train(session)
        }
        SessionStatus::Training => train(session),
        s => Err(wrong_status("generating", s)),
    }
}

fn generate(session: &mut Session) -> Result<()> {
    let cfg = session.state.config.clone();
    if session.state.records.len() >= cfg.n {
        return Err(IcplError::Corrupt("all iterations already ran".into()));
    }
    let index = session.state.records.len() + 1;
    let messages = session.next_prompt()?;
    let sampled = sample_candidates(
        session.backend.as_ref(),
        &messages,
        cfg.k,
        &session.spec,
        mix_seed(cfg.seed ^ PROBE_SALT, index as u64),
        session.state.calls_made,
        cfg.resample_cap,
    )?;
    let programs: Vec<String> = sampled
        .programs
        .into_iter()
        .enumerate()
        .map(|(k, p)| p.with_meta(index, k).unparse())
        .collect();
    if let Some(store) = &session.store {
        for (k, src) in programs.iter().enumerate() {
            store.write_program(index, k, src, sampled.resample_count)?;
        }
    }
    session.state.calls_made += sampled.calls;
    session.state.records.push(IterationRecord {
        index,
        programs,
        resample_count: sampled.resample_count,
        traces: Vec::new(),
        curves: Vec::new(),
        rts: None,
        selection: None,
    });
    session.state.status = SessionStatus::Training;
    session.persist()
}

struct Trained {
    trace: RewardTrace,
    curve: MetricCurve,
}

fn train_one(session: &Session, record: &IterationRecord, k: usize) -> Result<Trained> {
    let cfg = &session.state.config;
    let index = record.index;
    if let Some(store) = &session.store {
        let done = store.curve_path(index, k).exists()
            && store.trace_path(index, k).exists()
            && (cfg.mode == Mode::Proxy || store.replay_path(index, k).exists());
        if done {
            return Ok(Trained {
                trace: store.read_trace(index, k)?,
                curve: store.read_curve(index, k)?,
            });
        }
    }
    let program = record.candidate(k)?;
    session.trained.fetch_add(1, Ordering::Relaxed);
    let out = ppo_train(
        &session.spec,
        RewardSource::Program(&program),
        &cfg.train,
        candidate_seed(cfg, index, k),
        |_| {},
    )?;
    let trace = out
        .trace
        .ok_or_else(|| IcplError::Corrupt("program training produced no trace".into()))?;
    if let Some(store) = &session.store {
        if cfg.mode == Mode::Human {
            let compiled = CompiledProgram::new(&program, &session.spec)
                .map_err(|e| IcplError::Corrupt(e.to_string()))?;
            let traj = rollout_episode(
                &session.spec,
                &Deterministic(&out.policy),
                mix_seed(candidate_seed(cfg, index, k), REPLAY_SALT),
            )?;
            let doc = export_replay(&session.spec, &traj, |f| compiled.evaluate(f).components);
            store.write_replay(index, k, &doc)?;
        }
        store.write_trace(index, k, &trace)?;
        // The curve file marks the candidate as done; it goes last.
        store.write_curve(index, k, &out.curve)?;
    }
    Ok(Trained { trace, curve: out.curve })
}

fn train(session: &mut Session) -> Result<()> {
    let record = session
        .state
        .records
        .last()
        .cloned()
        .ok_or_else(|| IcplError::Corrupt("training without candidates".into()))?;
    let cfg = session.state.config.clone();
    let workers = if cfg.workers == 0 { cfg.k } else { cfg.workers };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| IcplError::ConfigInvalid(e.to_string()))?;
    let shared: &Session = session;
    let results: Vec<Result<Trained>> =
        pool.install(|| (0..record.programs.len()).into_par_iter().map(|k| train_one(shared, &record, k)).collect());
    let mut traces = Vec::with_capacity(results.len());
    let mut curves = Vec::with_capacity(results.len());
    for r in results {
        let t = r?;
        traces.push(t.trace);
        curves.push(t.curve);
    }
    let rec = session.state.records.last_mut().expect("record exists");
    rec.traces = traces;
    rec.curves = curves;
    match cfg.mode {
        Mode::Proxy => {
            let rts: Vec<f64> = rec
                .curves
                .iter()
                .map(|c| c.rts().unwrap_or(f64::NEG_INFINITY))
                .collect();
            let sel = proxy_select(&rts);
            rec.rts = Some(rts);
            rec.selection = Some(sel);
            let index = rec.index;
            charge_iteration(&mut session.ledger, &cfg, index, LabelSource::OracleSparse)?;
            if index == cfg.n {
                session.state.final_outcome = Some(best_selected(&session.state)?);
                session.state.status = SessionStatus::Finished;
            } else {
                session.state.status = SessionStatus::Generating;
            }
        }
        Mode::Human => session.state.status = SessionStatus::AwaitingSelection,
    }
    session.persist()
}

fn best_selected(state: &SessionState) -> Result<FinalOutcome> {
    let mut best: Option<FinalOutcome> = None;
    for (r, g) in state.selected_goods() {
        let ts = r
            .rts
            .as_ref()
            .and_then(|v| v.get(g).copied())
            .ok_or_else(|| IcplError::Corrupt(format!("iteration {} lacks scores", r.index)))?;
        if best.as_ref().is_none_or(|b| ts > b.ts) {
            best = Some(FinalOutcome {
                ts,
                iteration: r.index,
                candidate: g,
                program_id: format!("{}_{g}", r.index),
            });
        }
    }
    best.ok_or(IcplError::NotFinished)
}

/// Runs iterations until the session needs a human or is finished.
pub fn advance(session: &mut Session) -> Result<SessionStatus> {
    while matches!(session.state.status, SessionStatus::Generating | SessionStatus::Training) {
        run_iteration(session)?;
    }
    Ok(session.state.status)
}

/// Records the human's best and worst choice for `iteration` (1-based).
/// A repeated idempotency key returns the first acknowledgement unchanged.
pub fn apply_human_selection(
    session: &mut Session,
    iteration: usize,
    good: usize,
    bad: usize,
    key: Option<&str>,
) -> Result<SelectionAck> {
    if let Some(ack) = key.and_then(|k| session.state.applied.get(k)) {
        return Ok(ack.clone());
    }
    let cfg = session.state.config.clone();
    if cfg.mode != Mode::Human {
        return Err(IcplError::InvalidSelection("proxy sessions select automatically".into()));
    }
    if session.state.status != SessionStatus::AwaitingSelection || session.state.awaiting_final_pick() {
        return Err(wrong_status("awaiting_selection", session.state.status));
    }
    let index = session.state.records.len();
    if iteration != index {
        return Err(IcplError::StaleIteration {
            expected: index,
            got: iteration,
        });
    }
    if good == bad || good >= cfg.k || bad >= cfg.k {
        return Err(IcplError::InvalidSelection(format!(
            "best {good} and worst {bad} must differ and lie below {}",
            cfg.k
        )));
    }
    charge_iteration(&mut session.ledger, &cfg, index, LabelSource::Human)?;
    let rec = session.state.records.last_mut().expect("record exists");
    rec.selection = Some(Selection {
        good,
        bad,
        source: SelectionSource::Human,
    });
    if index < cfg.n {
        session.state.status = SessionStatus::Generating;
    }
    let ack = SelectionAck {
        iteration,
        good,
        bad: Some(bad),
        status: session.state.status,
        ledger_used: session.ledger.used(),
    };
    if let Some(k) = key {
        session.state.applied.insert(k.to_string(), ack.clone());
    }
    session.persist()?;
    Ok(ack)
}

/// The human's final pick among the selected good programs, by iteration.
pub fn apply_final_pick(session: &mut Session, iteration: usize, key: Option<&str>) -> Result<SelectionAck> {
    if let Some(ack) = key.and_then(|k| session.state.applied.get(k)) {
        return Ok(ack.clone());
    }
    if !session.state.awaiting_final_pick() {
        return Err(wrong_status("awaiting_selection (final pick)", session.state.status));
    }
    let rec = iteration
        .checked_sub(1)
        .and_then(|i| session.state.records.get(i))
        .ok_or_else(|| IcplError::InvalidSelection(format!("no iteration {iteration}")))?;
    let good = rec.selection.expect("all iterations selected").good;
    let ts = rec
        .curve_score(good)
        .ok_or_else(|| IcplError::Corrupt(format!("iteration {iteration} has no curve for {good}")))?;
    session.state.final_outcome = Some(FinalOutcome {
        ts,
        iteration,
        candidate: good,
        program_id: format!("{iteration}_{good}"),
    });
    session.state.status = SessionStatus::Finished;
    let ack = SelectionAck {
        iteration,
        good,
        bad: None,
        status: SessionStatus::Finished,
        ledger_used: session.ledger.used(),
    };
    if let Some(k) = key {
        session.state.applied.insert(k.to_string(), ack.clone());
    }
    session.persist()?;
    Ok(ack)
}

/// Task score of a finished session.
pub fn finalize(state: &SessionState) -> Result<f64> {
    match (&state.status, &state.final_outcome) {
        (SessionStatus::Finished, Some(f)) => Ok(f.ts),
        _ => Err(IcplError::NotFinished),
    }
}

/// Final task score of a batch: the best task score.
pub fn fts(ts: &[f64]) -> Option<f64> {
    ts.iter().copied().reduce(f64::max)
}

/// Runs a proxy session to the end and returns it.
pub fn run_session(id: &str, config: IcplConfig, store: Option<SessionStore>) -> Result<Session> {
    if config.mode != Mode::Proxy {
        return Err(IcplError::ConfigInvalid("only proxy sessions run unattended".into()));
    }
    let mut session = Session::create(id, config, store)?;
    advance(&mut session)?;
    Ok(session)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub session_id: String,
    pub seed: u64,
    pub ts: f64,
    pub best_program: String,
    /// Score of each iteration's selected good program.
    pub selected_rts: Vec<f64>,
    pub ledger_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub open_loop: bool,
    pub runs: Vec<RunSummary>,
    pub fts: f64,
    /// Mean over runs of each iteration's selected score minus the first
    /// iteration's; zero at the first iteration.
    pub improvement: Vec<f64>,
    /// The same batch without feedback, when requested.
    pub open_loop_comparison: Option<Box<BatchReport>>,
}

/// Mean improvement of selected scores relative to the first iteration.
pub fn improvement_curve(runs: &[Vec<f64>]) -> Vec<f64> {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| runs.iter().map(|r| r[i] - r[0]).sum::<f64>() / runs.len() as f64)
        .collect()
}

/// Runs `n_runs` proxy sessions with seeds `config.seed + r`. Sessions are
/// stored under `root/run{r}` (or `root/open_loop/run{r}`) when a root is
/// given. With `compare_open_loop` the same seeds are rerun without
/// feedback.
pub fn run_experiment_batch(
    config: &IcplConfig,
    n_runs: usize,
    compare_open_loop: bool,
    root: Option<&Path>,
) -> Result<BatchReport> {
    if n_runs == 0 {
        return Err(IcplError::ConfigInvalid("a batch needs at least one run".into()));
    }
    let mut report = batch(config, n_runs, root)?;
    if compare_open_loop && !config.ablation.open_loop {
        let mut ol = config.clone();
        ol.ablation.open_loop = true;
        report.open_loop_comparison = Some(Box::new(batch(&ol, n_runs, root.map(|r| r.join("open_loop")).as_deref())?));
    }
    Ok(report)
}

fn batch(config: &IcplConfig, n_runs: usize, root: Option<&Path>) -> Result<BatchReport> {
    let mut runs = Vec::with_capacity(n_runs);
    for r in 0..n_runs {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(r as u64);
        let id = format!("run{r}");
        let store = root.map(|p| SessionStore::new(p.join(&id))).transpose()?;
        let session = run_session(&id, cfg.clone(), store)?;
        let outcome = session.state.final_outcome.clone().ok_or(IcplError::NotFinished)?;
        runs.push(RunSummary {
            session_id: id,
            seed: cfg.seed,
            ts: outcome.ts,
            best_program: outcome.program_id,
            selected_rts: session.state.selected_scores(),
            ledger_used: session.ledger.used(),
        });
    }
    let ts: Vec<f64> = runs.iter().map(|r| r.ts).collect();
    let curves: Vec<Vec<f64>> = runs.iter().map(|r| r.selected_rts.clone()).collect();
    Ok(BatchReport {
        open_loop: config.ablation.open_loop,
        fts: fts(&ts).expect("non-empty batch"),
        improvement: improvement_curve(&curves),
        runs,
        open_loop_comparison: None,
    })
}

/// Per-iteration view used by reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub index: usize,
    pub program_ids: Vec<String>,
    pub resample_count: usize,
    pub rts: Option<Vec<f64>>,
    pub curve_scores: Vec<Option<f64>>,
    pub selection: Option<Selection>,
}

/// Session report: per-iteration scores and selections, task score and a
/// ledger audit. Deterministic for a given session directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub env: String,
    pub mode: Mode,
    pub k: usize,
    pub n: usize,
    pub iterations: Vec<IterationSummary>,
    pub ts: f64,
    pub final_program: String,
    pub improvement: Vec<f64>,
    pub ledger_budget: usize,
    pub ledger_used: usize,
    pub ledger_by_source: BTreeMap<String, usize>,
}

pub fn session_report(session: &Session) -> Result<SessionReport> {
    let ts = finalize(&session.state)?;
    let state = &session.state;
    let outcome = state.final_outcome.as_ref().ok_or(IcplError::NotFinished)?;
    let mut by_source = BTreeMap::new();
    for e in session.ledger.entries() {
        let key = serde_json::to_value(e.source)?.as_str().unwrap_or_default().to_string();
        *by_source.entry(key).or_insert(0) += 1;
    }
    Ok(SessionReport {
        session_id: state.id.clone(),
        env: state.config.env.to_string(),
        mode: state.config.mode,
        k: state.config.k,
        n: state.config.n,
        iterations: state
            .records
            .iter()
            .map(|r| IterationSummary {
                index: r.index,
                program_ids: (0..r.programs.len()).map(|k| format!("{}_{k}", r.index)).collect(),
                resample_count: r.resample_count,
                rts: r.rts.clone(),
                curve_scores: (0..r.curves.len()).map(|k| r.curve_score(k)).collect(),
                selection: r.selection,
            })
            .collect(),
        ts,
        final_program: outcome.program_id.clone(),
        improvement: improvement_curve(&[state.selected_scores()]),
        ledger_budget: session.ledger.budget(),
        ledger_used: session.ledger.used(),
        ledger_by_source: by_source,
    })
}
