//! Prompt templates and the initial and feedback message builders.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{IcplError, IterationRecord, Result, SessionState};
use crate::envkit::{EnvId, EnvSpec};
use crate::rewardlang::{diff, RewardTrace};

pub const GOOD_MARKER: &str = "## Preferred reward program";
pub const BAD_MARKER: &str = "## Rejected reward program";
pub const DIFF_MARKER: &str = "## Changes between selected programs";
pub const TRACE_MARKER: &str = "## Reward trace";
pub const REQUEST_MARKER: &str = "## Request";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    fn new(role: Role, content: String) -> Self {
        Message { role, content }
    }
}

const INITIAL_SYSTEM: &str = "You design reward functions for reinforcement learning in the {{env_name}} environment. \
A reward function is written as a reward program in the small language described below. \
Each step the agent receives the weighted sum of the program's components. \
Your goal is a reward that makes a policy trained on it solve the task as well as possible.";

const TIPS: &str = "Tips for writing reward programs:
- Split the reward into a few named components, each capturing one aspect of the desired behaviour.
- Keep every component bounded; squash large quantities with tanh or exp of a negative value, and use a temperature constant to set the scale.
- Weights set the trade-off between components; penalties get negative weights.
- Use only features from the catalog. Unknown features, functions or syntax make the program unusable.
- Answer with exactly one program inside a fenced code block.";

const FEEDBACK_TEMPLATE: &str = "We trained one policy with each of your previous reward programs and compared the resulting behaviour. \
The evaluations report the mean value per step of every component over the final stretch of training.";

const DIFFERENCE_PROMPT: &str = "Each block lists the edits that turned one iteration's preferred program into the next one's. \
Use them to judge which kinds of changes improved the behaviour.";

const REQUEST: &str = "Write a new reward program for the task: {{task_description}}
Answer with one program in a fenced code block. {{k}} answers will be sampled independently, so vary your ideas.";

const GRAMMAR: &str = "Reward program language:
  component NAME = EXPR;          one per component, names are identifiers
  total = W*NAME + W*NAME - ...;  weighted sum of components, W a number
EXPR is built from numbers, feature(NAME), + - * /, parentheses and the functions
  exp(e), abs(e), tanh(e), min(a, b), max(a, b), clamp(e, lo, hi) with numeric lo and hi.
Lines starting with # are comments. Example:
```reward
component speed = tanh(feature(vx) / 2.0);
component effort = feature(action_sq);
total = 1.0*speed - 0.1*effort;
```";

/// Built-in task text per environment.
pub fn default_task(env: EnvId) -> &'static str {
    match env {
        EnvId::CartpoleBalance => "keep the pole balanced upright on the cart for as long as possible without the cart leaving the track.",
        EnvId::PointmassRun => "make the point mass run forward along the track as far as possible without leaving the track.",
        EnvId::Hover2d => "fly the craft to the target and stay as close to it as possible.",
    }
}

/// Prompt templates. Slots are written `{{name}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub initial_system: String,
    pub task_description: String,
    pub env_context: String,
    pub feedback_template: String,
    pub tips: String,
    pub difference_prompt: String,
}

impl PromptBundle {
    pub fn for_env(spec: &EnvSpec, task_description: Option<&str>) -> Self {
        PromptBundle {
            initial_system: INITIAL_SYSTEM.to_string(),
            task_description: task_description.unwrap_or(default_task(spec.id)).to_string(),
            env_context: render_env_context(spec),
            feedback_template: FEEDBACK_TEMPLATE.to_string(),
            tips: TIPS.to_string(),
            difference_prompt: DIFFERENCE_PROMPT.to_string(),
        }
    }

    fn system_message(&self, spec: &EnvSpec) -> Result<Message> {
        let head = fill(&self.initial_system, &[("env_name", spec.id.as_str())])?;
        let context = fill(&self.env_context, &[])?;
        let tips = fill(&self.tips, &[])?;
        Ok(Message::new(Role::System, format!("{head}\n\n{context}\n\n{tips}")))
    }

    fn request(&self, k: usize) -> Result<String> {
        let task = self.task_description.trim();
        if task.is_empty() {
            return Err(IcplError::TemplateSlotUnresolved("task_description".into()));
        }
        fill(REQUEST, &[("task_description", task), ("k", &k.to_string())])
    }
}

fn render_env_context(spec: &EnvSpec) -> String {
    let mut out = format!("Environment `{}`. Features available through feature(NAME):\n", spec.id);
    for f in &spec.feature_catalog {
        let _ = match f.bounds {
            Some((lo, hi)) => writeln!(out, "- {}: {} (typical range {lo} to {hi})", f.name, f.description),
            None => writeln!(out, "- {}: {}", f.name, f.description),
        };
    }
    out.push('\n');
    out.push_str(GRAMMAR);
    out
}

/// Substitutes `{{name}}` slots. Any slot left over is an error.
fn fill(template: &str, slots: &[(&str, &str)]) -> Result<String> {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{{{name}}}}}"), value);
    }
    if let Some(start) = out.find("{{") {
        let rest = &out[start + 2..];
        let name = rest.split("}}").next().unwrap_or(rest);
        return Err(IcplError::TemplateSlotUnresolved(name.trim().to_string()));
    }
    Ok(out)
}

/// `[system, user]` messages asking for `k` programs. Deterministic.
pub fn assemble_initial_prompt(bundle: &PromptBundle, spec: &EnvSpec, k: usize) -> Result<Vec<Message>> {
    let system = bundle.system_message(spec)?;
    let user = format!("{REQUEST_MARKER}\n{}", bundle.request(k)?);
    Ok(vec![system, Message::new(Role::User, user)])
}

/// Feedback on the latest selected iteration, sections in the fixed order
/// good, bad, changes, traces, request.
pub fn assemble_feedback_prompt(bundle: &PromptBundle, spec: &EnvSpec, session: &SessionState) -> Result<Vec<Message>> {
    let flags = session.config.ablation;
    if flags.open_loop {
        return Err(IcplError::OpenLoopMode);
    }
    let latest = session.records.last().ok_or(IcplError::NoSelectionYet)?;
    let sel = latest.selection.ok_or(IcplError::NoSelectionYet)?;
    let system = bundle.system_message(spec)?;
    let mut user = fill(&bundle.feedback_template, &[])?;
    user.push_str("\n\n");

    program_section(&mut user, GOOD_MARKER, latest, sel.good)?;
    if flags.use_bad_example {
        program_section(&mut user, BAD_MARKER, latest, sel.bad)?;
    }
    let goods = session.selected_goods();
    if flags.use_diffs && goods.len() >= 2 {
        let _ = writeln!(user, "{}\n", fill(&bundle.difference_prompt, &[])?);
        for pair in goods.windows(2) {
            let (ra, ga) = pair[0];
            let (rb, gb) = pair[1];
            let a = ra.candidate(ga)?;
            let b = rb.candidate(gb)?;
            let d = diff(&a, &b);
            let _ = writeln!(user, "{DIFF_MARKER} ({} to {})", a.id(), b.id());
            if d.is_empty() {
                user.push_str("no changes\n\n");
            } else {
                let _ = writeln!(user, "{}", d.rendered());
            }
        }
    }
    if flags.use_reward_trace {
        for (r, g) in &goods {
            let trace = r
                .traces
                .get(*g)
                .ok_or_else(|| IcplError::Corrupt(format!("missing trace for {}_{g}", r.index)))?;
            let _ = writeln!(
                user,
                "{TRACE_MARKER} of program {}_{g} (mean per step at each checkpoint)\n{}",
                r.index,
                trace.render()
            );
        }
    }
    let _ = write!(user, "{REQUEST_MARKER}\n{}", bundle.request(session.config.k)?);
    Ok(vec![system, Message::new(Role::User, user)])
}

fn program_section(out: &mut String, marker: &str, record: &IterationRecord, k: usize) -> Result<()> {
    let program = record.candidate(k)?;
    let _ = writeln!(out, "{marker} ({})\n```reward\n{}\n```", program.id(), program.unparse().trim_end());
    let summary = record.traces.get(k).map(evaluation_summary).unwrap_or_default();
    let _ = writeln!(out, "Evaluation:\n{summary}");
    Ok(())
}

/// Component means at the last checkpoint. Task metrics are left out.
fn evaluation_summary(trace: &RewardTrace) -> String {
    let Some(last) = trace.checkpoints.last() else {
        return "no checkpoints recorded\n".into();
    };
    let mut out = String::new();
    for (name, v) in &last.component_means {
        let _ = writeln!(out, "- {name}: {}", short(*v));
    }
    let _ = writeln!(out, "- total: {}", short(last.total_mean));
    out
}

fn short(v: f64) -> String {
    let r = format!("{v:.3e}").parse::<f64>().unwrap_or(v);
    format!("{r:?}")
}
