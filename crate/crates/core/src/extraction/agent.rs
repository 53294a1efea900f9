use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::executor::{ExecStatus, Executor};
use super::parse::{boxed_answer, fenced_block, json_payload, normalize_answer, python_functions, string_list};
use super::prompts::{render, Prompts};
use super::task::{Domain, EvaluationHook, ScoreMethod, SelfScore, TaskSpec};
use crate::cost::Usage;
use crate::engine::{Backend, Billed, Candidate};
use crate::error::ProviderError;
use crate::ids::TaskId;
use crate::library::{Abstraction, Draft, Kind, MergeDecision};
use crate::providers::{ChatProvider, CompletionRequest, Embedder, Message, ReasoningEffort};

/// Sampling parameters applied to every chat call the agent makes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSettings {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: Option<u32>,
    pub reasoning_effort: Option<ReasoningEffort>,
    /// Synthetic tests generated once per code task.
    pub synthetic_tests: usize,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings {
            temperature: 0.0,
            top_p: 0.5,
            max_output_tokens: None,
            reasoning_effort: None,
            synthetic_tests: 5,
        }
    }
}

const FEEDBACK_CHARS: usize = 2000;

/// A language model driving solving, self-evaluation, extraction and merging.
pub struct ModelAgent {
    chat: Arc<dyn ChatProvider>,
    embedder: Arc<dyn Embedder>,
    executor: Arc<dyn Executor>,
    prompts: Prompts,
    settings: AgentSettings,
    tests: Mutex<HashMap<TaskId, Vec<String>>>,
}

impl ModelAgent {
    pub fn new(
        chat: Arc<dyn ChatProvider>,
        embedder: Arc<dyn Embedder>,
        executor: Arc<dyn Executor>,
        prompts: Prompts,
        settings: AgentSettings,
    ) -> Self {
        ModelAgent {
            chat,
            embedder,
            executor,
            prompts,
            settings,
            tests: Mutex::new(HashMap::new()),
        }
    }

    fn request(&self, messages: Vec<Message>) -> CompletionRequest {
        CompletionRequest {
            messages,
            temperature: self.settings.temperature,
            top_p: self.settings.top_p,
            max_output_tokens: self.settings.max_output_tokens,
            reasoning_effort: self.settings.reasoning_effort,
        }
    }

    fn complete(&self, prompt: String) -> Result<Billed<String>, ProviderError> {
        let result = self.chat.complete(&self.request(vec![Message::user(prompt)]))?;
        Ok(Billed::new(result.text.clone(), result.usage()))
    }

    /// Asks for structured output, re-asking once when the reply does not parse.
    fn structured<T>(&self, prompt: String, parse: impl Fn(&str) -> Option<T>) -> Result<Billed<Option<T>>, ProviderError> {
        let first = self.chat.complete(&self.request(vec![Message::user(prompt.clone())]))?;
        let mut usage = first.usage();
        if let Some(v) = parse(&first.text) {
            return Ok(Billed::new(Some(v), usage));
        }
        let retry = self.chat.complete(&self.request(vec![
            Message::user(prompt),
            Message {
                role: crate::providers::Role::Assistant,
                content: first.text,
            },
            Message::user("That reply could not be parsed. Answer again using exactly the fenced JSON format requested."),
        ]))?;
        usage += retry.usage();
        Ok(Billed::new(parse(&retry.text), usage))
    }

    fn embed_all(&self, kind: Kind, contents: Vec<String>) -> Result<Vec<Candidate>, ProviderError> {
        contents
            .into_iter()
            .map(|content| {
                let embedding = self.embedder.embed(&content)?;
                Ok(Candidate {
                    kind,
                    content,
                    embedding,
                })
            })
            .collect()
    }

    pub fn solve_prompt(&self, task: &TaskSpec, context: &[&Abstraction]) -> String {
        render(
            &self.prompts.solve,
            &[("task", &task.description), ("abstractions", &format_context(context))],
        )
    }

    /// Generates and caches the synthetic tests of a code task. Later calls are free.
    pub fn ensure_synthetic_tests(&self, task: &TaskSpec) -> Result<Billed<()>, ProviderError> {
        if task.domain() != Domain::Code || self.cached_tests(&task.id).is_some() {
            return Ok(Billed::free(()));
        }
        let count = self.settings.synthetic_tests.to_string();
        let prompt = render(&self.prompts.synthetic_tests, &[("task", &task.description), ("count", &count)]);
        let billed = self.structured(prompt, string_list)?;
        match billed.value {
            Some(mut tests) => {
                tests.truncate(self.settings.synthetic_tests);
                self.tests.lock().expect("test cache poisoned").entry(task.id.clone()).or_insert(tests);
            }
            None => log::warn!("synthetic tests for {} could not be parsed; will retry next iteration", task.id),
        }
        Ok(Billed::new((), billed.usage))
    }

    pub fn cached_tests(&self, task: &TaskId) -> Option<Vec<String>> {
        self.tests.lock().expect("test cache poisoned").get(task).cloned()
    }

    pub fn self_evaluate(&self, task: &TaskSpec, solution: &str, peers: &[&str]) -> Result<Billed<SelfScore>, ProviderError> {
        match &task.hook {
            EvaluationHook::Code { .. } => Ok(Billed::free(self.score_with_tests(task, solution))),
            EvaluationHook::Reasoning => Ok(Billed::free(vote_score(solution, peers))),
            EvaluationHook::Agentic { sub_goals } => self.judge_sub_goals(task, solution, sub_goals),
            EvaluationHook::Simulated { .. } => Err(ProviderError::InvalidRequest(format!(
                "task {} belongs to the simulated world; use the simulated backend",
                task.id
            ))),
        }
    }

    fn score_with_tests(&self, task: &TaskSpec, solution: &str) -> SelfScore {
        let method = ScoreMethod::SyntheticTestPassRate;
        let Some(tests) = self.cached_tests(&task.id).filter(|t| !t.is_empty()) else {
            return SelfScore::new(0.0, method, "degraded: no synthetic tests available");
        };
        let program = fenced_block(solution, "python").unwrap_or(solution);
        let (mut passed, mut ran) = (0usize, 0usize);
        let mut notes = Vec::new();
        for (i, test) in tests.iter().enumerate() {
            let outcome = self.executor.run(program, test);
            match outcome.status {
                ExecStatus::Pass => {
                    passed += 1;
                    ran += 1;
                }
                ExecStatus::Unavailable => notes.push(format!("test {}: executor unavailable: {}", i + 1, outcome.output)),
                status => {
                    ran += 1;
                    notes.push(format!("test {} {:?}:\n{}", i + 1, status, outcome.output.trim()));
                }
            }
        }
        let mut detail = format!("passed {passed} of {ran} synthetic tests");
        if ran < tests.len() {
            detail.push_str(&format!(" (degraded: {} of {} could not run)", tests.len() - ran, tests.len()));
        }
        for note in notes {
            detail.push('\n');
            detail.push_str(&note);
        }
        let value = if ran == 0 { 0.0 } else { passed as f64 / ran as f64 };
        SelfScore::new(value, method, truncate(&detail, FEEDBACK_CHARS))
    }

    fn judge_sub_goals(&self, task: &TaskSpec, solution: &str, sub_goals: &[String]) -> Result<Billed<SelfScore>, ProviderError> {
        let listed: String = sub_goals
            .iter()
            .enumerate()
            .map(|(i, g)| format!("{}. {g}\n", i + 1))
            .collect();
        let prompt = render(
            &self.prompts.subgoal_judge,
            &[("task", &task.description), ("subgoals", &listed), ("solution", solution)],
        );
        let n = sub_goals.len();
        let billed = self.structured(prompt, |text| match json_payload(text)? {
            Value::Array(items) if items.len() == n => items.iter().map(Value::as_bool).collect::<Option<Vec<bool>>>(),
            _ => None,
        })?;
        let score = match billed.value {
            Some(done) => {
                let count = done.iter().filter(|d| **d).count();
                SelfScore::new(
                    count as f64 / n as f64,
                    ScoreMethod::SubGoalJudge,
                    format!("{count} of {n} sub-goals judged accomplished"),
                )
            }
            None => SelfScore::new(0.0, ScoreMethod::SubGoalJudge, "judge reply unparseable"),
        };
        Ok(Billed::new(score, billed.usage))
    }

    /// Asks a judge to pick among tied top trials. `None` when the reply is unusable.
    pub fn judge_tie(&self, task: &TaskSpec, tied: &[(u32, &str)]) -> Result<Billed<Option<u32>>, ProviderError> {
        if tied.len() < 2 {
            return Ok(Billed::free(tied.first().map(|t| t.0)));
        }
        let candidates: String = tied
            .iter()
            .enumerate()
            .map(|(i, (_, s))| format!("Candidate {}:\n{s}\n\n", i + 1))
            .collect();
        let prompt = render(&self.prompts.tiebreak_judge, &[("task", &task.description), ("candidates", &candidates)]);
        let billed = self.structured(prompt, |text| {
            let best = json_payload(text)?.get("best")?.as_u64()? as usize;
            (1..=tied.len()).contains(&best).then_some(best)
        })?;
        Ok(Billed::new(billed.value.map(|b| tied[b - 1].0), billed.usage))
    }

    /// Code solutions yield their top-level functions verbatim; other domains
    /// ask the model for self-contained sub-modules.
    pub fn extract_skills(&self, task: &TaskSpec, solution: &str) -> Result<Billed<Vec<Candidate>>, ProviderError> {
        if task.domain() == Domain::Code {
            return Ok(Billed::free(self.embed_all(Kind::Skill, python_functions(solution))?));
        }
        let prompt = render(&self.prompts.extract_skills, &[("task", &task.description), ("solution", solution)]);
        let billed = self.structured(prompt, string_list)?;
        let contents = billed.value.unwrap_or_else(|| {
            log::warn!("skill extraction reply for {} unparseable after retry", task.id);
            Vec::new()
        });
        Ok(Billed::new(self.embed_all(Kind::Skill, contents)?, billed.usage))
    }

    pub fn extract_insights(
        &self,
        task: &TaskSpec,
        solution: &str,
        score: &SelfScore,
    ) -> Result<Billed<Vec<Candidate>>, ProviderError> {
        let value = format!("{:.3}", score.value);
        let feedback = if score.detail.is_empty() { "none" } else { &score.detail };
        let prompt = render(
            &self.prompts.extract_insights,
            &[
                ("task", &task.description),
                ("solution", solution),
                ("score", &value),
                ("feedback", feedback),
            ],
        );
        let billed = self.structured(prompt, string_list)?;
        let contents = billed.value.unwrap_or_else(|| {
            log::warn!("insight extraction reply for {} unparseable after retry", task.id);
            Vec::new()
        });
        Ok(Billed::new(self.embed_all(Kind::Insight, contents)?, billed.usage))
    }

    pub fn merge_decision(&self, existing: &Abstraction, candidate: &Draft) -> Result<Billed<MergeDecision>, ProviderError> {
        let prompt = render(
            &self.prompts.merge,
            &[
                ("kind", existing.kind.as_str()),
                ("existing", &existing.content),
                ("candidate", &candidate.content),
            ],
        );
        let billed = self.structured(prompt, |text| {
            let v = json_payload(text)?;
            if !v.get("merge")?.as_bool()? {
                return Some(None);
            }
            let content = v.get("content")?.as_str()?.trim();
            (!content.is_empty()).then(|| Some(content.to_owned()))
        })?;
        let decision = match billed.value.flatten() {
            Some(content) => {
                let embedding = self.embedder.embed(&content)?;
                MergeDecision::Merge { content, embedding }
            }
            None => MergeDecision::Keep,
        };
        Ok(Billed::new(decision, billed.usage))
    }
}

/// Fraction of all trials (this one plus its peers) whose boxed final answer
/// equals this one's after normalization.
pub fn vote_score(solution: &str, peers: &[&str]) -> SelfScore {
    let total = peers.len() + 1;
    let Some(answer) = boxed_answer(solution).map(|a| normalize_answer(&a)) else {
        return SelfScore::new(0.0, ScoreMethod::MajorityVote, "no \\boxed{} final answer");
    };
    let votes = 1 + peers
        .iter()
        .filter(|p| boxed_answer(p).map(|a| normalize_answer(&a)).as_deref() == Some(answer.as_str()))
        .count();
    SelfScore::new(
        votes as f64 / total as f64,
        ScoreMethod::MajorityVote,
        format!("{votes} of {total} trials answer {answer}"),
    )
}

fn format_context(context: &[&Abstraction]) -> String {
    if context.is_empty() {
        return "(the library is empty)".into();
    }
    let mut out = String::new();
    for (kind, title) in [(Kind::Skill, "Skills"), (Kind::Insight, "Insights")] {
        let items: Vec<&str> = context.iter().filter(|a| a.kind == kind).map(|a| a.content.as_str()).collect();
        if items.is_empty() {
            continue;
        }
        out.push_str(title);
        out.push_str(":\n");
        for (i, item) in items.iter().enumerate() {
            out.push_str(&format!("{}. {item}\n", i + 1));
        }
    }
    out
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_owned(),
    }
}

impl Backend for ModelAgent {
    fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    fn prepare(&self, task: &TaskSpec) -> Result<Billed<()>, ProviderError> {
        self.ensure_synthetic_tests(task)
    }

    fn solve(&self, task: &TaskSpec, context: &[&Abstraction], _seed: u64) -> Result<Billed<String>, ProviderError> {
        self.complete(self.solve_prompt(task, context))
    }

    fn evaluate(&self, task: &TaskSpec, solution: &str, peers: &[&str], _seed: u64) -> Result<Billed<SelfScore>, ProviderError> {
        self.self_evaluate(task, solution, peers)
    }

    fn break_tie(&self, task: &TaskSpec, tied: &[(u32, &str)]) -> Result<Billed<Option<u32>>, ProviderError> {
        self.judge_tie(task, tied)
    }

    /// Skills and insights are requested separately; one failing does not
    /// discard the other.
    fn extract(&self, task: &TaskSpec, solution: &str, score: &SelfScore, _seed: u64) -> Result<Billed<Vec<Candidate>>, ProviderError> {
        let skills = self.extract_skills(task, solution);
        let insights = self.extract_insights(task, solution, score);
        match (skills, insights) {
            (Err(e), Err(_)) => Err(e),
            (skills, insights) => {
                let mut out = Vec::new();
                let mut usage = Usage::default();
                for part in [skills, insights] {
                    match part {
                        Ok(b) => {
                            out.extend(b.value);
                            usage += b.usage;
                        }
                        Err(e) => log::warn!("extraction for {} partly failed: {e}", task.id),
                    }
                }
                Ok(Billed::new(out, usage))
            }
        }
    }

    fn merge(&self, existing: &Abstraction, candidate: &Draft) -> Result<Billed<MergeDecision>, ProviderError> {
        self.merge_decision(existing, candidate)
    }
}
