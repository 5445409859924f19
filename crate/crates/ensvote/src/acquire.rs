//! Getting tasks and candidate programs: from disk, or from chat-completion
//! endpoints.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ensvote_core::{Candidate, InputConstraint, Task};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AcquireError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: duplicate task id `{task_id}`")]
    DuplicateTask { path: PathBuf, line: usize, task_id: String },
    #[error("task `{task_id}`: every provider failed")]
    AllProvidersFailed { task_id: String, failures: Vec<ProviderFailure> },
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> AcquireError + '_ {
    move |source| AcquireError::Io { path: path.to_path_buf(), source }
}

/// On-disk task record (HumanEval field names).
#[derive(Debug, Deserialize)]
struct TaskRecord {
    task_id: String,
    prompt: String,
    entry_point: String,
    #[serde(default)]
    test: String,
    #[serde(default)]
    input_constraints: Vec<InputConstraint>,
}

impl TaskRecord {
    fn into_task(self) -> Result<Task, String> {
        Task::new(self.task_id, self.prompt, self.entry_point, self.test)
            .map(|t| t.with_constraints(self.input_constraints))
            .map_err(|e| e.to_string())
    }
}

/// Reads a JSON-lines task file. Blank lines are skipped; errors name the
/// 1-based line.
pub fn load_tasks(path: &Path) -> Result<Vec<Task>, AcquireError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let mut tasks = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| AcquireError::Malformed { path: path.to_path_buf(), line: line_no, message };
        let record: TaskRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let task = record.into_task().map_err(malformed)?;
        if !seen.insert(task.id.clone()) {
            return Err(AcquireError::DuplicateTask { path: path.to_path_buf(), line: line_no, task_id: task.id });
        }
        tasks.push(task);
    }
    if tasks.is_empty() {
        log::warn!("{}: no tasks", path.display());
    }
    Ok(tasks)
}

/// Reads a single task stored as one JSON object.
pub fn load_task(path: &Path) -> Result<Task, AcquireError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let malformed = |message: String| AcquireError::Malformed { path: path.to_path_buf(), line: 1, message };
    let record: TaskRecord = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    record.into_task().map_err(malformed)
}

/// Reads every `<source_id>.py` in `dir` as a candidate for `task_id`, in
/// file-name order. Blank files are skipped with a warning; a missing
/// directory yields no candidates.
pub fn load_candidate_dir(dir: &Path, task_id: &str) -> Result<Vec<Candidate>, AcquireError> {
    if !dir.is_dir() {
        log::warn!("{}: no candidate directory", dir.display());
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_error(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "py"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let text = fs::read_to_string(&path).map_err(io_error(&path))?;
        let source_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        match Candidate::new(task_id, source_id, text) {
            Ok(c) => out.push(c),
            Err(_) => log::warn!("{}: empty candidate skipped", path.display()),
        }
    }
    Ok(out)
}

/// Candidates for `task` under `<root>/<task_id>/`.
pub fn load_candidates(root: &Path, task: &Task) -> Result<Vec<Candidate>, AcquireError> {
    load_candidate_dir(&root.join(task_dir_name(&task.id)), &task.id)
}

/// Directory name for a task id; path separators (as in `HumanEval/0`) are
/// replaced so each task gets one flat directory.
pub fn task_dir_name(task_id: &str) -> String {
    task_id.replace(['/', '\\'], "_")
}

/// Writes candidates to `<root>/<task_id>/<source_id>.py`.
pub fn save_candidates(root: &Path, candidates: &[Candidate]) -> Result<(), AcquireError> {
    for c in candidates {
        let dir = root.join(task_dir_name(&c.task_id));
        fs::create_dir_all(&dir).map_err(io_error(&dir))?;
        let path = dir.join(format!("{}.py", c.source_id));
        fs::write(&path, &c.text).map_err(io_error(&path))?;
    }
    Ok(())
}

/// The program inside a model response: the first fenced block if there is
/// one (an unclosed fence runs to the end), otherwise the whole text. Never
/// empty when the response has non-whitespace content.
pub fn extract_code(response: &str) -> String {
    let whole = response.trim().to_string();
    let Some(start) = response.find("```") else { return whole };
    let after = &response[start + 3..];
    let body = match after.find('\n') {
        Some(nl) if !after[..nl].contains("```") => &after[nl + 1..],
        _ => after,
    };
    let body = body.find("```").map_or(body, |end| &body[..end]);
    let code = body.trim_start_matches(['\n', '\r']).trim_end();
    if code.trim().is_empty() {
        whole
    } else {
        code.to_string()
    }
}

/// One chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub name: String,
    pub endpoint_url: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_temperature() -> f64 {
    0.2
}

fn default_max_tokens() -> u32 {
    1024
}

/// Why a provider produced no candidate.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ProviderError {
    #[error("environment variable `{0}` is not set")]
    MissingKey(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("unusable response: {0}")]
    BadResponse(String),
}

impl ProviderError {
    fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Transient(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderFailure {
    pub provider: String,
    pub error: ProviderError,
}

/// Sends a prompt to one provider and returns the raw response text.
pub trait CompletionClient: Sync {
    fn complete(&self, provider: &ProviderSpec, api_key: &str, prompt: &str) -> Result<String, ProviderError>;
}

/// OpenAI-style `chat/completions` over HTTPS.
pub struct HttpClient {
    client: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(timeout: Duration) -> Result<Self, reqwest::Error> {
        Ok(HttpClient { client: reqwest::blocking::Client::builder().timeout(timeout).build()? })
    }
}

impl CompletionClient for HttpClient {
    fn complete(&self, provider: &ProviderSpec, api_key: &str, prompt: &str) -> Result<String, ProviderError> {
        let body = json!({
            "model": provider.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": provider.temperature,
            "max_tokens": provider.max_tokens,
        });
        let response = self
            .client
            .post(&provider.endpoint_url)
            .bearer_auth(api_key)
            .json(&body)
            .send()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() {
            return Err(ProviderError::Transient(format!("HTTP {}", status.as_u16())));
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(ProviderError::Rejected { status: status.as_u16(), body });
        }
        let value: Value = response.json().map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::BadResponse("no choices[0].message.content".into()))
    }
}

/// Instruction wrapped around the task prompt.
pub fn generation_prompt(task: &Task) -> String {
    format!(
        "Complete the following Python function `{}`. Reply with the full program in one fenced code block.\n\n{}",
        task.entry_point, task.prompt
    )
}

fn fetch_one(client: &dyn CompletionClient, provider: &ProviderSpec, task: &Task) -> Result<Candidate, ProviderError> {
    let key = std::env::var(&provider.api_key_env).map_err(|_| ProviderError::MissingKey(provider.api_key_env.clone()))?;
    let prompt = generation_prompt(task);
    let text = match client.complete(provider, &key, &prompt) {
        Err(e) if e.is_transient() => {
            log::warn!("{}: {e}; retrying once", provider.name);
            client.complete(provider, &key, &prompt)?
        }
        other => other?,
    };
    Candidate::new(&task.id, &provider.name, extract_code(&text))
        .map_err(|_| ProviderError::BadResponse("empty response".into()))
}

/// Candidates and per-provider failures for one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchOutcome {
    pub candidates: Vec<Candidate>,
    pub failures: Vec<ProviderFailure>,
}

/// Queries every provider concurrently, one candidate each. Results are
/// ordered by provider name; it is an error only if all providers fail.
pub fn fetch_candidates(
    task: &Task,
    providers: &[ProviderSpec],
    client: &dyn CompletionClient,
) -> Result<FetchOutcome, AcquireError> {
    let results: Vec<(String, Result<Candidate, ProviderError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = providers
            .iter()
            .map(|p| (p.name.clone(), scope.spawn(move || fetch_one(client, p, task))))
            .collect();
        handles
            .into_iter()
            .map(|(name, h)| {
                let r = h.join().unwrap_or_else(|_| Err(ProviderError::BadResponse("provider thread panicked".into())));
                (name, r)
            })
            .collect()
    });
    let mut candidates = Vec::new();
    let mut failures = Vec::new();
    for (provider, result) in results {
        match result {
            Ok(c) => candidates.push(c),
            Err(error) => {
                log::warn!("{}: provider `{provider}` failed: {error}", task.id);
                failures.push(ProviderFailure { provider, error });
            }
        }
    }
    candidates.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    failures.sort_by(|a, b| a.provider.cmp(&b.provider));
    if candidates.is_empty() && !providers.is_empty() {
        return Err(AcquireError::AllProvidersFailed { task_id: task.id.clone(), failures });
    }
    Ok(FetchOutcome { candidates, failures })
}
