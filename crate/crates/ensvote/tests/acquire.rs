use std::collections::BTreeMap;
use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ensvote::acquire::{
    extract_code, fetch_candidates, load_candidates, load_task, load_tasks, save_candidates, AcquireError,
    CompletionClient, ProviderError, ProviderSpec,
};
use ensvote_core::{Candidate, InputConstraint, Task};

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn tasks_load_in_order_with_constraints() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        &dir,
        "t.jsonl",
        concat!(
            r#"{"task_id": "HumanEval/0", "prompt": "def f(x):\n", "entry_point": "f", "test": "assert True", "extra": 1}"#,
            "\n\n",
            r#"{"task_id": "HumanEval/1", "prompt": "", "entry_point": "g", "test": "", "input_constraints": ["sorted"]}"#,
            "\n"
        ),
    );
    let tasks = load_tasks(&path).unwrap();
    assert_eq!(tasks.iter().map(|t| t.id.as_str()).collect::<Vec<_>>(), ["HumanEval/0", "HumanEval/1"]);
    assert_eq!(tasks[1].input_constraints, vec![InputConstraint::Sorted]);
    assert!(tasks[0].has_tests());
}

#[test]
fn task_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        &dir,
        "t.jsonl",
        "{\"task_id\": \"a\", \"prompt\": \"\", \"entry_point\": \"f\", \"test\": \"\"}\n{\"task_id\": \"b\", \"prompt\": \"\"}\n",
    );
    match load_tasks(&path) {
        Err(AcquireError::Malformed { line, message, .. }) => {
            assert_eq!(line, 2);
            assert!(message.contains("entry_point"), "{message}");
        }
        other => panic!("{other:?}"),
    }

    let path = write(&dir, "dup.jsonl", "{\"task_id\": \"a\", \"prompt\": \"\", \"entry_point\": \"f\"}\n{\"task_id\": \"a\", \"prompt\": \"\", \"entry_point\": \"g\"}\n");
    assert!(matches!(load_tasks(&path), Err(AcquireError::DuplicateTask { line: 2, .. })));

    let path = write(&dir, "bad_entry.jsonl", "{\"task_id\": \"a\", \"prompt\": \"\", \"entry_point\": \"not valid\"}\n");
    assert!(matches!(load_tasks(&path), Err(AcquireError::Malformed { line: 1, .. })));

    let path = write(&dir, "empty.jsonl", "");
    assert!(load_tasks(&path).unwrap().is_empty());
}

#[test]
fn single_task_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "t.json", "{\n  \"task_id\": \"x\",\n  \"prompt\": \"\",\n  \"entry_point\": \"f\"\n}\n");
    assert_eq!(load_task(&path).unwrap().id, "x");
}

#[test]
fn candidates_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let task = Task::new("HumanEval/3", "", "f", "").unwrap();
    let pool = vec![
        Candidate::new(&task.id, "beta", "def f():\n    return 2\n").unwrap(),
        Candidate::new(&task.id, "alpha", "def f():\n    return 1\n").unwrap(),
    ];
    save_candidates(dir.path(), &pool).unwrap();
    let task_dir = dir.path().join("HumanEval_3");
    fs::write(task_dir.join("empty.py"), "").unwrap();
    fs::write(task_dir.join("notes.txt"), "ignored").unwrap();

    let loaded = load_candidates(dir.path(), &task).unwrap();
    assert_eq!(loaded.iter().map(|c| c.source_id.as_str()).collect::<Vec<_>>(), ["alpha", "beta"]);
    assert_eq!(loaded[1].text, pool[0].text);
    assert!(loaded.iter().all(|c| c.task_id == task.id));

    let missing = Task::new("nothing", "", "f", "").unwrap();
    assert!(load_candidates(dir.path(), &missing).unwrap().is_empty());
}

#[test]
fn code_extraction() {
    assert_eq!(extract_code("here is code: ```lang\nx=1\n``` hope it helps"), "x=1");
    assert_eq!(extract_code("```\ndef f(): pass\n```"), "def f(): pass");
    assert_eq!(extract_code("```python\ndef f():\n    return 1\n```\n```python\nother\n```"), "def f():\n    return 1");
    assert_eq!(extract_code("def f():\n    return 1\n"), "def f():\n    return 1");
    assert_eq!(extract_code("```python\ndef f():\n    return 1\n"), "def f():\n    return 1");
    assert_eq!(extract_code("only prose ``````"), "only prose ``````");
    assert_eq!(extract_code("   "), "");
}

/// Replays scripted responses per provider and counts calls.
struct Scripted {
    responses: Mutex<BTreeMap<String, Vec<Result<String, ProviderError>>>>,
    calls: AtomicUsize,
}

impl Scripted {
    fn new(script: Vec<(&str, Vec<Result<String, ProviderError>>)>) -> Self {
        Scripted {
            responses: Mutex::new(script.into_iter().map(|(k, v)| (k.to_string(), v)).collect()),
            calls: AtomicUsize::new(0),
        }
    }
}

impl CompletionClient for Scripted {
    fn complete(&self, provider: &ProviderSpec, api_key: &str, prompt: &str) -> Result<String, ProviderError> {
        assert_eq!(api_key, "secret");
        assert!(prompt.contains("def add"));
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut all = self.responses.lock().unwrap();
        let queue = all.get_mut(&provider.name).unwrap();
        queue.remove(0)
    }
}

fn provider(name: &str, key_env: &str) -> ProviderSpec {
    ProviderSpec {
        name: name.into(),
        endpoint_url: "https://example.invalid/v1/chat/completions".into(),
        model: "m".into(),
        api_key_env: key_env.into(),
        temperature: 0.2,
        max_tokens: 256,
    }
}

fn add_task() -> Task {
    Task::new("t/add", "def add(a: int, b: int) -> int:\n", "add", "").unwrap()
}

#[test]
fn transient_failures_are_retried_once() {
    std::env::set_var("ENSVOTE_TEST_KEY_RETRY", "secret");
    let client = Scripted::new(vec![
        ("zeta", vec![Err(ProviderError::Transient("reset".into())), Ok("```\ndef add(a, b):\n    return a + b\n```".into())]),
        ("alpha", vec![Ok("def add(a, b):\n    return b + a\n".into())]),
    ]);
    let providers = [provider("zeta", "ENSVOTE_TEST_KEY_RETRY"), provider("alpha", "ENSVOTE_TEST_KEY_RETRY")];
    let out = fetch_candidates(&add_task(), &providers, &client).unwrap();
    assert_eq!(client.calls.load(Ordering::SeqCst), 3);
    assert_eq!(out.candidates.iter().map(|c| c.source_id.as_str()).collect::<Vec<_>>(), ["alpha", "zeta"]);
    assert_eq!(out.candidates[1].text, "def add(a, b):\n    return a + b");
    assert!(out.failures.is_empty());
}

#[test]
fn rejected_requests_are_not_retried() {
    std::env::set_var("ENSVOTE_TEST_KEY_REJECT", "secret");
    let client = Scripted::new(vec![
        ("bad", vec![Err(ProviderError::Rejected { status: 401, body: "no".into() })]),
        ("good", vec![Ok("def add(a, b):\n    return a + b\n".into())]),
    ]);
    let providers = [provider("bad", "ENSVOTE_TEST_KEY_REJECT"), provider("good", "ENSVOTE_TEST_KEY_REJECT")];
    let out = fetch_candidates(&add_task(), &providers, &client).unwrap();
    assert_eq!(client.calls.load(Ordering::SeqCst), 2);
    assert_eq!(out.candidates.len(), 1);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].provider, "bad");
}

#[test]
fn all_providers_failing_is_an_error() {
    let client = Scripted::new(vec![("p", vec![])]);
    let providers = [provider("p", "ENSVOTE_TEST_KEY_NEVER_SET")];
    match fetch_candidates(&add_task(), &providers, &client) {
        Err(AcquireError::AllProvidersFailed { failures, .. }) => {
            assert!(matches!(failures[0].error, ProviderError::MissingKey(_)));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(client.calls.load(Ordering::SeqCst), 0);
}
