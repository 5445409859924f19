use std::collections::BTreeMap;

use ensvote::config::{merge_engine, parse_config, ConfigFileError};
use ensvote_core::{CodeBleuWeights, EnsembleConfig};

fn overrides(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[test]
fn full_file_parses() {
    let file = parse_config(
        r#"
lambda = 0.7
n-cap = 20
weights = [0.25, 0.25, 0.25, 0.25]
seed = 3
runner = "python3 -u runner.py"
jobs = 4

[[providers]]
name = "a"
endpoint_url = "https://api.example.com/v1/chat/completions"
model = "m1"
api_key_env = "A_KEY"

[[providers]]
name = "b"
endpoint_url = "http://localhost:8080/v1/chat/completions"
model = "m2"
api_key_env = "B_KEY"
temperature = 0.0
"#,
    )
    .unwrap();
    assert_eq!(file.jobs, Some(4));
    assert_eq!(file.runner.unwrap().args, vec!["-u", "runner.py"]);
    assert_eq!(file.providers.len(), 2);
    assert_eq!(file.providers[0].temperature, 0.2);
    assert_eq!(file.providers[1].temperature, 0.0);
    let c = merge_engine(&file.engine, &BTreeMap::new()).unwrap();
    assert_eq!(c.lambda, 0.7);
    assert_eq!(c.n_cap, 20);
    assert_eq!(c.seed, 3);
    assert_eq!(c.codebleu_weights, CodeBleuWeights::uniform());
}

#[test]
fn command_line_beats_file_beats_defaults() {
    let file = parse_config("lambda = 0.7\nseed = 3\nsyntax_weight = 1.0\n").unwrap();
    let c = merge_engine(&file.engine, &overrides(&[("lambda", "0.2"), ("weights", "0,0,0.5,0.5")])).unwrap();
    assert_eq!(c.lambda, 0.2);
    assert_eq!(c.seed, 3);
    assert_eq!(c.codebleu_weights, CodeBleuWeights::syntax_dataflow());
    assert_eq!(c.n_cap, EnsembleConfig::default().n_cap);

    let file = parse_config("weights = [0.25, 0.25, 0.25, 0.25]\n").unwrap();
    let c = merge_engine(&file.engine, &overrides(&[("dataflow_weight", "1")])).unwrap();
    assert_eq!(c.codebleu_weights, CodeBleuWeights::new(0.0, 0.0, 0.0, 1.0));
}

#[test]
fn bad_files_are_rejected() {
    assert!(matches!(parse_config("lambda = \n"), Err(ConfigFileError::Toml(_))));
    assert!(matches!(parse_config("lambda = 2.0\n"), Err(ConfigFileError::Engine(_))));
    assert!(matches!(parse_config("colour = 1\n"), Err(ConfigFileError::Engine(_))));
    assert!(matches!(parse_config("jobs = 0\n"), Err(ConfigFileError::BadValue { .. })));
    let dup = r#"
[[providers]]
name = "a"
endpoint_url = "https://x.example/v1"
model = "m"
api_key_env = "K"
[[providers]]
name = "a"
endpoint_url = "https://y.example/v1"
model = "m"
api_key_env = "K"
"#;
    assert!(matches!(parse_config(dup), Err(ConfigFileError::DuplicateProvider(n)) if n == "a"));
    let bad_url = "[[providers]]\nname = \"a\"\nendpoint_url = \"ftp:/nope\"\nmodel = \"m\"\napi_key_env = \"K\"\n";
    assert!(matches!(parse_config(bad_url), Err(ConfigFileError::BadEndpoint { .. })));
}
