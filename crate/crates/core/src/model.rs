//! Domain types shared by every stage, and validated engine configuration.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the CodeBLEU weight vector summing to one.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Errors raised when constructing domain values.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    /// A task id was empty.
    #[error("task id must be non-empty")]
    EmptyTaskId,
    /// The entry point is not a valid subject-language identifier.
    #[error("entry point `{0}` is not a valid identifier")]
    InvalidEntryPoint(String),
    /// Candidate text was empty or whitespace.
    #[error("candidate `{0}` has empty text")]
    EmptyCandidate(String),
    /// An input constraint name was not recognized.
    #[error("unknown input constraint `{0}`")]
    UnknownConstraint(String),
}

/// Language the candidate programs are written in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectLanguage {
    /// Python 3, the HumanEval subject language.
    #[default]
    Python,
}

/// A named precondition applied by the input generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InputConstraint {
    /// Every list argument is sorted ascending (non-decreasing).
    Sorted,
    /// Every list argument has pairwise distinct elements.
    Distinct,
    /// Every list argument has at least one element.
    NonEmpty,
    /// Every integer argument (including list elements) is `>= 0`.
    NonNegative,
}

impl InputConstraint {
    /// Canonical spelling used in task files.
    pub fn as_str(self) -> &'static str {
        match self {
            InputConstraint::Sorted => "sorted",
            InputConstraint::Distinct => "distinct",
            InputConstraint::NonEmpty => "non_empty",
            InputConstraint::NonNegative => "non_negative",
        }
    }
}

impl FromStr for InputConstraint {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "sorted" | "sorted_ascending" => Ok(InputConstraint::Sorted),
            "distinct" | "unique" => Ok(InputConstraint::Distinct),
            "non_empty" | "nonempty" => Ok(InputConstraint::NonEmpty),
            "non_negative" | "nonnegative" => Ok(InputConstraint::NonNegative),
            _ => Err(ModelError::UnknownConstraint(s.to_string())),
        }
    }
}

impl TryFrom<String> for InputConstraint {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<InputConstraint> for String {
    fn from(value: InputConstraint) -> Self {
        value.as_str().to_string()
    }
}

impl fmt::Display for InputConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One programming problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    /// Unique task id, e.g. `HumanEval/0`.
    pub id: String,
    /// Problem statement including the function signature header.
    pub prompt: String,
    /// Name of the function the tests call.
    pub entry_point: String,
    /// HumanEval-style test program; may be empty for selection-only use.
    #[serde(default)]
    pub reference_tests: String,
    #[serde(default)]
    pub subject_language: SubjectLanguage,
    /// Preconditions on generated inputs.
    #[serde(default)]
    pub input_constraints: Vec<InputConstraint>,
}

impl Task {
    /// Builds a task, checking the id and entry point.
    pub fn new(
        id: impl Into<String>,
        prompt: impl Into<String>,
        entry_point: impl Into<String>,
        reference_tests: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let task = Task {
            id: id.into(),
            prompt: prompt.into(),
            entry_point: entry_point.into(),
            reference_tests: reference_tests.into(),
            subject_language: SubjectLanguage::Python,
            input_constraints: Vec::new(),
        };
        task.validate()?;
        Ok(task)
    }

    /// Adds input constraints.
    pub fn with_constraints(mut self, constraints: impl IntoIterator<Item = InputConstraint>) -> Self {
        self.input_constraints.extend(constraints);
        self
    }

    /// Re-checks the invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.id.trim().is_empty() {
            return Err(ModelError::EmptyTaskId);
        }
        if !is_identifier(&self.entry_point) {
            return Err(ModelError::InvalidEntryPoint(self.entry_point.clone()));
        }
        Ok(())
    }

    /// Whether the task carries a reference test suite.
    pub fn has_tests(&self) -> bool {
        !self.reference_tests.trim().is_empty()
    }
}

const PYTHON_KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue",
    "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in",
    "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try", "while", "with",
    "yield",
];

/// Whether `word` is a reserved word of the subject language.
pub fn is_keyword(word: &str) -> bool {
    PYTHON_KEYWORDS.contains(&word)
}

/// ASCII identifier check (`[A-Za-z_][A-Za-z0-9_]*`, not a keyword).
pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c == '_' || c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c == '_' || c.is_ascii_alphanumeric()) && !is_keyword(name)
}

/// Outcome of the syntax filter for a candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    #[default]
    Unknown,
    Ok,
    Failed,
}

/// One generated program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub task_id: String,
    /// Label of the model or provider that produced the text.
    pub source_id: String,
    pub text: String,
    #[serde(default)]
    pub parse_ok: ParseStatus,
}

impl Candidate {
    /// Builds an unparsed candidate whose id is its source label.
    pub fn new(
        task_id: impl Into<String>,
        source_id: impl Into<String>,
        text: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let source_id = source_id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyCandidate(source_id));
        }
        Ok(Candidate {
            id: source_id.clone(),
            task_id: task_id.into(),
            source_id,
            text,
            parse_ok: ParseStatus::Unknown,
        })
    }

    pub fn is_parsed_ok(&self) -> bool {
        self.parse_ok == ParseStatus::Ok
    }
}

/// Weights of the four CodeBLEU components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuWeights {
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub syntax: f64,
    pub dataflow: f64,
}

impl CodeBleuWeights {
    pub const fn new(ngram: f64, weighted_ngram: f64, syntax: f64, dataflow: f64) -> Self {
        CodeBleuWeights { ngram, weighted_ngram, syntax, dataflow }
    }

    /// Syntax and data-flow only, equally weighted.
    pub const fn syntax_dataflow() -> Self {
        CodeBleuWeights::new(0.0, 0.0, 0.5, 0.5)
    }

    /// All four components at 0.25.
    pub const fn uniform() -> Self {
        CodeBleuWeights::new(0.25, 0.25, 0.25, 0.25)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.ngram, self.weighted_ngram, self.syntax, self.dataflow]
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().sum()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.as_array().iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ConfigError::NegativeWeight);
        }
        let sum = self.sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(ConfigError::WeightsNotNormalized(sum));
        }
        Ok(())
    }
}

impl Default for CodeBleuWeights {
    fn default() -> Self {
        CodeBleuWeights::syntax_dataflow()
    }
}

/// Per-token-class weights for the weighted n-gram component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenWeights {
    pub keyword: f64,
    pub identifier: f64,
    pub literal: f64,
    pub operator: f64,
    pub punctuation: f64,
}

impl Default for TokenWeights {
    fn default() -> Self {
        TokenWeights { keyword: 5.0, identifier: 1.0, literal: 1.0, operator: 1.0, punctuation: 0.1 }
    }
}

impl TokenWeights {
    fn validate(&self) -> Result<(), ConfigError> {
        let all = [self.keyword, self.identifier, self.literal, self.operator, self.punctuation];
        if all.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(ConfigError::NonPositive("token weight"));
        }
        Ok(())
    }
}

/// Engine configuration. `Default` is the reference experimental setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Weight of CodeBLEU against behavioral similarity, in `[0, 1]`.
    pub lambda: f64,
    /// Counterexample cap of the behavioral similarity.
    pub n_cap: u32,
    pub codebleu_weights: CodeBleuWeights,
    pub ngram_order: u32,
    /// Maximum height of the AST subtrees compared by the syntax component.
    pub subtree_depth: u32,
    pub token_weights: TokenWeights,
    /// Generated inputs per candidate pair.
    pub diff_budget: u32,
    pub exec_timeout_ms: u64,
    pub seed: u64,
    pub float_tolerance: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            lambda: 0.5,
            n_cap: 10,
            codebleu_weights: CodeBleuWeights::default(),
            ngram_order: 4,
            subtree_depth: 3,
            token_weights: TokenWeights::default(),
            diff_budget: 100,
            exec_timeout_ms: 2000,
            seed: 0,
            float_tolerance: 1e-6,
        }
    }
}

impl EnsembleConfig {
    /// Checks every invariant.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ConfigError::LambdaOutOfRange(self.lambda));
        }
        if self.n_cap == 0 {
            return Err(ConfigError::NonPositive("n_cap"));
        }
        if self.ngram_order == 0 {
            return Err(ConfigError::NonPositive("ngram_order"));
        }
        if self.subtree_depth == 0 {
            return Err(ConfigError::NonPositive("subtree_depth"));
        }
        if self.diff_budget == 0 {
            return Err(ConfigError::NonPositive("diff_budget"));
        }
        if self.exec_timeout_ms == 0 {
            return Err(ConfigError::NonPositive("exec_timeout_ms"));
        }
        if !(self.float_tolerance.is_finite() && self.float_tolerance > 0.0) {
            return Err(ConfigError::NonPositive("float_tolerance"));
        }
        if self.diff_budget < self.n_cap {
            return Err(ConfigError::BudgetBelowCap { budget: self.diff_budget, n_cap: self.n_cap });
        }
        self.codebleu_weights.validate()?;
        self.token_weights.validate()
    }
}

/// Rejected configuration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    InvalidValue { key: String, value: String },
    #[error("lambda must lie in [0, 1], got {0}")]
    LambdaOutOfRange(f64),
    #[error("codebleu weights must sum to 1, got {0}")]
    WeightsNotNormalized(f64),
    #[error("codebleu weights must be non-negative")]
    NegativeWeight,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("diff_budget ({budget}) must be at least n_cap ({n_cap})")]
    BudgetBelowCap { budget: u32, n_cap: u32 },
}

/// Keys accepted by [`validate_config`]. Dashes are accepted in place of underscores.
pub const CONFIG_KEYS: &[&str] = &[
    "lambda",
    "n_cap",
    "weights",
    "ngram_weight",
    "weighted_ngram_weight",
    "token_weight",
    "syntax_weight",
    "dataflow_weight",
    "ngram_order",
    "subtree_depth",
    "keyword_weight",
    "identifier_weight",
    "literal_weight",
    "operator_weight",
    "punctuation_weight",
    "diff_budget",
    "exec_timeout_ms",
    "seed",
    "float_tolerance",
];

/// Normalizes a config key (`n-cap` -> `n_cap`).
pub fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

/// Builds a config from a flat key-value map, filling defaults for absent keys.
///
/// The weight vector comes either from `weights` (`ngram,weighted_ngram,syntax,dataflow`)
/// or from the individual `*_weight` keys; when any individual key is given the
/// unspecified components are zero.
pub fn validate_config(raw: &BTreeMap<String, String>) -> Result<EnsembleConfig, ConfigError> {
    let mut config = EnsembleConfig::default();
    let mut component: [Option<f64>; 4] = [None; 4];
    let mut vector: Option<CodeBleuWeights> = None;

    for (raw_key, value) in raw {
        let key = normalize_key(raw_key);
        match key.as_str() {
            "lambda" => config.lambda = parse_value(&key, value)?,
            "n_cap" => config.n_cap = parse_value(&key, value)?,
            "weights" => {
                let parts = value
                    .split(',')
                    .map(|p| parse_value::<f64>(&key, p))
                    .collect::<Result<Vec<_>, _>>()?;
                if parts.len() != 4 {
                    return Err(ConfigError::InvalidValue { key, value: value.clone() });
                }
                vector = Some(CodeBleuWeights::new(parts[0], parts[1], parts[2], parts[3]));
            }
            "ngram_weight" => component[0] = Some(parse_value(&key, value)?),
            "weighted_ngram_weight" | "token_weight" => component[1] = Some(parse_value(&key, value)?),
            "syntax_weight" => component[2] = Some(parse_value(&key, value)?),
            "dataflow_weight" => component[3] = Some(parse_value(&key, value)?),
            "ngram_order" => config.ngram_order = parse_value(&key, value)?,
            "subtree_depth" => config.subtree_depth = parse_value(&key, value)?,
            "keyword_weight" => config.token_weights.keyword = parse_value(&key, value)?,
            "identifier_weight" => config.token_weights.identifier = parse_value(&key, value)?,
            "literal_weight" => config.token_weights.literal = parse_value(&key, value)?,
            "operator_weight" => config.token_weights.operator = parse_value(&key, value)?,
            "punctuation_weight" => config.token_weights.punctuation = parse_value(&key, value)?,
            "diff_budget" => config.diff_budget = parse_value(&key, value)?,
            "exec_timeout_ms" => config.exec_timeout_ms = parse_value(&key, value)?,
            "seed" => config.seed = parse_value(&key, value)?,
            "float_tolerance" => config.float_tolerance = parse_value(&key, value)?,
            _ => return Err(ConfigError::UnknownKey(raw_key.clone())),
        }
    }

    match (vector, component.iter().any(Option::is_some)) {
        (Some(_), true) => {
            return Err(ConfigError::InvalidValue {
                key: "weights".to_string(),
                value: "given both as a vector and as individual keys".to_string(),
            })
        }
        (Some(w), false) => config.codebleu_weights = w,
        (None, true) => {
            let [a, b, c, d] = component.map(|w| w.unwrap_or(0.0));
            config.codebleu_weights = CodeBleuWeights::new(a, b, c, d);
        }
        (None, false) => {}
    }

    config.validate()?;
    Ok(config)
}

/// All pairwise scores for one task's surviving candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub candidate_ids: Vec<String>,
    /// Directed: `codebleu[i][j]` scores candidate `i` against reference `j`.
    pub codebleu: Vec<Vec<f64>>,
    pub bsim: Vec<Vec<f64>>,
    pub combined: Vec<Vec<f64>>,
    pub cex_counts: Vec<Vec<u32>>,
}

impl SimilarityMatrix {
    /// A matrix with unit score diagonals and zero elsewhere.
    pub fn identity(candidate_ids: Vec<String>) -> Self {
        let n = candidate_ids.len();
        let unit = |n: usize| {
            let mut m = vec![vec![0.0; n]; n];
            for (i, row) in m.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            m
        };
        SimilarityMatrix {
            candidate_ids,
            codebleu: unit(n),
            bsim: unit(n),
            combined: unit(n),
            cex_counts: vec![vec![0; n]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.candidate_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidate_ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.candidate_ids.iter().position(|c| c == id)
    }

    /// Total counterexamples of candidate `i` against all peers.
    pub fn total_cex(&self, i: usize) -> u64 {
        self.cex_counts[i].iter().map(|&c| u64::from(c)).sum()
    }

    /// Checks shape, ranges, diagonals and the symmetric parts.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.len();
        let square_f = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
        if !square_f(&self.codebleu)
            || !square_f(&self.bsim)
            || !square_f(&self.combined)
            || self.cex_counts.len() != n
            || self.cex_counts.iter().any(|r| r.len() != n)
        {
            return Err(format!("matrix is not {n}x{n}"));
        }
        for i in 0..n {
            for j in 0..n {
                for (name, m) in [("codebleu", &self.codebleu), ("bsim", &self.bsim), ("combined", &self.combined)] {
                    let v = m[i][j];
                    if !(0.0..=1.0).contains(&v) {
                        return Err(format!("{name}[{i}][{j}] = {v} outside [0, 1]"));
                    }
                    if i == j && v != 1.0 {
                        return Err(format!("{name}[{i}][{i}] = {v}, expected 1"));
                    }
                }
                if self.bsim[i][j] != self.bsim[j][i] {
                    return Err(format!("bsim not symmetric at ({i}, {j})"));
                }
                if self.cex_counts[i][j] != self.cex_counts[j][i] {
                    return Err(format!("cex_counts not symmetric at ({i}, {j})"));
                }
            }
            if self.cex_counts[i][i] != 0 {
                return Err(format!("cex_counts[{i}][{i}] must be 0"));
            }
        }
        Ok(())
    }
}

/// Which rule decided the winner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreakReason {
    UniqueMax,
    FewerCounterexamples,
    SeededPick,
}

/// Outcome of voting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub winner_id: String,
    pub aggregated: BTreeMap<String, f64>,
    /// Candidates sharing the maximum aggregate, sorted by id.
    pub tie_set: Vec<String>,
    pub tie_break_reason: TieBreakReason,
}
