//! Behavioral similarity: seeded inputs, cross-execution bookkeeping and the
//! capped counterexample score.
//!
//! Execution itself is abstracted behind [`CallExecutor`]; the `ensvote`
//! crate provides one backed by runner processes.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::model::InputConstraint;

/// Behavioral similarity `1 - min(n_cap, cex) / n_cap`.
pub fn bsim(cex_count: u32, n_cap: u32) -> f64 {
    assert!(n_cap >= 1, "n_cap must be positive");
    f64::from(n_cap - cex_count.min(n_cap)) / f64::from(n_cap)
}

/// Declared parameter type, read from an annotation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeHint {
    Int,
    Float,
    Bool,
    String,
    ListOf(Box<TypeHint>),
    DictOf(Box<TypeHint>, Box<TypeHint>),
    TupleOf(Vec<TypeHint>),
    Any,
}

fn split_top_level(args: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in args.char_indices() {
        match c {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(args[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let last = args[start..].trim();
    if !last.is_empty() {
        parts.push(last);
    }
    parts
}

impl TypeHint {
    /// Reads a subject-language annotation such as `list[int]` or
    /// `Dict[str, float]`. Anything unrecognized is [`TypeHint::Any`].
    pub fn parse(annotation: &str) -> TypeHint {
        let text = annotation.trim().trim_matches(|c| c == '"' || c == '\'');
        let (head, args) = match text.find('[') {
            Some(open) if text.ends_with(']') => (text[..open].trim(), Some(&text[open + 1..text.len() - 1])),
            _ => (text, None),
        };
        let head = head.rsplit('.').next().unwrap_or(head);
        let args: Vec<TypeHint> = args.map(|a| split_top_level(a).into_iter().map(TypeHint::parse).collect()).unwrap_or_default();
        let arg = |i: usize| Box::new(args.get(i).cloned().unwrap_or(TypeHint::Any));
        match head {
            "int" => TypeHint::Int,
            "float" => TypeHint::Float,
            "bool" => TypeHint::Bool,
            "str" => TypeHint::String,
            "list" | "List" | "Sequence" | "Iterable" | "MutableSequence" => TypeHint::ListOf(arg(0)),
            "dict" | "Dict" | "Mapping" => TypeHint::DictOf(arg(0), arg(1)),
            "tuple" | "Tuple" => {
                if args.len() == 2 && args[1] == TypeHint::Any && text.contains("...") {
                    TypeHint::ListOf(arg(0))
                } else {
                    TypeHint::TupleOf(args)
                }
            }
            _ => TypeHint::Any,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub hint: TypeHint,
}

/// What the input generator needs to know about the entry point.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CallSignature {
    pub function_name: String,
    pub params: Vec<Param>,
    #[serde(default)]
    pub constraints: Vec<InputConstraint>,
}

impl CallSignature {
    fn fingerprint(&self) -> u64 {
        // FNV-1a
        let text = format!("{self:?}");
        text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
    }
}

/// Leading slots reserved for boundary values.
pub const BOUNDARY_SLOTS: u32 = 10;
const MAX_NESTING: u32 = 3;

const INT_BOUNDARIES: [i64; 10] = [0, -1, 1, 2, -2, 3, 100, -100, 7, 5];
const FLOAT_BOUNDARIES: [f64; 10] = [0.0, -1.0, 1.0, 0.5, -0.5, 2.5, 1e6, -1e-3, 3.25, 100.0];
const STR_BOUNDARIES: [&str; 10] = ["", "a", "ab", " ", "aa", "abc", "A", "0", "ba", "xyz"];
const ALPHABET: &[u8] = b"abcxyzAB01 ";

fn float_value(f: f64) -> Value {
    Number::from_f64(f).map_or(Value::Null, Value::Number)
}

fn boundary_value(hint: &TypeHint, slot: usize, rng: &mut ChaCha8Rng, depth: u32) -> Value {
    let s = slot % 10;
    match hint {
        TypeHint::Int => Value::from(INT_BOUNDARIES[s]),
        TypeHint::Float => float_value(FLOAT_BOUNDARIES[s]),
        TypeHint::Bool => Value::Bool(s % 2 == 1),
        TypeHint::String => Value::from(STR_BOUNDARIES[s]),
        TypeHint::ListOf(inner) => match s {
            0 => Value::Array(Vec::new()),
            1 => Value::Array(vec![boundary_value(inner, 0, rng, depth + 1)]),
            2 => Value::Array(vec![boundary_value(inner, 2, rng, depth + 1)]),
            3 => Value::Array(vec![boundary_value(inner, 0, rng, depth + 1); 2]),
            _ => random_value(hint, rng, depth),
        },
        TypeHint::DictOf(_, value) => match s {
            0 => Value::Object(Map::new()),
            _ => {
                let mut map = Map::new();
                map.insert(STR_BOUNDARIES[1].to_string(), boundary_value(value, s, rng, depth + 1));
                Value::Object(map)
            }
        },
        TypeHint::TupleOf(items) => {
            Value::Array(items.iter().map(|h| boundary_value(h, slot, rng, depth + 1)).collect())
        }
        TypeHint::Any => match s {
            0 => Value::from(0),
            1 => Value::Array(Vec::new()),
            2 => Value::from(""),
            3 => Value::from(-1),
            4 => Value::Array(vec![Value::from(0)]),
            5 => Value::Bool(false),
            6 => float_value(1.5),
            7 => Value::Object(Map::new()),
            8 => Value::from(1),
            _ => Value::from("a"),
        },
    }
}

fn random_string(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(0..=6);
    (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char).collect()
}

fn random_value(hint: &TypeHint, rng: &mut ChaCha8Rng, depth: u32) -> Value {
    match hint {
        TypeHint::Int => {
            if rng.gen_bool(0.8) {
                Value::from(rng.gen_range(-10i64..=10))
            } else {
                Value::from(rng.gen_range(-1000i64..=1000))
            }
        }
        TypeHint::Float => {
            let f: f64 = rng.gen_range(-100.0..100.0);
            float_value(libm::round(f * 1000.0) / 1000.0)
        }
        TypeHint::Bool => Value::Bool(rng.gen_bool(0.5)),
        TypeHint::String => Value::from(random_string(rng)),
        TypeHint::ListOf(inner) => {
            let len = if depth >= MAX_NESTING { 0 } else { rng.gen_range(0..=8) };
            Value::Array((0..len).map(|_| random_value(inner, rng, depth + 1)).collect())
        }
        TypeHint::DictOf(key, value) => {
            let len = if depth >= MAX_NESTING { 0 } else { rng.gen_range(0..=4) };
            let mut map = Map::new();
            for _ in 0..len {
                // JSON object keys are strings whatever the declared key type.
                let k = match random_value(key, rng, depth + 1) {
                    Value::String(s) => s,
                    other => other.to_string(),
                };
                map.insert(k, random_value(value, rng, depth + 1));
            }
            Value::Object(map)
        }
        TypeHint::TupleOf(items) => Value::Array(items.iter().map(|h| random_value(h, rng, depth + 1)).collect()),
        TypeHint::Any => {
            let pick = if depth >= MAX_NESTING { rng.gen_range(0..3) } else { rng.gen_range(0..6) };
            match pick {
                0 => random_value(&TypeHint::Int, rng, depth),
                1 => random_value(&TypeHint::Bool, rng, depth),
                2 => random_value(&TypeHint::String, rng, depth),
                3 => random_value(&TypeHint::Float, rng, depth),
                4 => random_value(&TypeHint::ListOf(Box::new(TypeHint::Int)), rng, depth),
                _ => {
                    if rng.gen_bool(0.5) {
                        Value::Array(Vec::new())
                    } else {
                        Value::Object(Map::new())
                    }
                }
            }
        }
    }
}

fn element_hint(hint: &TypeHint) -> &TypeHint {
    match hint {
        TypeHint::ListOf(inner) => inner,
        _ => &TypeHint::Int,
    }
}

/// Total order used for sorting generated lists: numbers, then strings,
/// then everything else in encoded form.
fn compare_values(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(0.0), y.as_f64().unwrap_or(0.0));
            x.partial_cmp(&y).unwrap_or(Ordering::Equal)
        }
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        (Value::String(x), Value::String(y)) => x.cmp(y),
        (Value::Array(x), Value::Array(y)) => {
            for (p, q) in x.iter().zip(y) {
                let o = compare_values(p, q);
                if o != Ordering::Equal {
                    return o;
                }
            }
            x.len().cmp(&y.len())
        }
        _ => rank(a).cmp(&rank(b)).then_with(|| a.to_string().cmp(&b.to_string())),
    }
}

fn rank(v: &Value) -> u8 {
    match v {
        Value::Null => 0,
        Value::Bool(_) => 1,
        Value::Number(_) => 2,
        Value::String(_) => 3,
        Value::Array(_) => 4,
        Value::Object(_) => 5,
    }
}

fn make_non_negative(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                *v = Value::from(i.unsigned_abs());
            } else if let Some(f) = n.as_f64() {
                *v = float_value(libm::fabs(f));
            }
        }
        Value::Array(items) => items.iter_mut().for_each(make_non_negative),
        _ => {}
    }
}

fn apply_constraints(args: &mut [Value], params: &[Param], constraints: &[InputConstraint], rng: &mut ChaCha8Rng) {
    for (arg, param) in args.iter_mut().zip(params) {
        if constraints.contains(&InputConstraint::NonNegative) {
            make_non_negative(arg);
        }
        let Value::Array(items) = arg else { continue };
        if matches!(param.hint, TypeHint::TupleOf(_)) {
            continue;
        }
        if constraints.contains(&InputConstraint::Distinct) {
            let mut seen = BTreeSet::new();
            items.retain(|x| seen.insert(x.to_string()));
        }
        if constraints.contains(&InputConstraint::NonEmpty) && items.is_empty() {
            let mut fresh = random_value(element_hint(&param.hint), rng, 1);
            if constraints.contains(&InputConstraint::NonNegative) {
                make_non_negative(&mut fresh);
            }
            items.push(fresh);
        }
        if constraints.contains(&InputConstraint::Sorted) {
            items.sort_by(compare_values);
        }
    }
}

/// Produces exactly `budget` argument tuples for `sig`, deterministic in
/// `(sig, budget, seed)`. The first [`BOUNDARY_SLOTS`] tuples hold boundary
/// values (empty and single-element lists, 0, -1, ...); the signature's
/// constraints are applied to every tuple.
pub fn generate_inputs(sig: &CallSignature, budget: u32, seed: u64) -> Vec<Vec<Value>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ sig.fingerprint());
    (0..budget as usize)
        .map(|slot| {
            let mut args: Vec<Value> = sig
                .params
                .iter()
                .map(|p| {
                    if slot < BOUNDARY_SLOTS as usize {
                        boundary_value(&p.hint, slot, &mut rng, 0)
                    } else {
                        random_value(&p.hint, &mut rng, 0)
                    }
                })
                .collect();
            apply_constraints(&mut args, &sig.params, &sig.constraints, &mut rng);
            args
        })
        .collect()
}

/// Result of calling the entry point once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ExecOutcome {
    Ok { value: Value },
    Exception { error_kind: String },
    Timeout,
}

fn numbers_equal(a: &Number, b: &Number, tolerance: f64) -> bool {
    if let (Some(x), Some(y)) = (a.as_i64(), b.as_i64()) {
        return x == y;
    }
    if let (Some(x), Some(y)) = (a.as_u64(), b.as_u64()) {
        return x == y;
    }
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => {
            let scale = 1.0f64.max(libm::fabs(x)).max(libm::fabs(y));
            libm::fabs(x - y) <= tolerance * scale
        }
        _ => false,
    }
}

/// Deep equality, with reals compared within `tolerance` (relative above 1).
pub fn values_equal(a: &Value, b: &Value, tolerance: f64) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => numbers_equal(x, y, tolerance),
        (Value::Array(x), Value::Array(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| values_equal(p, q, tolerance))
        }
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| values_equal(v, w, tolerance)))
        }
        _ => a == b,
    }
}

/// Whether two outcomes on the same input count as a counterexample.
/// Two exceptions (of any kind) agree, as do two timeouts.
pub fn outcomes_diverge(a: &ExecOutcome, b: &ExecOutcome, tolerance: f64) -> bool {
    match (a, b) {
        (ExecOutcome::Ok { value: x }, ExecOutcome::Ok { value: y }) => !values_equal(x, y, tolerance),
        (ExecOutcome::Exception { .. }, ExecOutcome::Exception { .. }) => false,
        (ExecOutcome::Timeout, ExecOutcome::Timeout) => false,
        _ => true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub input: Vec<Value>,
    pub outcome_a: ExecOutcome,
    pub outcome_b: ExecOutcome,
}

/// Differential testing result for one candidate pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub pair: (String, String),
    pub cex_count: u32,
    pub witnesses: Vec<Witness>,
    pub inputs_tried: u32,
    /// Set when one side lacks a callable entry point; no inputs are run and
    /// the count is pinned at the cap.
    #[serde(default)]
    pub entry_point_missing: bool,
}

impl DiffReport {
    pub fn entry_point_missing(a: &str, b: &str, n_cap: u32) -> Self {
        DiffReport {
            pair: (a.to_string(), b.to_string()),
            cex_count: n_cap,
            witnesses: Vec::new(),
            inputs_tried: 0,
            entry_point_missing: true,
        }
    }

    /// Identical-program report (self pairs and exact duplicates).
    pub fn identical(a: &str, b: &str) -> Self {
        DiffReport {
            pair: (a.to_string(), b.to_string()),
            cex_count: 0,
            witnesses: Vec::new(),
            inputs_tried: 0,
            entry_point_missing: false,
        }
    }

    pub fn bsim(&self, n_cap: u32) -> f64 {
        bsim(self.cex_count, n_cap)
    }
}

/// Something that can call a loaded candidate's entry point.
pub trait CallExecutor {
    type Error;

    fn call(&mut self, args: &[Value]) -> Result<ExecOutcome, Self::Error>;
}

/// Adapts a closure into a [`CallExecutor`] that never fails.
pub struct FnExecutor<F>(pub F);

impl<F: FnMut(&[Value]) -> ExecOutcome> CallExecutor for FnExecutor<F> {
    type Error = core::convert::Infallible;

    fn call(&mut self, args: &[Value]) -> Result<ExecOutcome, Self::Error> {
        Ok((self.0)(args))
    }
}

/// Runs both executors on every input in order, counting distinct diverging
/// inputs and stopping once `n_cap` have been found.
pub fn cross_execute<E, A, B>(
    pair: (&str, &str),
    a: &mut A,
    b: &mut B,
    inputs: &[Vec<Value>],
    n_cap: u32,
    tolerance: f64,
) -> Result<DiffReport, E>
where
    A: CallExecutor<Error = E> + ?Sized,
    B: CallExecutor<Error = E> + ?Sized,
{
    let mut seen = BTreeSet::new();
    let mut witnesses = Vec::new();
    let mut tried = 0u32;
    for input in inputs {
        if witnesses.len() as u32 >= n_cap {
            break;
        }
        let outcome_a = a.call(input)?;
        let outcome_b = b.call(input)?;
        tried += 1;
        if outcomes_diverge(&outcome_a, &outcome_b, tolerance) && seen.insert(Value::Array(input.clone()).to_string()) {
            witnesses.push(Witness { input: input.clone(), outcome_a, outcome_b });
        }
    }
    Ok(DiffReport {
        pair: (pair.0.to_string(), pair.1.to_string()),
        cex_count: witnesses.len() as u32,
        witnesses,
        inputs_tried: tried,
        entry_point_missing: false,
    })
}
