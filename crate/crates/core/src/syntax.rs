//! Language-neutral program features consumed by the metrics.
//!
//! The parser front end fills these in; nothing here knows about grammars.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Lexical category of a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenClass {
    Keyword,
    Identifier,
    Literal,
    Operator,
    Punctuation,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub lexeme: String,
    pub class: TokenClass,
}

impl Token {
    pub fn new(lexeme: impl Into<String>, class: TokenClass) -> Self {
        Token { lexeme: lexeme.into(), class }
    }
}

/// Tokens in source order, comments and layout excluded.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
}

impl TokenStream {
    pub fn new(tokens: Vec<Token>) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.lexeme.is_empty()));
        TokenStream { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lexemes(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.lexeme.as_str())
    }
}

/// Multiset of structure-only canonical subtree strings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtreeBag {
    pub entries: BTreeMap<String, u32>,
    pub total: u32,
}

impl SubtreeBag {
    pub fn insert(&mut self, canonical: String) {
        *self.entries.entry(canonical).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn count(&self, canonical: &str) -> u32 {
        self.entries.get(canonical).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Size of the multiset intersection.
    pub fn overlap(&self, other: &SubtreeBag) -> u32 {
        self.entries.iter().map(|(k, &c)| c.min(other.count(k))).sum()
    }
}

impl FromIterator<String> for SubtreeBag {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        let mut bag = SubtreeBag::default();
        for s in iter {
            bag.insert(s);
        }
        bag
    }
}

/// A `comesFrom` edge between normalized variables: the value of `use_var`
/// comes from `def_var`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DataFlowEdge {
    pub def_var: u32,
    pub use_var: u32,
}

impl DataFlowEdge {
    pub fn new(def_var: u32, use_var: u32) -> Self {
        DataFlowEdge { def_var, use_var }
    }
}

impl fmt::Display for DataFlowEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "var_{} comesFrom var_{}", self.use_var, self.def_var)
    }
}

/// Normalized spelling of variable `k`.
pub fn var_name(k: u32) -> String {
    format!("var_{k}")
}

/// Multiset of data-flow edges over variables numbered by first occurrence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFlowGraph {
    /// Sorted, duplicates kept.
    pub edges: Vec<DataFlowEdge>,
    pub var_count: u32,
}

impl DataFlowGraph {
    pub fn new(mut edges: Vec<DataFlowEdge>, var_count: u32) -> Self {
        edges.sort_unstable();
        debug_assert!(edges.iter().all(|e| e.def_var < var_count && e.use_var < var_count));
        DataFlowGraph { edges, var_count }
    }

    pub fn edge_counts(&self) -> BTreeMap<DataFlowEdge, u32> {
        let mut counts = BTreeMap::new();
        for e in &self.edges {
            *counts.entry(*e).or_insert(0) += 1;
        }
        counts
    }

    /// Multiset Jaccard index; 1 when both graphs are empty.
    pub fn jaccard(&self, other: &DataFlowGraph) -> f64 {
        let a = self.edge_counts();
        let b = other.edge_counts();
        let mut inter = 0u32;
        let mut union = 0u32;
        for (e, &ca) in &a {
            let cb = b.get(e).copied().unwrap_or(0);
            inter += ca.min(cb);
            union += ca.max(cb);
        }
        for (e, &cb) in &b {
            if !a.contains_key(e) {
                union += cb;
            }
        }
        if union == 0 {
            1.0
        } else {
            f64::from(inter) / f64::from(union)
        }
    }
}

/// Everything the CodeBLEU components need from one program.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramFeatures {
    pub tokens: TokenStream,
    pub subtrees: SubtreeBag,
    pub dataflow: DataFlowGraph,
}
