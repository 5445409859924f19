//! Allocation-only core of the ensemble selector.
//!
//! Everything here is pure: similarity metrics over already-extracted
//! program features, the behavioral similarity measure, seeded input
//! generation, cross-execution bookkeeping against an abstract executor,
//! matrix aggregation and voting, and the benchmark arithmetic. Parsing,
//! process execution and file formats live in the `ensvote` crate.

#![no_std]

extern crate alloc;

pub mod bench;
pub mod behave;
pub mod codebleu;
pub mod model;
pub mod syntax;
pub mod vote;

pub use behave::{
    bsim, generate_inputs, outcomes_diverge, CallExecutor, CallSignature, DiffReport, ExecOutcome,
    Param, TypeHint, Witness,
};
pub use codebleu::{CodeBleuBreakdown, MetricError};
pub use model::{
    validate_config, Candidate, CodeBleuWeights, ConfigError, EnsembleConfig, InputConstraint,
    ModelError, ParseStatus, SelectionResult, SimilarityMatrix, SubjectLanguage, Task,
    TieBreakReason, TokenWeights,
};
pub use syntax::{DataFlowEdge, DataFlowGraph, ProgramFeatures, SubtreeBag, Token, TokenClass, TokenStream};
pub use vote::{aggregate, select, VoteError};
