//! Python front end: parse checking, token streams, bounded AST subtrees,
//! data-flow graphs and entry-point signatures, all from a tree-sitter parse.

use std::collections::{BTreeMap, BTreeSet};

use ensvote_core::model::is_keyword;
use ensvote_core::{
    CallSignature, Candidate, DataFlowEdge, DataFlowGraph, Param, ParseStatus, ProgramFeatures, SubtreeBag,
    SubjectLanguage, Task, Token, TokenClass, TokenStream, TypeHint,
};
use thiserror::Error;
use tree_sitter::{Node, Parser, Tree};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SyntaxError {
    #[error("source does not parse")]
    Unparseable,
    #[error("no candidate survived the syntax filter")]
    NoViableCandidates,
    #[error("candidate `{candidate}` defines no callable entry point (`{entry_point}`)")]
    EntryPointMissing { candidate: String, entry_point: String },
}

const PUNCTUATION: &[&str] = &["(", ")", "[", "]", "{", "}", ",", ":", ".", ";"];

/// A successfully parsed program.
pub struct ParsedProgram<'s> {
    source: &'s str,
    tree: Tree,
}

fn new_parser(language: SubjectLanguage) -> Parser {
    let mut parser = Parser::new();
    match language {
        SubjectLanguage::Python => parser
            .set_language(&tree_sitter_python::LANGUAGE.into())
            .expect("bundled grammar matches the tree-sitter ABI"),
    }
    parser
}

fn parse_tree(source: &str, language: SubjectLanguage) -> Tree {
    new_parser(language).parse(source, None).expect("parser has a language and no timeout")
}

impl<'s> ParsedProgram<'s> {
    /// Parses `source`, rejecting any tree with error or missing nodes.
    pub fn parse(source: &'s str) -> Result<Self, SyntaxError> {
        let tree = parse_tree(source, SubjectLanguage::Python);
        if tree.root_node().has_error() {
            return Err(SyntaxError::Unparseable);
        }
        Ok(ParsedProgram { source, tree })
    }

    pub fn source(&self) -> &'s str {
        self.source
    }

    pub fn root(&self) -> Node<'_> {
        self.tree.root_node()
    }

    pub fn tokens(&self) -> TokenStream {
        let mut out = Vec::new();
        collect_tokens(self.root(), self.source, &mut out);
        TokenStream::new(out)
    }

    pub fn subtrees(&self, max_depth: u32) -> SubtreeBag {
        let mut bag = SubtreeBag::default();
        collect_subtrees(self.root(), max_depth, &mut bag);
        bag
    }

    pub fn dataflow(&self) -> DataFlowGraph {
        DataFlowBuilder::new(self.source).build(self.root())
    }

    pub fn features(&self, max_depth: u32) -> ProgramFeatures {
        ProgramFeatures { tokens: self.tokens(), subtrees: self.subtrees(max_depth), dataflow: self.dataflow() }
    }

    /// Top-level function definitions, in source order.
    pub fn functions(&self) -> Vec<FunctionDef> {
        top_level_functions(self.root(), self.source)
    }
}

/// Sets `parse_ok` from a grammar parse of the candidate text.
pub fn parse_check(mut candidate: Candidate, language: SubjectLanguage) -> Candidate {
    let tree = parse_tree(&candidate.text, language);
    candidate.parse_ok = if tree.root_node().has_error() { ParseStatus::Failed } else { ParseStatus::Ok };
    candidate
}

/// Keeps the parse-ok candidates in their original order.
pub fn filter_candidates(candidates: Vec<Candidate>) -> Result<Vec<Candidate>, SyntaxError> {
    let survivors: Vec<Candidate> = candidates.into_iter().filter(Candidate::is_parsed_ok).collect();
    if survivors.is_empty() {
        return Err(SyntaxError::NoViableCandidates);
    }
    Ok(survivors)
}

pub fn tokenize(text: &str) -> Result<TokenStream, SyntaxError> {
    Ok(ParsedProgram::parse(text)?.tokens())
}

pub fn ast_subtrees(text: &str, max_depth: u32) -> Result<SubtreeBag, SyntaxError> {
    Ok(ParsedProgram::parse(text)?.subtrees(max_depth))
}

pub fn dataflow_graph(text: &str) -> Result<DataFlowGraph, SyntaxError> {
    Ok(ParsedProgram::parse(text)?.dataflow())
}

pub fn features(text: &str, max_depth: u32) -> Result<ProgramFeatures, SyntaxError> {
    Ok(ParsedProgram::parse(text)?.features(max_depth))
}

fn is_layout(node: Node<'_>) -> bool {
    node.is_extra() || node.kind() == "line_continuation"
}

fn classify(node: Node<'_>, text: &str) -> TokenClass {
    match node.kind() {
        "identifier" => TokenClass::Identifier,
        "integer" | "float" | "string" | "concatenated_string" | "ellipsis" => TokenClass::Literal,
        _ if is_keyword(text) => TokenClass::Keyword,
        _ if PUNCTUATION.contains(&text) => TokenClass::Punctuation,
        _ if node.is_named() => TokenClass::Literal,
        _ => TokenClass::Operator,
    }
}

fn collect_tokens(node: Node<'_>, source: &str, out: &mut Vec<Token>) {
    if is_layout(node) {
        return;
    }
    if node.child_count() == 0 || node.kind() == "string" {
        let text = &source[node.byte_range()];
        if !text.trim().is_empty() {
            out.push(Token::new(text, classify(node, text)));
        }
        return;
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        collect_tokens(child, source, out);
    }
}

fn named_children<'t>(node: Node<'t>) -> Vec<Node<'t>> {
    let mut cursor = node.walk();
    node.named_children(&mut cursor).filter(|c| !is_layout(*c)).collect()
}

fn height(node: Node<'_>) -> u32 {
    named_children(node).into_iter().map(|c| 1 + height(c)).max().unwrap_or(0)
}

fn canonical(node: Node<'_>, depth: u32) -> String {
    let children = named_children(node);
    if depth == 0 || children.is_empty() {
        return node.kind().to_string();
    }
    let mut s = String::from("(");
    s.push_str(node.kind());
    for child in children {
        s.push(' ');
        s.push_str(&canonical(child, depth - 1));
    }
    s.push(')');
    s
}

/// Every internal node contributes one canonical string per distinct
/// truncation height `1..=min(max_depth, height)`.
fn collect_subtrees(node: Node<'_>, max_depth: u32, bag: &mut SubtreeBag) {
    if is_layout(node) {
        return;
    }
    let h = height(node);
    for d in 1..=h.min(max_depth) {
        bag.insert(canonical(node, d));
    }
    for child in named_children(node) {
        collect_subtrees(child, max_depth, bag);
    }
}

/// A function defined at module level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    /// Positional parameters without defaults, up to the first `*`.
    pub params: Vec<Param>,
}

fn function_node(node: Node<'_>) -> Option<Node<'_>> {
    match node.kind() {
        "function_definition" => Some(node),
        "decorated_definition" => node.child_by_field_name("definition").filter(|d| d.kind() == "function_definition"),
        _ => None,
    }
}

fn required_params(params: Node<'_>, source: &str) -> Vec<Param> {
    let mut out = Vec::new();
    for p in named_children(params) {
        match p.kind() {
            "identifier" => out.push(Param { name: source[p.byte_range()].to_string(), hint: TypeHint::Any }),
            "typed_parameter" => {
                let name = named_children(p).into_iter().find(|c| c.kind() == "identifier");
                let Some(name) = name else { break };
                let hint = p
                    .child_by_field_name("type")
                    .map_or(TypeHint::Any, |t| TypeHint::parse(&source[t.byte_range()]));
                out.push(Param { name: source[name.byte_range()].to_string(), hint });
            }
            "default_parameter" | "typed_default_parameter" => {}
            _ => break,
        }
    }
    out
}

fn top_level_functions(root: Node<'_>, source: &str) -> Vec<FunctionDef> {
    named_children(root)
        .into_iter()
        .filter_map(function_node)
        .filter_map(|f| {
            let name = f.child_by_field_name("name")?;
            let params = f.child_by_field_name("parameters").map(|p| required_params(p, source)).unwrap_or_default();
            Some(FunctionDef { name: source[name.byte_range()].to_string(), params })
        })
        .collect()
}

/// The function a candidate exposes for `entry_point`: the top-level
/// definition with that name if present, otherwise the last top-level
/// function defined.
pub fn resolve_entry_point(text: &str, entry_point: &str) -> Option<FunctionDef> {
    let program = ParsedProgram::parse(text).ok()?;
    let functions = program.functions();
    functions.iter().rev().find(|f| f.name == entry_point).or(functions.last()).cloned()
}

/// Signature of the candidate's entry point, with the task's constraints.
pub fn derive_signature(task: &Task, candidate: &Candidate) -> Result<CallSignature, SyntaxError> {
    let def = resolve_entry_point(&candidate.text, &task.entry_point).ok_or_else(|| SyntaxError::EntryPointMissing {
        candidate: candidate.id.clone(),
        entry_point: task.entry_point.clone(),
    })?;
    Ok(CallSignature { function_name: def.name, params: def.params, constraints: task.input_constraints.clone() })
}

/// Signature declared for the entry point in the task prompt, if the prompt
/// contains its definition header.
pub fn prompt_signature(task: &Task) -> Option<CallSignature> {
    let tree = parse_tree(&task.prompt, task.subject_language);
    let mut found = None;
    find_function(tree.root_node(), &task.prompt, &task.entry_point, &mut found);
    found.map(|params| CallSignature {
        function_name: task.entry_point.clone(),
        params,
        constraints: task.input_constraints.clone(),
    })
}

fn find_function(node: Node<'_>, source: &str, name: &str, found: &mut Option<Vec<Param>>) {
    if found.is_some() {
        return;
    }
    if node.kind() == "function_definition" {
        let matches = node.child_by_field_name("name").is_some_and(|n| &source[n.byte_range()] == name);
        if matches {
            if let Some(params) = node.child_by_field_name("parameters") {
                if !params.has_error() {
                    *found = Some(required_params(params, source));
                    return;
                }
            }
        }
    }
    let mut cursor = node.walk();
    for child in node.named_children(&mut cursor) {
        find_function(child, source, name, found);
    }
}

/// Signature shared by every pair of a task: the prompt's declaration when
/// present, else that of the first candidate (by id) resolving an entry point.
pub fn task_signature(task: &Task, candidates: &[Candidate]) -> Option<CallSignature> {
    if let Some(sig) = prompt_signature(task) {
        return Some(sig);
    }
    let mut sorted: Vec<&Candidate> = candidates.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let with_name = sorted
        .iter()
        .find(|c| resolve_entry_point(&c.text, &task.entry_point).is_some_and(|f| f.name == task.entry_point));
    with_name.or(sorted.first()).and_then(|c| derive_signature(task, c).ok())
}

type State = BTreeMap<String, BTreeSet<usize>>;

fn merge(into: &mut State, other: &State) {
    for (name, defs) in other {
        into.entry(name.clone()).or_default().extend(defs.iter().copied());
    }
}

/// May-reach definitions per function body. Assignments to plain names kill
/// earlier definitions; branch outcomes are merged; loops iterate to a
/// fixpoint.
struct DataFlowBuilder<'s> {
    source: &'s str,
    variables: BTreeSet<String>,
    /// Byte offset of every variable-position identifier.
    occurrences: Vec<(usize, String)>,
    /// (use node id, def id, sink name, used name)
    flows: BTreeSet<(usize, usize, String, String)>,
}

impl<'s> DataFlowBuilder<'s> {
    fn new(source: &'s str) -> Self {
        DataFlowBuilder { source, variables: BTreeSet::new(), occurrences: Vec::new(), flows: BTreeSet::new() }
    }

    fn text(&self, node: Node<'_>) -> &'s str {
        &self.source[node.byte_range()]
    }

    fn build(mut self, root: Node<'_>) -> DataFlowGraph {
        let mut state = State::new();
        self.block(root, &mut state);

        self.occurrences.sort();
        let mut index: BTreeMap<String, u32> = BTreeMap::new();
        for (_, name) in &self.occurrences {
            if self.variables.contains(name) && !index.contains_key(name) {
                let k = index.len() as u32;
                index.insert(name.clone(), k);
            }
        }
        let edges = self
            .flows
            .iter()
            .filter_map(|(_, _, sink, used)| Some(DataFlowEdge::new(*index.get(used)?, *index.get(sink)?)))
            .collect();
        DataFlowGraph::new(edges, index.len() as u32)
    }

    fn define(&mut self, name_node: Node<'_>, state: &mut State, kill: bool) {
        let name = self.text(name_node).to_string();
        self.occurrences.push((name_node.start_byte(), name.clone()));
        self.variables.insert(name.clone());
        // Node ids are stable across fixpoint passes over the same loop body.
        let id = name_node.id();
        let defs = state.entry(name).or_default();
        if kill {
            defs.clear();
        }
        defs.insert(id);
    }

    fn use_name(&mut self, node: Node<'_>, state: &State, sinks: &[String]) {
        let name = self.text(node).to_string();
        self.occurrences.push((node.start_byte(), name.clone()));
        let Some(defs) = state.get(&name) else { return };
        for &d in defs {
            if sinks.is_empty() {
                self.flows.insert((node.id(), d, name.clone(), name.clone()));
            } else {
                for s in sinks {
                    self.flows.insert((node.id(), d, s.clone(), name.clone()));
                }
            }
        }
    }

    /// Walks an expression recording every variable read.
    fn uses(&mut self, node: Node<'_>, state: &mut State, sinks: &[String]) {
        if is_layout(node) {
            return;
        }
        match node.kind() {
            "identifier" => self.use_name(node, state, sinks),
            "type" => {}
            "attribute" => {
                if let Some(object) = node.child_by_field_name("object") {
                    self.uses(object, state, sinks);
                }
            }
            "keyword_argument" => {
                if let Some(value) = node.child_by_field_name("value") {
                    self.uses(value, state, sinks);
                }
            }
            "named_expression" => {
                if let Some(value) = node.child_by_field_name("value") {
                    self.uses(value, state, sinks);
                }
                if let Some(name) = node.child_by_field_name("name") {
                    self.define(name, state, true);
                }
            }
            "lambda" => {
                let mut inner = state.clone();
                if let Some(params) = node.child_by_field_name("parameters") {
                    self.parameters(params, state, &mut inner);
                }
                if let Some(body) = node.child_by_field_name("body") {
                    self.uses(body, &mut inner, sinks);
                }
            }
            "list_comprehension" | "set_comprehension" | "dictionary_comprehension" | "generator_expression" => {
                let mut inner = state.clone();
                let children = named_children(node);
                for clause in children.iter().filter(|c| c.kind() == "for_in_clause") {
                    if let Some(right) = clause.child_by_field_name("right") {
                        self.uses(right, &mut inner, sinks);
                    }
                    if let Some(left) = clause.child_by_field_name("left") {
                        self.targets(left, &mut inner);
                    }
                }
                for c in children.iter().filter(|c| c.kind() == "if_clause") {
                    self.uses(*c, &mut inner, sinks);
                }
                if let Some(body) = node.child_by_field_name("body") {
                    self.uses(body, &mut inner, sinks);
                }
            }
            _ => {
                for child in named_children(node) {
                    self.uses(child, state, sinks);
                }
            }
        }
    }

    fn target_names(&self, node: Node<'_>, out: &mut Vec<String>) {
        match node.kind() {
            "identifier" => out.push(self.text(node).to_string()),
            "pattern_list" | "tuple_pattern" | "list_pattern" | "list_splat_pattern" | "parenthesized_expression"
            | "tuple" | "list" | "expression_list" => {
                for c in named_children(node) {
                    self.target_names(c, out);
                }
            }
            "subscript" | "attribute" => {
                if let Some(base) = base_name(node) {
                    out.push(self.text(base).to_string());
                }
            }
            _ => {}
        }
    }

    /// Binds assignment targets, reading any index or object expressions.
    fn targets(&mut self, node: Node<'_>, state: &mut State) {
        match node.kind() {
            "identifier" => self.define(node, state, true),
            "subscript" | "attribute" => {
                // `a[i].x = v` reads `i` into `a` and adds a non-killing definition of `a`
                let base = base_name(node);
                let sinks: Vec<String> = base.iter().map(|b| self.text(*b).to_string()).collect();
                self.access_reads(node, state, &sinks);
                if let Some(b) = base {
                    self.define(b, state, false);
                }
            }
            _ => {
                for c in named_children(node) {
                    self.targets(c, state);
                }
            }
        }
    }

    fn access_reads(&mut self, node: Node<'_>, state: &mut State, sinks: &[String]) {
        match node.kind() {
            "identifier" => {}
            "attribute" => {
                if let Some(object) = node.child_by_field_name("object") {
                    self.access_reads(object, state, sinks);
                }
            }
            "subscript" => {
                let value = node.child_by_field_name("value");
                if let Some(v) = value {
                    self.access_reads(v, state, sinks);
                }
                for c in named_children(node) {
                    if Some(c) != value {
                        self.uses(c, state, sinks);
                    }
                }
            }
            _ => self.uses(node, state, sinks),
        }
    }

    fn assignment(&mut self, node: Node<'_>, state: &mut State) {
        // chained `a = b = value` nests assignments in the right field
        let mut lefts = Vec::new();
        let mut current = node;
        let value = loop {
            if let Some(left) = current.child_by_field_name("left") {
                lefts.push(left);
            }
            match current.child_by_field_name("right") {
                Some(r) if r.kind() == "assignment" => current = r,
                other => break other,
            }
        };
        let Some(value) = value else {
            return;
        };
        let elementwise = lefts.len() == 1 && {
            let l = named_children(lefts[0]);
            let r = named_children(value);
            matches!(lefts[0].kind(), "pattern_list" | "tuple_pattern" | "list_pattern")
                && matches!(value.kind(), "expression_list" | "tuple" | "list")
                && l.len() == r.len()
                && l.iter().all(|n| n.kind() != "list_splat_pattern")
        };
        if elementwise {
            let l = named_children(lefts[0]);
            let r = named_children(value);
            for (target, expr) in l.iter().zip(&r) {
                let mut sinks = Vec::new();
                self.target_names(*target, &mut sinks);
                self.uses(*expr, state, &sinks);
            }
            for target in l {
                self.targets(target, state);
            }
        } else {
            let mut sinks = Vec::new();
            for l in &lefts {
                self.target_names(*l, &mut sinks);
            }
            self.uses(value, state, &sinks);
            for l in lefts {
                self.targets(l, state);
            }
        }
    }

    fn augmented(&mut self, node: Node<'_>, state: &mut State) {
        let Some(left) = node.child_by_field_name("left") else { return };
        let mut sinks = Vec::new();
        self.target_names(left, &mut sinks);
        if let Some(right) = node.child_by_field_name("right") {
            self.uses(right, state, &sinks);
        }
        if left.kind() == "identifier" {
            self.use_name(left, state, &sinks);
        }
        self.targets(left, state);
    }

    /// Defines parameters into `inner`; default values are read in `outer`.
    fn parameters(&mut self, params: Node<'_>, outer: &mut State, inner: &mut State) {
        for p in named_children(params) {
            match p.kind() {
                "identifier" => self.define(p, inner, true),
                "default_parameter" | "typed_default_parameter" => {
                    if let Some(v) = p.child_by_field_name("value") {
                        self.uses(v, outer, &[]);
                    }
                    if let Some(n) = p.child_by_field_name("name") {
                        if n.kind() == "identifier" {
                            self.define(n, inner, true);
                        }
                    }
                }
                "typed_parameter" | "list_splat_pattern" | "dictionary_splat_pattern" => {
                    for c in named_children(p) {
                        match c.kind() {
                            "identifier" => self.define(c, inner, true),
                            "list_splat_pattern" | "dictionary_splat_pattern" => {
                                for id in named_children(c).into_iter().filter(|n| n.kind() == "identifier") {
                                    self.define(id, inner, true);
                                }
                            }
                            _ => {}
                        }
                    }
                }
                _ => {}
            }
        }
    }

    fn function(&mut self, node: Node<'_>, state: &mut State) {
        let mut inner = State::new();
        if let Some(params) = node.child_by_field_name("parameters") {
            self.parameters(params, state, &mut inner);
        }
        if let Some(body) = node.child_by_field_name("body") {
            self.block(body, &mut inner);
        }
    }

    fn block(&mut self, node: Node<'_>, state: &mut State) {
        for stmt in named_children(node) {
            self.statement(stmt, state);
        }
    }

    fn branch(&mut self, body: Option<Node<'_>>, state: &State) -> State {
        let mut s = state.clone();
        if let Some(b) = body {
            self.block(b, &mut s);
        }
        s
    }

    fn loop_fixpoint(&mut self, state: &mut State, mut step: impl FnMut(&mut Self, &mut State)) {
        loop {
            let mut next = state.clone();
            step(self, &mut next);
            let before = state.clone();
            merge(state, &next);
            if *state == before {
                break;
            }
        }
    }

    fn statement(&mut self, node: Node<'_>, state: &mut State) {
        match node.kind() {
            "function_definition" => self.function(node, state),
            "decorated_definition" => {
                for c in named_children(node) {
                    if c.kind() == "decorator" {
                        self.uses(c, state, &[]);
                    } else {
                        self.statement(c, state);
                    }
                }
            }
            "class_definition" => {
                if let Some(args) = node.child_by_field_name("superclasses") {
                    self.uses(args, state, &[]);
                }
                let mut inner = State::new();
                if let Some(body) = node.child_by_field_name("body") {
                    self.block(body, &mut inner);
                }
            }
            "expression_statement" => {
                for c in named_children(node) {
                    match c.kind() {
                        "assignment" => self.assignment(c, state),
                        "augmented_assignment" => self.augmented(c, state),
                        _ => self.uses(c, state, &[]),
                    }
                }
            }
            "if_statement" => {
                if let Some(cond) = node.child_by_field_name("condition") {
                    self.uses(cond, state, &[]);
                }
                let mut merged = self.branch(node.child_by_field_name("consequence"), state);
                let mut has_else = false;
                let mut cursor = node.walk();
                let alternatives: Vec<Node<'_>> = node.children_by_field_name("alternative", &mut cursor).collect();
                for alt in alternatives {
                    if alt.kind() == "elif_clause" {
                        if let Some(cond) = alt.child_by_field_name("condition") {
                            self.uses(cond, state, &[]);
                        }
                        let out = self.branch(alt.child_by_field_name("consequence"), state);
                        merge(&mut merged, &out);
                    } else {
                        has_else = true;
                        let out = self.branch(alt.child_by_field_name("body"), state);
                        merge(&mut merged, &out);
                    }
                }
                if !has_else {
                    let fall_through = state.clone();
                    merge(&mut merged, &fall_through);
                }
                *state = merged;
            }
            "while_statement" => {
                let cond = node.child_by_field_name("condition");
                let body = node.child_by_field_name("body");
                self.loop_fixpoint(state, |this, s| {
                    if let Some(c) = cond {
                        this.uses(c, s, &[]);
                    }
                    if let Some(b) = body {
                        this.block(b, s);
                    }
                });
                if let Some(c) = cond {
                    self.uses(c, state, &[]);
                }
                if let Some(alt) = node.child_by_field_name("alternative") {
                    self.statement_children(alt, state);
                }
            }
            "for_statement" => {
                let left = node.child_by_field_name("left");
                let body = node.child_by_field_name("body");
                let mut sinks = Vec::new();
                if let Some(l) = left {
                    self.target_names(l, &mut sinks);
                }
                if let Some(right) = node.child_by_field_name("right") {
                    self.uses(right, state, &sinks);
                }
                self.loop_fixpoint(state, |this, s| {
                    if let Some(l) = left {
                        this.targets(l, s);
                    }
                    if let Some(b) = body {
                        this.block(b, s);
                    }
                });
                if let Some(alt) = node.child_by_field_name("alternative") {
                    self.statement_children(alt, state);
                }
            }
            "try_statement" => {
                let mut after_body = self.branch(node.child_by_field_name("body"), state);
                let mut handler_entry = state.clone();
                merge(&mut handler_entry, &after_body);
                let mut outcomes = Vec::new();
                let mut finally = None;
                for c in named_children(node) {
                    match c.kind() {
                        "except_clause" | "except_group_clause" => {
                            let mut s = handler_entry.clone();
                            self.except_clause(c, &mut s);
                            outcomes.push(s);
                        }
                        "else_clause" => self.statement_children(c, &mut after_body),
                        "finally_clause" => finally = Some(c),
                        _ => {}
                    }
                }
                for o in &outcomes {
                    merge(&mut after_body, o);
                }
                *state = after_body;
                if let Some(f) = finally {
                    self.statement_children(f, state);
                }
            }
            "with_statement" => {
                for c in named_children(node) {
                    if c.kind() == "with_clause" {
                        for item in named_children(c) {
                            self.with_item(item, state);
                        }
                    } else if c.kind() == "block" {
                        self.block(c, state);
                    }
                }
            }
            "return_statement" | "delete_statement" | "raise_statement" | "assert_statement" | "print_statement"
            | "exec_statement" => {
                for c in named_children(node) {
                    self.uses(c, state, &[]);
                }
            }
            "pass_statement" | "break_statement" | "continue_statement" | "global_statement"
            | "nonlocal_statement" | "import_statement" | "import_from_statement" | "future_import_statement" => {}
            _ => self.statement_children(node, state),
        }
    }

    /// Fallback for compound statements: blocks run in order, other children are reads.
    fn statement_children(&mut self, node: Node<'_>, state: &mut State) {
        for c in named_children(node) {
            if c.kind() == "block" {
                self.block(c, state);
            } else if c.kind().ends_with("_statement") || c.kind().ends_with("_clause") || c.kind() == "case_clause" {
                self.statement(c, state);
            } else {
                self.uses(c, state, &[]);
            }
        }
    }

    fn except_clause(&mut self, node: Node<'_>, state: &mut State) {
        for c in named_children(node) {
            match c.kind() {
                "block" => self.block(c, state),
                "as_pattern" => {
                    let mut alias_names = Vec::new();
                    if let Some(alias) = c.child_by_field_name("alias") {
                        self.target_names(alias, &mut alias_names);
                    }
                    for v in named_children(c) {
                        if Some(v) != c.child_by_field_name("alias") {
                            self.uses(v, state, &alias_names);
                        }
                    }
                    if let Some(alias) = c.child_by_field_name("alias") {
                        self.alias_targets(alias, state);
                    }
                }
                _ => self.uses(c, state, &[]),
            }
        }
    }

    fn alias_targets(&mut self, alias: Node<'_>, state: &mut State) {
        if alias.kind() == "as_pattern_target" {
            for c in named_children(alias) {
                self.targets(c, state);
            }
        } else {
            self.targets(alias, state);
        }
    }

    fn with_item(&mut self, item: Node<'_>, state: &mut State) {
        let Some(value) = item.child_by_field_name("value") else { return };
        if value.kind() == "as_pattern" {
            let alias = value.child_by_field_name("alias");
            let mut sinks = Vec::new();
            if let Some(a) = alias {
                self.target_names(a, &mut sinks);
            }
            for c in named_children(value) {
                if Some(c) != alias {
                    self.uses(c, state, &sinks);
                }
            }
            if let Some(a) = alias {
                self.alias_targets(a, state);
            }
        } else {
            self.uses(value, state, &[]);
        }
    }
}

/// Innermost identifier a subscript/attribute chain is rooted at.
fn base_name(node: Node<'_>) -> Option<Node<'_>> {
    let mut current = node;
    loop {
        match current.kind() {
            "identifier" => return Some(current),
            "subscript" => current = current.child_by_field_name("value")?,
            "attribute" => current = current.child_by_field_name("object")?,
            _ => return None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexemes(text: &str) -> Vec<(String, TokenClass)> {
        tokenize(text).unwrap().tokens.into_iter().map(|t| (t.lexeme, t.class)).collect()
    }

    fn edges(text: &str) -> Vec<(u32, u32)> {
        dataflow_graph(text).unwrap().edges.iter().map(|e| (e.def_var, e.use_var)).collect()
    }

    #[test]
    fn parse_check_outcomes() {
        let ok = parse_check(Candidate::new("t", "a", "def f(x):\n    return x\n").unwrap(), SubjectLanguage::Python);
        assert_eq!(ok.parse_ok, ParseStatus::Ok);
        let bad = parse_check(Candidate::new("t", "b", "def f(:").unwrap(), SubjectLanguage::Python);
        assert_eq!(bad.parse_ok, ParseStatus::Failed);
        let missing_colon = parse_check(Candidate::new("t", "c", "def f()\n    pass\n").unwrap(), SubjectLanguage::Python);
        assert_eq!(missing_colon.parse_ok, ParseStatus::Failed);
    }

    #[test]
    fn mixed_indentation_that_python_accepts() {
        // Each block is internally consistent, which CPython accepts.
        let text = "def f(x):\n\tif x:\n\t\treturn 1\n\treturn 2\n\ndef g(y):\n    return y\n";
        let c = parse_check(Candidate::new("t", "a", text).unwrap(), SubjectLanguage::Python);
        assert_eq!(c.parse_ok, ParseStatus::Ok);
    }

    #[test]
    fn filter_preserves_order() {
        let mk = |id: &str, text: &str| parse_check(Candidate::new("t", id, text).unwrap(), SubjectLanguage::Python);
        let all = vec![mk("a", "x = 1"), mk("b", "def ("), mk("c", "y = 2")];
        let kept: Vec<String> = filter_candidates(all).unwrap().into_iter().map(|c| c.id).collect();
        assert_eq!(kept, ["a", "c"]);
        assert_eq!(filter_candidates(vec![mk("b", "def (")]), Err(SyntaxError::NoViableCandidates));
        let ok = vec![mk("a", "x = 1"), mk("c", "y = 2")];
        assert_eq!(filter_candidates(ok.clone()).unwrap(), ok);
    }

    #[test]
    fn token_classes() {
        use TokenClass::*;
        assert_eq!(
            lexemes("x = 1"),
            vec![("x".into(), Identifier), ("=".into(), Operator), ("1".into(), Literal)]
        );
        assert_eq!(lexemes("while left <= right:\n    pass\n")[0], ("while".into(), Keyword));
        assert_eq!(lexemes("# comment\nx=1").len(), 3);
        let toks = lexemes("f(a, 'b c')\n");
        assert_eq!(toks[1], ("(".into(), Punctuation));
        assert_eq!(toks[4], ("'b c'".into(), Literal));
        assert_eq!(lexemes("return None")[1], ("None".into(), Keyword));
    }

    #[test]
    fn tokenize_rejects_unparseable() {
        assert_eq!(tokenize("def f(:"), Err(SyntaxError::Unparseable));
        assert!(ast_subtrees("def f(:", 3).is_err());
        assert!(dataflow_graph("def f(:").is_err());
    }

    #[test]
    fn subtrees_ignore_spellings() {
        assert_eq!(ast_subtrees("x = 1", 3).unwrap(), ast_subtrees("y = 2", 3).unwrap());
        assert_ne!(ast_subtrees("x = 1", 3).unwrap(), ast_subtrees("x = y", 3).unwrap());
    }

    #[test]
    fn subtree_totals_grow_with_depth() {
        let text = "def f(a):\n    for i in a:\n        if i:\n            return i\n";
        let totals: Vec<u32> = (1..6).map(|d| ast_subtrees(text, d).unwrap().total).collect();
        assert!(totals.windows(2).all(|w| w[0] <= w[1]), "{totals:?}");
        assert!(totals[0] < totals[4]);
    }

    #[test]
    fn single_def_use_edge() {
        assert_eq!(edges("a = 1\nb = a"), vec![(0, 1)]);
        assert_eq!(dataflow_graph("a = 1\nb = a").unwrap().var_count, 2);
    }

    #[test]
    fn parameter_use_edge() {
        assert_eq!(edges("def f(p): return p"), vec![(0, 0)]);
    }

    #[test]
    fn loop_carried_definitions_reach_condition() {
        // `i` in the condition is reached by the initial and the loop-body definition
        let g = edges("i = 0\nwhile i < 3:\n    i = i + 1\n");
        assert_eq!(g.iter().filter(|e| **e == (0, 0)).count(), 4);
    }

    #[test]
    fn branch_definitions_merge() {
        let g = edges("def f(c):\n    if c:\n        x = 1\n    else:\n        x = 2\n    return x\n");
        // c -> c once; x -> x from both branches
        assert_eq!(g, vec![(0, 0), (1, 1), (1, 1)]);
    }

    #[test]
    fn tuple_assignment_pairs_elementwise() {
        let g = edges("def f(arr):\n    left, right = 0, len(arr) - 1\n    return left\n");
        // arr -> right, left -> left
        assert_eq!(g, vec![(0, 2), (1, 1)]);
    }

    #[test]
    fn comprehension_and_attribute_uses() {
        let g = edges("def f(xs, k):\n    ys = [x * k for x in xs if x]\n    return ys.count(k)\n");
        let named = dataflow_graph("def f(xs, k):\n    ys = [x * k for x in xs if x]\n    return ys.count(k)\n").unwrap();
        assert_eq!(named.var_count, 4);
        // xs=0, k=1, ys=2, x=3
        assert!(g.contains(&(0, 2)));
        assert!(g.contains(&(1, 2)));
        assert!(g.contains(&(3, 2)));
        assert!(g.contains(&(2, 2)));
        assert!(g.contains(&(1, 1)));
    }

    #[test]
    fn entry_point_resolution() {
        let text = "def helper(a):\n    return a\n\ndef solve(x: int, y=2) -> int:\n    return helper(x)\n";
        let f = resolve_entry_point(text, "solve").unwrap();
        assert_eq!(f.name, "solve");
        assert_eq!(f.params, vec![Param { name: "x".into(), hint: TypeHint::Int }]);
        assert_eq!(resolve_entry_point(text, "other").unwrap().name, "solve");
        assert_eq!(resolve_entry_point("x = 1\n", "solve"), None);
    }

    #[test]
    fn signature_from_candidate() {
        let task = Task::new("t", "", "f", "").unwrap();
        let c = Candidate::new("t", "a", "def f(x: int) -> int:\n    return x\n").unwrap();
        let sig = derive_signature(&task, &c).unwrap();
        assert_eq!(sig.params, vec![Param { name: "x".into(), hint: TypeHint::Int }]);
        let missing = Candidate::new("t", "b", "y = 3\n").unwrap();
        assert!(matches!(derive_signature(&task, &missing), Err(SyntaxError::EntryPointMissing { .. })));
    }

    #[test]
    fn signature_from_prompt_header() {
        let prompt = "from typing import List\n\ndef has_close(numbers: List[float], threshold: float) -> bool:\n    \"\"\" Check.\n    \"\"\"\n";
        let task = Task::new("t", prompt, "has_close", "").unwrap();
        let sig = prompt_signature(&task).unwrap();
        assert_eq!(sig.params.len(), 2);
        assert_eq!(sig.params[0].hint, TypeHint::ListOf(Box::new(TypeHint::Float)));
        assert_eq!(sig.params[1].hint, TypeHint::Float);
    }
}
