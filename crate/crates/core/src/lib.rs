//! Right-heavy probabilistic context-free grammars.
//!
//! A grammar is laid over a fixed backbone tree (the support tree) whose
//! in-order node indices are the nonterminals. Every rule expands a node into
//! a left child from its left subtree (or the empty symbol `V_0`), one token,
//! and a right child from its right subtree. That shape keeps parsing linear
//! in the sentence length.
//!
//! The crate covers tree construction, rule scoring, the inside chart,
//! best-parse and length-conditioned Viterbi decoding, inside-outside
//! training, and a brute-force enumeration oracle used to check all of them.

pub mod chart;
pub mod corpus;
pub mod decode;
mod error;
pub mod grammar;
pub mod logspace;
pub mod oracle;
pub mod support_tree;
pub mod train;
mod tree;

pub use chart::{inside, log_likelihood, InsideChart, Sentence};
pub use decode::{
    best_parse, decode, decode_length, max_tree_ratio, viterbi_tables, Backpointer, Candidate,
    Rerank, ViterbiTables,
};
pub use error::{Error, Result};
pub use grammar::{
    ChildPair, Emission, Grammar, GrammarPolicy, GrammarReport, RuleTable, Scorer, ScorerKind,
    TabularScorer, TrilinearScorer,
};
pub use support_tree::{SupportTree, SupportTreeConfig};
pub use tree::{AppliedRule, ParseNode, ParseTree};
