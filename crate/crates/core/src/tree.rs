//! Derivation trees and their renderings.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grammar::{ChildPair, Grammar, RuleTable};

/// One node of a derivation. `V_0` nodes have no token and no children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ParseNode {
    pub nonterminal: usize,
    pub token: Option<usize>,
    /// Index into [`ParseTree::nodes`].
    pub left: Option<usize>,
    /// Index into [`ParseTree::nodes`].
    pub right: Option<usize>,
}

/// A rule application read off a tree, in pre-order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AppliedRule {
    Emit {
        nonterminal: usize,
        token: usize,
    },
    Expand {
        nonterminal: usize,
        left: usize,
        token: usize,
        right: usize,
    },
}

/// A derivation with its yield, log-probability, and token alignment.
///
/// Nodes are stored in pre-order with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParseTree {
    pub nodes: Vec<ParseNode>,
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// `alignment[p]` is the nonterminal that emitted `tokens[p]`.
    pub alignment: Vec<usize>,
}

impl ParseTree {
    /// Computes yield and alignment from pre-order nodes.
    pub(crate) fn from_nodes(nodes: Vec<ParseNode>, log_prob: f64) -> Self {
        let mut tokens = Vec::new();
        let mut alignment = Vec::new();
        // In-order walk.
        let mut stack = Vec::new();
        let mut cursor = if nodes.is_empty() { None } else { Some(0) };
        while cursor.is_some() || !stack.is_empty() {
            while let Some(c) = cursor {
                stack.push(c);
                cursor = nodes[c].left;
            }
            let c = stack.pop().expect("non-empty");
            if let Some(t) = nodes[c].token {
                tokens.push(t);
                alignment.push(nodes[c].nonterminal);
            }
            cursor = nodes[c].right;
        }
        Self {
            nodes,
            tokens,
            log_prob,
            alignment,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Rule applications in pre-order. `V_0 -> ε` is implicit.
    pub fn rules(&self) -> Vec<AppliedRule> {
        self.nodes
            .iter()
            .filter_map(|n| {
                let token = n.token?;
                Some(match (n.left, n.right) {
                    (Some(l), Some(r)) => AppliedRule::Expand {
                        nonterminal: n.nonterminal,
                        left: self.nodes[l].nonterminal,
                        token,
                        right: self.nodes[r].nonterminal,
                    },
                    _ => AppliedRule::Emit {
                        nonterminal: n.nonterminal,
                        token,
                    },
                })
            })
            .collect()
    }

    /// Checks that every rule is legal under the grammar.
    pub fn validate(&self, grammar: &Grammar) -> Result<()> {
        for rule in self.rules() {
            let ok = match rule {
                AppliedRule::Emit { nonterminal, token } => {
                    grammar.can_emit(nonterminal) && token < grammar.vocab_size()
                }
                AppliedRule::Expand {
                    nonterminal,
                    left,
                    token,
                    right,
                } => {
                    token < grammar.vocab_size()
                        && grammar
                            .child_set(nonterminal)
                            .binary_search(&ChildPair { left, right })
                            .is_ok()
                }
            };
            if !ok {
                return Err(Error::Unsupported(format!("illegal rule {rule:?}")));
            }
        }
        Ok(())
    }

    /// Sum of the log-probabilities of the rules used, recomputed from `table`.
    pub fn score(&self, grammar: &Grammar, table: &RuleTable) -> Result<f64> {
        let mut total = 0.0;
        for rule in self.rules() {
            total += match rule {
                AppliedRule::Emit { nonterminal, token } => table.unary_rule(nonterminal, token),
                AppliedRule::Expand {
                    nonterminal,
                    left,
                    token,
                    right,
                } => {
                    let idx = grammar
                        .child_set(nonterminal)
                        .binary_search(&ChildPair { left, right })
                        .map_err(|_| Error::Unsupported(format!("illegal rule {rule:?}")))?;
                    table.ternary_rule(nonterminal, idx, token)
                }
            };
        }
        Ok(total)
    }

    /// `(nonterminal, first, last)` yield span of every non-empty node, in
    /// pre-order.
    pub fn node_spans(&self) -> Vec<(usize, usize, usize)> {
        let mut sizes = vec![0usize; self.nodes.len()];
        for idx in (0..self.nodes.len()).rev() {
            let n = &self.nodes[idx];
            sizes[idx] = usize::from(n.token.is_some())
                + n.left.map_or(0, |l| sizes[l])
                + n.right.map_or(0, |r| sizes[r]);
        }
        let mut out = Vec::new();
        let mut stack = vec![(0usize, 0usize)];
        while let Some((idx, start)) = stack.pop() {
            let n = &self.nodes[idx];
            if sizes[idx] > 0 {
                out.push((n.nonterminal, start, start + sizes[idx] - 1));
            }
            let left_size = n.left.map_or(0, |l| sizes[l]);
            if let Some(r) = n.right {
                stack.push((r, start + left_size + 1));
            }
            if let Some(l) = n.left {
                stack.push((l, start));
            }
        }
        out
    }

    /// Graphviz rendering, one graph node per tree node.
    pub fn to_dot(&self, name: &str, vocab: Option<&[String]>) -> String {
        let mut out = format!("digraph {name} {{\n  node [shape=box];\n");
        for (idx, n) in self.nodes.iter().enumerate() {
            let label = node_label(n, vocab);
            let _ = writeln!(out, "  n{idx} [label=\"{}\"];", escape(&label));
        }
        for (idx, n) in self.nodes.iter().enumerate() {
            if let Some(l) = n.left {
                let _ = writeln!(out, "  n{idx} -> n{l} [label=\"L\"];");
            }
            if let Some(r) = n.right {
                let _ = writeln!(out, "  n{idx} -> n{r} [label=\"R\"];");
            }
        }
        out.push_str("}\n");
        out
    }

    /// Indented text rendering, right subtree printed after the left.
    pub fn to_text(&self, vocab: Option<&[String]>) -> String {
        let mut out = String::new();
        let mut stack = vec![(0usize, 0usize, "")];
        while let Some((idx, depth, tag)) = stack.pop() {
            let n = &self.nodes[idx];
            let _ = writeln!(out, "{}{}{}", "  ".repeat(depth), tag, node_label(n, vocab));
            if let Some(r) = n.right {
                stack.push((r, depth + 1, "R "));
            }
            if let Some(l) = n.left {
                stack.push((l, depth + 1, "L "));
            }
        }
        out
    }
}

fn node_label(n: &ParseNode, vocab: Option<&[String]>) -> String {
    match n.token {
        None => format!("V_{} : ε", n.nonterminal),
        Some(t) => {
            let tok = vocab
                .and_then(|v| v.get(t).cloned())
                .unwrap_or_else(|| t.to_string());
            format!("V_{} : {}", n.nonterminal, tok)
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Pre-order node list under construction.
#[derive(Debug, Default)]
pub(crate) struct TreeBuilder {
    pub nodes: Vec<ParseNode>,
}

impl TreeBuilder {
    pub fn push(&mut self, nonterminal: usize, token: Option<usize>) -> usize {
        self.nodes.push(ParseNode {
            nonterminal,
            token,
            left: None,
            right: None,
        });
        self.nodes.len() - 1
    }

    pub fn push_empty(&mut self) -> usize {
        self.push(0, None)
    }

    pub fn finish(self, log_prob: f64) -> ParseTree {
        ParseTree::from_nodes(self.nodes, log_prob)
    }
}
