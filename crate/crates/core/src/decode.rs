//! Best-parse extraction for a given sentence and length-conditioned Viterbi
//! decoding.
//!
//! Ties are broken by the smallest split position, then child-set order, then
//! the smallest token id, so every routine here is deterministic.

use serde::{Deserialize, Serialize};

use crate::chart::{check_inputs, inside, left_value, Sentence, SpanStore};
use crate::error::{Error, Result};
use crate::grammar::{Grammar, RuleTable};
use crate::logspace::NEG_INF;
use crate::tree::{ParseTree, TreeBuilder};

/// Max-product chart over the same regions as the inside chart.
fn viterbi_chart(grammar: &Grammar, table: &RuleTable, tokens: &[usize]) -> SpanStore {
    let m = grammar.node_count();
    let d = grammar.prefix_width();
    let n = tokens.len();
    let mut store = SpanStore::new(m, n, d);
    for len in 1..=n {
        for i in store.starts(len) {
            let j = i + len - 1;
            for a in 1..m {
                let best =
                    best_split(grammar, table, &store, tokens, a, i, j).map_or(NEG_INF, |(v, _)| v);
                store.set(a, i, j, best);
            }
        }
    }
    store
}

/// How a cell's best derivation starts.
#[derive(Debug, Clone, Copy)]
enum Split {
    Emit,
    Expand { k: usize, idx: usize },
}

#[allow(clippy::needless_range_loop)]
fn best_split(
    grammar: &Grammar,
    table: &RuleTable,
    store: &SpanStore,
    tokens: &[usize],
    a: usize,
    i: usize,
    j: usize,
) -> Option<(f64, Split)> {
    let d = grammar.prefix_width();
    let mut best: Option<(f64, Split)> = None;
    if i == j {
        let v = table.unary_rule(a, tokens[i]);
        if v > NEG_INF {
            best = Some((v, Split::Emit));
        }
        return best;
    }
    let ternary = table.log_ternary(a);
    if ternary == NEG_INF {
        return None;
    }
    for k in i..=(j - 1).min(i + d - 1) {
        let head = ternary + table.emit(a)[tokens[k]];
        if head == NEG_INF {
            continue;
        }
        for (idx, (pair, &w)) in grammar.child_set(a).iter().zip(table.child(a)).enumerate() {
            if w == NEG_INF {
                continue;
            }
            let left = left_value(store, pair.left, i, k);
            let right = store.get(pair.right, k + 1, j);
            let v = head + w + left + right;
            if v > NEG_INF && best.is_none_or(|(b, _)| v > b) {
                best = Some((v, Split::Expand { k, idx }));
            }
        }
    }
    best
}

/// The most probable derivation of `y`, with its token alignment.
pub fn best_parse(grammar: &Grammar, table: &RuleTable, y: &Sentence) -> Result<ParseTree> {
    check_inputs(grammar, table, y)?;
    let tokens = y.tokens();
    let n = tokens.len();
    let store = viterbi_chart(grammar, table, tokens);
    let root = store.get(1, 0, n - 1);
    if root == NEG_INF {
        return Err(Error::Underivable);
    }

    let mut builder = TreeBuilder::default();
    // (nonterminal, i, j, parent slot)
    let mut pending = vec![(1usize, 0usize, n - 1, None::<(usize, bool)>)];
    while let Some((a, i, j, slot)) = pending.pop() {
        let (_, split) = best_split(grammar, table, &store, tokens, a, i, j)
            .expect("traced cells have a finite best split");
        let node = match split {
            Split::Emit => builder.push(a, Some(tokens[i])),
            Split::Expand { k, idx } => {
                let pair = grammar.child_set(a)[idx];
                let node = builder.push(a, Some(tokens[k]));
                pending.push((pair.right, k + 1, j, Some((node, false))));
                if pair.left == 0 {
                    let eps = builder.push_empty();
                    builder.nodes[node].left = Some(eps);
                } else {
                    pending.push((pair.left, i, k - 1, Some((node, true))));
                }
                node
            }
        };
        attach(&mut builder, node, slot);
    }
    Ok(builder.finish(root))
}

fn attach(builder: &mut TreeBuilder, node: usize, slot: Option<(usize, bool)>) {
    if let Some((parent, is_left)) = slot {
        if is_left {
            builder.nodes[parent].left = Some(node);
        } else {
            builder.nodes[parent].right = Some(node);
        }
    }
}

/// `P(y, T*) / P(y)` for the best derivation `T*`.
pub fn max_tree_ratio(grammar: &Grammar, table: &RuleTable, y: &Sentence) -> Result<f64> {
    let total = inside(grammar, table, y)?.root_loglik();
    if total == NEG_INF {
        return Err(Error::Underivable);
    }
    let best = best_parse(grammar, table, y)?;
    Ok((best.log_prob - total).exp())
}

/// Backpointer of a Viterbi cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backpointer {
    /// `V_a -> a` with the best token of `V_a`.
    Emit,
    /// `V_a -> V_left o V_right`, the left child yielding `left_len` tokens.
    Expand {
        left: usize,
        right: usize,
        left_len: usize,
    },
}

/// Length-indexed maxima `M^a_L` with backpointers.
#[derive(Debug, Clone)]
pub struct ViterbiTables {
    max_len: usize,
    max_p: Vec<f64>,
    back: Vec<Option<Backpointer>>,
    max_emit: Vec<(f64, usize)>,
}

impl ViterbiTables {
    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// `log M^a_L`; `-inf` when `V_a` derives no string of length `L`.
    pub fn max_p(&self, a: usize, len: usize) -> f64 {
        if len == 0 || len > self.max_len {
            return NEG_INF;
        }
        self.max_p[a * (self.max_len + 1) + len]
    }

    pub fn back(&self, a: usize, len: usize) -> Option<Backpointer> {
        if len == 0 || len > self.max_len {
            return None;
        }
        self.back[a * (self.max_len + 1) + len]
    }

    /// `(max_y log P(y|V_a), argmax)`.
    pub fn max_emit(&self, a: usize) -> (f64, usize) {
        self.max_emit[a]
    }
}

pub fn viterbi_tables(
    grammar: &Grammar,
    table: &RuleTable,
    max_len: usize,
) -> Result<ViterbiTables> {
    if max_len == 0 {
        return Err(Error::InvalidConfig("max_len must be at least 1".into()));
    }
    let m = grammar.node_count();
    let d = grammar.prefix_width();
    let width = max_len + 1;
    let mut max_p = vec![NEG_INF; m * width];
    let mut back = vec![None; m * width];
    let mut max_emit = vec![(NEG_INF, 0usize); m];
    for (a, slot) in max_emit.iter_mut().enumerate().skip(1) {
        for (tok, &v) in table.emit(a).iter().enumerate() {
            if v > slot.0 {
                *slot = (v, tok);
            }
        }
    }

    for len in 1..=max_len {
        for a in 1..m {
            let mut best = NEG_INF;
            let mut arg = None;
            if len == 1 {
                best = table.log_unary(a) + max_emit[a].0;
                if best > NEG_INF {
                    arg = Some(Backpointer::Emit);
                }
            } else if table.log_ternary(a) > NEG_INF {
                let head = table.log_ternary(a) + max_emit[a].0;
                for left_len in 0..=(len - 2).min(d - 1) {
                    for (pair, &w) in grammar.child_set(a).iter().zip(table.child(a)) {
                        let left = match (pair.left, left_len) {
                            (0, 0) => 0.0,
                            (0, _) | (_, 0) => continue,
                            (b, p) => max_p[b * width + p],
                        };
                        let right = max_p[pair.right * width + (len - 1 - left_len)];
                        let v = head + w + left + right;
                        if v > best {
                            best = v;
                            arg = Some(Backpointer::Expand {
                                left: pair.left,
                                right: pair.right,
                                left_len,
                            });
                        }
                    }
                }
            }
            max_p[a * width + len] = best;
            back[a * width + len] = arg;
        }
    }
    Ok(ViterbiTables {
        max_len,
        max_p,
        back,
        max_emit,
    })
}

/// Follows backpointers from `(V_1, len)` and returns the decoded tokens and
/// tree.
pub fn decode_length(tables: &ViterbiTables, len: usize) -> Result<(Vec<usize>, ParseTree)> {
    let root = tables.max_p(1, len);
    if root == NEG_INF {
        return Err(Error::NoDerivableLength { min: len, max: len });
    }
    let mut builder = TreeBuilder::default();
    let mut pending = vec![(1usize, len, None::<(usize, bool)>)];
    while let Some((a, l, slot)) = pending.pop() {
        let token = tables.max_emit(a).1;
        let node = builder.push(a, Some(token));
        match tables.back(a, l).expect("finite cells carry a backpointer") {
            Backpointer::Emit => {}
            Backpointer::Expand {
                left,
                right,
                left_len,
            } => {
                pending.push((right, l - 1 - left_len, Some((node, false))));
                if left == 0 {
                    let eps = builder.push_empty();
                    builder.nodes[node].left = Some(eps);
                } else {
                    pending.push((left, left_len, Some((node, true))));
                }
            }
        }
        attach(&mut builder, node, slot);
    }
    let tree = builder.finish(root);
    Ok((tree.tokens.clone(), tree))
}

/// How candidates of different lengths are compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rerank {
    /// Total log-probability.
    Raw,
    /// Log-probability divided by length.
    #[default]
    PerToken,
}

impl Rerank {
    pub fn score(self, log_prob: f64, len: usize) -> f64 {
        match self {
            Self::Raw => log_prob,
            Self::PerToken => log_prob / len as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub length: usize,
    pub tokens: Vec<usize>,
    pub tree: ParseTree,
    pub log_prob: f64,
    pub score: f64,
}

/// Decodes every derivable length in `[min_len, max_len]` and keeps the best
/// candidate under `mode`; ties go to the shorter length.
pub fn decode(
    grammar: &Grammar,
    table: &RuleTable,
    min_len: usize,
    max_len: usize,
    mode: Rerank,
) -> Result<Candidate> {
    let min_len = min_len.max(1);
    if min_len > max_len {
        return Err(Error::NoDerivableLength {
            min: min_len,
            max: max_len,
        });
    }
    let tables = viterbi_tables(grammar, table, max_len)?;
    let mut best: Option<Candidate> = None;
    for len in min_len..=max_len {
        let log_prob = tables.max_p(1, len);
        if log_prob == NEG_INF {
            continue;
        }
        let score = mode.score(log_prob, len);
        if best.as_ref().is_none_or(|b| score > b.score) {
            let (tokens, tree) = decode_length(&tables, len)?;
            best = Some(Candidate {
                length: len,
                tokens,
                tree,
                log_prob,
                score,
            });
        }
    }
    best.ok_or(Error::NoDerivableLength {
        min: min_len,
        max: max_len,
    })
}
