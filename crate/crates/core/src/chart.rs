//! Inside algorithm specialized to right-heavy grammars.
//!
//! Only two kinds of spans can ever be derived by a nonterminal that is part
//! of a full derivation: spans shorter than `d = 2^depth` (anything under a
//! local prefix tree, and every left child) and suffixes `y_i..y_{n-1}`
//! (the root and every right child of a suffix). Cells are stored in those
//! two regions only, which keeps the chart at `O(m·n·d)` values and the work
//! linear in `n`.

use crate::error::{Error, Result};
use crate::grammar::{Grammar, RuleTable};
use crate::logspace::{Accumulator, NEG_INF};

/// A sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    tokens: Vec<usize>,
}

impl Sentence {
    pub fn new(tokens: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        if let Some((position, &token)) = tokens.iter().enumerate().find(|(_, &t)| t >= vocab_size)
        {
            return Err(Error::TokenOutOfRange {
                token,
                position,
                vocab_size,
            });
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Per-(nonterminal, span) values over the short-span and suffix regions.
/// A cell ending at `n-1` always lives in the suffix region.
#[derive(Debug, Clone)]
pub(crate) struct SpanStore {
    m: usize,
    n: usize,
    d: usize,
    prefix: Vec<f64>,
    suffix: Vec<f64>,
}

impl SpanStore {
    pub fn new(m: usize, n: usize, d: usize) -> Self {
        Self {
            m,
            n,
            d,
            prefix: vec![NEG_INF; (d - 1) * n * m],
            suffix: vec![NEG_INF; n * m],
        }
    }

    #[inline]
    fn slot(&self, a: usize, i: usize, j: usize) -> Option<(bool, usize)> {
        debug_assert!(i <= j && j < self.n);
        if j == self.n - 1 {
            Some((false, i * self.m + a))
        } else if j - i + 1 < self.d {
            Some((true, ((j - i) * self.n + i) * self.m + a))
        } else {
            None
        }
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, j: usize) -> f64 {
        match self.slot(a, i, j) {
            Some((true, idx)) => self.prefix[idx],
            Some((false, idx)) => self.suffix[idx],
            None => NEG_INF,
        }
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, j: usize, v: f64) {
        match self.slot(a, i, j) {
            Some((true, idx)) => self.prefix[idx] = v,
            Some((false, idx)) => self.suffix[idx] = v,
            None => panic!("cell ({a}, {i}, {j}) is outside the stored regions"),
        }
    }

    /// Start positions of the stored cells of a given length.
    pub fn starts(&self, len: usize) -> std::ops::RangeInclusive<usize> {
        let n = self.n;
        if len >= self.d {
            (n - len)..=(n - len)
        } else {
            0..=(n - len)
        }
    }

    pub fn stored_values(&self) -> usize {
        self.prefix.len() + self.suffix.len()
    }
}

/// Inside values `log P(V_a ⇒ y_i..y_j)`.
#[derive(Debug, Clone)]
pub struct InsideChart {
    pub(crate) store: SpanStore,
    root_loglik: f64,
}

impl InsideChart {
    pub fn root_loglik(&self) -> f64 {
        self.root_loglik
    }

    pub fn sentence_len(&self) -> usize {
        self.store.n
    }

    /// Value of any cell; `-inf` for cells outside both stored regions.
    pub fn value(&self, a: usize, i: usize, j: usize) -> f64 {
        self.store.get(a, i, j)
    }

    /// `log S^a_{i,i+span}` for `span < d - 1`.
    pub fn prefix_value(&self, a: usize, i: usize, span: usize) -> f64 {
        self.value(a, i, i + span)
    }

    /// `log S^a_{i,n-1}`.
    pub fn suffix_value(&self, a: usize, i: usize) -> f64 {
        self.value(a, i, self.store.n - 1)
    }

    /// Number of stored cells, `m·n·(d-1) + m·n`.
    pub fn stored_values(&self) -> usize {
        self.store.stored_values()
    }
}

pub(crate) fn check_inputs(grammar: &Grammar, table: &RuleTable, y: &Sentence) -> Result<()> {
    if table.node_count() != grammar.node_count() || table.vocab_size() != grammar.vocab_size() {
        return Err(Error::ShapeMismatch {
            what: "rule table",
            expected: grammar.node_count(),
            actual: table.node_count(),
        });
    }
    if let Some((position, &token)) = y
        .tokens()
        .iter()
        .enumerate()
        .find(|(_, &t)| t >= grammar.vocab_size())
    {
        return Err(Error::TokenOutOfRange {
            token,
            position,
            vocab_size: grammar.vocab_size(),
        });
    }
    if grammar.validate().is_degenerate() {
        return Err(Error::DegenerateGrammar);
    }
    Ok(())
}

/// Value of the left child of a ternary split at `k`: `V_0` covers only the
/// empty span, any other nonterminal a non-empty one.
#[inline]
pub(crate) fn left_value(store: &SpanStore, b: usize, i: usize, k: usize) -> f64 {
    match (b, k == i) {
        (0, true) => 0.0,
        (0, false) | (_, true) => NEG_INF,
        _ => store.get(b, i, k - 1),
    }
}

#[allow(clippy::needless_range_loop)]
pub fn inside(grammar: &Grammar, table: &RuleTable, y: &Sentence) -> Result<InsideChart> {
    check_inputs(grammar, table, y)?;
    let m = grammar.node_count();
    let d = grammar.prefix_width();
    let n = y.len();
    let tokens = y.tokens();
    let mut store = SpanStore::new(m, n, d);
    let mut acc = Accumulator::default();

    for len in 1..=n {
        for i in store.starts(len) {
            let j = i + len - 1;
            for a in 1..m {
                acc.clear();
                if len == 1 {
                    acc.push(table.unary_rule(a, tokens[i]));
                }
                let ternary = table.log_ternary(a);
                if ternary != NEG_INF && len >= 2 {
                    let children = grammar.child_set(a);
                    let weights = table.child(a);
                    // k is the position of V_a's own token; the left child has
                    // fewer than d tokens and the right child at least one.
                    for k in i..=(j - 1).min(i + d - 1) {
                        let head = ternary + table.emit(a)[tokens[k]];
                        if head == NEG_INF {
                            continue;
                        }
                        for (pair, &w) in children.iter().zip(weights) {
                            if w == NEG_INF {
                                continue;
                            }
                            let left = left_value(&store, pair.left, i, k);
                            if left == NEG_INF {
                                continue;
                            }
                            let right = store.get(pair.right, k + 1, j);
                            if right == NEG_INF {
                                continue;
                            }
                            acc.push(head + w + left + right);
                        }
                    }
                }
                store.set(a, i, j, acc.total());
            }
        }
    }

    let root_loglik = store.get(1, 0, n - 1);
    Ok(InsideChart { store, root_loglik })
}

/// `log P(V_1 ⇒ y)`; `-inf` when `y` has no derivation.
pub fn log_likelihood(grammar: &Grammar, table: &RuleTable, y: &Sentence) -> Result<f64> {
    Ok(inside(grammar, table, y)?.root_loglik())
}
