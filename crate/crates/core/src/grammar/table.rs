use crate::error::{Error, Result};
use crate::logspace::{ln_pair, log_softmax, log_sum_exp, NEG_INF};

use super::Grammar;

const NORMALIZATION_TOL: f64 = 1e-9;

/// Normalized rule log-probabilities for one grammar.
///
/// A rule's probability is the product of a family weight (unary or
/// ternary), the token distribution `P(a|V_i)`, and for ternary rules the
/// child-pair distribution `P(<V_j,V_k>|V_i)`. Child pairs whose children
/// cannot derive any string carry `-inf`, so every tree's probability mass
/// stays inside derivable trees.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleTable {
    vocab_size: usize,
    emit: Vec<Vec<f64>>,
    child: Vec<Vec<f64>>,
    unary: Vec<f64>,
    ternary: Vec<f64>,
}

impl RuleTable {
    /// Builds a table from unnormalized scores. `emit_logits` and
    /// `child_logits` have one row per nonterminal (row 0 empty); `split` holds
    /// the unary share `rho_i` used when `V_i` has both rule families.
    pub fn from_logits(
        grammar: &Grammar,
        emit_logits: &[Vec<f64>],
        child_logits: &[Vec<f64>],
        split: &[f64],
    ) -> Result<Self> {
        let m = grammar.node_count();
        check_rows(grammar, emit_logits, child_logits, split)?;

        let mut emit = vec![Vec::new(); m];
        let mut child = vec![Vec::new(); m];
        let mut unary = vec![NEG_INF; m];
        let mut ternary = vec![NEG_INF; m];
        for i in 1..m {
            emit[i] = log_softmax(&emit_logits[i]);
            let masked: Vec<f64> = child_logits[i]
                .iter()
                .enumerate()
                .map(|(idx, &s)| {
                    if grammar.is_live_pair(i, idx) {
                        s
                    } else {
                        NEG_INF
                    }
                })
                .collect();
            if grammar.can_expand(i) {
                if log_sum_exp(&masked) == NEG_INF {
                    return Err(Error::NotNormalized(format!(
                        "V_{i} has no finite child score"
                    )));
                }
                child[i] = log_softmax(&masked);
            } else {
                child[i] = masked;
            }
            if emit[i].iter().any(|v| v.is_nan()) || child[i].iter().any(|v| v.is_nan()) {
                return Err(Error::NonFinite("rule scores"));
            }
            (unary[i], ternary[i]) = family_weights(grammar, i, split[i]);
        }
        Ok(Self {
            vocab_size: grammar.vocab_size(),
            emit,
            child,
            unary,
            ternary,
        })
    }

    /// Builds a table from log-probabilities that are already normalized,
    /// rejecting rows that are not.
    pub fn from_log_probs(
        grammar: &Grammar,
        emit_logprob: Vec<Vec<f64>>,
        mut child_logprob: Vec<Vec<f64>>,
        split: &[f64],
    ) -> Result<Self> {
        let m = grammar.node_count();
        check_rows(grammar, &emit_logprob, &child_logprob, split)?;
        for (i, row) in child_logprob.iter_mut().enumerate() {
            for (idx, v) in row.iter_mut().enumerate() {
                if !grammar.is_live_pair(i, idx) {
                    *v = NEG_INF;
                }
            }
        }
        let mut unary = vec![NEG_INF; m];
        let mut ternary = vec![NEG_INF; m];
        for i in 1..m {
            (unary[i], ternary[i]) = family_weights(grammar, i, split[i]);
        }
        let table = Self {
            vocab_size: grammar.vocab_size(),
            emit: emit_logprob,
            child: child_logprob,
            unary,
            ternary,
        };
        table.check_normalized(grammar)?;
        Ok(table)
    }

    /// Verifies that every used distribution sums to one.
    pub fn check_normalized(&self, grammar: &Grammar) -> Result<()> {
        for i in 1..grammar.node_count() {
            if !grammar.is_derivable(i) {
                continue;
            }
            let z = log_sum_exp(&self.emit[i]);
            if z.is_nan() || z.abs() > NORMALIZATION_TOL {
                return Err(Error::NotNormalized(format!(
                    "emission row of V_{i} sums to exp({z})"
                )));
            }
            if grammar.can_expand(i) {
                let z = log_sum_exp(&self.child[i]);
                if z.is_nan() || z.abs() > NORMALIZATION_TOL {
                    return Err(Error::NotNormalized(format!(
                        "child row of V_{i} sums to exp({z})"
                    )));
                }
            }
            let z = crate::logspace::log_add_exp(self.unary[i], self.ternary[i]);
            if z.is_nan() || z.abs() > NORMALIZATION_TOL {
                return Err(Error::NotNormalized(format!(
                    "rule families of V_{i} sum to exp({z})"
                )));
            }
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn node_count(&self) -> usize {
        self.emit.len()
    }

    /// `log P(a|V_i)` for every token `a`.
    pub fn emit(&self, i: usize) -> &[f64] {
        &self.emit[i]
    }

    /// `log P(<V_j,V_k>|V_i)`, aligned with `Grammar::child_set(i)`.
    pub fn child(&self, i: usize) -> &[f64] {
        &self.child[i]
    }

    /// Log weight of the unary family of `V_i`.
    pub fn log_unary(&self, i: usize) -> f64 {
        self.unary[i]
    }

    /// Log weight of the ternary family of `V_i`.
    pub fn log_ternary(&self, i: usize) -> f64 {
        self.ternary[i]
    }

    /// `log P(V_i -> a)`.
    pub fn unary_rule(&self, i: usize, token: usize) -> f64 {
        self.unary[i] + self.emit[i][token]
    }

    /// `log P(V_i -> V_j a V_k)` for the `idx`-th child pair of `V_i`.
    pub fn ternary_rule(&self, i: usize, idx: usize, token: usize) -> f64 {
        self.ternary[i] + self.child[i][idx] + self.emit[i][token]
    }

    /// Removes the mass of `P(a|V_i)` without renormalizing.
    pub fn mask_emission(&mut self, i: usize, token: usize) {
        self.emit[i][token] = NEG_INF;
    }

    /// Removes the mass of the `idx`-th child pair of `V_i` without
    /// renormalizing.
    pub fn mask_child(&mut self, i: usize, idx: usize) {
        self.child[i][idx] = NEG_INF;
    }
}

fn check_rows(
    grammar: &Grammar,
    emit: &[Vec<f64>],
    child: &[Vec<f64>],
    split: &[f64],
) -> Result<()> {
    let m = grammar.node_count();
    for (what, len) in [
        ("emission rows", emit.len()),
        ("child rows", child.len()),
        ("split weights", split.len()),
    ] {
        if len != m {
            return Err(Error::ShapeMismatch {
                what,
                expected: m,
                actual: len,
            });
        }
    }
    for i in 0..m {
        let expected = if i == 0 { 0 } else { grammar.vocab_size() };
        if emit[i].len() != expected {
            return Err(Error::ShapeMismatch {
                what: "emission row",
                expected,
                actual: emit[i].len(),
            });
        }
        if child[i].len() != grammar.child_set(i).len() {
            return Err(Error::ShapeMismatch {
                what: "child row",
                expected: grammar.child_set(i).len(),
                actual: child[i].len(),
            });
        }
        if i > 0 && !(0.0..=1.0).contains(&split[i]) {
            return Err(Error::InvalidSplit {
                index: i,
                value: split[i],
            });
        }
    }
    Ok(())
}

/// Log weights of the unary and ternary families of `V_i`. When only one
/// family is available it carries all the mass.
pub(crate) fn family_weights(grammar: &Grammar, i: usize, rho: f64) -> (f64, f64) {
    match (grammar.can_emit(i), grammar.can_expand(i)) {
        (true, true) => ln_pair(rho),
        (true, false) => (0.0, NEG_INF),
        (false, true) => (NEG_INF, 0.0),
        (false, false) => (NEG_INF, NEG_INF),
    }
}
