//! Parameterizations that turn free parameters into a [`RuleTable`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Grammar, RuleTable};

/// Unary share of the probability mass for nonterminals that have both rule
/// families, before any training.
pub const DEFAULT_SPLIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Tabular,
    Trilinear,
}

impl std::fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Tabular => "tabular",
            Self::Trilinear => "trilinear",
        })
    }
}

/// A named flat view of one group of parameters. Split weights are exposed as
/// logits so that gradient steps stay inside `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub values: Vec<f64>,
}

/// Direct logits for every rule, one parameter per emission and child pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularScorer {
    vocab_size: usize,
    emit_logits: Vec<Vec<f64>>,
    child_logits: Vec<Vec<f64>>,
    split: Vec<f64>,
}

impl TabularScorer {
    /// `emit_logits` and `child_logits` have one row per nonterminal with row 0
    /// empty; `split` has one entry per nonterminal.
    pub fn new(
        grammar: &Grammar,
        emit_logits: Vec<Vec<f64>>,
        child_logits: Vec<Vec<f64>>,
        split: Vec<f64>,
    ) -> Result<Self> {
        let s = Self {
            vocab_size: grammar.vocab_size(),
            emit_logits,
            child_logits,
            split,
        };
        s.check(grammar)?;
        Ok(s)
    }

    /// All logits zero and the default split.
    pub fn uniform(grammar: &Grammar) -> Self {
        let m = grammar.node_count();
        Self {
            vocab_size: grammar.vocab_size(),
            emit_logits: (0..m)
                .map(|i| {
                    if i == 0 {
                        Vec::new()
                    } else {
                        vec![0.0; grammar.vocab_size()]
                    }
                })
                .collect(),
            child_logits: (0..m)
                .map(|i| vec![0.0; grammar.child_set(i).len()])
                .collect(),
            split: vec![DEFAULT_SPLIT; m],
        }
    }

    /// Logits drawn uniformly from `[-scale, scale]`, default split.
    pub fn random<R: Rng>(grammar: &Grammar, rng: &mut R, scale: f64) -> Self {
        let mut s = Self::uniform(grammar);
        for row in s.emit_logits.iter_mut().chain(s.child_logits.iter_mut()) {
            for v in row.iter_mut() {
                *v = rng.gen_range(-scale..=scale);
            }
        }
        s
    }

    fn check(&self, grammar: &Grammar) -> Result<()> {
        let m = grammar.node_count();
        if self.vocab_size != grammar.vocab_size() {
            return Err(Error::ShapeMismatch {
                what: "vocabulary",
                expected: grammar.vocab_size(),
                actual: self.vocab_size,
            });
        }
        for (what, len) in [
            ("emission rows", self.emit_logits.len()),
            ("child rows", self.child_logits.len()),
            ("split weights", self.split.len()),
        ] {
            if len != m {
                return Err(Error::ShapeMismatch {
                    what,
                    expected: m,
                    actual: len,
                });
            }
        }
        if self
            .emit_logits
            .iter()
            .chain(self.child_logits.iter())
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("tabular logits"));
        }
        check_split(&self.split)
    }

    pub fn emit_logits(&self) -> &[Vec<f64>] {
        &self.emit_logits
    }

    pub fn child_logits(&self) -> &[Vec<f64>] {
        &self.child_logits
    }

    pub fn split(&self) -> &[f64] {
        &self.split
    }

    pub fn rule_table(&self, grammar: &Grammar) -> Result<RuleTable> {
        self.check(grammar)?;
        RuleTable::from_logits(grammar, &self.emit_logits, &self.child_logits, &self.split)
    }
}

/// Emission logits `W_o h_i` and child scores
/// `q_i·q_j + q_i·q_k + q_j·q_k` with `q_i = W_q h_i`, `q_j = W_l h_j`,
/// `q_k = W_r h_k`, where `h_i` is a learned embedding per nonterminal.
///
/// Matrices are row-major: `w_o` is `vocab × hidden`, the projections are
/// `hidden × hidden`, and `h` is `nodes × hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrilinearScorer {
    hidden: usize,
    node_count: usize,
    vocab_size: usize,
    pub(crate) h: Vec<f64>,
    pub(crate) w_o: Vec<f64>,
    pub(crate) w_q: Vec<f64>,
    pub(crate) w_l: Vec<f64>,
    pub(crate) w_r: Vec<f64>,
    pub(crate) split: Vec<f64>,
}

impl TrilinearScorer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grammar: &Grammar,
        hidden: usize,
        h: Vec<f64>,
        w_o: Vec<f64>,
        w_q: Vec<f64>,
        w_l: Vec<f64>,
        w_r: Vec<f64>,
        split: Vec<f64>,
    ) -> Result<Self> {
        let s = Self {
            hidden,
            node_count: grammar.node_count(),
            vocab_size: grammar.vocab_size(),
            h,
            w_o,
            w_q,
            w_l,
            w_r,
            split,
        };
        s.check(grammar)?;
        Ok(s)
    }

    /// Every entry drawn uniformly from `[-scale, scale]`, default split.
    pub fn random<R: Rng>(
        grammar: &Grammar,
        hidden: usize,
        rng: &mut R,
        scale: f64,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::InvalidConfig(
                "hidden dimension must be at least 1".into(),
            ));
        }
        let m = grammar.node_count();
        let v = grammar.vocab_size();
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-scale..=scale)).collect() };
        let h = draw(m * hidden);
        let w_o = draw(v * hidden);
        let w_q = draw(hidden * hidden);
        let w_l = draw(hidden * hidden);
        let w_r = draw(hidden * hidden);
        Self::new(
            grammar,
            hidden,
            h,
            w_o,
            w_q,
            w_l,
            w_r,
            vec![DEFAULT_SPLIT; m],
        )
    }

    fn check(&self, grammar: &Grammar) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidConfig(
                "hidden dimension must be at least 1".into(),
            ));
        }
        let m = grammar.node_count();
        let v = grammar.vocab_size();
        let hd = self.hidden;
        if self.node_count != m || self.vocab_size != v {
            return Err(Error::ShapeMismatch {
                what: "grammar",
                expected: m,
                actual: self.node_count,
            });
        }
        for (what, expected, actual) in [
            ("h", m * hd, self.h.len()),
            ("w_o", v * hd, self.w_o.len()),
            ("w_q", hd * hd, self.w_q.len()),
            ("w_l", hd * hd, self.w_l.len()),
            ("w_r", hd * hd, self.w_r.len()),
            ("split weights", m, self.split.len()),
        ] {
            if expected != actual {
                return Err(Error::ShapeMismatch {
                    what,
                    expected,
                    actual,
                });
            }
        }
        if [&self.h, &self.w_o, &self.w_q, &self.w_l, &self.w_r]
            .iter()
            .any(|b| b.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::NonFinite("trilinear parameters"));
        }
        check_split(&self.split)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn split(&self) -> &[f64] {
        &self.split
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.h[i * self.hidden..(i + 1) * self.hidden]
    }

    /// `(q, l, r)`: every node's embedding projected by `W_q`, `W_l`, `W_r`.
    pub(crate) fn projections(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let mut q = vec![0.0; self.node_count * hd];
        let mut l = vec![0.0; self.node_count * hd];
        let mut r = vec![0.0; self.node_count * hd];
        for i in 0..self.node_count {
            let h = self.embedding(i);
            mat_vec(&self.w_q, h, &mut q[i * hd..(i + 1) * hd]);
            mat_vec(&self.w_l, h, &mut l[i * hd..(i + 1) * hd]);
            mat_vec(&self.w_r, h, &mut r[i * hd..(i + 1) * hd]);
        }
        (q, l, r)
    }

    pub fn rule_table(&self, grammar: &Grammar) -> Result<RuleTable> {
        self.check(grammar)?;
        let m = self.node_count;
        let hd = self.hidden;
        let (q, l, r) = self.projections();
        let mut emit = vec![Vec::new(); m];
        let mut child = vec![Vec::new(); m];
        for i in 1..m {
            let mut row = vec![0.0; self.vocab_size];
            mat_vec(&self.w_o, self.embedding(i), &mut row);
            emit[i] = row;
            let qi = &q[i * hd..(i + 1) * hd];
            child[i] = grammar
                .child_set(i)
                .iter()
                .map(|p| {
                    let lj = &l[p.left * hd..(p.left + 1) * hd];
                    let rk = &r[p.right * hd..(p.right + 1) * hd];
                    dot(qi, lj) + dot(qi, rk) + dot(lj, rk)
                })
                .collect();
        }
        RuleTable::from_logits(grammar, &emit, &child, &self.split)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = W x` for a row-major `W` with `out.len()` rows.
pub(crate) fn mat_vec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (row, o) in out.iter_mut().enumerate() {
        *o = dot(&w[row * cols..(row + 1) * cols], x);
    }
}

fn check_split(split: &[f64]) -> Result<()> {
    for (index, &value) in split.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidSplit { index, value });
        }
    }
    Ok(())
}

fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Either scorer behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    Tabular(TabularScorer),
    Trilinear(TrilinearScorer),
}

impl Scorer {
    pub fn kind(&self) -> ScorerKind {
        match self {
            Self::Tabular(_) => ScorerKind::Tabular,
            Self::Trilinear(_) => ScorerKind::Trilinear,
        }
    }

    pub fn split(&self) -> &[f64] {
        match self {
            Self::Tabular(s) => s.split(),
            Self::Trilinear(s) => s.split(),
        }
    }

    pub fn hidden(&self) -> Option<usize> {
        match self {
            Self::Tabular(_) => None,
            Self::Trilinear(s) => Some(s.hidden()),
        }
    }

    pub fn rule_table(&self, grammar: &Grammar) -> Result<RuleTable> {
        match self {
            Self::Tabular(s) => s.rule_table(grammar),
            Self::Trilinear(s) => s.rule_table(grammar),
        }
    }

    /// Flat parameter blocks. Tabular: `emit`, `child`, `split`. Trilinear:
    /// `h`, `w_o`, `w_q`, `w_l`, `w_r`, `split`. Rows are concatenated in
    /// nonterminal order and child entries in child-set order.
    pub fn blocks(&self) -> Vec<ParamBlock> {
        let split = ParamBlock {
            name: "split",
            values: self.split().iter().map(|&p| logit(p)).collect(),
        };
        match self {
            Self::Tabular(s) => vec![
                ParamBlock {
                    name: "emit",
                    values: s.emit_logits.concat(),
                },
                ParamBlock {
                    name: "child",
                    values: s.child_logits.concat(),
                },
                split,
            ],
            Self::Trilinear(s) => vec![
                ParamBlock {
                    name: "h",
                    values: s.h.clone(),
                },
                ParamBlock {
                    name: "w_o",
                    values: s.w_o.clone(),
                },
                ParamBlock {
                    name: "w_q",
                    values: s.w_q.clone(),
                },
                ParamBlock {
                    name: "w_l",
                    values: s.w_l.clone(),
                },
                ParamBlock {
                    name: "w_r",
                    values: s.w_r.clone(),
                },
                split,
            ],
        }
    }

    /// Rebuilds a scorer of the same shape from blocks laid out as
    /// [`Scorer::blocks`] returns them.
    pub fn with_blocks(&self, blocks: &[ParamBlock]) -> Result<Self> {
        let expected = self.blocks();
        if blocks.len() != expected.len() {
            return Err(Error::ShapeMismatch {
                what: "parameter blocks",
                expected: expected.len(),
                actual: blocks.len(),
            });
        }
        for (b, e) in blocks.iter().zip(&expected) {
            if b.name != e.name || b.values.len() != e.values.len() {
                return Err(Error::ShapeMismatch {
                    what: e.name,
                    expected: e.values.len(),
                    actual: b.values.len(),
                });
            }
        }
        let split: Vec<f64> = blocks
            .last()
            .expect("split block")
            .values
            .iter()
            .map(|&x| sigmoid(x))
            .collect();
        Ok(match self {
            Self::Tabular(s) => {
                let reshape = |flat: &[f64], rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
                    let mut at = 0;
                    rows.iter()
                        .map(|r| {
                            let row = flat[at..at + r.len()].to_vec();
                            at += r.len();
                            row
                        })
                        .collect()
                };
                Self::Tabular(TabularScorer {
                    vocab_size: s.vocab_size,
                    emit_logits: reshape(&blocks[0].values, &s.emit_logits),
                    child_logits: reshape(&blocks[1].values, &s.child_logits),
                    split,
                })
            }
            Self::Trilinear(s) => Self::Trilinear(TrilinearScorer {
                h: blocks[0].values.clone(),
                w_o: blocks[1].values.clone(),
                w_q: blocks[2].values.clone(),
                w_l: blocks[3].values.clone(),
                w_r: blocks[4].values.clone(),
                split,
                ..s.clone()
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{Emission, GrammarPolicy};
    use crate::logspace::log_softmax;
    use crate::support_tree::SupportTreeConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g(closure: bool) -> Grammar {
        Grammar::from_config(
            SupportTreeConfig::new(1, 1, 1).unwrap(),
            3,
            GrammarPolicy {
                closure,
                emission: Emission::AllNodes,
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_embeddings_give_uniform_distributions() {
        let grammar = g(false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = TrilinearScorer::random(&grammar, 2, &mut rng, 1.0).unwrap();
        s.h.iter_mut().for_each(|v| *v = 0.0);
        let t = s.rule_table(&grammar).unwrap();
        for i in 1..grammar.node_count() {
            for &v in t.emit(i) {
                assert!((v - (1.0f64 / 3.0).ln()).abs() < 1e-15);
            }
        }
        assert!((t.child(1)[0] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn singleton_child_set_is_certain() {
        let grammar = g(true);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = TrilinearScorer::random(&grammar, 3, &mut rng, 2.0).unwrap();
        assert_eq!(s.rule_table(&grammar).unwrap().child(1), &[0.0]);
    }

    /// Direct evaluation of the trilinear formula with explicit index loops.
    #[test]
    fn trilinear_matches_naive_evaluation() {
        let grammar = g(false);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let hd = 3;
        let s = TrilinearScorer::random(&grammar, hd, &mut rng, 1.0).unwrap();
        let t = s.rule_table(&grammar).unwrap();
        let proj = |w: &[f64], i: usize| -> Vec<f64> {
            (0..hd)
                .map(|r| (0..hd).map(|c| w[r * hd + c] * s.h[i * hd + c]).sum())
                .collect()
        };
        for i in 1..grammar.node_count() {
            let logits: Vec<f64> = (0..3)
                .map(|a| (0..hd).map(|c| s.w_o[a * hd + c] * s.h[i * hd + c]).sum())
                .collect();
            for (x, y) in log_softmax(&logits).iter().zip(t.emit(i)) {
                assert!((x - y).abs() < 1e-12);
            }
            let qi = proj(&s.w_q, i);
            let scores: Vec<f64> = grammar
                .child_set(i)
                .iter()
                .map(|p| {
                    let qj = proj(&s.w_l, p.left);
                    let qk = proj(&s.w_r, p.right);
                    let mut v = 0.0;
                    for c in 0..hd {
                        v += qi[c] * qj[c] + qi[c] * qk[c] + qj[c] * qk[c];
                    }
                    v
                })
                .collect();
            for (x, y) in log_softmax(&scores).iter().zip(t.child(i)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blocks_round_trip() {
        let grammar = g(false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for scorer in [
            Scorer::Tabular(TabularScorer::random(&grammar, &mut rng, 1.0)),
            Scorer::Trilinear(TrilinearScorer::random(&grammar, 2, &mut rng, 1.0).unwrap()),
        ] {
            let rebuilt = scorer.with_blocks(&scorer.blocks()).unwrap();
            let a = scorer.rule_table(&grammar).unwrap();
            let b = rebuilt.rule_table(&grammar).unwrap();
            for i in 1..grammar.node_count() {
                assert_eq!(a.emit(i), b.emit(i));
                assert_eq!(a.child(i), b.child(i));
                assert!((a.log_unary(i) - b.log_unary(i)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_non_finite_logits() {
        let grammar = g(false);
        let mut s = TabularScorer::uniform(&grammar);
        s.emit_logits[1][0] = f64::NAN;
        assert!(matches!(s.rule_table(&grammar), Err(Error::NonFinite(_))));
    }
}
