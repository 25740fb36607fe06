//! Outside chart, posterior rule counts, gradients, and training loops.

use serde::{Deserialize, Serialize};

use crate::chart::{check_inputs, inside, left_value, InsideChart, Sentence, SpanStore};
use crate::error::{Error, Result};
use crate::grammar::{Grammar, ParamBlock, RuleTable, Scorer, TabularScorer, TrilinearScorer};
use crate::logspace::{log_add_exp, NEG_INF};

/// Additive smoothing applied to expected counts in the M-step.
pub const DEFAULT_SMOOTHING: f64 = 1e-6;

/// Outside values `log β^a_{i,j}` over the same regions as the inside chart.
#[derive(Debug, Clone)]
pub struct OutsideChart {
    store: SpanStore,
}

impl OutsideChart {
    pub fn value(&self, a: usize, i: usize, j: usize) -> f64 {
        self.store.get(a, i, j)
    }
}

#[allow(clippy::needless_range_loop)]
pub fn outside(
    grammar: &Grammar,
    table: &RuleTable,
    y: &Sentence,
    chart: &InsideChart,
) -> Result<OutsideChart> {
    check_inputs(grammar, table, y)?;
    if chart.root_loglik() == NEG_INF {
        return Err(Error::Underivable);
    }
    let m = grammar.node_count();
    let d = grammar.prefix_width();
    let n = y.len();
    let tokens = y.tokens();
    let ins = &chart.store;
    let mut out = SpanStore::new(m, n, d);
    out.set(1, 0, n - 1, 0.0);

    // Both children of a cell cover strictly shorter spans, so parents are
    // finished before any of their children are read.
    for len in (2..=n).rev() {
        for i in out.starts(len) {
            let j = i + len - 1;
            for a in 1..m {
                let beta = out.get(a, i, j);
                let ternary = table.log_ternary(a);
                if beta == NEG_INF || ternary == NEG_INF || ins.get(a, i, j) == NEG_INF {
                    continue;
                }
                for k in i..=(j - 1).min(i + d - 1) {
                    let head = beta + ternary + table.emit(a)[tokens[k]];
                    if head == NEG_INF {
                        continue;
                    }
                    for (pair, &w) in grammar.child_set(a).iter().zip(table.child(a)) {
                        if w == NEG_INF {
                            continue;
                        }
                        let left = left_value(ins, pair.left, i, k);
                        let right = ins.get(pair.right, k + 1, j);
                        if left == NEG_INF || right == NEG_INF {
                            continue;
                        }
                        let r = out.get(pair.right, k + 1, j);
                        out.set(pair.right, k + 1, j, log_add_exp(r, head + w + left));
                        if pair.left != 0 {
                            let l = out.get(pair.left, i, k - 1);
                            out.set(pair.left, i, k - 1, log_add_exp(l, head + w + right));
                        }
                    }
                }
            }
        }
    }
    Ok(OutsideChart { store: out })
}

/// Posterior expected rule usage, summed over sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCounts {
    /// `emit[i][a]`: times `V_i` emits token `a`, by either rule family.
    pub emit: Vec<Vec<f64>>,
    /// `child[i][idx]`: uses of the `idx`-th pair of `child_set(i)`.
    pub child: Vec<Vec<f64>>,
    /// Unary rule uses per nonterminal.
    pub unary: Vec<f64>,
    /// Ternary rule uses per nonterminal.
    pub ternary: Vec<f64>,
    /// Summed log-likelihood of the sentences counted.
    pub loglik: f64,
}

impl ExpectedCounts {
    pub fn zeros(grammar: &Grammar) -> Self {
        let m = grammar.node_count();
        Self {
            emit: (0..m)
                .map(|i| {
                    if i == 0 {
                        Vec::new()
                    } else {
                        vec![0.0; grammar.vocab_size()]
                    }
                })
                .collect(),
            child: (0..m)
                .map(|i| vec![0.0; grammar.child_set(i).len()])
                .collect(),
            unary: vec![0.0; m],
            ternary: vec![0.0; m],
            loglik: 0.0,
        }
    }

    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.emit.iter_mut().zip(&other.emit) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.child.iter_mut().zip(&other.child) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.unary
            .iter_mut()
            .zip(&other.unary)
            .for_each(|(x, y)| *x += y);
        self.ternary
            .iter_mut()
            .zip(&other.ternary)
            .for_each(|(x, y)| *x += y);
        self.loglik += other.loglik;
    }

    /// Expected number of emitted tokens; equals the sentence length.
    pub fn total_emitted(&self) -> f64 {
        self.emit.iter().flatten().sum()
    }
}

#[allow(clippy::needless_range_loop)]
pub fn expected_counts(
    grammar: &Grammar,
    table: &RuleTable,
    y: &Sentence,
) -> Result<ExpectedCounts> {
    let chart = inside(grammar, table, y)?;
    let z = chart.root_loglik();
    if z == NEG_INF {
        return Err(Error::Underivable);
    }
    let beta = outside(grammar, table, y, &chart)?;
    let ins = &chart.store;
    let out = &beta.store;
    let m = grammar.node_count();
    let d = grammar.prefix_width();
    let n = y.len();
    let tokens = y.tokens();
    let mut counts = ExpectedCounts::zeros(grammar);
    counts.loglik = z;

    for len in 1..=n {
        for i in ins.starts(len) {
            let j = i + len - 1;
            for a in 1..m {
                let b = out.get(a, i, j);
                if b == NEG_INF || ins.get(a, i, j) == NEG_INF {
                    continue;
                }
                if len == 1 {
                    let c = (b + table.unary_rule(a, tokens[i]) - z).exp();
                    counts.unary[a] += c;
                    counts.emit[a][tokens[i]] += c;
                    continue;
                }
                let ternary = table.log_ternary(a);
                for k in i..=(j - 1).min(i + d - 1) {
                    let head = b + ternary + table.emit(a)[tokens[k]] - z;
                    if head == NEG_INF {
                        continue;
                    }
                    for (idx, (pair, &w)) in
                        grammar.child_set(a).iter().zip(table.child(a)).enumerate()
                    {
                        let v = head
                            + w
                            + left_value(ins, pair.left, i, k)
                            + ins.get(pair.right, k + 1, j);
                        if v == NEG_INF {
                            continue;
                        }
                        let c = v.exp();
                        counts.child[a][idx] += c;
                        counts.ternary[a] += c;
                        counts.emit[a][tokens[k]] += c;
                    }
                }
            }
        }
    }
    Ok(counts)
}

/// Counts summed over a corpus in corpus order.
pub fn corpus_counts(
    grammar: &Grammar,
    table: &RuleTable,
    corpus: &[Sentence],
) -> Result<ExpectedCounts> {
    let mut total = ExpectedCounts::zeros(grammar);
    for (index, y) in corpus.iter().enumerate() {
        let c = expected_counts(grammar, table, y).map_err(|e| match e {
            Error::Underivable => Error::UnderivableInCorpus { index },
            e => e,
        })?;
        total.add(&c);
    }
    Ok(total)
}

/// Summed log-likelihood of a corpus; `-inf` if any sentence is underivable.
pub fn corpus_loglik(grammar: &Grammar, scorer: &Scorer, corpus: &[Sentence]) -> Result<f64> {
    let table = scorer.rule_table(grammar)?;
    let mut total = 0.0;
    for y in corpus {
        total += inside(grammar, &table, y)?.root_loglik();
    }
    Ok(total)
}

/// Gradients of the per-rule logits of `V_i` given counts: observed minus
/// expected under the current distribution.
fn logit_grads(counts: &[f64], logprob: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    counts
        .iter()
        .zip(logprob)
        .map(|(&c, &lp)| {
            if lp == NEG_INF {
                0.0
            } else {
                c - lp.exp() * total
            }
        })
        .collect()
}

/// Gradient of the split logit: `U (1 - rho) - T rho` where both families
/// exist, zero otherwise.
fn split_grads(grammar: &Grammar, split: &[f64], counts: &ExpectedCounts) -> Vec<f64> {
    (0..grammar.node_count())
        .map(|i| {
            if i > 0 && grammar.can_emit(i) && grammar.can_expand(i) {
                counts.unary[i] * (1.0 - split[i]) - counts.ternary[i] * split[i]
            } else {
                0.0
            }
        })
        .collect()
}

/// Corpus log-likelihood and its gradient, laid out as [`Scorer::blocks`].
pub fn loglik_gradient(
    grammar: &Grammar,
    scorer: &Scorer,
    corpus: &[Sentence],
) -> Result<(f64, Vec<ParamBlock>)> {
    let table = scorer.rule_table(grammar)?;
    let counts = corpus_counts(grammar, &table, corpus)?;
    let m = grammar.node_count();
    let emit_g: Vec<Vec<f64>> = (0..m)
        .map(|i| logit_grads(&counts.emit[i], table.emit(i)))
        .collect();
    let child_g: Vec<Vec<f64>> = (0..m)
        .map(|i| logit_grads(&counts.child[i], table.child(i)))
        .collect();
    let split = ParamBlock {
        name: "split",
        values: split_grads(grammar, scorer.split(), &counts),
    };
    let blocks = match scorer {
        Scorer::Tabular(_) => vec![
            ParamBlock {
                name: "emit",
                values: emit_g.concat(),
            },
            ParamBlock {
                name: "child",
                values: child_g.concat(),
            },
            split,
        ],
        Scorer::Trilinear(s) => {
            let mut blocks = trilinear_backward(grammar, s, &emit_g, &child_g);
            blocks.push(split);
            blocks
        }
    };
    Ok((counts.loglik, blocks))
}

/// Chain rule from emission logits and child scores back to `h`, `W_o`,
/// `W_q`, `W_l`, `W_r`. Each child score is differentiated independently.
fn trilinear_backward(
    grammar: &Grammar,
    s: &TrilinearScorer,
    emit_g: &[Vec<f64>],
    child_g: &[Vec<f64>],
) -> Vec<ParamBlock> {
    let hd = s.hidden();
    let m = grammar.node_count();
    let v = grammar.vocab_size();
    let (q, l, r) = s.projections();
    let row = |x: &[f64], i: usize| -> Vec<f64> { x[i * hd..(i + 1) * hd].to_vec() };
    let mut g_h = vec![0.0; m * hd];
    let mut g_wo = vec![0.0; v * hd];
    // Gradients with respect to the projected vectors.
    let mut g_q = vec![0.0; m * hd];
    let mut g_l = vec![0.0; m * hd];
    let mut g_r = vec![0.0; m * hd];

    for i in 1..m {
        let h_i = s.embedding(i);
        for (a, &g) in emit_g[i].iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for c in 0..hd {
                g_wo[a * hd + c] += g * h_i[c];
                g_h[i * hd + c] += g * s.w_o[a * hd + c];
            }
        }
        let qi = row(&q, i);
        for (pair, &g) in grammar.child_set(i).iter().zip(&child_g[i]) {
            if g == 0.0 {
                continue;
            }
            let lj = row(&l, pair.left);
            let rk = row(&r, pair.right);
            for c in 0..hd {
                g_q[i * hd + c] += g * (lj[c] + rk[c]);
                g_l[pair.left * hd + c] += g * (qi[c] + rk[c]);
                g_r[pair.right * hd + c] += g * (qi[c] + lj[c]);
            }
        }
    }

    // q_i = W h_i: dW += g h_i^T, dh_i += W^T g.
    let back = |w: &[f64], g_proj: &[f64], g_h: &mut [f64]| -> Vec<f64> {
        let mut g_w = vec![0.0; hd * hd];
        for i in 0..m {
            let g = &g_proj[i * hd..(i + 1) * hd];
            let h_i = s.embedding(i);
            for rr in 0..hd {
                if g[rr] == 0.0 {
                    continue;
                }
                for c in 0..hd {
                    g_w[rr * hd + c] += g[rr] * h_i[c];
                    g_h[i * hd + c] += g[rr] * w[rr * hd + c];
                }
            }
        }
        g_w
    };
    let g_wq = back(&s.w_q, &g_q, &mut g_h);
    let g_wl = back(&s.w_l, &g_l, &mut g_h);
    let g_wr = back(&s.w_r, &g_r, &mut g_h);

    vec![
        ParamBlock {
            name: "h",
            values: g_h,
        },
        ParamBlock {
            name: "w_o",
            values: g_wo,
        },
        ParamBlock {
            name: "w_q",
            values: g_wq,
        },
        ParamBlock {
            name: "w_l",
            values: g_wl,
        },
        ParamBlock {
            name: "w_r",
            values: g_wr,
        },
    ]
}

/// One EM iteration for the tabular scorer. Returns the new scorer and the
/// corpus log-likelihood before the step.
pub fn em_step(
    grammar: &Grammar,
    scorer: &TabularScorer,
    corpus: &[Sentence],
    smoothing: f64,
) -> Result<(TabularScorer, f64)> {
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "smoothing must be positive and finite, got {smoothing}"
        )));
    }
    let table = scorer.rule_table(grammar)?;
    let counts = corpus_counts(grammar, &table, corpus)?;
    let relog = |row: &[f64]| -> Vec<f64> { row.iter().map(|&c| (c + smoothing).ln()).collect() };
    let emit = counts.emit.iter().map(|row| relog(row)).collect();
    let child = counts.child.iter().map(|row| relog(row)).collect();
    let mut split = scorer.split().to_vec();
    for (i, rho) in split.iter_mut().enumerate().skip(1) {
        if grammar.can_emit(i) && grammar.can_expand(i) {
            *rho = (counts.unary[i] + smoothing)
                / (counts.unary[i] + counts.ternary[i] + 2.0 * smoothing);
        }
    }
    Ok((
        TabularScorer::new(grammar, emit, child, split)?,
        counts.loglik,
    ))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    /// Exact expectation-maximization; tabular scorer only.
    #[default]
    Em,
    /// Full-batch gradient ascent on the mean per-sentence log-likelihood.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub algo: Algo,
    pub iters: usize,
    pub lr: f64,
    pub smoothing: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            algo: Algo::Em,
            iters: 20,
            lr: 1e-2,
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub scorer: Scorer,
    /// Corpus log-likelihood before the first step and after every step.
    pub trace: Vec<f64>,
}

pub fn train(
    grammar: &Grammar,
    scorer: Scorer,
    corpus: &[Sentence],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if opts.algo == Algo::Em && !matches!(scorer, Scorer::Tabular(_)) {
        return Err(Error::Unsupported("EM requires the tabular scorer".into()));
    }
    if opts.algo == Algo::Sgd && !(opts.lr.is_finite() && opts.lr > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be positive, got {}",
            opts.lr
        )));
    }
    let mut scorer = scorer;
    let mut trace = Vec::with_capacity(opts.iters + 1);
    for _ in 0..opts.iters {
        match (&scorer, opts.algo) {
            (Scorer::Tabular(s), Algo::Em) => {
                let (next, before) = em_step(grammar, s, corpus, opts.smoothing)?;
                trace.push(before);
                scorer = Scorer::Tabular(next);
            }
            (_, Algo::Sgd) => {
                let (before, grads) = loglik_gradient(grammar, &scorer, corpus)?;
                trace.push(before);
                let scale = opts.lr / corpus.len().max(1) as f64;
                let mut blocks = scorer.blocks();
                for (b, g) in blocks.iter_mut().zip(&grads) {
                    b.values
                        .iter_mut()
                        .zip(&g.values)
                        .for_each(|(x, dx)| *x += scale * dx);
                }
                scorer = scorer.with_blocks(&blocks)?;
            }
            (Scorer::Trilinear(_), Algo::Em) => unreachable!("rejected above"),
        }
    }
    trace.push(corpus_loglik(grammar, &scorer, corpus)?);
    Ok(TrainOutcome { scorer, trace })
}
