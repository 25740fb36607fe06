//! Exhaustive enumeration of every derivation of a small grammar, and a
//! randomized suite that checks the dynamic programs against it.
//!
//! Nothing here calls into the chart, decoding, or training code paths: the
//! reference values are plain reductions over the enumerated trees.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chart::{inside, Sentence};
use crate::decode::{best_parse, decode_length, max_tree_ratio, viterbi_tables};
use crate::error::{Error, Result};
use crate::grammar::{
    Emission, Grammar, GrammarPolicy, RuleTable, Scorer, TabularScorer, TrilinearScorer,
};
use crate::logspace::{log_sum_exp, NEG_INF};
use crate::support_tree::SupportTreeConfig;
use crate::train::{expected_counts, outside, ExpectedCounts};
use crate::tree::{AppliedRule, ParseNode, ParseTree};

pub const DEFAULT_CAP: u128 = 2_000_000;

/// Every derivation of `V_1` with reductions by yield and by length.
#[derive(Debug, Clone)]
pub struct Enumeration {
    pub trees: Vec<ParseTree>,
    /// Yield -> log of the summed probability of its trees.
    pub by_string: BTreeMap<Vec<usize>, f64>,
    /// Length -> (best tree log-probability, yield of the first best tree).
    pub by_length: BTreeMap<usize, (f64, Vec<usize>)>,
}

/// Number of derivations per nonterminal, saturating. `V_0` has exactly one.
pub fn count_trees(grammar: &Grammar) -> Vec<u128> {
    let m = grammar.node_count();
    let v = grammar.vocab_size() as u128;
    let mut count = vec![0u128; m];
    count[0] = 1;
    for a in by_interval_size(grammar) {
        let mut c = if grammar.can_emit(a) { v } else { 0 };
        for pair in grammar.child_set(a) {
            let sub = count[pair.left].saturating_mul(count[pair.right]);
            c = c.saturating_add(v.saturating_mul(sub));
        }
        count[a] = c;
    }
    count
}

/// Nonterminals `1..m` ordered so that every child precedes its parents.
fn by_interval_size(grammar: &Grammar) -> Vec<usize> {
    let tree = grammar.tree();
    let mut order: Vec<usize> = (1..grammar.node_count()).collect();
    order.sort_by_key(|&a| {
        let (lo, hi) = tree.subtree_interval(a);
        (hi - lo, a)
    });
    order
}

/// A derivation of one nonterminal: pre-order nodes with local indices.
#[derive(Clone)]
struct Sub {
    nodes: Vec<ParseNode>,
    log_prob: f64,
}

fn shifted(nodes: &[ParseNode], by: usize) -> impl Iterator<Item = ParseNode> + '_ {
    nodes.iter().map(move |n| ParseNode {
        left: n.left.map(|x| x + by),
        right: n.right.map(|x| x + by),
        ..*n
    })
}

pub fn enumerate_all(grammar: &Grammar, table: &RuleTable, cap: u128) -> Result<Enumeration> {
    if grammar.validate().is_degenerate() {
        return Err(Error::DegenerateGrammar);
    }
    let counts = count_trees(grammar);
    if counts[1] > cap {
        return Err(Error::CapExceeded {
            count: counts[1],
            cap,
        });
    }
    let m = grammar.node_count();
    let v = grammar.vocab_size();
    let mut subs: Vec<Vec<Sub>> = vec![Vec::new(); m];
    subs[0].push(Sub {
        nodes: vec![ParseNode {
            nonterminal: 0,
            token: None,
            left: None,
            right: None,
        }],
        log_prob: 0.0,
    });
    // Only nonterminals reachable from the start symbol are expanded.
    let mut reachable = vec![false; m];
    reachable[1] = true;
    let mut order = by_interval_size(grammar);
    for &a in order.iter().rev() {
        if reachable[a] {
            for pair in grammar.child_set(a) {
                reachable[pair.left] = true;
                reachable[pair.right] = true;
            }
        }
    }
    order.retain(|&a| reachable[a]);

    for a in order {
        let mut out = Vec::with_capacity(usize::try_from(counts[a]).unwrap_or(0));
        if grammar.can_emit(a) {
            for t in 0..v {
                out.push(Sub {
                    nodes: vec![ParseNode {
                        nonterminal: a,
                        token: Some(t),
                        left: None,
                        right: None,
                    }],
                    log_prob: table.unary_rule(a, t),
                });
            }
        }
        for (idx, pair) in grammar.child_set(a).iter().enumerate() {
            for t in 0..v {
                let rule = table.ternary_rule(a, idx, t);
                for l in &subs[pair.left] {
                    for r in &subs[pair.right] {
                        let mut nodes = Vec::with_capacity(1 + l.nodes.len() + r.nodes.len());
                        nodes.push(ParseNode {
                            nonterminal: a,
                            token: Some(t),
                            left: Some(1),
                            right: Some(1 + l.nodes.len()),
                        });
                        nodes.extend(shifted(&l.nodes, 1));
                        nodes.extend(shifted(&r.nodes, 1 + l.nodes.len()));
                        out.push(Sub {
                            nodes,
                            log_prob: rule + l.log_prob + r.log_prob,
                        });
                    }
                }
            }
        }
        subs[a] = out;
    }

    let trees: Vec<ParseTree> = std::mem::take(&mut subs[1])
        .into_iter()
        .map(|s| ParseTree::from_nodes(s.nodes, s.log_prob))
        .collect();

    let mut grouped: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    let mut by_length: BTreeMap<usize, (f64, Vec<usize>)> = BTreeMap::new();
    for t in &trees {
        grouped
            .entry(t.tokens.clone())
            .or_default()
            .push(t.log_prob);
        let entry = by_length
            .entry(t.len())
            .or_insert((NEG_INF, t.tokens.clone()));
        if t.log_prob > entry.0 {
            *entry = (t.log_prob, t.tokens.clone());
        }
    }
    let by_string = grouped
        .into_iter()
        .map(|(y, lps)| (y, log_sum_exp(&lps)))
        .collect();
    Ok(Enumeration {
        trees,
        by_string,
        by_length,
    })
}

impl Enumeration {
    /// `log P(y)`; `-inf` when `y` has no tree.
    pub fn loglik(&self, y: &[usize]) -> f64 {
        self.by_string.get(y).copied().unwrap_or(NEG_INF)
    }

    /// The first most probable tree with yield `y`.
    pub fn best_parse(&self, y: &[usize]) -> Option<&ParseTree> {
        let mut best: Option<&ParseTree> = None;
        for t in self.trees.iter().filter(|t| t.tokens == y) {
            if best.is_none_or(|b| t.log_prob > b.log_prob) {
                best = Some(t);
            }
        }
        best
    }

    /// Best tree log-probability among yields of length `len`.
    pub fn viterbi(&self, len: usize) -> f64 {
        self.by_length.get(&len).map_or(NEG_INF, |e| e.0)
    }

    /// Best tree log-probability among trees with yield `y`.
    pub fn max_tree(&self, y: &[usize]) -> f64 {
        self.best_parse(y).map_or(NEG_INF, |t| t.log_prob)
    }

    /// `Σ_tree P(tree)`.
    pub fn total_mass(&self) -> f64 {
        self.trees.iter().map(|t| t.log_prob.exp()).sum()
    }

    /// Posterior probability that some nonterminal covers `[i, j]`, for every
    /// span covered by at least one tree of `y`.
    pub fn span_posteriors(&self, y: &[usize]) -> BTreeMap<(usize, usize), f64> {
        let z = self.loglik(y);
        let mut out = BTreeMap::new();
        for t in self.trees.iter().filter(|t| t.tokens == y) {
            let p = (t.log_prob - z).exp();
            for (_, i, j) in t.node_spans() {
                *out.entry((i, j)).or_insert(0.0) += p;
            }
        }
        out
    }

    /// Posterior expected rule usage for `y`.
    pub fn expected_counts(&self, grammar: &Grammar, y: &[usize]) -> ExpectedCounts {
        let z = self.loglik(y);
        let mut c = ExpectedCounts::zeros(grammar);
        c.loglik = z;
        for t in self.trees.iter().filter(|t| t.tokens == y) {
            let p = (t.log_prob - z).exp();
            for rule in t.rules() {
                match rule {
                    AppliedRule::Emit { nonterminal, token } => {
                        c.unary[nonterminal] += p;
                        c.emit[nonterminal][token] += p;
                    }
                    AppliedRule::Expand {
                        nonterminal,
                        left,
                        token,
                        right,
                    } => {
                        let idx = grammar
                            .child_set(nonterminal)
                            .iter()
                            .position(|q| q.left == left && q.right == right)
                            .expect("enumerated rules are legal");
                        c.child[nonterminal][idx] += p;
                        c.ternary[nonterminal] += p;
                        c.emit[nonterminal][token] += p;
                    }
                }
            }
        }
        c
    }
}

/// Result of one checked property across the suite.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub property: &'static str,
    pub checks: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub failures: usize,
}

impl PropertyReport {
    fn new(property: &'static str, tolerance: f64) -> Self {
        Self {
            property,
            checks: 0,
            max_deviation: 0.0,
            tolerance,
            failures: 0,
        }
    }

    fn record(&mut self, deviation: f64) {
        self.checks += 1;
        let dev = if deviation.is_nan() {
            f64::INFINITY
        } else {
            deviation
        };
        self.max_deviation = self.max_deviation.max(dev);
        if dev > self.tolerance {
            self.failures += 1;
        }
    }

    fn check(&mut self, ok: bool) {
        self.record(if ok { 0.0 } else { f64::INFINITY });
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Difference of two log values where matching infinities count as equal.
fn log_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// One randomly drawn grammar, rule table and scorer.
#[derive(Debug, Clone)]
pub struct Instance {
    pub grammar: Grammar,
    pub scorer: Scorer,
    pub table: RuleTable,
}

/// Support trees with at most ten nodes.
const SMALL_CONFIGS: [(usize, usize, u32); 12] = [
    (1, 1, 0),
    (2, 1, 0),
    (3, 1, 0),
    (2, 2, 0),
    (4, 1, 0),
    (3, 2, 0),
    (1, 1, 1),
    (2, 1, 1),
    (1, 2, 1),
    (3, 1, 1),
    (1, 1, 2),
    (2, 1, 2),
];

/// Draws instance `index` of a seeded suite. Policies and scorers cycle with
/// the index so every combination is covered; degenerate grammars are
/// redrawn.
pub fn random_instance(seed: u64, index: usize) -> Result<Instance> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let policy = GrammarPolicy {
        closure: index % 2 == 1,
        emission: if (index / 2).is_multiple_of(2) {
            Emission::AllNodes
        } else {
            Emission::LeafOnly
        },
    };
    let trilinear = (index / 4) % 2 == 1;
    loop {
        let (src_len, upsample, depth) = SMALL_CONFIGS[rng.gen_range(0..SMALL_CONFIGS.len())];
        let vocab = rng.gen_range(1..=3);
        let grammar = Grammar::from_config(
            SupportTreeConfig::new(src_len, upsample, depth)?,
            vocab,
            policy,
        )?;
        if grammar.validate().is_degenerate() || count_trees(&grammar)[1] > 200_000 {
            continue;
        }
        let split: Vec<f64> = (0..grammar.node_count())
            .map(|_| rng.gen_range(0.1..0.9))
            .collect();
        let scorer = if trilinear {
            let hidden = rng.gen_range(1..=3);
            let mut s = TrilinearScorer::random(&grammar, hidden, &mut rng, 1.0)?;
            s.split = split;
            Scorer::Trilinear(s)
        } else {
            let s = TabularScorer::random(&grammar, &mut rng, 2.0);
            Scorer::Tabular(TabularScorer::new(
                &grammar,
                s.emit_logits().to_vec(),
                s.child_logits().to_vec(),
                split,
            )?)
        };
        let table = scorer.rule_table(&grammar)?;
        return Ok(Instance {
            grammar,
            scorer,
            table,
        });
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub instances: usize,
    pub seed: u64,
    pub max_len: usize,
    pub cap: u128,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 200,
            seed: 0,
            max_len: 6,
            cap: DEFAULT_CAP,
        }
    }
}

pub const TOL: f64 = 1e-9;

/// Runs the equivalence suite and reports the worst deviation per property.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<PropertyReport>> {
    let mut inside_r = PropertyReport::new("inside_vs_tree_sum", TOL);
    let mut norm_r = PropertyReport::new("tree_mass_sums_to_one", TOL);
    let mut count_r = PropertyReport::new("enumeration_count", 0.0);
    let mut viterbi_r = PropertyReport::new("viterbi_vs_max_by_length", TOL);
    let mut decode_r = PropertyReport::new("decode_length_attains_max", TOL);
    let mut best_r = PropertyReport::new("best_parse_vs_argmax", TOL);
    let mut ratio_r = PropertyReport::new("max_tree_ratio_vs_oracle", TOL);
    let mut outside_r = PropertyReport::new("outside_span_posteriors", TOL);
    let mut counts_r = PropertyReport::new("expected_counts_vs_posterior", TOL);

    for index in 0..cfg.instances {
        let inst = random_instance(cfg.seed, index)?;
        let (g, t) = (&inst.grammar, &inst.table);
        let e = enumerate_all(g, t, cfg.cap)?;
        count_r.record((count_trees(g)[1] as f64 - e.trees.len() as f64).abs());
        norm_r.record((e.total_mass() - 1.0).abs());

        let vt = viterbi_tables(g, t, cfg.max_len)?;
        for len in 1..=cfg.max_len {
            viterbi_r.record(log_gap(vt.max_p(1, len), e.viterbi(len)));
            if vt.max_p(1, len) > NEG_INF {
                let (tokens, tree) = decode_length(&vt, len)?;
                decode_r.record(log_gap(e.max_tree(&tokens), e.viterbi(len)));
                decode_r.record(log_gap(tree.score(g, t)?, vt.max_p(1, len)));
            }
        }

        // Random strings, most of them underivable.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(index as u64));
        for _ in 0..20 {
            let n = rng.gen_range(1..=cfg.max_len);
            let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..g.vocab_size())).collect();
            let s = Sentence::new(y.clone(), g.vocab_size())?;
            inside_r.record(log_gap(inside(g, t, &s)?.root_loglik(), e.loglik(&y)));
        }

        for (y, &brute) in e.by_string.iter().filter(|(y, _)| y.len() <= cfg.max_len) {
            let s = Sentence::new(y.clone(), g.vocab_size())?;
            let chart = inside(g, t, &s)?;
            inside_r.record(log_gap(chart.root_loglik(), brute));
            if brute == NEG_INF {
                continue;
            }

            let tree = best_parse(g, t, &s)?;
            let oracle = e.best_parse(y).expect("derivable string has a tree");
            best_r.record(log_gap(tree.log_prob, oracle.log_prob));
            best_r.record(log_gap(tree.score(g, t)?, tree.log_prob));
            best_r.check(tree.tokens == *y && tree.validate(g).is_ok());
            if unique_best(&e, y) {
                best_r.check(tree.nodes == oracle.nodes);
            }
            let ratio = max_tree_ratio(g, t, &s)?;
            ratio_r.check(ratio > 0.0 && ratio <= 1.0 + 1e-12);
            ratio_r.record((ratio - (oracle.log_prob - brute).exp()).abs());

            let beta = outside(g, t, &s, &chart)?;
            let posts = e.span_posteriors(y);
            for (i, j) in (0..y.len()).flat_map(|i| (i..y.len()).map(move |j| (i, j))) {
                let p = posts.get(&(i, j)).copied().unwrap_or(0.0);
                let cells: Vec<f64> = (1..g.node_count())
                    .map(|a| chart.value(a, i, j) + beta.value(a, i, j))
                    .collect();
                let dp = (log_sum_exp(&cells) - chart.root_loglik()).exp();
                outside_r.record((dp - p).abs());
            }

            let dp = expected_counts(g, t, &s)?;
            let bf = e.expected_counts(g, y);
            let pairs = dp
                .emit
                .iter()
                .flatten()
                .zip(bf.emit.iter().flatten())
                .chain(dp.child.iter().flatten().zip(bf.child.iter().flatten()))
                .chain(dp.unary.iter().zip(&bf.unary))
                .chain(dp.ternary.iter().zip(&bf.ternary));
            let worst = pairs.map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            counts_r.record(worst);
        }
    }
    Ok(vec![
        inside_r, norm_r, count_r, viterbi_r, decode_r, best_r, ratio_r, outside_r, counts_r,
    ])
}

/// True when the best tree of `y` beats every other tree by more than 1e-12.
fn unique_best(e: &Enumeration, y: &[usize]) -> bool {
    let mut lps: Vec<f64> = e
        .trees
        .iter()
        .filter(|t| t.tokens == y)
        .map(|t| t.log_prob)
        .collect();
    lps.sort_by(|a, b| b.total_cmp(a));
    lps.len() < 2 || lps[0] - lps[1] > 1e-12
}
