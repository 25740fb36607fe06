use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tree::{ParseTree, TreeBuilder};

use super::{Grammar, RuleTable};

/// Ancestral sample from `V_1` with a seeded generator.
pub fn sample(grammar: &Grammar, table: &RuleTable, seed: u64) -> Result<(ParseTree, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(grammar, table, &mut rng)
}

/// Ancestral sample from `V_1`. Each nonterminal first picks the unary or
/// ternary family by its weight, then a token, then (for ternary rules) a
/// child pair; children are expanded recursively.
pub fn sample_with<R: Rng>(
    grammar: &Grammar,
    table: &RuleTable,
    rng: &mut R,
) -> Result<(ParseTree, Vec<usize>)> {
    if grammar.validate().is_degenerate() {
        return Err(Error::DegenerateGrammar);
    }
    let mut builder = TreeBuilder::default();
    let mut log_prob = 0.0;
    // (nonterminal, slot in parent to fill)
    let mut pending = vec![(1usize, None::<(usize, bool)>)];
    while let Some((a, slot)) = pending.pop() {
        let unary = table.log_unary(a).exp();
        let ternary = table.log_ternary(a).exp();
        if unary + ternary <= 0.0 {
            return Err(Error::Unsupported(format!("V_{a} has no rule with mass")));
        }
        let token = categorical(rng, table.emit(a));
        let node = if rng.gen::<f64>() * (unary + ternary) < unary {
            log_prob += table.unary_rule(a, token);
            builder.push(a, Some(token))
        } else {
            let idx = categorical(rng, table.child(a));
            log_prob += table.ternary_rule(a, idx, token);
            let pair = grammar.child_set(a)[idx];
            let node = builder.push(a, Some(token));
            // Right is pushed first so the left subtree is built next (pre-order).
            pending.push((pair.right, Some((node, false))));
            if pair.left == 0 {
                let eps = builder.push_empty();
                builder.nodes[node].left = Some(eps);
            } else {
                pending.push((pair.left, Some((node, true))));
            }
            node
        };
        if let Some((parent, is_left)) = slot {
            if is_left {
                builder.nodes[parent].left = Some(node);
            } else {
                builder.nodes[parent].right = Some(node);
            }
        }
    }
    let tree = builder.finish(log_prob);
    let tokens = tree.tokens.clone();
    Ok((tree, tokens))
}

fn categorical<R: Rng>(rng: &mut R, logprobs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &lp) in logprobs.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}
