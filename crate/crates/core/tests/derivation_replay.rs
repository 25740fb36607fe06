//! Replays a hand-written eight-token derivation on the 14-node support tree
//! (three source tokens, no upsampling, prefix trees of depth two).

use rhpcfg::grammar::RuleTable;
use rhpcfg::logspace::NEG_INF;
use rhpcfg::*;

const WORDS: [&str; 9] = [
    "You", "are", "gonna", "need", "a", "bigger", "boat", ".", "shark",
];

/// (nonterminal, left, word, right); leaves use `None` children.
type Step = (usize, Option<(usize, usize)>, usize);

const STEPS: [Step; 8] = [
    (1, Some((0, 5)), 0),
    (5, Some((3, 9)), 3),
    (3, Some((0, 4)), 1),
    (4, None, 2),
    (9, Some((7, 10)), 6),
    (7, Some((0, 8)), 4),
    (8, None, 5),
    (10, None, 7),
];

fn grammar() -> Grammar {
    Grammar::from_config(
        SupportTreeConfig::new(3, 1, 2).unwrap(),
        WORDS.len(),
        GrammarPolicy::default(),
    )
    .unwrap()
}

fn pair_index(g: &Grammar, i: usize, left: usize, right: usize) -> usize {
    g.child_set(i)
        .iter()
        .position(|p| p.left == left && p.right == right)
        .unwrap_or_else(|| panic!("V_{i} -> V_{left} . V_{right} is not in the rule space"))
}

/// Logits with `bonus` on every rule of the derivation and zero elsewhere.
fn concentrated(g: &Grammar, bonus: f64) -> TabularScorer {
    let base = TabularScorer::uniform(g);
    let mut emit = base.emit_logits().to_vec();
    let mut child = base.child_logits().to_vec();
    for &(i, kids, word) in &STEPS {
        emit[i][word] = bonus;
        if let Some((l, r)) = kids {
            child[i][pair_index(g, i, l, r)] = bonus;
        }
    }
    TabularScorer::new(g, emit, child, base.split().to_vec()).unwrap()
}

fn sentence() -> Sentence {
    Sentence::new((0..8).collect(), WORDS.len()).unwrap()
}

#[test]
fn every_step_is_a_legal_rule() {
    let g = grammar();
    assert_eq!(g.node_count(), 14);
    assert_eq!(g.tree().main_chain(), vec![1, 5, 9, 13]);
    for &(i, kids, _) in &STEPS {
        match kids {
            Some((l, r)) => {
                pair_index(&g, i, l, r);
            }
            None => assert!(g.can_emit(i), "V_{i} cannot emit"),
        }
    }
    // V_10 is off the main chain, so the step out of V_9 needs closure off.
    let closed = Grammar::from_config(
        SupportTreeConfig::new(3, 1, 2).unwrap(),
        WORDS.len(),
        GrammarPolicy {
            closure: true,
            ..GrammarPolicy::default()
        },
    )
    .unwrap();
    assert!(!closed.child_set(9).iter().any(|p| p.right == 10));
}

#[test]
fn best_parse_recovers_the_derivation() {
    let g = grammar();
    let table = concentrated(&g, 4.0).rule_table(&g).unwrap();
    let tree = best_parse(&g, &table, &sentence()).unwrap();
    assert_eq!(tree.alignment, vec![1, 3, 4, 5, 7, 8, 9, 10]);

    // The steps are listed in pre-order.
    let expected: Vec<AppliedRule> = STEPS
        .iter()
        .map(|&step| match step {
            (i, Some((l, r)), w) => AppliedRule::Expand {
                nonterminal: i,
                left: l,
                token: w,
                right: r,
            },
            (i, None, w) => AppliedRule::Emit {
                nonterminal: i,
                token: w,
            },
        })
        .collect();
    assert_eq!(tree.rules(), expected);
    assert!(tree.validate(&g).is_ok());
    assert!((tree.score(&g, &table).unwrap() - tree.log_prob).abs() < 1e-12);
}

#[test]
fn likelihood_is_the_sum_of_rule_log_probs() {
    let g = grammar();
    let m = g.node_count();
    // Child rows put all mass on the derivation; emissions stay spread out.
    let spread = (WORDS.len() as f64).ln();
    let mut emit = vec![Vec::new(); m];
    let mut child = vec![Vec::new(); m];
    for i in 1..m {
        emit[i] = vec![-spread; WORDS.len()];
        let n = g.child_set(i).len();
        child[i] = vec![-(n as f64).ln(); n];
    }
    for &(i, kids, _) in &STEPS {
        if let Some((l, r)) = kids {
            let idx = pair_index(&g, i, l, r);
            child[i] = vec![NEG_INF; g.child_set(i).len()];
            child[i][idx] = 0.0;
        }
    }
    let table = RuleTable::from_log_probs(&g, emit, child, &vec![0.5; m]).unwrap();

    let rule_sum: f64 = STEPS
        .iter()
        .map(|&(i, kids, w)| match kids {
            Some((l, r)) => table.ternary_rule(i, pair_index(&g, i, l, r), w),
            None => table.unary_rule(i, w),
        })
        .sum();
    let ll = log_likelihood(&g, &table, &sentence()).unwrap();
    assert!((ll - rule_sum).abs() < 1e-12, "{ll} vs {rule_sum}");
    assert!((ll - 8.0 * -spread).abs() < 1e-12);
    assert!((max_tree_ratio(&g, &table, &sentence()).unwrap() - 1.0).abs() < 1e-12);
}
