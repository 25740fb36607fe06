//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhpcfg::corpus::{make_bimodal, Corpus, Vocab};
use rhpcfg::grammar::{sample, ParamFile};
use rhpcfg::oracle::{enumerate_all, random_instance, run_suite, SuiteConfig};
use rhpcfg::train::{corpus_loglik, loglik_gradient, train, TrainOptions};
use rhpcfg::*;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

// 1. Support-tree structure.
fn structure() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = Vec::new();
    for _ in 0..50 {
        let (src, up, depth) = (
            rng.gen_range(1..=8),
            rng.gen_range(1..=4),
            rng.gen_range(0..=3u32),
        );
        let tree = SupportTree::build(SupportTreeConfig::new(src, up, depth).unwrap()).unwrap();
        let d = 1usize << depth;
        let expected_chain: Vec<usize> = (0..=up * src).map(|t| t * d + 1).collect();
        if tree.node_count() != up * src * d + 2 || tree.main_chain() != expected_chain {
            bad.push((src, up, depth));
        }
    }
    let fig = SupportTree::build(SupportTreeConfig::new(3, 1, 2).unwrap()).unwrap();
    let fig_ok = fig.node_count() == 14 && fig.main_chain() == vec![1, 5, 9, 13];
    let elapsed = start.elapsed();
    outcome(
        bad.is_empty() && fig_ok && elapsed < Duration::from_secs(1),
        format!(
            "50 configs, mismatches {bad:?}; (3,1,2): m={} chain {:?}; {:.1} ms",
            fig.node_count(),
            fig.main_chain(),
            ms(elapsed)
        ),
    )
}

// 2. Replay of the example derivation of "You are gonna need a bigger boat ."
const WORDS: [&str; 8] = ["You", "are", "gonna", "need", "a", "bigger", "boat", "."];
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

fn derivation_replay() -> Outcome {
    let g = Grammar::from_config(
        SupportTreeConfig::new(3, 1, 2).unwrap(),
        WORDS.len(),
        GrammarPolicy {
            closure: false,
            emission: Emission::LeafOnly,
        },
    )
    .unwrap();
    let pair = |i: usize, l: usize, r: usize| {
        g.child_set(i)
            .iter()
            .position(|p| p.left == l && p.right == r)
    };
    let mut illegal = Vec::new();
    let base = TabularScorer::uniform(&g);
    let mut emit = base.emit_logits().to_vec();
    let mut child = base.child_logits().to_vec();
    for &(i, kids, w) in &STEPS {
        emit[i][w] = 4.0;
        match kids {
            Some((l, r)) => match pair(i, l, r) {
                Some(idx) => child[i][idx] = 4.0,
                None => illegal.push(i),
            },
            None if !g.can_emit(i) => illegal.push(i),
            None => {}
        }
    }
    if !illegal.is_empty() {
        return outcome(false, format!("illegal steps at {illegal:?}"));
    }
    let table = TabularScorer::new(&g, emit, child, base.split().to_vec())
        .unwrap()
        .rule_table(&g)
        .unwrap();
    let y = Sentence::new((0..WORDS.len()).collect(), WORDS.len()).unwrap();
    let tree = best_parse(&g, &table, &y).unwrap();
    let expected: Vec<AppliedRule> = STEPS
        .iter()
        .map(|&(i, kids, w)| match kids {
            Some((l, r)) => AppliedRule::Expand {
                nonterminal: i,
                left: l,
                token: w,
                right: r,
            },
            None => AppliedRule::Emit {
                nonterminal: i,
                token: w,
            },
        })
        .collect();
    let empties = tree.nodes.iter().filter(|n| n.nonterminal == 0).count();
    outcome(
        tree.rules() == expected && empties == 3,
        format!(
            "8 rules plus V_0 -> ε legal; recovered alignment {:?}, {} empty left children",
            tree.alignment, empties
        ),
    )
}

// 3-6. Oracle equivalence over the seeded suite.
fn oracle_suite() -> (Outcome, Outcome, Outcome, Outcome) {
    let start = Instant::now();
    let reports = run_suite(&SuiteConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let by_name: BTreeMap<&str, _> = reports.iter().map(|r| (r.property, r)).collect();
    let summarize = |names: &[&str]| {
        let passed = names
            .iter()
            .all(|n| by_name[n].passed() && by_name[n].checks > 0);
        let detail = names
            .iter()
            .map(|n| {
                let r = by_name[n];
                format!("{n}: {} checks, max dev {:.2e}", r.checks, r.max_deviation)
            })
            .collect::<Vec<_>>()
            .join("; ");
        (passed, detail)
    };

    let (p3, d3) = summarize(&["inside_vs_tree_sum"]);
    let c3 = outcome(
        p3 && elapsed < Duration::from_secs(60),
        format!("{d3}; suite time {:.1} s", elapsed.as_secs_f64()),
    );
    let (p4, d4) = summarize(&["tree_mass_sums_to_one", "enumeration_count"]);
    let (p5, d5) = summarize(&["viterbi_vs_max_by_length", "decode_length_attains_max"]);
    let (p6, d6) = summarize(&["best_parse_vs_argmax", "max_tree_ratio_vs_oracle"]);

    // Ratio on strings with exactly one derivation.
    let cfg = SuiteConfig::default();
    let (mut unique, mut worst) = (0usize, 0.0f64);
    for index in 0..cfg.instances {
        let inst = random_instance(cfg.seed, index).unwrap();
        let e = enumerate_all(&inst.grammar, &inst.table, cfg.cap).unwrap();
        let mut counts: BTreeMap<&[usize], usize> = BTreeMap::new();
        for t in &e.trees {
            if t.tokens.len() <= cfg.max_len {
                *counts.entry(&t.tokens).or_default() += 1;
            }
        }
        for (y, _) in counts.into_iter().filter(|&(_, c)| c == 1) {
            let s = Sentence::new(y.to_vec(), inst.grammar.vocab_size()).unwrap();
            let r = max_tree_ratio(&inst.grammar, &inst.table, &s).unwrap();
            worst = worst.max((r - 1.0).abs());
            unique += 1;
        }
    }
    let c6 = outcome(
        p6 && unique > 0 && worst <= 1e-12,
        format!("{d6}; ratio on {unique} unique-derivation strings within {worst:.1e} of 1"),
    );
    (c3, outcome(p4, d4), outcome(p5, d5), c6)
}

// 7. Gradients against central finite differences.
fn gradients() -> Outcome {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-5;
    let g = Grammar::from_config(
        SupportTreeConfig::new(2, 1, 1).unwrap(),
        3,
        GrammarPolicy {
            closure: false,
            emission: Emission::AllNodes,
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scorers = [
        Scorer::Tabular(TabularScorer::random(&g, &mut rng, 1.0)),
        Scorer::Trilinear(TrilinearScorer::random(&g, 3, &mut rng, 0.8).unwrap()),
    ];
    let mut worst = 0.0f64;
    let mut coords = 0;
    for scorer in scorers {
        let mut blocks = scorer.blocks();
        let last = blocks.len() - 1;
        for v in &mut blocks[last].values {
            *v = rng.gen_range(-1.5..1.5);
        }
        let scorer = scorer.with_blocks(&blocks).unwrap();
        let table = scorer.rule_table(&g).unwrap();
        let ys: Vec<Sentence> = (0..4)
            .map(|s| Sentence::new(sample(&g, &table, 100 + s).unwrap().1, 3).unwrap())
            .collect();
        let (_, grads) = loglik_gradient(&g, &scorer, &ys).unwrap();
        let f = |b: &[rhpcfg::grammar::ParamBlock]| {
            corpus_loglik(&g, &scorer.with_blocks(b).unwrap(), &ys).unwrap()
        };
        for (b, block) in blocks.iter().enumerate() {
            for _ in 0..20 {
                let c = rng.gen_range(0..block.values.len());
                let mut plus = blocks.clone();
                plus[b].values[c] += STEP;
                let mut minus = blocks.clone();
                minus[b].values[c] -= STEP;
                let fd = (f(&plus) - f(&minus)) / (2.0 * STEP);
                let an = grads[b].values[c];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(FLOOR));
                coords += 1;
            }
        }
    }
    outcome(
        worst <= 1e-4,
        format!("{coords} coordinates over both scorers, worst relative error {worst:.2e}"),
    )
}

// 8. EM on the bimodal corpus.
fn em_bimodal() -> Outcome {
    let start = Instant::now();
    let vocab = Vocab::parse("A\nB\nC\n").unwrap();
    let corpus = make_bimodal(vocab, &["A", "B", "C"], &["C", "B", "A"], 50, 0).unwrap();
    let ys = corpus.sentences().unwrap();
    let n = ys.len() as f64;
    let g = Grammar::from_config(
        SupportTreeConfig::new(3, 1, 1).unwrap(),
        3,
        GrammarPolicy {
            closure: false,
            emission: Emission::AllNodes,
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let init = Scorer::Tabular(TabularScorer::random(&g, &mut rng, 1.0));
    let out = train(&g, init, &ys, &TrainOptions::default()).unwrap();
    let worst_step = out
        .trace
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let model = out.trace.last().unwrap() / n;

    // Maximum-likelihood baselines fit in closed form to the same corpus.
    let unigram = {
        let mut counts = [0.0f64; 3];
        let mut total = 0.0;
        for y in &ys {
            for &t in y.tokens() {
                counts[t] += 1.0;
                total += 1.0;
            }
        }
        let ll: f64 = counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| c * (c / total).ln())
            .sum();
        ll / n
    };
    let per_position = {
        let mut ll = 0.0;
        for pos in 0..3 {
            let mut counts = [0.0f64; 3];
            for y in &ys {
                counts[y.tokens()[pos]] += 1.0;
            }
            ll += counts
                .iter()
                .filter(|&&c| c > 0.0)
                .map(|&c| c * (c / n).ln())
                .sum::<f64>();
        }
        ll / n
    };

    let table = out.scorer.rule_table(&g).unwrap();
    let best = decode(&g, &table, 3, 3, Rerank::PerToken).unwrap();
    let is_mode = best.tokens == [0, 1, 2] || best.tokens == [2, 1, 0];
    let elapsed = start.elapsed();
    outcome(
        worst_step >= -1e-9 && model - unigram >= 0.1 && is_mode && elapsed < Duration::from_secs(30),
        format!(
            "worst step {worst_step:.1e}; mean loglik {model:.4} vs position-independent baseline {unigram:.4} \
             (margin {:.4}); per-position baseline {per_position:.4} (margin {:.4}, a structural tie); \
             L=3 decode {:?}; {:.2} s",
            model - unigram,
            model - per_position,
            best.tokens,
            elapsed.as_secs_f64()
        ),
    )
}

// 9. Inside time grows linearly in sentence length.
fn scaling() -> Outcome {
    let g = Grammar::from_config(
        SupportTreeConfig::new(10, 4, 1).unwrap(),
        16,
        GrammarPolicy::default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let table = TabularScorer::random(&g, &mut rng, 1.0)
        .rule_table(&g)
        .unwrap();
    let mut sentence =
        |n: usize| Sentence::new((0..n).map(|_| rng.gen_range(0..16)).collect(), 16).unwrap();
    let (y16, y32) = (sentence(16), sentence(32));
    let median = |y: &Sentence| {
        let mut times: Vec<Duration> = (0..20)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(inside(&g, &table, y).unwrap());
                t.elapsed()
            })
            .collect();
        times.sort();
        times[10]
    };
    median(&y32);
    let (t16, t32) = (median(&y16), median(&y32));
    let ratio = t32.as_secs_f64() / t16.as_secs_f64();
    outcome(
        g.node_count() == 82 && ratio <= 3.0 && t32 < Duration::from_millis(50),
        format!(
            "m={}; median inside n=16 {:.2} ms, n=32 {:.2} ms, ratio {ratio:.2}",
            g.node_count(),
            ms(t16),
            ms(t32)
        ),
    )
}

// 10. Determinism and round trips.
fn run_cli(dir: &Path, args: &[&str]) -> (Vec<u8>, Vec<u8>, bool) {
    let out = Command::new(env!("CARGO_BIN_EXE_rhpcfg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    (out.stdout, out.stderr, out.status.success())
}

fn cli_session(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let grammar = [
        "--src-len",
        "3",
        "--lambda",
        "1",
        "--layers",
        "1",
        "--emission",
        "all",
    ];
    let mut commands: Vec<Vec<&str>> = vec![
        vec![
            "make-bimodal",
            "--vocab",
            "v.txt",
            "--corpus",
            "c.jsonl",
            "--seed",
            "3",
        ],
        vec!["info", "--src-len", "3", "--lambda", "1", "--layers", "2"],
    ];
    let mut tab = vec![
        "train", "--vocab", "v.txt", "--corpus", "c.jsonl", "--params", "t.bin", "--seed", "5",
    ];
    tab.extend(grammar);
    let mut tri = vec![
        "train",
        "--vocab",
        "v.txt",
        "--corpus",
        "c.jsonl",
        "--params",
        "r.bin",
        "--scorer",
        "trilinear",
        "--hidden-dim",
        "3",
        "--algo",
        "sgd",
        "--iters",
        "5",
        "--lr",
        "0.05",
    ];
    tri.extend(grammar);
    commands.push(tab);
    commands.push(tri);
    for p in ["t.bin", "r.bin"] {
        commands.push(vec![
            "loglik", "--params", p, "--vocab", "v.txt", "--corpus", "c.jsonl",
        ]);
        commands.push(vec![
            "parse",
            "--params",
            p,
            "--vocab",
            "v.txt",
            "--corpus",
            "c.jsonl",
            "--dot-out",
            "p.dot",
        ]);
        commands.push(vec![
            "decode", "--params", p, "--vocab", "v.txt", "--rerank", "raw",
        ]);
        commands.push(vec![
            "sample", "--params", p, "--seed", "11", "--count", "5",
        ]);
    }
    commands.push(vec!["oracle-check", "--instances", "8", "--seed", "2"]);

    let mut artifacts = Vec::new();
    for args in &commands {
        let (stdout, stderr, ok) = run_cli(dir, args);
        assert!(ok, "{args:?} failed: {}", String::from_utf8_lossy(&stderr));
        artifacts.push((format!("{args:?} stdout"), stdout));
        artifacts.push((format!("{args:?} stderr"), stderr));
    }
    for f in [
        "v.txt",
        "c.jsonl",
        "t.bin",
        "t.bin.trace.csv",
        "r.bin",
        "r.bin.trace.csv",
        "p.dot",
    ] {
        artifacts.push((f.to_string(), std::fs::read(dir.join(f)).unwrap()));
    }
    artifacts
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, second) = (cli_session(a.path()), cli_session(b.path()));
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();

    // Byte-exact round trips through the library.
    let mut round_trips = Vec::new();
    for name in ["t.bin", "r.bin"] {
        let bytes = std::fs::read(a.path().join(name)).unwrap();
        let file = ParamFile::from_bytes(&bytes).unwrap();
        round_trips.push(file.to_bytes().unwrap() == bytes);
    }
    let vocab_text = std::fs::read_to_string(a.path().join("v.txt")).unwrap();
    let vocab = Vocab::parse(&vocab_text).unwrap();
    round_trips.push(vocab.to_text() == vocab_text);
    let corpus_text = std::fs::read_to_string(a.path().join("c.jsonl")).unwrap();
    round_trips.push(Corpus::parse(&corpus_text, vocab).unwrap().to_text() == corpus_text);

    outcome(
        differing.is_empty() && round_trips.iter().all(|&ok| ok),
        format!(
            "{} artifacts compared across two runs, differing {differing:?}; round trips {round_trips:?}",
            first.len()
        ),
    )
}

fn main() {
    let (c3, c4, c5, c6) = oracle_suite();
    let results = [
        ("structure", structure()),
        ("derivation replay", derivation_replay()),
        ("inside/oracle equivalence", c3),
        ("normalization", c4),
        ("viterbi/oracle equivalence", c5),
        ("best parse and ratio", c6),
        ("gradient correctness", gradients()),
        ("EM behavior", em_bimodal()),
        ("complexity scaling", scaling()),
        ("determinism and round trips", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag} criterion {:>2} {name}: {}", i + 1, o.detail);
        failed += usize::from(!o.passed);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
