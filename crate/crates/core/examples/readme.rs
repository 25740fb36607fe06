use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rhpcfg::*;

fn main() -> Result<()> {
    let grammar = Grammar::from_config(
        SupportTreeConfig::new(3, 1, 2)?,
        8,
        GrammarPolicy {
            closure: false,
            emission: Emission::LeafOnly,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let table = TabularScorer::random(&grammar, &mut rng, 1.0).rule_table(&grammar)?;
    let y = Sentence::new(vec![0, 1, 2, 3, 4, 5, 6, 7], 8)?;
    let loglik = log_likelihood(&grammar, &table, &y)?;
    let tree = best_parse(&grammar, &table, &y)?;
    let best = decode(&grammar, &table, 1, 8, Rerank::PerToken)?;
    println!("loglik {loglik:.4}, alignment {:?}", tree.alignment);
    println!(
        "decoded {:?} (length {}, score {:.4})",
        best.tokens, best.length, best.score
    );
    Ok(())
}
