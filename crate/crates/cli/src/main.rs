//! `rhpcfg` command-line driver.
//!
//! Results go to stdout as one JSON object per line; the resolved
//! configuration and diagnostics go to stderr.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 property violation.

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rhpcfg::corpus::{self, Corpus, Vocab};
use rhpcfg::grammar::{load_params, sample, save_params, ParamFile};
use rhpcfg::oracle::{run_suite, SuiteConfig, DEFAULT_CAP};
use rhpcfg::train::{train, Algo, TrainOptions, DEFAULT_SMOOTHING};
use rhpcfg::{
    best_parse, decode, log_likelihood, max_tree_ratio, Emission, Grammar, GrammarPolicy,
    ParseTree, Rerank, RuleTable, Scorer, Sentence, SupportTreeConfig, TabularScorer,
    TrilinearScorer,
};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "rhpcfg", version, about = "Right-heavy PCFG toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Structural report for a grammar configuration.
    Info(GrammarArgs),
    /// Fit a scorer to a corpus; writes a parameter file and a CSV trace.
    Train(TrainArgs),
    /// Log-likelihood of every corpus line.
    Loglik(CorpusArgs),
    /// Best parse, alignment and max-tree ratio of every corpus line.
    Parse(ParseArgs),
    /// Length-conditioned Viterbi decoding with reranking.
    Decode(DecodeArgs),
    /// Draw derivations from the grammar.
    Sample(SampleArgs),
    /// Compare the dynamic programs against brute-force enumeration.
    OracleCheck(OracleArgs),
    /// Write a two-mode toy corpus and its vocabulary.
    MakeBimodal(BimodalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum EmissionArg {
    Leaf,
    All,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ScorerArg {
    #[default]
    Tabular,
    Trilinear,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum AlgoArg {
    #[default]
    Em,
    Sgd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum RerankArg {
    Raw,
    #[default]
    #[value(name = "per_token")]
    PerToken,
}

#[derive(Args, Debug, Clone, Serialize)]
struct GrammarArgs {
    /// Source length L_x.
    #[arg(long)]
    src_len: usize,
    /// Upsampling ratio.
    #[arg(long, default_value_t = 4)]
    lambda: usize,
    /// Layers of each prefix tree; the prefix width is 2^layers.
    #[arg(long, default_value_t = 1)]
    layers: u32,
    /// Restrict main-chain nodes to main-chain right children.
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    closure: Switch,
    /// Which nonterminals may emit a token directly.
    #[arg(long, value_enum, default_value_t = EmissionArg::Leaf)]
    emission: EmissionArg,
}

impl GrammarArgs {
    fn build(&self, vocab_size: usize) -> Result<Grammar> {
        let policy = GrammarPolicy {
            closure: self.closure == Switch::On,
            emission: match self.emission {
                EmissionArg::Leaf => Emission::LeafOnly,
                EmissionArg::All => Emission::AllNodes,
            },
        };
        let config = SupportTreeConfig::new(self.src_len, self.lambda, self.layers)?;
        Ok(Grammar::from_config(config, vocab_size, policy)?)
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    grammar: GrammarArgs,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Output parameter file.
    #[arg(long)]
    params: PathBuf,
    /// Output CSV trace; defaults to `<params>.trace.csv`.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    scorer: ScorerArg,
    #[arg(long, default_value_t = 8)]
    hidden_dim: usize,
    /// Seed for parameter initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, value_enum, default_value_t)]
    algo: AlgoArg,
}

#[derive(Args, Debug, Serialize)]
struct ModelArgs {
    /// Parameter file written by `train`.
    #[arg(long)]
    params: PathBuf,
    /// Vocabulary, one token per line. Without it tokens are printed as ids.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct CorpusArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ParseArgs {
    #[command(flatten)]
    inputs: CorpusArgs,
    /// Write every best parse as a Graphviz digraph.
    #[arg(long)]
    dot_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct DecodeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    length_min: usize,
    /// Defaults to the longest string the start symbol derives.
    #[arg(long)]
    length_max: Option<usize>,
    #[arg(long, value_enum, default_value_t)]
    rerank: RerankArg,
    #[arg(long)]
    dot_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: usize,
}

#[derive(Args, Debug, Serialize)]
struct OracleArgs {
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Longest string checked per instance.
    #[arg(long, default_value_t = 6)]
    max_len: usize,
}

#[derive(Args, Debug, Serialize)]
struct BimodalArgs {
    #[arg(long, default_value = "A B C")]
    mode_a: String,
    #[arg(long, default_value = "C B A")]
    mode_b: String,
    #[arg(long, default_value_t = 50)]
    n_each: usize,
    /// Shuffle seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
}

/// A problem with the flags rather than the data.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PROPERTY: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<rhpcfg::Error>() {
        Some(rhpcfg::Error::InvalidConfig(_) | rhpcfg::Error::Unsupported(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<u8> {
    let mut out = io::stdout().lock();
    match command {
        Command::Info(a) => cmd_info(&a, &mut out),
        Command::Train(a) => cmd_train(&a, &mut out),
        Command::Loglik(a) => cmd_loglik(&a, &mut out),
        Command::Parse(a) => cmd_parse(&a, &mut out),
        Command::Decode(a) => cmd_decode(&a, &mut out),
        Command::Sample(a) => cmd_sample(&a, &mut out),
        Command::OracleCheck(a) => cmd_oracle_check(&a, &mut out),
        Command::MakeBimodal(a) => cmd_make_bimodal(&a, &mut out),
    }
}

fn print_config(command: &str, args: &impl Serialize) {
    eprintln!("config {}", json!({ "command": command, "args": args }));
}

fn emit(out: &mut impl Write, value: &Value) -> Result<()> {
    writeln!(out, "{value}")?;
    Ok(())
}

fn cmd_info(a: &GrammarArgs, out: &mut impl Write) -> Result<u8> {
    print_config("info", a);
    let g = a.build(1)?;
    let report = g.validate();
    emit(
        out,
        &json!({
            "m": g.node_count(),
            "d": g.prefix_width(),
            "main_chain": g.tree().main_chain(),
            "rule_space": g.rule_space_size(),
            "emitting": g.emitting_nonterminals(),
            "derivable": report.derivable[1],
            "min_len": report.min_len[1],
            "max_len": report.max_len[1],
        }),
    )?;
    if report.is_degenerate() {
        eprintln!("error: the start symbol derives no string under this policy");
        return Ok(EXIT_DATA);
    }
    Ok(0)
}

fn load_vocab(path: &Path) -> Result<Vocab> {
    corpus::load_vocab(path).with_context(|| format!("reading vocabulary {}", path.display()))
}

fn load_corpus(path: &Path, vocab: Vocab) -> Result<Corpus> {
    corpus::load_corpus(path, vocab).with_context(|| format!("reading corpus {}", path.display()))
}

/// Rejects lines with no derivation, naming the first offending line.
fn check_derivable(g: &Grammar, table: &RuleTable, ys: &[Sentence], path: &Path) -> Result<()> {
    for (idx, y) in ys.iter().enumerate() {
        if log_likelihood(g, table, y)? == f64::NEG_INFINITY {
            return Err(rhpcfg::Error::UnderivableInCorpus { index: idx })
                .with_context(|| format!("{} line {}", path.display(), idx + 1));
        }
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs, out: &mut impl Write) -> Result<u8> {
    print_config("train", a);
    let vocab = load_vocab(&a.vocab)?;
    let corpus = load_corpus(&a.corpus, vocab.clone())?;
    if corpus.is_empty() {
        return Err(usage(format!("corpus {} is empty", a.corpus.display())));
    }
    let g = a.grammar.build(vocab.len())?;
    if g.validate().is_degenerate() {
        return Err(rhpcfg::Error::DegenerateGrammar.into());
    }
    let ys = corpus.sentences()?;

    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let scorer = match a.scorer {
        ScorerArg::Tabular => Scorer::Tabular(TabularScorer::random(&g, &mut rng, 1.0)),
        ScorerArg::Trilinear => {
            Scorer::Trilinear(TrilinearScorer::random(&g, a.hidden_dim, &mut rng, 0.5)?)
        }
    };
    check_derivable(&g, &scorer.rule_table(&g)?, &ys, &a.corpus)?;

    let opts = TrainOptions {
        algo: match a.algo {
            AlgoArg::Em => Algo::Em,
            AlgoArg::Sgd => Algo::Sgd,
        },
        iters: a.iters,
        lr: a.lr,
        smoothing: DEFAULT_SMOOTHING,
    };
    let outcome = train(&g, scorer, &ys, &opts)?;

    let mut csv = String::from("iteration,corpus_loglik\n");
    for (it, ll) in outcome.trace.iter().enumerate() {
        csv.push_str(&format!("{it},{ll}\n"));
        emit(out, &json!({ "iteration": it, "corpus_loglik": ll }))?;
    }
    let trace_path = a.trace_out.clone().unwrap_or_else(|| {
        let mut p = a.params.clone().into_os_string();
        p.push(".trace.csv");
        p.into()
    });
    save_params(&a.params, &ParamFile::new(&g, outcome.scorer))
        .with_context(|| format!("writing {}", a.params.display()))?;
    corpus::write_atomic(&trace_path, csv.as_bytes())
        .with_context(|| format!("writing {}", trace_path.display()))?;
    let last = *outcome.trace.last().expect("trace holds the final value");
    emit(
        out,
        &json!({
            "sentences": ys.len(),
            "final_corpus_loglik": last,
            "final_mean_loglik": last / ys.len() as f64,
        }),
    )?;
    Ok(0)
}

/// Grammar, rule table and optional vocabulary from a parameter file.
struct Model {
    grammar: Grammar,
    table: RuleTable,
    vocab: Option<Vocab>,
}

impl Model {
    fn load(a: &ModelArgs) -> Result<Self> {
        let file = load_params(&a.params)
            .with_context(|| format!("reading parameters {}", a.params.display()))?;
        let grammar = file.grammar()?;
        let table = file.scorer.rule_table(&grammar)?;
        let vocab = a.vocab.as_deref().map(load_vocab).transpose()?;
        if let Some(v) = &vocab {
            if v.len() != grammar.vocab_size() {
                return Err(usage(format!(
                    "vocabulary has {} tokens but the parameters expect {}",
                    v.len(),
                    grammar.vocab_size()
                )));
            }
        }
        Ok(Self {
            grammar,
            table,
            vocab,
        })
    }

    fn sentences(&self, path: &Path) -> Result<Vec<Sentence>> {
        let vocab = self
            .vocab
            .clone()
            .ok_or_else(|| usage("--vocab is required to read a corpus"))?;
        Ok(load_corpus(path, vocab)?.sentences()?)
    }

    fn words(&self, ids: &[usize]) -> Value {
        match &self.vocab {
            Some(v) => json!(v.decode(ids)),
            None => json!(ids),
        }
    }

    fn vocab_tokens(&self) -> Option<&[String]> {
        self.vocab.as_ref().map(|v| v.tokens())
    }
}

fn cmd_loglik(a: &CorpusArgs, out: &mut impl Write) -> Result<u8> {
    print_config("loglik", a);
    let model = Model::load(&a.model)?;
    let ys = model.sentences(&a.corpus)?;
    let mut failed = false;
    for (idx, y) in ys.iter().enumerate() {
        let ll = log_likelihood(&model.grammar, &model.table, y)?;
        if ll == f64::NEG_INFINITY {
            failed = true;
            emit(out, &json!({ "index": idx, "error": "underivable" }))?;
        } else {
            emit(
                out,
                &json!({ "index": idx, "length": y.len(), "loglik": ll }),
            )?;
        }
    }
    Ok(if failed { EXIT_DATA } else { 0 })
}

fn tree_json(model: &Model, tree: &ParseTree) -> Value {
    json!({
        "tokens": model.words(&tree.tokens),
        "log_prob": tree.log_prob,
        "alignment": tree.alignment,
        "tree": tree.to_text(model.vocab_tokens()),
    })
}

fn cmd_parse(a: &ParseArgs, out: &mut impl Write) -> Result<u8> {
    print_config("parse", a);
    let model = Model::load(&a.inputs.model)?;
    let ys = model.sentences(&a.inputs.corpus)?;
    let mut dot = String::new();
    let mut failed = false;
    for (idx, y) in ys.iter().enumerate() {
        match best_parse(&model.grammar, &model.table, y) {
            Ok(tree) => {
                let ratio = max_tree_ratio(&model.grammar, &model.table, y)?;
                let mut v = tree_json(&model, &tree);
                v["index"] = json!(idx);
                v["loglik"] = json!(log_likelihood(&model.grammar, &model.table, y)?);
                v["ratio"] = json!(ratio);
                emit(out, &v)?;
                dot.push_str(&tree.to_dot(&format!("s{idx}"), model.vocab_tokens()));
            }
            Err(rhpcfg::Error::Underivable) => {
                failed = true;
                emit(out, &json!({ "index": idx, "error": "underivable" }))?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(path) = &a.dot_out {
        corpus::write_atomic(path, dot.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if failed { EXIT_DATA } else { 0 })
}

fn cmd_decode(a: &DecodeArgs, out: &mut impl Write) -> Result<u8> {
    print_config("decode", a);
    let model = Model::load(&a.model)?;
    let longest = model.grammar.validate().max_len[1].ok_or(rhpcfg::Error::DegenerateGrammar)?;
    let max = a.length_max.unwrap_or(longest);
    if a.length_min > max {
        return Err(usage(format!(
            "--length-min {} exceeds --length-max {max}",
            a.length_min
        )));
    }
    let mode = match a.rerank {
        RerankArg::Raw => Rerank::Raw,
        RerankArg::PerToken => Rerank::PerToken,
    };
    let best = decode(&model.grammar, &model.table, a.length_min, max, mode)?;
    let mut v = tree_json(&model, &best.tree);
    v["length"] = json!(best.length);
    v["score"] = json!(best.score);
    v["rerank"] = json!(a.rerank);
    emit(out, &v)?;
    if let Some(path) = &a.dot_out {
        let dot = best.tree.to_dot("decoded", model.vocab_tokens());
        corpus::write_atomic(path, dot.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}

fn cmd_sample(a: &SampleArgs, out: &mut impl Write) -> Result<u8> {
    print_config("sample", a);
    let model = Model::load(&a.model)?;
    for idx in 0..a.count {
        let seed = a.seed.wrapping_add(idx as u64);
        let (tree, _) = sample(&model.grammar, &model.table, seed)?;
        let mut v = tree_json(&model, &tree);
        v["index"] = json!(idx);
        v["seed"] = json!(seed);
        emit(out, &v)?;
    }
    Ok(0)
}

fn cmd_oracle_check(a: &OracleArgs, out: &mut impl Write) -> Result<u8> {
    print_config("oracle-check", a);
    if a.instances == 0 || a.max_len == 0 {
        return Err(usage("--instances and --max-len must be positive"));
    }
    let reports = run_suite(&SuiteConfig {
        instances: a.instances,
        seed: a.seed,
        max_len: a.max_len,
        cap: DEFAULT_CAP,
    })?;
    let mut ok = true;
    for r in &reports {
        ok &= r.passed();
        let mut v = serde_json::to_value(r)?;
        v["passed"] = json!(r.passed());
        emit(out, &v)?;
    }
    emit(out, &json!({ "instances": a.instances, "passed": ok }))?;
    Ok(if ok { 0 } else { EXIT_PROPERTY })
}

fn cmd_make_bimodal(a: &BimodalArgs, out: &mut impl Write) -> Result<u8> {
    print_config("make-bimodal", a);
    let mode_a: Vec<&str> = a.mode_a.split_whitespace().collect();
    let mode_b: Vec<&str> = a.mode_b.split_whitespace().collect();
    let mut tokens: Vec<String> = mode_a
        .iter()
        .chain(&mode_b)
        .map(|s| s.to_string())
        .collect();
    tokens.sort();
    tokens.dedup();
    let vocab = Vocab::new(tokens).map_err(|e| usage(e.to_string()))?;
    let corpus = corpus::make_bimodal(vocab.clone(), &mode_a, &mode_b, a.n_each, a.seed)
        .map_err(|e| usage(e.to_string()))?;
    corpus::save_vocab(&a.vocab, &vocab)
        .with_context(|| format!("writing {}", a.vocab.display()))?;
    corpus::save_corpus(&a.corpus, &corpus)
        .with_context(|| format!("writing {}", a.corpus.display()))?;
    emit(
        out,
        &json!({ "vocab_size": vocab.len(), "records": corpus.len() }),
    )?;
    Ok(0)
}
