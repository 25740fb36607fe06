//! WebAssembly bindings for the browser demo.
//!
//! Each export takes a JSON grammar config and returns a JSON string. The
//! rule table comes from a seeded random tabular scorer, so the same config
//! always yields the same grammar.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rhpcfg::corpus::Vocab;
use rhpcfg::{
    best_parse, decode, log_likelihood, max_tree_ratio, Emission, Grammar, GrammarPolicy,
    ParseTree, Rerank, RuleTable, Sentence, SupportTreeConfig, TabularScorer,
};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Larger trees make the page sluggish without showing anything new.
pub const MAX_NODES: usize = 400;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoConfig {
    pub src_len: usize,
    #[serde(default = "default_lambda")]
    pub lambda: usize,
    #[serde(default = "default_layers")]
    pub layers: u32,
    #[serde(default)]
    pub closure: bool,
    #[serde(default)]
    pub all_nodes: bool,
    /// Space-separated vocabulary.
    #[serde(default = "default_vocab")]
    pub vocab: String,
    #[serde(default)]
    pub seed: u64,
    /// Spread of the random logits; larger values give peakier rules.
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_lambda() -> usize {
    4
}

fn default_layers() -> u32 {
    1
}

fn default_vocab() -> String {
    "a b c".into()
}

fn default_scale() -> f64 {
    2.0
}

struct Demo {
    grammar: Grammar,
    table: RuleTable,
    vocab: Vocab,
}

impl DemoConfig {
    fn parse(json: &str) -> Result<Self, String> {
        serde_json::from_str(json).map_err(|e| format!("bad config: {e}"))
    }

    fn grammar(&self, vocab_size: usize) -> Result<Grammar, String> {
        let config = SupportTreeConfig::new(self.src_len, self.lambda, self.layers)
            .map_err(|e| e.to_string())?;
        if config.node_count() > MAX_NODES {
            return Err(format!(
                "{} nodes is above the demo limit of {MAX_NODES}",
                config.node_count()
            ));
        }
        let policy = GrammarPolicy {
            closure: self.closure,
            emission: if self.all_nodes {
                Emission::AllNodes
            } else {
                Emission::LeafOnly
            },
        };
        Grammar::from_config(config, vocab_size, policy).map_err(|e| e.to_string())
    }

    fn build(&self) -> Result<Demo, String> {
        let words: Vec<String> = self.vocab.split_whitespace().map(str::to_string).collect();
        let vocab = Vocab::new(words).map_err(|e| format!("vocabulary: {e}"))?;
        let grammar = self.grammar(vocab.len())?;
        if grammar.validate().is_degenerate() {
            return Err("the start symbol derives no string under this policy".into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let table = TabularScorer::random(&grammar, &mut rng, self.scale)
            .rule_table(&grammar)
            .map_err(|e| e.to_string())?;
        Ok(Demo {
            grammar,
            table,
            vocab,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct NodeView {
    pub index: usize,
    pub depth: usize,
    pub parent: Option<usize>,
    pub main_chain: bool,
    pub leaf: bool,
    pub children: usize,
}

#[derive(Debug, Serialize)]
pub struct LayoutView {
    pub m: usize,
    pub d: usize,
    pub main_chain: Vec<usize>,
    pub rule_space: usize,
    pub derivable: bool,
    pub min_len: Option<usize>,
    pub max_len: Option<usize>,
    pub nodes: Vec<NodeView>,
}

/// Support tree with depths for drawing; the in-order index doubles as the
/// horizontal position.
pub fn layout_view(config: &DemoConfig) -> Result<LayoutView, String> {
    let g = config.grammar(1)?;
    let tree = g.tree();
    let nodes = (0..g.node_count())
        .map(|i| {
            let mut depth = 0;
            let mut cur = i;
            while let Some(p) = tree.parent(cur) {
                depth += 1;
                cur = p;
            }
            NodeView {
                index: i,
                depth,
                parent: tree.parent(i),
                main_chain: tree.is_main_chain(i),
                leaf: tree.is_leaf(i).unwrap_or(false),
                children: g.child_set(i).len(),
            }
        })
        .collect();
    let report = g.validate();
    Ok(LayoutView {
        m: g.node_count(),
        d: g.prefix_width(),
        main_chain: tree.main_chain(),
        rule_space: g.rule_space_size(),
        derivable: report.derivable[1],
        min_len: report.min_len[1],
        max_len: report.max_len[1],
        nodes,
    })
}

#[derive(Debug, Serialize)]
pub struct TreeNodeView {
    pub nonterminal: usize,
    pub token: Option<String>,
    pub left: Option<usize>,
    pub right: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct ParseView {
    pub tokens: Vec<String>,
    pub alignment: Vec<usize>,
    pub log_prob: f64,
    pub nodes: Vec<TreeNodeView>,
    pub text: String,
}

impl ParseView {
    fn new(tree: &ParseTree, vocab: &Vocab) -> Self {
        Self {
            tokens: vocab.decode(&tree.tokens),
            alignment: tree.alignment.clone(),
            log_prob: tree.log_prob,
            nodes: tree
                .nodes
                .iter()
                .map(|n| TreeNodeView {
                    nonterminal: n.nonterminal,
                    token: n.token.and_then(|t| vocab.token(t)).map(str::to_string),
                    left: n.left,
                    right: n.right,
                })
                .collect(),
            text: tree.to_text(Some(vocab.tokens())),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DecodeView {
    pub length: usize,
    pub score: f64,
    pub parse: ParseView,
}

pub fn decode_view(
    config: &DemoConfig,
    min_len: usize,
    max_len: usize,
    per_token: bool,
) -> Result<DecodeView, String> {
    let demo = config.build()?;
    let mode = if per_token {
        Rerank::PerToken
    } else {
        Rerank::Raw
    };
    let best =
        decode(&demo.grammar, &demo.table, min_len, max_len, mode).map_err(|e| e.to_string())?;
    Ok(DecodeView {
        length: best.length,
        score: best.score,
        parse: ParseView::new(&best.tree, &demo.vocab),
    })
}

#[derive(Debug, Serialize)]
pub struct SentenceView {
    pub loglik: f64,
    pub ratio: f64,
    pub parse: ParseView,
}

pub fn parse_view(config: &DemoConfig, sentence: &str) -> Result<SentenceView, String> {
    let demo = config.build()?;
    let words: Vec<&str> = sentence.split_whitespace().collect();
    let ids = demo.vocab.encode(&words, 1).map_err(|e| e.to_string())?;
    let y = Sentence::new(ids, demo.vocab.len()).map_err(|e| e.to_string())?;
    let tree = best_parse(&demo.grammar, &demo.table, &y).map_err(|e| e.to_string())?;
    Ok(SentenceView {
        loglik: log_likelihood(&demo.grammar, &demo.table, &y).map_err(|e| e.to_string())?,
        ratio: max_tree_ratio(&demo.grammar, &demo.table, &y).map_err(|e| e.to_string())?,
        parse: ParseView::new(&tree, &demo.vocab),
    })
}

fn to_json<T: Serialize>(value: Result<T, String>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

/// Support-tree layout and derivability report.
#[wasm_bindgen]
pub fn layout(config: &str) -> Result<String, JsError> {
    to_json(DemoConfig::parse(config).and_then(|c| layout_view(&c)))
}

/// Best candidate over lengths `min_len..=max_len`.
#[wasm_bindgen(js_name = decodeBest)]
pub fn decode_best(
    config: &str,
    min_len: usize,
    max_len: usize,
    per_token: bool,
) -> Result<String, JsError> {
    to_json(DemoConfig::parse(config).and_then(|c| decode_view(&c, min_len, max_len, per_token)))
}

/// Best parse, likelihood and max-tree ratio of a space-separated sentence.
#[wasm_bindgen(js_name = parseSentence)]
pub fn parse_sentence(config: &str, sentence: &str) -> Result<String, JsError> {
    to_json(DemoConfig::parse(config).and_then(|c| parse_view(&c, sentence)))
}
