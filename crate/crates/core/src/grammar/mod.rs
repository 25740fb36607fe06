//! The right-heavy rule space over a support tree and a vocabulary.
//!
//! Rules come in three shapes: `V_0 -> ε`, the unary emission `V_i -> a`, and
//! the ternary expansion `V_i -> V_j a V_k` where `j` is `0` or in the left
//! subtree of `i` and `k` is in the right subtree of `i`.

mod params;
mod sample;
mod scorer;
mod table;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::support_tree::{SupportTree, SupportTreeConfig};

pub use params::{load_params, save_params, ParamFile, ParamHeader, FORMAT_VERSION};
pub use sample::{sample, sample_with};
pub use scorer::{ParamBlock, Scorer, ScorerKind, TabularScorer, TrilinearScorer, DEFAULT_SPLIT};
pub use table::RuleTable;

/// Which nonterminals may use the unary rule `V_i -> a`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emission {
    /// Only leaves of the support tree emit directly.
    #[default]
    LeafOnly,
    /// Every nonterminal except `V_0` may emit directly.
    AllNodes,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GrammarPolicy {
    /// Require main-chain nodes to expand into main-chain right children.
    pub closure: bool,
    pub emission: Emission,
}

/// A `(left, right)` child pair of a ternary rule. `left == 0` is the empty
/// left child `V_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChildPair {
    pub left: usize,
    pub right: usize,
}

/// Derivability and yield-length bounds for every nonterminal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GrammarReport {
    pub derivable: Vec<bool>,
    pub min_len: Vec<Option<usize>>,
    pub max_len: Vec<Option<usize>>,
}

impl GrammarReport {
    /// The start symbol derives nothing.
    pub fn is_degenerate(&self) -> bool {
        !self.derivable[1]
    }
}

#[derive(Debug, Clone)]
pub struct Grammar {
    tree: SupportTree,
    vocab_size: usize,
    policy: GrammarPolicy,
    children: Vec<Vec<ChildPair>>,
    can_emit: Vec<bool>,
    report: GrammarReport,
    // Per child pair: both children derive something.
    live: Vec<Vec<bool>>,
}

impl Grammar {
    pub fn new(tree: SupportTree, vocab_size: usize, policy: GrammarPolicy) -> Result<Self> {
        if vocab_size == 0 {
            return Err(crate::Error::InvalidConfig(
                "vocab_size must be at least 1".into(),
            ));
        }
        let m = tree.node_count();
        let mut children = vec![Vec::new(); m];
        for (i, set) in children.iter_mut().enumerate().skip(1) {
            let Some(r) = tree.right_child(i) else {
                continue;
            };
            let mut lefts = vec![0];
            if let Some(l) = tree.left_child(i) {
                let (lo, hi) = tree.subtree_interval(l);
                lefts.extend((lo..=hi).filter(|&j| j != 0));
            }
            let (rlo, rhi) = tree.subtree_interval(r);
            for &j in &lefts {
                for k in rlo..=rhi {
                    if tree.right_reach_unchecked(k, i, policy.closure) {
                        set.push(ChildPair { left: j, right: k });
                    }
                }
            }
        }
        let can_emit = (0..m)
            .map(|i| {
                i != 0
                    && match policy.emission {
                        Emission::AllNodes => true,
                        Emission::LeafOnly => {
                            tree.left_child(i).is_none() && tree.right_child(i).is_none()
                        }
                    }
            })
            .collect();

        let mut grammar = Self {
            tree,
            vocab_size,
            policy,
            children,
            can_emit,
            report: GrammarReport {
                derivable: Vec::new(),
                min_len: Vec::new(),
                max_len: Vec::new(),
            },
            live: Vec::new(),
        };
        grammar.report = grammar.analyze();
        grammar.live = grammar
            .children
            .iter()
            .map(|set| {
                set.iter()
                    .map(|p| grammar.report.derivable[p.left] && grammar.report.derivable[p.right])
                    .collect()
            })
            .collect();
        Ok(grammar)
    }

    /// Builds the support tree and the grammar in one step.
    pub fn from_config(
        config: SupportTreeConfig,
        vocab_size: usize,
        policy: GrammarPolicy,
    ) -> Result<Self> {
        Self::new(SupportTree::build(config)?, vocab_size, policy)
    }

    pub fn tree(&self) -> &SupportTree {
        &self.tree
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn policy(&self) -> GrammarPolicy {
        self.policy
    }

    pub fn node_count(&self) -> usize {
        self.tree.node_count()
    }

    pub fn prefix_width(&self) -> usize {
        self.tree.prefix_width()
    }

    /// Legal child pairs of `V_i`, ordered by ascending left then right index.
    ///
    /// Panics if `i` is out of range.
    pub fn child_set(&self, i: usize) -> &[ChildPair] {
        &self.children[i]
    }

    /// Whether `V_i` may use the unary rule `V_i -> a`.
    pub fn can_emit(&self, i: usize) -> bool {
        self.can_emit[i]
    }

    /// Whether both children of the `idx`-th pair of `V_i` derive some string.
    pub fn is_live_pair(&self, i: usize, idx: usize) -> bool {
        self.live[i][idx]
    }

    /// Whether `V_i` has a ternary rule that can complete.
    pub fn can_expand(&self, i: usize) -> bool {
        self.live[i].iter().any(|&l| l)
    }

    pub fn is_derivable(&self, i: usize) -> bool {
        self.report.derivable[i]
    }

    /// `Σ_i |Child(i)|`.
    pub fn rule_space_size(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    /// Nonterminals that emit a token in some rule (unary or ternary).
    pub fn emitting_nonterminals(&self) -> usize {
        (1..self.node_count())
            .filter(|&i| self.can_emit[i] || !self.children[i].is_empty())
            .count()
    }

    pub fn validate(&self) -> &GrammarReport {
        &self.report
    }

    /// Nonterminals ordered so that every child precedes its parents.
    pub(crate) fn bottom_up_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.node_count()).collect();
        order.sort_by_key(|&i| {
            let (lo, hi) = self.tree.subtree_interval(i);
            (hi - lo, i)
        });
        order
    }

    fn analyze(&self) -> GrammarReport {
        let m = self.node_count();
        let mut derivable = vec![false; m];
        let mut min_len = vec![None; m];
        let mut max_len: Vec<Option<usize>> = vec![None; m];
        derivable[0] = true;
        min_len[0] = Some(0);
        max_len[0] = Some(0);
        for i in self.bottom_up_order() {
            if i == 0 {
                continue;
            }
            let mut lo = None::<usize>;
            let mut hi = None::<usize>;
            if self.can_emit[i] {
                lo = Some(1);
                hi = Some(1);
            }
            for p in &self.children[i] {
                if let (Some(l_lo), Some(l_hi), Some(r_lo), Some(r_hi)) = (
                    min_len[p.left],
                    max_len[p.left],
                    min_len[p.right],
                    max_len[p.right],
                ) {
                    let cand_lo = 1 + l_lo + r_lo;
                    let cand_hi = 1 + l_hi + r_hi;
                    lo = Some(lo.map_or(cand_lo, |v| v.min(cand_lo)));
                    hi = Some(hi.map_or(cand_hi, |v| v.max(cand_hi)));
                }
            }
            derivable[i] = lo.is_some();
            min_len[i] = lo;
            max_len[i] = hi;
        }
        GrammarReport {
            derivable,
            min_len,
            max_len,
        }
    }
}
