//! The fixed backbone tree of a right-heavy PCFG.
//!
//! A root with a single left child is followed by a chain of right links
//! (the main-chain candidates). Every chain node below the root carries a
//! complete binary tree of depth `depth` as its left subtree. Nodes are
//! numbered by in-order traversal, so node `0` is the root's left child and
//! node `1` is the root (the start symbol).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest accepted prefix-tree depth. Deeper trees make `2^depth` impractical
/// for the dynamic programs long before memory runs out.
pub const MAX_DEPTH: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportTreeConfig {
    /// Source-sentence length in tokens.
    pub src_len: usize,
    /// Upsampling ratio applied to the source length.
    pub upsample: usize,
    /// Depth of each local prefix tree.
    pub depth: u32,
}

impl SupportTreeConfig {
    pub fn new(src_len: usize, upsample: usize, depth: u32) -> Result<Self> {
        let config = Self {
            src_len,
            upsample,
            depth,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.src_len == 0 {
            return Err(Error::InvalidConfig("src_len must be at least 1".into()));
        }
        if self.upsample == 0 {
            return Err(Error::InvalidConfig("upsample must be at least 1".into()));
        }
        if self.depth > MAX_DEPTH {
            return Err(Error::InvalidConfig(format!(
                "depth {} exceeds the maximum of {MAX_DEPTH}",
                self.depth
            )));
        }
        self.src_len
            .checked_mul(self.upsample)
            .and_then(|v| v.checked_mul(1usize << self.depth))
            .and_then(|v| v.checked_add(2))
            .ok_or_else(|| Error::InvalidConfig("node count overflows".into()))?;
        Ok(())
    }

    /// `d = 2^depth`, the strict upper bound on prefix-tree yield lengths.
    pub fn prefix_width(&self) -> usize {
        1 << self.depth
    }

    /// Number of chain links below the root.
    pub fn chain_links(&self) -> usize {
        self.upsample * self.src_len
    }

    /// `m = upsample * src_len * 2^depth + 2`.
    pub fn node_count(&self) -> usize {
        self.chain_links() * self.prefix_width() + 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportTree {
    config: SupportTreeConfig,
    left: Vec<Option<usize>>,
    right: Vec<Option<usize>>,
    parent: Vec<Option<usize>>,
    main_chain: Vec<bool>,
    interval: Vec<(usize, usize)>,
}

/// Arena node used while building the tree before in-order numbering.
#[derive(Default)]
struct ArenaNode {
    left: Option<usize>,
    right: Option<usize>,
    main_chain: bool,
}

fn push_complete_tree(arena: &mut Vec<ArenaNode>, depth: u32) -> Option<usize> {
    if depth == 0 {
        return None;
    }
    let id = arena.len();
    arena.push(ArenaNode::default());
    let left = push_complete_tree(arena, depth - 1);
    let right = push_complete_tree(arena, depth - 1);
    arena[id].left = left;
    arena[id].right = right;
    Some(id)
}

impl SupportTree {
    pub fn build(config: SupportTreeConfig) -> Result<Self> {
        config.validate()?;

        let mut arena = vec![ArenaNode {
            main_chain: true,
            ..Default::default()
        }];
        arena.push(ArenaNode::default());
        arena[0].left = Some(1);
        let mut now = 0;
        for _ in 0..config.chain_links() {
            let next = arena.len();
            arena.push(ArenaNode {
                main_chain: true,
                ..Default::default()
            });
            arena[now].right = Some(next);
            now = next;
            let prefix = push_complete_tree(&mut arena, config.depth);
            arena[now].left = prefix;
        }

        // In-order numbering with an explicit stack.
        let mut order = vec![usize::MAX; arena.len()];
        let mut stack = Vec::new();
        let mut cursor = Some(0);
        let mut next_index = 0;
        while cursor.is_some() || !stack.is_empty() {
            while let Some(id) = cursor {
                stack.push(id);
                cursor = arena[id].left;
            }
            let id = stack.pop().expect("stack is non-empty");
            order[id] = next_index;
            next_index += 1;
            cursor = arena[id].right;
        }

        let m = arena.len();
        let mut left = vec![None; m];
        let mut right = vec![None; m];
        let mut parent = vec![None; m];
        let mut main_chain = vec![false; m];
        for (id, node) in arena.iter().enumerate() {
            let i = order[id];
            main_chain[i] = node.main_chain;
            if let Some(l) = node.left {
                left[i] = Some(order[l]);
                parent[order[l]] = Some(i);
            }
            if let Some(r) = node.right {
                right[i] = Some(order[r]);
                parent[order[r]] = Some(i);
            }
        }

        let mut tree = Self {
            config,
            left,
            right,
            parent,
            main_chain,
            interval: vec![(0, 0); m],
        };
        tree.fill_intervals(1);
        debug_assert_eq!(m, config.node_count());
        Ok(tree)
    }

    fn fill_intervals(&mut self, root: usize) {
        // Post-order over an explicit stack; children are finished before parents.
        let mut stack = vec![(root, false)];
        while let Some((i, expanded)) = stack.pop() {
            if expanded {
                let lo = self.left[i].map_or(i, |l| self.interval[l].0);
                let hi = self.right[i].map_or(i, |r| self.interval[r].1);
                self.interval[i] = (lo, hi);
            } else {
                stack.push((i, true));
                if let Some(r) = self.right[i] {
                    stack.push((r, false));
                }
                if let Some(l) = self.left[i] {
                    stack.push((l, false));
                }
            }
        }
    }

    pub fn config(&self) -> &SupportTreeConfig {
        &self.config
    }

    pub fn node_count(&self) -> usize {
        self.left.len()
    }

    pub fn prefix_width(&self) -> usize {
        self.config.prefix_width()
    }

    fn check(&self, i: usize) -> Result<()> {
        if i < self.node_count() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: i,
                node_count: self.node_count(),
            })
        }
    }

    pub fn left_child(&self, i: usize) -> Option<usize> {
        self.left[i]
    }

    pub fn right_child(&self, i: usize) -> Option<usize> {
        self.right[i]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn is_main_chain(&self, i: usize) -> bool {
        self.main_chain[i]
    }

    /// Main-chain node indices in ascending order.
    pub fn main_chain(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&i| self.main_chain[i])
            .collect()
    }

    /// Smallest and largest in-order index in the subtree rooted at `i`.
    pub fn subtree_interval(&self, i: usize) -> (usize, usize) {
        self.interval[i]
    }

    pub fn is_leaf(&self, i: usize) -> Result<bool> {
        self.check(i)?;
        Ok(self.left[i].is_none() && self.right[i].is_none())
    }

    /// Whether `j` lies in the left subtree of `i`.
    pub fn in_left_reach(&self, j: usize, i: usize) -> Result<bool> {
        self.check(j)?;
        self.check(i)?;
        Ok(self.left_reach_unchecked(j, i))
    }

    /// Whether `k` lies in the right subtree of `i`. With `closure` set and `i`
    /// on the main chain, `k` must also be on the main chain.
    pub fn in_right_reach(&self, k: usize, i: usize, closure: bool) -> Result<bool> {
        self.check(k)?;
        self.check(i)?;
        Ok(self.right_reach_unchecked(k, i, closure))
    }

    pub(crate) fn left_reach_unchecked(&self, j: usize, i: usize) -> bool {
        match self.left[i] {
            Some(l) => {
                let (lo, hi) = self.interval[l];
                lo <= j && j <= hi
            }
            None => false,
        }
    }

    pub(crate) fn right_reach_unchecked(&self, k: usize, i: usize, closure: bool) -> bool {
        let inside = match self.right[i] {
            Some(r) => {
                let (lo, hi) = self.interval[r];
                lo <= k && k <= hi
            }
            None => false,
        };
        inside && (!closure || !self.main_chain[i] || self.main_chain[k])
    }
}
