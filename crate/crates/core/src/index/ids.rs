//! Hierarchical digit identifiers from recursive constrained clustering.

use serde::{Deserialize, Serialize};

use super::cluster::constrained_kmeans;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdConfig {
    /// Clusters per level, 2..=10.
    pub branching: usize,
    /// Partitions at or below this size become leaves, 1..=10.
    pub leaf_size: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for IdConfig {
    fn default() -> Self {
        IdConfig {
            branching: 4,
            leaf_size: 4,
            seed: 0,
            max_iter: 50,
            restarts: 8,
        }
    }
}

/// A subtree; `prefix` is the digit path from the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdNode {
    pub prefix: String,
    pub children: Vec<IdNode>,
    /// Leaf members in ordinal order; empty for inner nodes.
    pub records: Vec<usize>,
}

impl IdNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Every record under this node.
    pub fn members(&self) -> Vec<usize> {
        let mut out = self.records.clone();
        for c in &self.children {
            out.extend(c.members());
        }
        out
    }

    pub fn leaves(&self) -> Vec<&IdNode> {
        if self.is_leaf() {
            vec![self]
        } else {
            self.children.iter().flat_map(IdNode::leaves).collect()
        }
    }

    /// Nodes at exactly `depth` below the root.
    pub fn at_depth(&self, depth: usize) -> Vec<&IdNode> {
        if depth == 0 {
            vec![self]
        } else {
            self.children.iter().flat_map(|c| c.at_depth(depth - 1)).collect()
        }
    }

    fn depth(&self) -> usize {
        self.children.iter().map(|c| 1 + c.depth()).max().unwrap_or(0)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn seed_for(base: u64, prefix: &str) -> u64 {
    prefix
        .bytes()
        .fold(base ^ 0xA076_1D64_78BD_642F, |h, b| (h ^ b as u64).wrapping_mul(0x1000_0000_01B3))
}

fn build(idx: Vec<usize>, prefix: String, vectors: &[Vec<f64>], labels: &[String], cfg: &IdConfig) -> Result<IdNode> {
    let n = idx.len();
    if n <= cfg.leaf_size {
        let mut records = idx;
        records.sort_by(|&a, &b| labels[a].cmp(&labels[b]).then(a.cmp(&b)));
        return Ok(IdNode {
            prefix,
            children: Vec::new(),
            records,
        });
    }
    let k = cfg.branching.min(n);
    let tau = (n / (2 * cfg.branching)).max(1);
    let pts: Vec<Vec<f64>> = idx.iter().map(|&i| vectors[i].clone()).collect();
    let r = constrained_kmeans(&pts, k, tau, seed_for(cfg.seed, &prefix), cfg.max_iter, cfg.restarts)?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| norm(&r.centroids[a]).total_cmp(&norm(&r.centroids[b])).then(a.cmp(&b)));
    let mut children = Vec::with_capacity(k);
    for (digit, &c) in order.iter().enumerate() {
        let members: Vec<usize> = idx
            .iter()
            .zip(&r.assignment)
            .filter(|(_, &a)| a == c)
            .map(|(&i, _)| i)
            .collect();
        children.push(build(members, format!("{prefix}{digit}"), vectors, labels, cfg)?);
    }
    Ok(IdNode {
        prefix,
        children,
        records: Vec::new(),
    })
}

/// Extend shallow leaves with single-child `0` chains so every leaf sits at
/// the same depth and the identifiers form a prefix-free code.
fn pad(node: IdNode, depth: usize) -> IdNode {
    if node.is_leaf() {
        if node.prefix.len() >= depth {
            return node;
        }
        let inner = pad(
            IdNode {
                prefix: format!("{}0", node.prefix),
                children: Vec::new(),
                records: node.records,
            },
            depth,
        );
        return IdNode {
            prefix: node.prefix,
            children: vec![inner],
            records: Vec::new(),
        };
    }
    IdNode {
        prefix: node.prefix,
        children: node.children.into_iter().map(|c| pad(c, depth)).collect(),
        records: Vec::new(),
    }
}

/// Identifier per record (leaf path plus within-leaf ordinal) and the tree.
pub fn build_hierarchical_ids(
    vectors: &[Vec<f64>],
    labels: &[String],
    cfg: &IdConfig,
) -> Result<(Vec<String>, IdNode)> {
    if !(2..=10).contains(&cfg.branching) {
        return Err(Error::Config("branching factor must be between 2 and 10".into()));
    }
    if !(1..=10).contains(&cfg.leaf_size) {
        return Err(Error::Config("leaf size must be between 1 and 10".into()));
    }
    if vectors.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: vectors.len(),
        });
    }
    if vectors.is_empty() {
        return Err(Error::Config("no records to index".into()));
    }
    let root = build((0..vectors.len()).collect(), String::new(), vectors, labels, cfg)?;
    let depth = root.depth();
    let root = pad(root, depth);
    let mut ids = vec![String::new(); vectors.len()];
    for leaf in root.leaves() {
        for (ordinal, &r) in leaf.records.iter().enumerate() {
            ids[r] = format!("{}{ordinal}", leaf.prefix);
        }
    }
    Ok((ids, root))
}
