//! Head-vector trees over the sentences of one essay.
//!
//! `head[i] == i` encodes a self-loop: the major claim (root) and every
//! non-argumentative sentence point at themselves, so the link distance
//! `head[i] - i` is zero for both.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub is_ac: bool,
}

/// Relation carried by a link. Read and written, never predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkLabel {
    Support,
    Attack,
    Detail,
    Restatement,
}

impl LinkLabel {
    pub const ALL: [LinkLabel; 4] = [
        LinkLabel::Support,
        LinkLabel::Attack,
        LinkLabel::Detail,
        LinkLabel::Restatement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkLabel::Support => "support",
            LinkLabel::Attack => "attack",
            LinkLabel::Detail => "detail",
            LinkLabel::Restatement => "restatement",
        }
    }
}

impl FromStr for LinkLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LinkLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown relation label {s:?}")))
    }
}

/// Quasi argumentative component type, read off the topology alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QactLabel {
    MajorClaim,
    AcNonLeaf,
    AcLeaf,
    NonAc,
}

impl QactLabel {
    pub const ALL: [QactLabel; 4] = [
        QactLabel::MajorClaim,
        QactLabel::AcNonLeaf,
        QactLabel::AcLeaf,
        QactLabel::NonAc,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QactLabel::MajorClaim => "major_claim",
            QactLabel::AcNonLeaf => "ac_non_leaf",
            QactLabel::AcLeaf => "ac_leaf",
            QactLabel::NonAc => "non_ac",
        }
    }
}

impl fmt::Display for QactLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Node depth bucket; everything at depth five or deeper shares `D5Plus`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DepthCategory {
    #[serde(rename = "d0")]
    D0,
    #[serde(rename = "d1")]
    D1,
    #[serde(rename = "d2")]
    D2,
    #[serde(rename = "d3")]
    D3,
    #[serde(rename = "d4")]
    D4,
    #[serde(rename = "d5plus")]
    D5Plus,
}

impl DepthCategory {
    pub const ALL: [DepthCategory; 6] = [
        DepthCategory::D0,
        DepthCategory::D1,
        DepthCategory::D2,
        DepthCategory::D3,
        DepthCategory::D4,
        DepthCategory::D5Plus,
    ];

    pub fn from_depth(depth: usize) -> Self {
        Self::ALL[depth.min(5)]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DepthCategory::D0 => "d0",
            DepthCategory::D1 => "d1",
            DepthCategory::D2 => "d2",
            DepthCategory::D3 => "d3",
            DepthCategory::D4 => "d4",
            DepthCategory::D5Plus => "d5plus",
        }
    }
}

impl fmt::Display for DepthCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Corpus-level tree shape summary (mean and sample SD over essays).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeStats {
    pub avg_depth: f64,
    pub std_depth: f64,
    pub leaf_ratio: f64,
    pub std_leaf_ratio: f64,
}

/// An acyclic head assignment over `n` sentence nodes.
///
/// Construction only checks range and acyclicity, which every decoded tree
/// satisfies. Gold annotations additionally pass [`ArgTree::validate_gold`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgTree {
    head: Vec<usize>,
    relation: Vec<Option<LinkLabel>>,
}

impl ArgTree {
    pub fn from_heads(head: Vec<usize>) -> Result<Self> {
        let n = head.len();
        let relation = vec![None; n];
        Self::with_relations(head, relation)
    }

    pub fn with_relations(head: Vec<usize>, relation: Vec<Option<LinkLabel>>) -> Result<Self> {
        let n = head.len();
        if relation.len() != n {
            return Err(Error::Structure(format!(
                "{} relations for {} nodes",
                relation.len(),
                n
            )));
        }
        if let Some((i, &h)) = head.iter().enumerate().find(|(_, &h)| h >= n) {
            return Err(Error::Structure(format!(
                "head of node {i} is {h}, outside 0..{n}"
            )));
        }
        if let Some(node) = find_cycle(&head) {
            return Err(Error::Structure(format!("cycle through node {node}")));
        }
        Ok(ArgTree { head, relation })
    }

    /// Rebuilds a head vector from per-node distances `d_i = head_i - i`.
    pub fn from_distances(distances: &[i64]) -> Result<Self> {
        let n = distances.len() as i64;
        let head = distances
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let h = i as i64 + d;
                if (0..n).contains(&h) {
                    Ok(h as usize)
                } else {
                    Err(Error::Structure(format!(
                        "distance {d} at node {i} points outside the essay"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_heads(head)
    }

    /// Checks the gold-annotation invariant: at most one self-loop node
    /// receives links, and exactly one does whenever any link exists.
    pub fn validate_gold(&self) -> Result<()> {
        let incoming = self.incoming_counts();
        let rooted: Vec<usize> = (0..self.n())
            .filter(|&i| self.head[i] == i && incoming[i] > 0)
            .collect();
        let has_edges = (0..self.n()).any(|i| self.head[i] != i);
        match (has_edges, rooted.len()) {
            (false, 0) | (true, 1) => {}
            (_, k) => {
                return Err(Error::Structure(format!(
                    "expected one root with incoming links, found {k} ({rooted:?})"
                )))
            }
        }
        for (i, rel) in self.relation.iter().enumerate() {
            if self.head[i] == i && rel.is_some() {
                return Err(Error::Structure(format!(
                    "self-loop node {i} carries a relation label"
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.head.len()
    }

    pub fn heads(&self) -> &[usize] {
        &self.head
    }

    pub fn relations(&self) -> &[Option<LinkLabel>] {
        &self.relation
    }

    pub fn is_self_loop(&self, i: usize) -> bool {
        self.head[i] == i
    }

    pub fn incoming_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n()];
        for (i, &h) in self.head.iter().enumerate() {
            if h != i {
                counts[h] += 1;
            }
        }
        counts
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.n()];
        for (i, &h) in self.head.iter().enumerate() {
            if h != i {
                children[h].push(i);
            }
        }
        children
    }

    /// A node is argumentative when it has any link, in or out.
    pub fn is_ac(&self, i: usize) -> bool {
        self.head[i] != i || self.head.iter().enumerate().any(|(j, &h)| j != i && h == i)
    }

    /// Self-loop without incoming links.
    pub fn is_non_ac(&self, i: usize) -> bool {
        !self.is_ac(i)
    }

    pub fn derive_qact(&self) -> Vec<QactLabel> {
        let incoming = self.incoming_counts();
        (0..self.n())
            .map(|i| {
                let has_in = incoming[i] > 0;
                let has_out = self.head[i] != i;
                match (has_in, has_out) {
                    (true, false) => QactLabel::MajorClaim,
                    (true, true) => QactLabel::AcNonLeaf,
                    (false, true) => QactLabel::AcLeaf,
                    (false, false) => QactLabel::NonAc,
                }
            })
            .collect()
    }

    /// Raw depth of every node: self-loop nodes sit at 0, every other node
    /// one below its head.
    pub fn depths(&self) -> Vec<usize> {
        let n = self.n();
        let mut depth: Vec<Option<usize>> = vec![None; n];
        for start in 0..n {
            let mut path = Vec::new();
            let mut node = start;
            let base = loop {
                if let Some(d) = depth[node] {
                    break d;
                }
                if self.head[node] == node {
                    depth[node] = Some(0);
                    break 0;
                }
                path.push(node);
                node = self.head[node];
            };
            for (k, &p) in path.iter().rev().enumerate() {
                depth[p] = Some(base + k + 1);
            }
        }
        depth.into_iter().map(|d| d.unwrap_or(0)).collect()
    }

    pub fn node_depths(&self) -> Vec<DepthCategory> {
        self.depths()
            .into_iter()
            .map(DepthCategory::from_depth)
            .collect()
    }

    /// The node itself plus every transitive child.
    pub fn descendant_set(&self, node: usize) -> Result<BTreeSet<usize>> {
        if node >= self.n() {
            return Err(Error::Argument(format!(
                "node {node} out of range for {} nodes",
                self.n()
            )));
        }
        let children = self.children();
        let mut set = BTreeSet::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            if set.insert(v) {
                stack.extend(children[v].iter().copied());
            }
        }
        Ok(set)
    }

    /// Descendant sets of every node, computed bottom-up in one pass.
    pub fn descendant_sets(&self) -> Vec<BTreeSet<usize>> {
        let depths = self.depths();
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(depths[i]));
        let mut sets: Vec<BTreeSet<usize>> = (0..self.n()).map(|i| BTreeSet::from([i])).collect();
        for i in order {
            let h = self.head[i];
            if h != i {
                let child = sets[i].clone();
                sets[h].extend(child);
            }
        }
        sets
    }

    pub fn heads_to_distances(&self) -> Vec<i64> {
        self.head
            .iter()
            .enumerate()
            .map(|(i, &h)| h as i64 - i as i64)
            .collect()
    }

    /// Maximum node depth over argumentative nodes (0 when there are none).
    pub fn tree_depth(&self) -> usize {
        let depths = self.depths();
        (0..self.n())
            .filter(|&i| self.is_ac(i))
            .map(|i| depths[i])
            .max()
            .unwrap_or(0)
    }

    /// Leaf ACs over all ACs; 0 for an essay without ACs.
    pub fn leaf_ratio(&self) -> f64 {
        let qact = self.derive_qact();
        let acs = qact.iter().filter(|&&q| q != QactLabel::NonAc).count();
        if acs == 0 {
            return 0.0;
        }
        let leaves = qact.iter().filter(|&&q| q == QactLabel::AcLeaf).count();
        leaves as f64 / acs as f64
    }
}

fn find_cycle(head: &[usize]) -> Option<usize> {
    // 0 = unvisited, 1 = on current path, 2 = done
    let mut state = vec![0u8; head.len()];
    for start in 0..head.len() {
        let mut path = Vec::new();
        let mut node = start;
        while state[node] == 0 {
            state[node] = 1;
            path.push(node);
            if head[node] == node {
                break;
            }
            node = head[node];
        }
        if state[node] == 1 && head[node] != node {
            return Some(node);
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

pub fn shape_stats(trees: &[ArgTree]) -> Result<ShapeStats> {
    if trees.is_empty() {
        return Err(Error::Argument("shape statistics need at least one tree".into()));
    }
    let depths: Vec<f64> = trees.iter().map(|t| t.tree_depth() as f64).collect();
    let ratios: Vec<f64> = trees.iter().map(ArgTree::leaf_ratio).collect();
    let (avg_depth, std_depth) = mean_sd(&depths);
    let (leaf_ratio, std_leaf_ratio) = mean_sd(&ratios);
    Ok(ShapeStats {
        avg_depth,
        std_depth,
        leaf_ratio,
        std_leaf_ratio,
    })
}

/// Mean and sample standard deviation; the SD of a single value is 0.
pub(crate) fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
