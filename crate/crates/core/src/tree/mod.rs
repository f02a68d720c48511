//! The search tree.
//!
//! Internal nodes test one descriptor bit (0 goes left, 1 goes right) and no
//! bit index repeats along a root-to-leaf path. Leaves hold descriptor entries
//! in insertion order. Searches descend greedily to a single leaf and scan it.

mod format;
mod split;

use std::collections::BTreeMap;

pub use split::select_split_bit;

use crate::descriptor::{check_width, BitStatistics, DescriptorEntry};
use crate::error::{HbstError, Result};

/// Construction and matching parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeConfig {
    /// Hamming threshold for accepting a match.
    pub tau: u32,
    /// Largest admissible `|0.5 - mean|` for a split bit.
    pub delta_max: f64,
    /// Leaves holding more than this many entries get split.
    pub n_max: usize,
    /// Depth bound; `None` means the descriptor width.
    pub max_depth: Option<u32>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            tau: 25,
            delta_max: 0.1,
            n_max: 10,
            max_depth: None,
        }
    }
}

impl TreeConfig {
    pub fn with_n_max(n_max: usize) -> Self {
        TreeConfig {
            n_max,
            ..Default::default()
        }
    }

    pub fn validate(&self, dim_bits: u32) -> Result<()> {
        if self.tau > dim_bits {
            return Err(HbstError::usage(format!(
                "tau {} exceeds descriptor width {dim_bits}",
                self.tau
            )));
        }
        if !(0.0..=0.5).contains(&self.delta_max) {
            return Err(HbstError::usage(format!(
                "delta_max {} outside [0, 0.5]",
                self.delta_max
            )));
        }
        if self.n_max == 0 {
            return Err(HbstError::usage("n_max must be at least 1"));
        }
        match self.max_depth {
            Some(0) => Err(HbstError::usage("max_depth must be positive")),
            Some(h) if h > dim_bits => Err(HbstError::usage(format!(
                "max_depth {h} exceeds descriptor width {dim_bits}"
            ))),
            _ => Ok(()),
        }
    }

    fn depth_limit(&self, dim_bits: u32) -> u32 {
        self.max_depth.unwrap_or(dim_bits).min(dim_bits)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Internal {
        bit_index: u32,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        entries: Vec<DescriptorEntry>,
    },
}

impl Node {
    pub fn leaf(entries: Vec<DescriptorEntry>) -> Self {
        Node::Leaf { entries }
    }

    pub fn internal(bit_index: u32, left: Node, right: Node) -> Self {
        Node::Internal {
            bit_index,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// A query/reference correspondence.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchRecord {
    pub query: DescriptorEntry,
    pub reference: DescriptorEntry,
    pub distance: u32,
}

/// Outcome of a greedy nearest-neighbour search.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    /// Closest entry of the scanned set, if within tau.
    pub best: Option<MatchRecord>,
    /// Number of descriptors compared.
    pub leaf_scanned: usize,
    /// Number of internal nodes passed on the way down.
    pub depth_traversed: u32,
}

impl SearchResult {
    /// Descriptor comparisons plus branch decisions.
    pub fn work(&self) -> usize {
        self.leaf_scanned + self.depth_traversed as usize
    }
}

/// One step of a root-to-leaf path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Branch {
    pub bit_index: u32,
    pub went_right: bool,
}

/// Leaf depth statistics, one sample per leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthStats {
    pub mean_depth: f64,
    pub stddev_depth: f64,
    pub max_depth: u32,
    pub leaf_count: usize,
    /// leaf size -> number of leaves with that size
    pub leaf_size_histogram: BTreeMap<usize, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HbstTree {
    dim_bits: u32,
    root: Node,
}

impl HbstTree {
    /// An empty tree (a single empty leaf).
    pub fn new(dim_bits: u32) -> Self {
        assert!(dim_bits > 0, "descriptor width must be positive");
        HbstTree {
            dim_bits,
            root: Node::leaf(Vec::new()),
        }
    }

    /// Wraps an explicit node structure after checking the tree invariants.
    pub fn from_root(dim_bits: u32, root: Node) -> Result<Self> {
        if dim_bits == 0 {
            return Err(HbstError::usage("descriptor width must be positive"));
        }
        let tree = HbstTree { dim_bits, root };
        tree.validate()?;
        Ok(tree)
    }

    pub fn dim_bits(&self) -> u32 {
        self.dim_bits
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn len(&self) -> usize {
        let mut n = 0;
        self.for_each_leaf(|_, entries| n += entries.len());
        n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offline construction by recursive even splitting.
    ///
    /// A subset becomes a leaf when it holds at most `n_max` entries, when the
    /// depth bound is reached, or when no bit is within `delta_max` of 0.5.
    pub fn build_balanced(dim_bits: u32, entries: Vec<DescriptorEntry>, config: &TreeConfig) -> Result<Self> {
        config.validate(dim_bits)?;
        check_width(&entries, dim_bits)?;
        let mut path = Vec::new();
        let root = build_node(entries, 0, &mut path, config, config.depth_limit(dim_bits));
        Ok(HbstTree { dim_bits, root })
    }

    /// Adds one entry to the leaf it descends to, splitting that leaf if it
    /// grew beyond `n_max` and an admissible split bit exists.
    pub fn insert(&mut self, entry: DescriptorEntry, config: &TreeConfig) -> Result<()> {
        check_width([&entry], self.dim_bits)?;
        config.validate(self.dim_bits)?;
        let limit = config.depth_limit(self.dim_bits);
        let mut path = Vec::new();
        insert_node(&mut self.root, entry, 0, &mut path, config, limit);
        Ok(())
    }

    /// Greedy descent followed by a linear scan of the reached leaf.
    ///
    /// Among equally close entries the earliest inserted one wins.
    pub fn search_nearest(&self, query: &DescriptorEntry, tau: u32) -> Result<SearchResult> {
        check_width([query], self.dim_bits)?;
        let (entries, depth) = self.reach_leaf(query);
        let mut best: Option<(u32, &DescriptorEntry)> = None;
        for e in entries {
            let dist = query.descriptor.distance(&e.descriptor);
            if best.is_none_or(|(b, _)| dist < b) {
                best = Some((dist, e));
            }
        }
        Ok(SearchResult {
            best: best.filter(|(d, _)| *d <= tau).map(|(distance, e)| MatchRecord {
                query: query.clone(),
                reference: e.clone(),
                distance,
            }),
            leaf_scanned: entries.len(),
            depth_traversed: depth,
        })
    }

    /// Every entry of the reached leaf within `tau`, in leaf order.
    pub fn search_all(&self, query: &DescriptorEntry, tau: u32) -> Result<Vec<MatchRecord>> {
        check_width([query], self.dim_bits)?;
        let (entries, _) = self.reach_leaf(query);
        Ok(entries
            .iter()
            .filter_map(|e| {
                let distance = query.descriptor.distance(&e.descriptor);
                (distance <= tau).then(|| MatchRecord {
                    query: query.clone(),
                    reference: e.clone(),
                    distance,
                })
            })
            .collect())
    }

    /// Matches one image against the current tree, then inserts it.
    ///
    /// All searches see the tree as it was on entry, so an image never
    /// matches itself.
    pub fn search_and_insert(
        &mut self,
        entries: Vec<DescriptorEntry>,
        config: &TreeConfig,
    ) -> Result<Vec<SearchResult>> {
        if let Some(first) = entries.first() {
            if let Some(other) = entries.iter().find(|e| e.image_id != first.image_id) {
                return Err(HbstError::usage(format!(
                    "search_and_insert expects a single image, got ids {} and {}",
                    first.image_id, other.image_id
                )));
            }
        }
        check_width(&entries, self.dim_bits)?;
        config.validate(self.dim_bits)?;
        let results = entries
            .iter()
            .map(|e| self.search_nearest(e, config.tau))
            .collect::<Result<Vec<_>>>()?;
        for e in entries {
            self.insert(e, config)?;
        }
        Ok(results)
    }

    /// Leaf reached by greedy descent and its depth.
    pub fn reach_leaf(&self, query: &DescriptorEntry) -> (&[DescriptorEntry], u32) {
        let mut node = &self.root;
        let mut depth = 0;
        loop {
            match node {
                Node::Internal { bit_index, left, right } => {
                    node = if query.descriptor.bit(*bit_index) { right } else { left };
                    depth += 1;
                }
                Node::Leaf { entries } => return (entries, depth),
            }
        }
    }

    /// Visits every leaf with its root-to-leaf path, left before right.
    pub fn for_each_leaf<F>(&self, mut f: F)
    where
        F: FnMut(&[Branch], &[DescriptorEntry]),
    {
        fn walk<F: FnMut(&[Branch], &[DescriptorEntry])>(node: &Node, path: &mut Vec<Branch>, f: &mut F) {
            match node {
                Node::Internal { bit_index, left, right } => {
                    path.push(Branch {
                        bit_index: *bit_index,
                        went_right: false,
                    });
                    walk(left, path, f);
                    path.last_mut().unwrap().went_right = true;
                    walk(right, path, f);
                    path.pop();
                }
                Node::Leaf { entries } => f(path, entries),
            }
        }
        walk(&self.root, &mut Vec::new(), &mut f);
    }

    pub fn depth_stats(&self) -> DepthStats {
        let mut depths = Vec::new();
        let mut hist = BTreeMap::new();
        self.for_each_leaf(|path, entries| {
            depths.push(path.len() as u32);
            *hist.entry(entries.len()).or_insert(0) += 1;
        });
        let n = depths.len() as f64;
        let mean = depths.iter().map(|&d| f64::from(d)).sum::<f64>() / n;
        let var = depths.iter().map(|&d| (f64::from(d) - mean).powi(2)).sum::<f64>() / n;
        DepthStats {
            mean_depth: mean,
            stddev_depth: var.sqrt(),
            max_depth: depths.iter().copied().max().unwrap_or(0),
            leaf_count: depths.len(),
            leaf_size_histogram: hist,
        }
    }

    /// Checks path index uniqueness, path consistency of every entry,
    /// bit ranges and descriptor widths.
    pub fn validate(&self) -> Result<()> {
        let mut err = None;
        self.for_each_leaf(|path, entries| {
            if err.is_some() {
                return;
            }
            if path.len() > self.dim_bits as usize {
                err = Some(format!("leaf depth {} exceeds width {}", path.len(), self.dim_bits));
                return;
            }
            for (i, b) in path.iter().enumerate() {
                if b.bit_index >= self.dim_bits {
                    err = Some(format!("bit index {} out of range", b.bit_index));
                    return;
                }
                if path[..i].iter().any(|a| a.bit_index == b.bit_index) {
                    err = Some(format!("bit index {} repeated on a path", b.bit_index));
                    return;
                }
            }
            for e in entries {
                if e.dim_bits() != self.dim_bits {
                    err = Some(format!("entry width {} in a {}-bit tree", e.dim_bits(), self.dim_bits));
                    return;
                }
                if path.iter().any(|b| e.descriptor.bit(b.bit_index) != b.went_right) {
                    err = Some(format!(
                        "entry (image {}, keypoint {}) is on the wrong side of a split",
                        e.image_id, e.keypoint_id
                    ));
                    return;
                }
            }
        });
        match err {
            Some(msg) => Err(HbstError::Consistency(msg)),
            None => Ok(()),
        }
    }
}

fn partition(entries: Vec<DescriptorEntry>, bit_index: u32) -> (Vec<DescriptorEntry>, Vec<DescriptorEntry>) {
    entries.into_iter().partition(|e| !e.descriptor.bit(bit_index))
}

fn choose_split(entries: &[DescriptorEntry], path: &[u32], config: &TreeConfig) -> Option<u32> {
    let stats = BitStatistics::from_descriptors(entries.iter().map(|e| &e.descriptor)).ok()?;
    select_split_bit(&stats, path, config.delta_max)
}

fn build_node(
    entries: Vec<DescriptorEntry>,
    depth: u32,
    path: &mut Vec<u32>,
    config: &TreeConfig,
    limit: u32,
) -> Node {
    if entries.len() <= config.n_max || depth >= limit {
        return Node::leaf(entries);
    }
    let Some(bit_index) = choose_split(&entries, path, config) else {
        return Node::leaf(entries);
    };
    let (left, right) = partition(entries, bit_index);
    path.push(bit_index);
    let left = build_node(left, depth + 1, path, config, limit);
    let right = build_node(right, depth + 1, path, config, limit);
    path.pop();
    Node::internal(bit_index, left, right)
}

fn insert_node(
    node: &mut Node,
    entry: DescriptorEntry,
    depth: u32,
    path: &mut Vec<u32>,
    config: &TreeConfig,
    limit: u32,
) {
    match node {
        Node::Internal { bit_index, left, right } => {
            path.push(*bit_index);
            let child = if entry.descriptor.bit(*bit_index) { right } else { left };
            insert_node(child, entry, depth + 1, path, config, limit);
        }
        Node::Leaf { entries } => {
            entries.push(entry);
            split_if_oversized(node, depth, path, config, limit);
        }
    }
}

/// Turns an oversized leaf into an internal node. A child that is still
/// oversized (only possible with `delta_max = 0.5`) is split in turn.
fn split_if_oversized(node: &mut Node, depth: u32, path: &mut Vec<u32>, config: &TreeConfig, limit: u32) {
    let Node::Leaf { entries } = node else {
        return;
    };
    if entries.len() <= config.n_max || depth >= limit {
        return;
    }
    let Some(bit_index) = choose_split(entries, path, config) else {
        return;
    };
    let (left, right) = partition(std::mem::take(entries), bit_index);
    let mut left = Node::leaf(left);
    let mut right = Node::leaf(right);
    path.push(bit_index);
    split_if_oversized(&mut left, depth + 1, path, config, limit);
    split_if_oversized(&mut right, depth + 1, path, config, limit);
    path.pop();
    *node = Node::internal(bit_index, left, right);
}
