//! Interchangeable descriptor matchers behind one trait, selected by name.
//!
//! ```
//! use hbst::{MatcherParams, MatcherRegistry};
//!
//! let registry = MatcherRegistry::with_builtins();
//! let matcher = registry.create("hbst-50", &MatcherParams::new(256)).unwrap();
//! assert_eq!(matcher.name(), "hbst-50");
//! ```

use std::collections::BTreeMap;

use crate::descriptor::{check_width, DescriptorEntry};
use crate::error::{HbstError, Result};
use crate::tree::{HbstTree, MatchRecord, SearchResult, TreeConfig};

/// A growing descriptor database that answers nearest and range queries.
pub trait Matcher: Send + Sync {
    fn name(&self) -> &str;

    fn dim_bits(&self) -> u32;

    /// Number of stored descriptors.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn search_nearest(&self, query: &DescriptorEntry, tau: u32) -> Result<SearchResult>;

    /// Matches within `tau` among the descriptors this strategy inspects.
    fn search_all(&self, query: &DescriptorEntry, tau: u32) -> Result<Vec<MatchRecord>>;

    /// Adds all descriptors of one image.
    fn insert_image(&mut self, entries: &[DescriptorEntry]) -> Result<()>;
}

/// Parameters handed to a matcher factory.
#[derive(Clone, Debug, PartialEq)]
pub struct MatcherParams {
    pub dim_bits: u32,
    pub tree: TreeConfig,
}

impl MatcherParams {
    pub fn new(dim_bits: u32) -> Self {
        MatcherParams {
            dim_bits,
            tree: TreeConfig::default(),
        }
    }

    pub fn with_tree(dim_bits: u32, tree: TreeConfig) -> Self {
        MatcherParams { dim_bits, tree }
    }
}

fn single_image(entries: &[DescriptorEntry]) -> Result<()> {
    if let Some(first) = entries.first() {
        if let Some(other) = entries.iter().find(|e| e.image_id != first.image_id) {
            return Err(HbstError::usage(format!(
                "insert_image expects one image, got ids {} and {}",
                first.image_id, other.image_id
            )));
        }
    }
    Ok(())
}

/// Exhaustive scan over every stored descriptor.
///
/// Descriptor words are also kept in one contiguous array so a scan streams
/// through memory instead of hopping across entries.
#[derive(Clone, Debug)]
pub struct BruteForceMatcher {
    dim_bits: u32,
    refs: Vec<DescriptorEntry>,
    words: Vec<u64>,
}

impl BruteForceMatcher {
    pub fn new(dim_bits: u32) -> Self {
        BruteForceMatcher {
            dim_bits,
            refs: Vec::new(),
            words: Vec::new(),
        }
    }

    pub fn with_references(dim_bits: u32, refs: Vec<DescriptorEntry>) -> Result<Self> {
        let mut m = Self::new(dim_bits);
        m.extend(refs)?;
        Ok(m)
    }

    pub fn references(&self) -> &[DescriptorEntry] {
        &self.refs
    }

    fn extend(&mut self, entries: Vec<DescriptorEntry>) -> Result<()> {
        check_width(&entries, self.dim_bits)?;
        for e in &entries {
            self.words.extend_from_slice(e.descriptor.words());
        }
        self.refs.extend(entries);
        Ok(())
    }

    /// `(index, distance)` of every stored descriptor, in insertion order.
    fn distances<'a>(&'a self, query: &'a DescriptorEntry) -> Result<impl Iterator<Item = (usize, u32)> + 'a> {
        check_width([query], self.dim_bits)?;
        let q = query.descriptor.words();
        Ok(self
            .words
            .chunks_exact(q.len())
            .map(move |w| w.iter().zip(q).map(|(a, b)| (a ^ b).count_ones()).sum())
            .enumerate())
    }

    fn record(&self, query: &DescriptorEntry, index: usize, distance: u32) -> MatchRecord {
        MatchRecord {
            query: query.clone(),
            reference: self.refs[index].clone(),
            distance,
        }
    }
}

impl Matcher for BruteForceMatcher {
    fn name(&self) -> &str {
        "bf"
    }

    fn dim_bits(&self) -> u32 {
        self.dim_bits
    }

    fn len(&self) -> usize {
        self.refs.len()
    }

    fn search_nearest(&self, query: &DescriptorEntry, tau: u32) -> Result<SearchResult> {
        // strict `<` keeps the first of equally distant references
        let best = self
            .distances(query)?
            .fold(None, |best: Option<(usize, u32)>, (i, d)| match best {
                Some((_, b)) if b <= d => best,
                _ => Some((i, d)),
            })
            .filter(|&(_, d)| d <= tau);
        Ok(SearchResult {
            best: best.map(|(i, d)| self.record(query, i, d)),
            leaf_scanned: self.refs.len(),
            depth_traversed: 0,
        })
    }

    fn search_all(&self, query: &DescriptorEntry, tau: u32) -> Result<Vec<MatchRecord>> {
        Ok(self
            .distances(query)?
            .filter(|&(_, d)| d <= tau)
            .map(|(i, d)| self.record(query, i, d))
            .collect())
    }

    fn insert_image(&mut self, entries: &[DescriptorEntry]) -> Result<()> {
        single_image(entries)?;
        self.extend(entries.to_vec())
    }
}

/// Incrementally built search tree.
#[derive(Clone, Debug)]
pub struct HbstMatcher {
    name: String,
    tree: HbstTree,
    config: TreeConfig,
}

impl HbstMatcher {
    pub fn new(name: impl Into<String>, dim_bits: u32, config: TreeConfig) -> Result<Self> {
        config.validate(dim_bits)?;
        Ok(HbstMatcher {
            name: name.into(),
            tree: HbstTree::new(dim_bits),
            config,
        })
    }

    /// Wraps an existing tree, e.g. one loaded from disk.
    pub fn from_tree(name: impl Into<String>, tree: HbstTree, config: TreeConfig) -> Result<Self> {
        config.validate(tree.dim_bits())?;
        Ok(HbstMatcher {
            name: name.into(),
            tree,
            config,
        })
    }

    pub fn tree(&self) -> &HbstTree {
        &self.tree
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn into_tree(self) -> HbstTree {
        self.tree
    }
}

impl Matcher for HbstMatcher {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim_bits(&self) -> u32 {
        self.tree.dim_bits()
    }

    fn len(&self) -> usize {
        self.tree.len()
    }

    fn search_nearest(&self, query: &DescriptorEntry, tau: u32) -> Result<SearchResult> {
        self.tree.search_nearest(query, tau)
    }

    fn search_all(&self, query: &DescriptorEntry, tau: u32) -> Result<Vec<MatchRecord>> {
        self.tree.search_all(query, tau)
    }

    fn insert_image(&mut self, entries: &[DescriptorEntry]) -> Result<()> {
        single_image(entries)?;
        check_width(entries, self.tree.dim_bits())?;
        for e in entries {
            self.tree.insert(e.clone(), &self.config)?;
        }
        Ok(())
    }
}

pub type MatcherFactory = fn(&MatcherParams) -> Result<Box<dyn Matcher>>;

struct RegistryEntry {
    description: &'static str,
    factory: MatcherFactory,
}

/// Name -> matcher factory table.
pub struct MatcherRegistry {
    entries: BTreeMap<String, RegistryEntry>,
}

impl MatcherRegistry {
    pub fn empty() -> Self {
        MatcherRegistry {
            entries: BTreeMap::new(),
        }
    }

    /// `bf`, `hbst` (parameters as given), `hbst-10` and `hbst-50`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("bf", "brute-force scan over all stored descriptors", |p| {
            Ok(Box::new(BruteForceMatcher::new(p.dim_bits)))
        });
        r.register("hbst", "search tree with the supplied tree parameters", |p| {
            Ok(Box::new(HbstMatcher::new("hbst", p.dim_bits, p.tree.clone())?))
        });
        r.register("hbst-10", "search tree, n_max = 10, delta_max = 0.1", |p| {
            let config = TreeConfig {
                n_max: 10,
                delta_max: 0.1,
                ..p.tree.clone()
            };
            Ok(Box::new(HbstMatcher::new("hbst-10", p.dim_bits, config)?))
        });
        r.register("hbst-50", "search tree, n_max = 50, delta_max = 0.1", |p| {
            let config = TreeConfig {
                n_max: 50,
                delta_max: 0.1,
                ..p.tree.clone()
            };
            Ok(Box::new(HbstMatcher::new("hbst-50", p.dim_bits, config)?))
        });
        r
    }

    /// Adds or replaces a strategy.
    pub fn register(&mut self, name: &str, description: &'static str, factory: MatcherFactory) {
        self.entries.insert(name.to_string(), RegistryEntry { description, factory });
    }

    pub fn create(&self, name: &str, params: &MatcherParams) -> Result<Box<dyn Matcher>> {
        let entry = self.entries.get(name).ok_or_else(|| {
            HbstError::usage(format!(
                "unknown matcher {name:?}; available: {}",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        (entry.factory)(params)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn describe(&self) -> impl Iterator<Item = (&str, &'static str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.description))
    }
}

impl Default for MatcherRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::random_entries;

    #[test]
    fn builtins_are_registered() {
        let r = MatcherRegistry::with_builtins();
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["bf", "hbst", "hbst-10", "hbst-50"]);
        assert!(matches!(r.create("flann", &MatcherParams::new(256)), Err(HbstError::Usage(_))));
    }

    #[test]
    fn presets_override_leaf_size() {
        let r = MatcherRegistry::with_builtins();
        let params = MatcherParams::with_tree(256, TreeConfig::with_n_max(3));
        let m = r.create("hbst-50", &params).unwrap();
        assert_eq!(m.name(), "hbst-50");
        assert!(r.create("hbst", &MatcherParams::with_tree(256, TreeConfig::with_n_max(0))).is_err());
    }

    #[test]
    fn custom_strategy_can_be_registered() {
        let mut r = MatcherRegistry::empty();
        r.register("tiny", "tree with n_max = 1", |p| {
            Ok(Box::new(HbstMatcher::new("tiny", p.dim_bits, TreeConfig::with_n_max(1))?))
        });
        let m = r.create("tiny", &MatcherParams::new(128)).unwrap();
        assert_eq!(m.name(), "tiny");
    }

    #[test]
    fn strategies_agree_on_stored_descriptors() {
        let r = MatcherRegistry::with_builtins();
        let entries = random_entries(300, 100, 256, 1);
        for name in r.names().collect::<Vec<_>>() {
            let mut m = r.create(name, &MatcherParams::new(256)).unwrap();
            for img in entries.chunks(100) {
                m.insert_image(img).unwrap();
            }
            assert_eq!(m.len(), 300);
            for e in entries.iter().step_by(13) {
                let best = m.search_nearest(e, 0).unwrap().best.unwrap();
                assert_eq!(best.reference.key(), e.key(), "{name}");
            }
        }
    }

    #[test]
    fn brute_force_matcher_agrees_with_oracle() {
        let refs = random_entries(400, 100, 256, 7);
        let mut queries = crate::synthetic::planted_queries(&refs[..50], 30, 8);
        queries.extend(refs[..20].iter().map(|e| DescriptorEntry { image_id: 99, ..e.clone() }));
        let m = BruteForceMatcher::with_references(256, refs.clone()).unwrap();
        for tau in [0, 25, 120, 256] {
            for q in &queries {
                let got = m.search_nearest(q, tau).unwrap().best;
                let want = crate::oracle::brute_force_nearest(q, &refs, tau).unwrap();
                assert_eq!(got, want);
                assert_eq!(m.search_all(q, tau).unwrap(), crate::oracle::brute_force_all(q, &refs, tau).unwrap());
            }
        }
        let narrow = DescriptorEntry::new(crate::descriptor::BinaryDescriptor::zeros(128), 0, 0);
        assert!(m.search_nearest(&narrow, 5).is_err());
    }

    #[test]
    fn insert_image_rejects_mixed_ids() {
        let mut m = BruteForceMatcher::new(256);
        let entries = random_entries(4, 2, 256, 1);
        assert!(matches!(m.insert_image(&entries), Err(HbstError::Usage(_))));
    }
}
