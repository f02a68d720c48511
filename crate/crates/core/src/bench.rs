//! Tree versus brute-force cost on a fixed database.

use std::hint::black_box;
use std::time::Instant;

use crate::descriptor::DescriptorEntry;
use crate::error::{HbstError, Result};
use crate::matcher::{BruteForceMatcher, Matcher};
use crate::tree::{HbstTree, TreeConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedupReport {
    pub stored: usize,
    pub queries: usize,
    /// Mean of `depth_traversed + leaf_scanned` per tree query.
    pub mean_tree_work: f64,
    pub mean_leaf_scanned: f64,
    pub mean_depth_traversed: f64,
    /// Comparisons per brute-force query (the database size).
    pub brute_force_work: f64,
    pub tree_seconds: f64,
    pub brute_force_seconds: f64,
    /// Fraction of queries whose tree answer equals the brute-force answer.
    pub agreement: f64,
}

impl SpeedupReport {
    pub fn work_ratio(&self) -> f64 {
        self.mean_tree_work / self.brute_force_work
    }

    pub fn wall_clock_speedup(&self) -> f64 {
        self.brute_force_seconds / self.tree_seconds.max(f64::MIN_POSITIVE)
    }
}

/// Inserts `stored` one by one into a tree, then answers `queries` with the
/// tree and with a brute-force scan, timing both.
pub fn compare(stored: &[DescriptorEntry], queries: &[DescriptorEntry], config: &TreeConfig) -> Result<SpeedupReport> {
    let dim = stored
        .first()
        .map(|e| e.dim_bits())
        .ok_or_else(|| HbstError::usage("benchmark needs a non-empty database"))?;
    if queries.is_empty() {
        return Err(HbstError::usage("benchmark needs at least one query"));
    }
    let mut tree = HbstTree::new(dim);
    for e in stored {
        tree.insert(e.clone(), config)?;
    }
    let bf = BruteForceMatcher::with_references(dim, stored.to_vec())?;

    let start = Instant::now();
    let tree_results = queries
        .iter()
        .map(|q| tree.search_nearest(q, config.tau))
        .collect::<Result<Vec<_>>>()?;
    let tree_seconds = start.elapsed().as_secs_f64();
    black_box(&tree_results);

    let start = Instant::now();
    let bf_results = queries
        .iter()
        .map(|q| bf.search_nearest(q, config.tau))
        .collect::<Result<Vec<_>>>()?;
    let brute_force_seconds = start.elapsed().as_secs_f64();
    black_box(&bf_results);

    let n = queries.len() as f64;
    let agree = tree_results
        .iter()
        .zip(&bf_results)
        .filter(|(t, b)| t.best.as_ref().map(|m| m.distance) == b.best.as_ref().map(|m| m.distance))
        .count();
    Ok(SpeedupReport {
        stored: stored.len(),
        queries: queries.len(),
        mean_tree_work: tree_results.iter().map(|r| r.work() as f64).sum::<f64>() / n,
        mean_leaf_scanned: tree_results.iter().map(|r| r.leaf_scanned as f64).sum::<f64>() / n,
        mean_depth_traversed: tree_results.iter().map(|r| f64::from(r.depth_traversed)).sum::<f64>() / n,
        brute_force_work: stored.len() as f64,
        tree_seconds,
        brute_force_seconds,
        agreement: agree as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{planted_queries, random_entries};

    #[test]
    fn tree_does_less_work() {
        let stored = random_entries(5_000, 1000, 256, 1);
        let queries = planted_queries(&stored[..200], 5, 2);
        let r = compare(&stored, &queries, &TreeConfig::with_n_max(20)).unwrap();
        assert!(r.work_ratio() < 0.05, "{r:?}");
        assert_eq!(r.brute_force_work, 5_000.0);
        assert!(r.agreement > 0.5);
    }

    #[test]
    fn rejects_empty_inputs() {
        let stored = random_entries(10, 10, 256, 1);
        assert!(compare(&[], &stored, &TreeConfig::default()).is_err());
        assert!(compare(&stored, &[], &TreeConfig::default()).is_err());
    }
}
