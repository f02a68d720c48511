//! Brute-force matching and completeness measurement.
//!
//! The brute-force matcher scans every reference and is the ground truth the
//! tree is compared against. Completeness is the fraction of all matches
//! within `tau` that the greedy tree search actually returns; a query with no
//! feasible match at all counts as complete.

use std::collections::{BTreeMap, HashSet};

use crate::descriptor::{check_width, DescriptorEntry};
use crate::error::{HbstError, Result};
use crate::tree::{HbstTree, MatchRecord, TreeConfig};

fn width_of(query: &DescriptorEntry, refs: &[DescriptorEntry]) -> Result<()> {
    check_width(refs, query.dim_bits())
}

/// Global nearest reference within `tau`; the first one wins ties.
pub fn brute_force_nearest(
    query: &DescriptorEntry,
    refs: &[DescriptorEntry],
    tau: u32,
) -> Result<Option<MatchRecord>> {
    width_of(query, refs)?;
    let mut best: Option<(u32, &DescriptorEntry)> = None;
    for r in refs {
        let d = query.descriptor.distance(&r.descriptor);
        if best.is_none_or(|(b, _)| d < b) {
            best = Some((d, r));
        }
    }
    Ok(best.filter(|(d, _)| *d <= tau).map(|(distance, r)| MatchRecord {
        query: query.clone(),
        reference: r.clone(),
        distance,
    }))
}

/// Every reference within `tau`, in input order.
pub fn brute_force_all(query: &DescriptorEntry, refs: &[DescriptorEntry], tau: u32) -> Result<Vec<MatchRecord>> {
    width_of(query, refs)?;
    Ok(refs
        .iter()
        .filter_map(|r| {
            let distance = query.descriptor.distance(&r.descriptor);
            (distance <= tau).then(|| MatchRecord {
                query: query.clone(),
                reference: r.clone(),
                distance,
            })
        })
        .collect())
}

/// `|tree_result| / |oracle_result|`, or 1 when nothing is feasible.
///
/// Fails if the tree returned anything the oracle did not.
pub fn completeness_single(tree_result: &[MatchRecord], oracle_result: &[MatchRecord]) -> Result<f64> {
    let feasible: HashSet<(u32, u32)> = oracle_result.iter().map(|m| m.reference.key()).collect();
    if let Some(extra) = tree_result.iter().find(|m| !feasible.contains(&m.reference.key())) {
        return Err(HbstError::Consistency(format!(
            "tree returned (image {}, keypoint {}) which is not a feasible match",
            extra.reference.image_id, extra.reference.keypoint_id
        )));
    }
    if oracle_result.is_empty() {
        return Ok(1.0);
    }
    Ok(tree_result.len() as f64 / oracle_result.len() as f64)
}

/// Query and reference sets for the completeness experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletenessCorpus {
    pub references: Vec<DescriptorEntry>,
    pub queries: Vec<DescriptorEntry>,
}

impl CompletenessCorpus {
    pub fn new(references: Vec<DescriptorEntry>, queries: Vec<DescriptorEntry>) -> Result<Self> {
        if let Some(first) = references.first().or(queries.first()) {
            let dim = first.dim_bits();
            check_width(&references, dim)?;
            check_width(&queries, dim)?;
        }
        Ok(CompletenessCorpus { references, queries })
    }

    pub fn dim_bits(&self) -> Option<u32> {
        self.references.first().or(self.queries.first()).map(|e| e.dim_bits())
    }

    fn check_taus(&self, taus: &[u32]) -> Result<u32> {
        let dim = self
            .dim_bits()
            .ok_or_else(|| HbstError::usage("completeness corpus is empty"))?;
        if let Some(t) = taus.iter().find(|&&t| t > dim) {
            return Err(HbstError::usage(format!("tau {t} exceeds descriptor width {dim}")));
        }
        Ok(dim)
    }

    /// Per query, the `(reference index, distance)` pairs within `max_tau`.
    fn feasible(&self, max_tau: u32) -> Vec<Vec<(usize, u32)>> {
        self.queries
            .iter()
            .map(|q| {
                self.references
                    .iter()
                    .enumerate()
                    .filter_map(|(i, r)| {
                        let d = q.descriptor.distance(&r.descriptor);
                        (d <= max_tau).then_some((i, d))
                    })
                    .collect()
            })
            .collect()
    }
}

/// Mean completeness of every depth-1 tree, one row per tau.
#[derive(Clone, Debug, PartialEq)]
pub struct BitwiseCompleteness {
    pub taus: Vec<u32>,
    /// `per_bit[t][k]`: mean completeness at `taus[t]` when splitting on bit `k`.
    pub per_bit: Vec<Vec<f64>>,
}

impl BitwiseCompleteness {
    /// Average over all bits for tau row `t`.
    pub fn mean(&self, t: usize) -> f64 {
        let row = &self.per_bit[t];
        row.iter().sum::<f64>() / row.len() as f64
    }

    pub fn stddev(&self, t: usize) -> f64 {
        let row = &self.per_bit[t];
        let m = self.mean(t);
        (row.iter().map(|c| (c - m).powi(2)).sum::<f64>() / row.len() as f64).sqrt()
    }
}

/// For each bit `k`, the mean completeness of the tree with a single root
/// split on `k`.
///
/// A depth-1 tree returns exactly the feasible references that agree with
/// the query on bit `k`, so the per-bit counts are taken directly from the
/// feasible sets instead of building one tree per bit.
pub fn bitwise_completeness(corpus: &CompletenessCorpus, taus: &[u32]) -> Result<BitwiseCompleteness> {
    let dim = corpus.check_taus(taus)? as usize;
    let max_tau = taus.iter().copied().max().unwrap_or(0);
    let feasible = corpus.feasible(max_tau);
    let nq = corpus.queries.len();
    let mut per_bit = Vec::with_capacity(taus.len());
    let mut agree = vec![0u32; dim];
    for &tau in taus {
        let mut sums = vec![0f64; dim];
        for (q, cands) in corpus.queries.iter().zip(&feasible) {
            let within: Vec<usize> = cands.iter().filter(|(_, d)| *d <= tau).map(|(i, _)| *i).collect();
            if within.is_empty() {
                sums.iter_mut().for_each(|s| *s += 1.0);
                continue;
            }
            agree.iter_mut().for_each(|a| *a = 0);
            for &i in &within {
                let r = &corpus.references[i];
                for k in 0..dim {
                    if q.descriptor.bit(k as u32) == r.descriptor.bit(k as u32) {
                        agree[k] += 1;
                    }
                }
            }
            let n = within.len() as f64;
            for (s, &a) in sums.iter_mut().zip(&agree) {
                *s += f64::from(a) / n;
            }
        }
        per_bit.push(sums.into_iter().map(|s| if nq == 0 { 1.0 } else { s / nq as f64 }).collect());
    }
    Ok(BitwiseCompleteness {
        taus: taus.to_vec(),
        per_bit,
    })
}

/// Measured versus predicted completeness over tree depth for one tau.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletenessReport {
    pub tau: u32,
    pub per_bit: Vec<f64>,
    pub per_depth_measured: BTreeMap<u32, f64>,
    pub per_depth_predicted: BTreeMap<u32, f64>,
}

impl CompletenessReport {
    /// Mean depth-1 completeness over all bits.
    pub fn mean_bitwise(&self) -> f64 {
        self.per_bit.iter().sum::<f64>() / self.per_bit.len() as f64
    }
}

/// Completeness of balanced trees with increasing depth bound.
///
/// Each tree is built with `n_max = 1` so the depth bound, not the leaf
/// size, decides where splitting stops. The prediction for depth `h` is the
/// mean bitwise completeness raised to the power `h`.
pub fn depth_completeness(
    corpus: &CompletenessCorpus,
    taus: &[u32],
    depths: &[u32],
    delta_max: f64,
) -> Result<Vec<CompletenessReport>> {
    let dim = corpus.check_taus(taus)?;
    if let Some(h) = depths.iter().find(|&&h| h > dim) {
        return Err(HbstError::usage(format!("depth {h} exceeds descriptor width {dim}")));
    }
    let bitwise = bitwise_completeness(corpus, taus)?;
    let max_tau = taus.iter().copied().max().unwrap_or(0);
    let feasible = corpus.feasible(max_tau);

    let mut measured: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); taus.len()];
    for &h in depths {
        let tree = if h == 0 {
            HbstTree::build_balanced(dim, corpus.references.clone(), &TreeConfig {
                tau: 0,
                delta_max,
                n_max: usize::MAX,
                max_depth: None,
            })?
        } else {
            HbstTree::build_balanced(dim, corpus.references.clone(), &TreeConfig {
                tau: 0,
                delta_max,
                n_max: 1,
                max_depth: Some(h),
            })?
        };
        for (t, &tau) in taus.iter().enumerate() {
            let mut sum = 0.0;
            for (q, cands) in corpus.queries.iter().zip(&feasible) {
                let oracle: Vec<MatchRecord> = cands
                    .iter()
                    .filter(|(_, d)| *d <= tau)
                    .map(|&(i, distance)| MatchRecord {
                        query: q.clone(),
                        reference: corpus.references[i].clone(),
                        distance,
                    })
                    .collect();
                let found = tree.search_all(q, tau)?;
                sum += completeness_single(&found, &oracle)?;
            }
            let mean = if corpus.queries.is_empty() {
                1.0
            } else {
                sum / corpus.queries.len() as f64
            };
            measured[t].insert(h, mean);
        }
    }

    Ok(taus
        .iter()
        .enumerate()
        .map(|(t, &tau)| {
            let c1 = bitwise.mean(t);
            CompletenessReport {
                tau,
                per_bit: bitwise.per_bit[t].clone(),
                per_depth_predicted: depths.iter().map(|&h| (h, predicted_completeness(c1, h))).collect(),
                per_depth_measured: std::mem::take(&mut measured[t]),
            }
        })
        .collect())
}

/// `c1^h`.
pub fn predicted_completeness(mean_bitwise: f64, depth: u32) -> f64 {
    mean_bitwise.powi(depth as i32)
}
