//! Image retrieval by descriptor voting.
//!
//! Each query keypoint gives at most one vote to every stored image that has
//! a descriptor within `tau` among the candidates the matcher inspects; the
//! closest such descriptor is the one recorded. An image's score is its vote
//! count divided by the number of query descriptors, and more votes rank
//! higher.

use std::collections::BTreeMap;

use crate::descriptor::DescriptorEntry;
use crate::error::{HbstError, Result};
use crate::matcher::Matcher;
use crate::tree::MatchRecord;

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalConfig {
    /// Descriptor matching threshold.
    pub tau: u32,
    /// Minimum score for [`retrieve_above`].
    pub tau_image: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            tau: 25,
            tau_image: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub image_id: u32,
    pub votes: usize,
    /// `votes / number of query descriptors`
    pub score: f64,
    pub matches: Vec<MatchRecord>,
}

/// Scores every stored image that received at least one vote, best first.
/// Equal scores are ordered by image id.
pub fn query_image(
    matcher: &dyn Matcher,
    query_entries: &[DescriptorEntry],
    config: &RetrievalConfig,
) -> Result<Vec<ImageScore>> {
    let Some(first) = query_entries.first() else {
        return Ok(Vec::new());
    };
    if let Some(other) = query_entries.iter().find(|e| e.image_id != first.image_id) {
        return Err(HbstError::usage(format!(
            "query entries span images {} and {}",
            first.image_id, other.image_id
        )));
    }
    let query_id = first.image_id;
    let mut per_image: BTreeMap<u32, Vec<MatchRecord>> = BTreeMap::new();
    let mut best_for_kp: BTreeMap<u32, MatchRecord> = BTreeMap::new();
    for q in query_entries {
        best_for_kp.clear();
        for m in matcher.search_all(q, config.tau)? {
            if m.reference.image_id == query_id {
                continue;
            }
            match best_for_kp.get(&m.reference.image_id) {
                Some(prev) if prev.distance <= m.distance => {}
                _ => {
                    best_for_kp.insert(m.reference.image_id, m);
                }
            }
        }
        for (image, m) in std::mem::take(&mut best_for_kp) {
            per_image.entry(image).or_default().push(m);
        }
    }
    let n = query_entries.len() as f64;
    let mut scores: Vec<ImageScore> = per_image
        .into_iter()
        .map(|(image_id, matches)| ImageScore {
            image_id,
            votes: matches.len(),
            score: matches.len() as f64 / n,
            matches,
        })
        .collect();
    sort_scores(&mut scores);
    Ok(scores)
}

fn sort_scores(scores: &mut [ImageScore]) {
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.image_id.cmp(&b.image_id)));
}

/// Highest-scoring image; the smaller id wins ties.
pub fn retrieve_best(scores: &[ImageScore]) -> Option<&ImageScore> {
    scores
        .iter()
        .min_by(|a, b| b.score.total_cmp(&a.score).then(a.image_id.cmp(&b.image_id)))
}

/// All images with `score >= tau_image`, best first.
pub fn retrieve_above(scores: &[ImageScore], tau_image: f64) -> Vec<ImageScore> {
    let mut out: Vec<ImageScore> = scores.iter().filter(|s| s.score >= tau_image).cloned().collect();
    sort_scores(&mut out);
    out
}
