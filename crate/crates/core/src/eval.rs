//! Ground truth, the sequential query-then-insert protocol, and
//! precision/recall scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use crate::descriptor::Image;
use crate::error::{HbstError, Result};
use crate::matcher::Matcher;
use crate::retrieval::{query_image, ImageScore, RetrievalConfig};

/// Camera pose of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseRecord {
    pub image_id: u32,
    pub position: [f64; 3],
    /// Unit vector: the camera's +z axis in world coordinates.
    pub optical_axis: [f64; 3],
}

impl PoseRecord {
    /// Builds a pose from a quaternion `[qx, qy, qz, qw]`, normalising it first.
    pub fn from_quaternion(image_id: u32, position: [f64; 3], q: [f64; 4]) -> Result<Self> {
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm <= 1e-12 {
            return Err(HbstError::usage("zero quaternion"));
        }
        let [x, y, z, w] = q.map(|v| v / norm);
        // third column of the rotation matrix
        let axis = [2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y)];
        Ok(PoseRecord {
            image_id,
            position,
            optical_axis: axis,
        })
    }

    pub fn distance_to(&self, other: &PoseRecord) -> f64 {
        self.position
            .iter()
            .zip(&other.position)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Angle between optical axes in degrees.
    pub fn angle_to_deg(&self, other: &PoseRecord) -> f64 {
        let dot: f64 = self.optical_axis.iter().zip(&other.optical_axis).map(|(a, b)| a * b).sum();
        dot.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthParams {
    pub max_distance_m: f64,
    pub max_angle_deg: f64,
    /// A pair needs strictly more than this fraction of query descriptors matched.
    pub min_match_fraction: f64,
    pub tau: u32,
}

impl Default for GroundTruthParams {
    fn default() -> Self {
        GroundTruthParams {
            max_distance_m: 10.0,
            max_angle_deg: 20.0,
            min_match_fraction: 0.10,
            tau: 25,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// `(query_id, reference_id)` with `query_id > reference_id`.
    pub pairs: BTreeSet<(u32, u32)>,
    pub params: GroundTruthParams,
}

impl GroundTruth {
    pub fn from_pairs(pairs: BTreeSet<(u32, u32)>) -> Result<Self> {
        if let Some((q, r)) = pairs.iter().find(|(q, r)| q <= r) {
            return Err(HbstError::usage(format!(
                "ground-truth pair ({q}, {r}) must have query id greater than reference id"
            )));
        }
        Ok(GroundTruth {
            pairs,
            params: GroundTruthParams::default(),
        })
    }

    pub fn contains(&self, query: u32, reference: u32) -> bool {
        self.pairs.contains(&(query, reference))
    }
}

/// Number of `query` descriptors with some descriptor of `reference`
/// (given as packed words) within `tau`.
fn matched_descriptors(query: &Image, reference: &[u64], tau: u32) -> usize {
    query
        .entries
        .iter()
        .filter(|q| {
            let q = q.descriptor.words();
            reference
                .chunks_exact(q.len())
                .any(|r| r.iter().zip(q).map(|(a, b)| (a ^ b).count_ones()).sum::<u32>() <= tau)
        })
        .count()
}

/// Accepts `(q, i)`, `q > i`, when the cameras were close and similarly
/// oriented (only checked if poses are given) and when more than
/// `min_match_fraction` of the query descriptors have a brute-force match
/// within `tau` in image `i`.
pub fn build_ground_truth(
    images: &[Image],
    poses: Option<&[PoseRecord]>,
    params: &GroundTruthParams,
) -> Result<GroundTruth> {
    if let Some(img) = images.windows(2).find(|w| w[0].id >= w[1].id) {
        return Err(HbstError::usage(format!(
            "images must be ordered by increasing id (found {} before {})",
            img[0].id, img[1].id
        )));
    }
    if let Some(first) = images.iter().find_map(|img| img.entries.first()) {
        for img in images {
            crate::descriptor::check_width(&img.entries, first.dim_bits())?;
        }
    }
    let pose_map: Option<BTreeMap<u32, &PoseRecord>> = match poses {
        Some(list) => {
            let map: BTreeMap<u32, &PoseRecord> = list.iter().map(|p| (p.image_id, p)).collect();
            if let Some(img) = images.iter().find(|img| !map.contains_key(&img.id)) {
                return Err(HbstError::usage(format!("no pose for image {}", img.id)));
            }
            Some(map)
        }
        None => None,
    };

    let packed: Vec<Vec<u64>> = images
        .iter()
        .map(|img| img.entries.iter().flat_map(|e| e.descriptor.words().iter().copied()).collect())
        .collect();
    let mut pairs = BTreeSet::new();
    for (qi, q) in images.iter().enumerate() {
        if q.entries.is_empty() {
            continue;
        }
        let needed = params.min_match_fraction * q.entries.len() as f64;
        for (r, r_words) in images[..qi].iter().zip(&packed) {
            if let Some(map) = &pose_map {
                let (pq, pr) = (map[&q.id], map[&r.id]);
                if !(pq.distance_to(pr) < params.max_distance_m && pq.angle_to_deg(pr) < params.max_angle_deg) {
                    continue;
                }
            }
            if matched_descriptors(q, r_words, params.tau) as f64 > needed {
                pairs.insert((q.id, r.id));
            }
        }
    }
    Ok(GroundTruth {
        pairs,
        params: params.clone(),
    })
}

/// Retrieval output for one image of the sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageQueryResult {
    pub image_id: u32,
    pub scores: Vec<ImageScore>,
    /// Wall time for querying and then inserting this image.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolRun {
    pub matcher: String,
    pub images: Vec<ImageQueryResult>,
}

impl ProtocolRun {
    pub fn ranked(&self) -> Vec<(u32, Vec<ImageScore>)> {
        self.images.iter().map(|r| (r.image_id, r.scores.clone())).collect()
    }

    pub fn mean_seconds(&self) -> f64 {
        if self.images.is_empty() {
            return 0.0;
        }
        self.images.iter().map(|r| r.seconds).sum::<f64>() / self.images.len() as f64
    }
}

/// Queries each image against the database of its predecessors, then
/// inserts it. Image ids must be consecutive.
pub fn run_protocol(images: &[Image], matcher: &mut dyn Matcher, config: &RetrievalConfig) -> Result<ProtocolRun> {
    if let Some(w) = images.windows(2).find(|w| w[1].id != w[0].id + 1) {
        return Err(HbstError::usage(format!(
            "image ids must be contiguous, found {} followed by {}",
            w[0].id, w[1].id
        )));
    }
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        if let Some(e) = img.entries.iter().find(|e| e.image_id != img.id) {
            return Err(HbstError::usage(format!(
                "entry of image {} filed under image {}",
                e.image_id, img.id
            )));
        }
        let start = Instant::now();
        let scores = query_image(&*matcher, &img.entries, config)?;
        matcher.insert_image(&img.entries)?;
        out.push(ImageQueryResult {
            image_id: img.id,
            scores,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(ProtocolRun {
        matcher: matcher.name().to_string(),
        images: out,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    /// One point per distinct observed score, highest threshold first.
    pub points: Vec<PrPoint>,
    /// False when the ground truth is empty; recall is then reported as 0.
    pub recall_defined: bool,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Sweeps the acceptance threshold over every observed score. At threshold
/// `t` the reported associations are the `(query, image)` pairs with
/// `score >= t`.
pub fn pr_curve(ranked: &[(u32, Vec<ImageScore>)], gt: &GroundTruth) -> PrCurve {
    let mut observed: Vec<(f64, bool)> = ranked
        .iter()
        .flat_map(|(q, scores)| {
            scores
                .iter()
                .filter(|s| s.votes > 0)
                .map(move |s| (s.score, gt.contains(*q, s.image_id)))
        })
        .collect();
    observed.sort_by(|a, b| b.0.total_cmp(&a.0));

    let total_gt = gt.pairs.len();
    let mut points = Vec::new();
    let (mut reported, mut correct) = (0usize, 0usize);
    let mut i = 0;
    while i < observed.len() {
        let threshold = observed[i].0;
        while i < observed.len() && observed[i].0 == threshold {
            reported += 1;
            correct += usize::from(observed[i].1);
            i += 1;
        }
        let precision = correct as f64 / reported as f64;
        let recall = if total_gt == 0 {
            0.0
        } else {
            correct as f64 / total_gt as f64
        };
        points.push(PrPoint {
            threshold,
            precision,
            recall,
            f1: f1_score(precision, recall),
        });
    }
    PrCurve {
        points,
        recall_defined: total_gt > 0,
    }
}

/// Point of maximum F1; ties go to the higher precision. An empty curve
/// yields an all-zero point at an infinite threshold.
pub fn max_f1(curve: &PrCurve) -> Result<PrPoint> {
    if !curve.recall_defined {
        return Err(HbstError::usage("max F1 is undefined for an empty ground truth"));
    }
    Ok(curve
        .points
        .iter()
        .copied()
        .max_by(|a, b| a.f1.total_cmp(&b.f1).then(a.precision.total_cmp(&b.precision)))
        .unwrap_or(PrPoint {
            threshold: f64::INFINITY,
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{group_by_image, DescriptorEntry};
    use crate::matcher::{BruteForceMatcher, HbstMatcher};
    use crate::synthetic::{random_entries, LoopPair, SyntheticSpec};
    use crate::tree::TreeConfig;

    fn score(image_id: u32, score: f64) -> ImageScore {
        ImageScore {
            image_id,
            votes: 1,
            score,
            matches: Vec::new(),
        }
    }

    fn gt(pairs: &[(u32, u32)]) -> GroundTruth {
        GroundTruth::from_pairs(pairs.iter().copied().collect()).unwrap()
    }

    fn pose(id: u32, x: f64, yaw_deg: f64) -> PoseRecord {
        let half = yaw_deg.to_radians() / 2.0;
        // rotation about y
        PoseRecord::from_quaternion(id, [x, 0.0, 0.0], [0.0, half.sin(), 0.0, half.cos()]).unwrap()
    }

    fn duplicate_pair() -> Vec<Image> {
        let base = random_entries(50, 50, 256, 4);
        let copy: Vec<_> = base.iter().map(|e| DescriptorEntry { image_id: 1, ..e.clone() }).collect();
        vec![Image { id: 0, entries: base }, Image { id: 1, entries: copy }]
    }

    #[test]
    fn duplicate_images_are_ground_truth() {
        let g = build_ground_truth(&duplicate_pair(), None, &GroundTruthParams::default()).unwrap();
        assert_eq!(g.pairs, [(1, 0)].into_iter().collect());
    }

    #[test]
    fn pose_criterion() {
        let images = duplicate_pair();
        let params = GroundTruthParams::default();
        let far = [pose(0, 0.0, 0.0), pose(1, 15.0, 0.0)];
        assert!(build_ground_truth(&images, Some(&far), &params).unwrap().pairs.is_empty());
        let turned = [pose(0, 0.0, 0.0), pose(1, 1.0, 25.0)];
        assert!(build_ground_truth(&images, Some(&turned), &params).unwrap().pairs.is_empty());
        let close = [pose(0, 0.0, 0.0), pose(1, 9.0, 19.0)];
        assert_eq!(build_ground_truth(&images, Some(&close), &params).unwrap().pairs.len(), 1);
        assert!(matches!(
            build_ground_truth(&images, Some(&close[..1]), &params),
            Err(HbstError::Usage(_))
        ));
    }

    #[test]
    fn match_fraction_is_strict() {
        // exactly 5 of 50 shared = 10% -> rejected; 6 -> accepted
        let base = random_entries(50, 50, 256, 4);
        let others = random_entries(50, 50, 256, 5);
        let mk = |shared: usize| {
            let mut q: Vec<_> = base[..shared].to_vec();
            q.extend_from_slice(&others[shared..]);
            let q = q.into_iter().map(|e| DescriptorEntry { image_id: 1, ..e }).collect();
            vec![Image { id: 0, entries: base.clone() }, Image { id: 1, entries: q }]
        };
        let params = GroundTruthParams::default();
        assert!(build_ground_truth(&mk(5), None, &params).unwrap().pairs.is_empty());
        assert_eq!(build_ground_truth(&mk(6), None, &params).unwrap().pairs.len(), 1);
    }

    #[test]
    fn planted_sequence_ground_truth() {
        let spec = SyntheticSpec {
            num_images: 8,
            descriptors_per_image: 100,
            loop_pairs: vec![
                LoopPair { query: 4, reference: 1, overlap: 0.5 },
                LoopPair { query: 6, reference: 2, overlap: 0.3 },
                LoopPair { query: 7, reference: 4, overlap: 0.2 },
            ],
            noise_bits: 25,
            seed: 11,
            ..Default::default()
        };
        let seq = spec.generate().unwrap();
        let g = build_ground_truth(&seq.images, None, &GroundTruthParams::default()).unwrap();
        assert_eq!(g.pairs, seq.truth);
    }

    #[test]
    fn protocol_first_image_and_identical_sequence() {
        let base = random_entries(40, 40, 256, 9);
        let images: Vec<Image> = (0..4)
            .map(|id| Image {
                id,
                entries: base.iter().map(|e| DescriptorEntry { image_id: id, ..e.clone() }).collect(),
            })
            .collect();
        let mut m = HbstMatcher::new("hbst", 256, TreeConfig::with_n_max(10)).unwrap();
        let run = run_protocol(&images, &mut m, &RetrievalConfig::default()).unwrap();
        assert!(run.images[0].scores.is_empty());
        for (t, r) in run.images.iter().enumerate() {
            assert_eq!(r.scores.len(), t);
            assert!(r.scores.iter().all(|s| s.score == 1.0));
        }
    }

    #[test]
    fn protocol_rejects_gaps() {
        let mut images = group_by_image(random_entries(30, 10, 256, 1)).unwrap();
        images[2].id = 5;
        for e in &mut images[2].entries {
            e.image_id = 5;
        }
        let mut m = BruteForceMatcher::new(256);
        assert!(matches!(
            run_protocol(&images, &mut m, &RetrievalConfig::default()),
            Err(HbstError::Usage(_))
        ));
    }

    #[test]
    fn perfect_retrieval() {
        let ranked = vec![(1, vec![score(0, 0.5)]), (2, vec![score(1, 0.4)])];
        let curve = pr_curve(&ranked, &gt(&[(1, 0), (2, 1)]));
        let best = max_f1(&curve).unwrap();
        assert_eq!((best.precision, best.recall, best.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn half_precision_half_recall() {
        // two reported at threshold 0.3, one correct; two ground-truth pairs
        let ranked = vec![(1, vec![score(0, 0.3)]), (2, vec![score(0, 0.3)])];
        let curve = pr_curve(&ranked, &gt(&[(1, 0), (3, 2)]));
        assert_eq!(curve.points.len(), 1);
        let p = curve.points[0];
        assert_eq!((p.precision, p.recall, p.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn recall_is_monotone() {
        let ranked = vec![
            (1, vec![score(0, 0.9), score(0, 0.2)]),
            (2, vec![score(1, 0.5), score(0, 0.1)]),
            (3, vec![score(2, 0.7)]),
        ];
        let curve = pr_curve(&ranked, &gt(&[(1, 0), (2, 1), (3, 1)]));
        for w in curve.points.windows(2) {
            assert!(w[0].threshold > w[1].threshold);
            assert!(w[0].recall <= w[1].recall);
        }
    }

    #[test]
    fn empty_ground_truth_refuses_max_f1() {
        let ranked = vec![(1, vec![score(0, 0.5)])];
        let curve = pr_curve(&ranked, &gt(&[]));
        assert!(!curve.recall_defined);
        assert!(curve.points.iter().all(|p| p.recall == 0.0));
        assert!(max_f1(&curve).is_err());
    }

    #[test]
    fn max_f1_tie_prefers_precision() {
        let curve = PrCurve {
            points: vec![
                PrPoint { threshold: 0.5, precision: 0.6, recall: 0.4, f1: 0.48 },
                PrPoint { threshold: 0.3, precision: 0.4, recall: 0.6, f1: 0.48 },
            ],
            recall_defined: true,
        };
        assert_eq!(max_f1(&curve).unwrap().precision, 0.6);
        let empty = PrCurve { points: vec![], recall_defined: true };
        assert_eq!(max_f1(&empty).unwrap().f1, 0.0);
    }

    #[test]
    fn ground_truth_pairs_must_point_backwards() {
        assert!(GroundTruth::from_pairs([(1, 2)].into_iter().collect()).is_err());
    }

    #[test]
    fn optical_axis_is_unit() {
        let p = PoseRecord::from_quaternion(0, [0.0; 3], [0.3, -1.2, 0.7, 2.0]).unwrap();
        let n: f64 = p.optical_axis.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
}
