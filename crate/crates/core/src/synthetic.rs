//! Seeded synthetic data: image sequences with planted loop closures and
//! planted-neighbour corpora for the completeness experiments.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::descriptor::{BinaryDescriptor, DescriptorEntry, Image};
use crate::error::{HbstError, Result};
use crate::oracle::CompletenessCorpus;

/// Image `query` re-observes `overlap` of the descriptors of the earlier
/// image `reference`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopPair {
    pub query: u32,
    pub reference: u32,
    pub overlap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_images: u32,
    pub descriptors_per_image: u32,
    pub dim_bits: u32,
    pub loop_pairs: Vec<LoopPair>,
    /// Each copied descriptor gets a uniform number of flips in `0..=noise_bits`.
    pub noise_bits: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_images: 100,
            descriptors_per_image: 1000,
            dim_bits: 256,
            loop_pairs: Vec::new(),
            noise_bits: 10,
            seed: 0,
        }
    }
}

/// The second half of the sequence revisits the first half, cycling through
/// a few overlap levels.
pub fn revisit_loops(num_images: u32) -> Vec<LoopPair> {
    const OVERLAPS: [f64; 4] = [0.2, 0.3, 0.4, 0.5];
    let half = num_images / 2;
    (0..half)
        .map(|i| LoopPair {
            query: half + i + num_images % 2,
            reference: i,
            overlap: OVERLAPS[i as usize % OVERLAPS.len()],
        })
        .collect()
}

/// Generated images plus the pairs the generator planted.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence {
    pub dim_bits: u32,
    pub images: Vec<Image>,
    /// `(query, reference)` for every loop pair that copied at least one descriptor.
    pub truth: BTreeSet<(u32, u32)>,
}

impl SyntheticSequence {
    pub fn entries(&self) -> Vec<DescriptorEntry> {
        self.images.iter().flat_map(|img| img.entries.iter().cloned()).collect()
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_images == 0 {
            return Err(HbstError::usage("num_images must be positive"));
        }
        if self.dim_bits == 0 || self.dim_bits % 8 != 0 {
            return Err(HbstError::usage(format!(
                "dim_bits must be a positive multiple of 8, got {}",
                self.dim_bits
            )));
        }
        if self.noise_bits > self.dim_bits {
            return Err(HbstError::usage(format!(
                "noise_bits {} exceeds dim_bits {}",
                self.noise_bits, self.dim_bits
            )));
        }
        let mut incoming = vec![0f64; self.num_images as usize];
        for p in &self.loop_pairs {
            if !(0.0..=1.0).contains(&p.overlap) {
                return Err(HbstError::usage(format!("overlap {} outside [0, 1]", p.overlap)));
            }
            if p.query >= self.num_images || p.reference >= p.query {
                return Err(HbstError::usage(format!(
                    "loop pair ({}, {}) needs reference < query < num_images",
                    p.query, p.reference
                )));
            }
            incoming[p.query as usize] += p.overlap;
        }
        if let Some(q) = incoming.iter().position(|&o| o > 1.0 + 1e-9) {
            return Err(HbstError::usage(format!("overlaps planted into image {q} sum to more than 1")));
        }
        Ok(())
    }

    fn copy_count(&self, overlap: f64) -> usize {
        (overlap * f64::from(self.descriptors_per_image)).round() as usize
    }

    /// Deterministic for a given spec.
    ///
    /// Copies are drawn only from descriptors that the reference image
    /// generated itself and that no other image copied yet, so images sharing
    /// descriptors are exactly the planted pairs.
    pub fn generate(&self) -> Result<SyntheticSequence> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.descriptors_per_image as usize;
        // Per image: indices of fresh descriptors still available as copy sources.
        let mut pools: Vec<Vec<usize>> = Vec::with_capacity(self.num_images as usize);
        let mut images: Vec<Image> = Vec::with_capacity(self.num_images as usize);
        let mut truth = BTreeSet::new();

        for id in 0..self.num_images {
            let mut descriptors: Vec<BinaryDescriptor> = Vec::with_capacity(n);
            for p in self.loop_pairs.iter().filter(|p| p.query == id) {
                let want = self.copy_count(p.overlap).min(n - descriptors.len());
                let pool = &mut pools[p.reference as usize];
                if want > pool.len() {
                    return Err(HbstError::usage(format!(
                        "image {} has only {} unshared descriptors left, loop pair ({}, {}) needs {want}",
                        p.reference,
                        pool.len(),
                        p.query,
                        p.reference
                    )));
                }
                if want == 0 {
                    continue;
                }
                let picks: Vec<usize> = sample(&mut rng, pool.len(), want).into_vec();
                let mut taken: Vec<usize> = picks.iter().map(|&i| pool[i]).collect();
                let mut picks_sorted = picks;
                picks_sorted.sort_unstable_by(|a, b| b.cmp(a));
                for i in picks_sorted {
                    pool.swap_remove(i);
                }
                taken.sort_unstable();
                for src in taken {
                    let mut d = images[p.reference as usize].entries[src].descriptor.clone();
                    perturb(&mut d, rng.gen_range(0..=self.noise_bits), &mut rng);
                    descriptors.push(d);
                }
                truth.insert((p.query, p.reference));
            }
            let copied = descriptors.len();
            while descriptors.len() < n {
                descriptors.push(BinaryDescriptor::random(&mut rng, self.dim_bits));
            }
            pools.push((copied..n).collect());
            let entries = descriptors
                .into_iter()
                .enumerate()
                .map(|(kp, d)| {
                    let (x, y) = (rng.gen_range(0.0..640.0f32), rng.gen_range(0.0..480.0f32));
                    DescriptorEntry::new(d, id, kp as u32).with_keypoint(x, y)
                })
                .collect();
            images.push(Image { id, entries });
        }
        Ok(SyntheticSequence {
            dim_bits: self.dim_bits,
            images,
            truth,
        })
    }
}

/// Flips `count` distinct random bits.
pub fn perturb<R: Rng + ?Sized>(d: &mut BinaryDescriptor, count: u32, rng: &mut R) {
    for k in sample(rng, d.dim_bits() as usize, count as usize) {
        d.flip_bit(k as u32);
    }
}

/// `n` uniform random entries keyed `(i / per_image, i)`.
pub fn random_entries(n: usize, per_image: usize, dim_bits: u32, seed: u64) -> Vec<DescriptorEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| DescriptorEntry::new(BinaryDescriptor::random(&mut rng, dim_bits), (i / per_image.max(1)) as u32, i as u32))
        .collect()
}

/// Uniform random references; every query is one reference with a uniform
/// number of flips in `0..=noise_max`.
pub fn completeness_corpus(
    num_images: u32,
    per_image: u32,
    dim_bits: u32,
    noise_max: u32,
    seed: u64,
) -> Result<CompletenessCorpus> {
    if noise_max > dim_bits {
        return Err(HbstError::usage(format!("noise {noise_max} exceeds width {dim_bits}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut references = Vec::new();
    let mut queries = Vec::new();
    for image in 0..num_images {
        for kp in 0..per_image {
            let d = BinaryDescriptor::random(&mut rng, dim_bits);
            let mut q = d.clone();
            perturb(&mut q, rng.gen_range(0..=noise_max), &mut rng);
            references.push(DescriptorEntry::new(d, image, kp));
            queries.push(DescriptorEntry::new(q, num_images + image, kp));
        }
    }
    CompletenessCorpus::new(references, queries)
}

/// Planted-neighbour queries for an existing reference set.
pub fn planted_queries(references: &[DescriptorEntry], noise_max: u32, seed: u64) -> Vec<DescriptorEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = references.iter().map(|e| e.image_id).max().map_or(0, |m| m + 1);
    references
        .iter()
        .map(|r| {
            let mut d = r.descriptor.clone();
            let flips = rng.gen_range(0..=noise_max.min(d.dim_bits()));
            perturb(&mut d, flips, &mut rng);
            DescriptorEntry {
                descriptor: d,
                image_id: r.image_id + offset,
                ..r.clone()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_overlap_without_noise_duplicates_image() {
        let spec = SyntheticSpec {
            num_images: 2,
            descriptors_per_image: 50,
            loop_pairs: vec![LoopPair {
                query: 1,
                reference: 0,
                overlap: 1.0,
            }],
            noise_bits: 0,
            seed: 3,
            ..Default::default()
        };
        let seq = spec.generate().unwrap();
        let a: BTreeSet<_> = seq.images[0].entries.iter().map(|e| e.descriptor.to_bytes()).collect();
        let b: BTreeSet<_> = seq.images[1].entries.iter().map(|e| e.descriptor.to_bytes()).collect();
        assert_eq!(a, b);
        assert_eq!(seq.truth, [(1, 0)].into_iter().collect());
    }

    #[test]
    fn same_seed_same_output() {
        let spec = SyntheticSpec {
            num_images: 6,
            descriptors_per_image: 30,
            loop_pairs: revisit_loops(6),
            seed: 17,
            ..Default::default()
        };
        assert_eq!(spec.generate().unwrap(), spec.generate().unwrap());
        let other = SyntheticSpec { seed: 18, ..spec.clone() };
        assert_ne!(spec.generate().unwrap(), other.generate().unwrap());
    }

    #[test]
    fn noise_is_bounded() {
        let spec = SyntheticSpec {
            num_images: 2,
            descriptors_per_image: 100,
            loop_pairs: vec![LoopPair {
                query: 1,
                reference: 0,
                overlap: 0.5,
            }],
            noise_bits: 7,
            seed: 1,
            ..Default::default()
        };
        let seq = spec.generate().unwrap();
        // the first 50 descriptors of image 1 are noisy copies
        for e in &seq.images[1].entries[..50] {
            let best = seq.images[0].entries.iter().map(|r| r.descriptor.distance(&e.descriptor)).min().unwrap();
            assert!(best <= 7);
        }
    }

    #[test]
    fn validation_errors() {
        let bad = |spec: SyntheticSpec| assert!(matches!(spec.generate(), Err(HbstError::Usage(_))));
        bad(SyntheticSpec { num_images: 0, ..Default::default() });
        bad(SyntheticSpec { dim_bits: 12, ..Default::default() });
        bad(SyntheticSpec { noise_bits: 300, ..Default::default() });
        let pair = |q, r, o| LoopPair { query: q, reference: r, overlap: o };
        bad(SyntheticSpec { loop_pairs: vec![pair(1, 0, 1.5)], ..Default::default() });
        bad(SyntheticSpec { loop_pairs: vec![pair(1, 2, 0.5)], ..Default::default() });
        bad(SyntheticSpec { loop_pairs: vec![pair(2, 0, 0.6), pair(2, 1, 0.6)], ..Default::default() });
        // image 0 cannot feed two 60% copies
        bad(SyntheticSpec {
            num_images: 3,
            descriptors_per_image: 10,
            loop_pairs: vec![pair(1, 0, 0.6), pair(2, 0, 0.6)],
            ..Default::default()
        });
    }

    #[test]
    fn revisit_loops_are_valid() {
        for n in [2, 7, 200] {
            let spec = SyntheticSpec {
                num_images: n,
                descriptors_per_image: 10,
                loop_pairs: revisit_loops(n),
                ..Default::default()
            };
            spec.validate().unwrap();
        }
        assert_eq!(revisit_loops(200).len(), 100);
    }

    #[test]
    fn completeness_corpus_shape() {
        let c = completeness_corpus(3, 20, 128, 5, 0).unwrap();
        assert_eq!(c.references.len(), 60);
        assert_eq!(c.queries.len(), 60);
        for (r, q) in c.references.iter().zip(&c.queries) {
            assert!(r.descriptor.distance(&q.descriptor) <= 5);
        }
    }
}
