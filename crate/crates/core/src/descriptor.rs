//! Fixed-width binary descriptors and the statistics the split rule needs.
//!
//! Bit `k` of a descriptor is bit `k % 8` of byte `k / 8`, least significant
//! bit first. Internally the bits are packed into little-endian `u64` words,
//! which keeps the same numbering: bit `k` is bit `k % 64` of word `k / 64`.

use std::fmt;

use rand::Rng;
use smallvec::SmallVec;

use crate::error::{HbstError, Result};

/// Descriptor widths exercised by the test suite (BRIEF/ORB-256 and friends).
pub const SUPPORTED_WIDTHS: [u32; 3] = [128, 256, 512];

type Words = SmallVec<[u64; 4]>;

/// A fixed-width bit vector compared under the Hamming metric.
///
/// Any positive width is representable in memory, which keeps small toy
/// fixtures readable. File formats additionally require a multiple of 8.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryDescriptor {
    words: Words,
    dim_bits: u32,
}

fn word_count(dim_bits: u32) -> usize {
    (dim_bits as usize).div_ceil(64)
}

impl BinaryDescriptor {
    pub fn zeros(dim_bits: u32) -> Self {
        assert!(dim_bits > 0, "descriptor width must be positive");
        BinaryDescriptor {
            words: SmallVec::from_elem(0, word_count(dim_bits)),
            dim_bits,
        }
    }

    /// Uniformly random descriptor.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dim_bits: u32) -> Self {
        let mut d = Self::zeros(dim_bits);
        for w in d.words.iter_mut() {
            *w = rng.gen();
        }
        d.clear_padding();
        d
    }

    /// Parses a string of `0`/`1` characters; character `i` is bit `i`.
    pub fn from_bit_str(bits: &str) -> Result<Self> {
        let len = u32::try_from(bits.len()).map_err(|_| HbstError::usage("bit string too long"))?;
        if len == 0 {
            return Err(HbstError::usage("empty bit string"));
        }
        let mut d = Self::zeros(len);
        for (k, c) in bits.chars().enumerate() {
            match c {
                '0' => {}
                '1' => d.set_bit(k as u32, true),
                other => return Err(HbstError::usage(format!("invalid bit character {other:?}"))),
            }
        }
        Ok(d)
    }

    /// Decodes `dim_bits.div_ceil(8)` bytes in the LSB-first layout.
    pub fn from_bytes(bytes: &[u8], dim_bits: u32) -> Result<Self> {
        if dim_bits == 0 {
            return Err(HbstError::usage("descriptor width must be positive"));
        }
        let expected = (dim_bits as usize).div_ceil(8);
        if bytes.len() != expected {
            return Err(HbstError::format(format!(
                "descriptor payload has {} bytes, expected {expected} for {dim_bits} bits",
                bytes.len()
            )));
        }
        let mut d = Self::zeros(dim_bits);
        for (i, chunk) in bytes.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            d.words[i] = u64::from_le_bytes(buf);
        }
        let mut check = d.clone();
        check.clear_padding();
        if check != d {
            return Err(HbstError::format("descriptor payload has bits set beyond its width"));
        }
        Ok(d)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = (self.dim_bits as usize).div_ceil(8);
        let mut out = Vec::with_capacity(self.words.len() * 8);
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(n);
        out
    }

    #[inline]
    pub fn dim_bits(&self) -> u32 {
        self.dim_bits
    }

    #[inline]
    pub fn bit(&self, k: u32) -> bool {
        debug_assert!(k < self.dim_bits);
        (self.words[(k / 64) as usize] >> (k % 64)) & 1 == 1
    }

    pub fn set_bit(&mut self, k: u32, value: bool) {
        assert!(k < self.dim_bits, "bit {k} out of range for width {}", self.dim_bits);
        let mask = 1u64 << (k % 64);
        let w = &mut self.words[(k / 64) as usize];
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    pub fn flip_bit(&mut self, k: u32) {
        assert!(k < self.dim_bits, "bit {k} out of range for width {}", self.dim_bits);
        self.words[(k / 64) as usize] ^= 1u64 << (k % 64);
    }

    /// Little-endian 64-bit words; bits past `dim_bits` are zero.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Hamming distance without the width check. Callers guarantee equal widths.
    #[inline]
    pub fn distance(&self, other: &BinaryDescriptor) -> u32 {
        debug_assert_eq!(self.dim_bits, other.dim_bits);
        self.words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    fn clear_padding(&mut self) {
        let rem = self.dim_bits % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

impl fmt::Debug for BinaryDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryDescriptor({self})")
    }
}

impl fmt::Display for BinaryDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.dim_bits {
            f.write_str(if self.bit(k) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Hamming distance between two descriptors of equal width.
pub fn hamming(a: &BinaryDescriptor, b: &BinaryDescriptor) -> Result<u32> {
    if a.dim_bits != b.dim_bits {
        return Err(HbstError::usage(format!(
            "descriptor width mismatch: {} vs {}",
            a.dim_bits, b.dim_bits
        )));
    }
    Ok(a.distance(b))
}

/// A descriptor together with where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorEntry {
    pub descriptor: BinaryDescriptor,
    pub image_id: u32,
    pub keypoint_id: u32,
    /// Keypoint position in pixels; `(0, 0)` is fine for synthetic data.
    pub keypoint: [f32; 2],
}

impl DescriptorEntry {
    pub fn new(descriptor: BinaryDescriptor, image_id: u32, keypoint_id: u32) -> Self {
        DescriptorEntry {
            descriptor,
            image_id,
            keypoint_id,
            keypoint: [0.0, 0.0],
        }
    }

    pub fn with_keypoint(mut self, x: f32, y: f32) -> Self {
        self.keypoint = [x, y];
        self
    }

    #[inline]
    pub fn dim_bits(&self) -> u32 {
        self.descriptor.dim_bits()
    }

    /// `(image_id, keypoint_id)`, unique within a corpus.
    #[inline]
    pub fn key(&self) -> (u32, u32) {
        (self.image_id, self.keypoint_id)
    }
}

/// All descriptors extracted from one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub id: u32,
    pub entries: Vec<DescriptorEntry>,
}

/// Groups a flat entry stream into images, preserving order.
///
/// Entries of one image must be adjacent in the input.
pub fn group_by_image(entries: Vec<DescriptorEntry>) -> Result<Vec<Image>> {
    let mut images: Vec<Image> = Vec::new();
    for e in entries {
        match images.last_mut() {
            Some(img) if img.id == e.image_id => img.entries.push(e),
            _ => {
                if images.iter().any(|img| img.id == e.image_id) {
                    return Err(HbstError::usage(format!(
                        "entries of image {} are not contiguous",
                        e.image_id
                    )));
                }
                images.push(Image {
                    id: e.image_id,
                    entries: vec![e],
                });
            }
        }
    }
    Ok(images)
}

/// Checks that every entry has width `dim_bits`.
pub fn check_width<'a, I>(entries: I, dim_bits: u32) -> Result<()>
where
    I: IntoIterator<Item = &'a DescriptorEntry>,
{
    for e in entries {
        if e.dim_bits() != dim_bits {
            return Err(HbstError::usage(format!(
                "descriptor width mismatch: expected {dim_bits}, got {} (image {}, keypoint {})",
                e.dim_bits(),
                e.image_id,
                e.keypoint_id
            )));
        }
    }
    Ok(())
}

/// Per-bit population counts over a descriptor set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitStatistics {
    pub counts: Vec<u32>,
    pub total: u32,
}

impl BitStatistics {
    pub fn from_descriptors<'a, I>(descriptors: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a BinaryDescriptor>,
    {
        let mut iter = descriptors.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| HbstError::usage("bit statistics need at least one descriptor"))?;
        let dim_bits = first.dim_bits();
        let mut stats = BitStatistics {
            counts: vec![0; dim_bits as usize],
            total: 0,
        };
        stats.accumulate(first);
        for d in iter {
            if d.dim_bits() != dim_bits {
                return Err(HbstError::usage(format!(
                    "descriptor width mismatch: {} vs {dim_bits}",
                    d.dim_bits()
                )));
            }
            stats.accumulate(d);
        }
        Ok(stats)
    }

    fn accumulate(&mut self, d: &BinaryDescriptor) {
        for (w, &word) in d.words().iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                self.counts[w * 64 + b] += 1;
                bits &= bits - 1;
            }
        }
        self.total += 1;
    }

    pub fn dim_bits(&self) -> u32 {
        self.counts.len() as u32
    }

    /// Fraction of descriptors with bit `k` set.
    pub fn mean(&self, k: u32) -> f64 {
        f64::from(self.counts[k as usize]) / f64::from(self.total)
    }
}

/// Per-bit set counts over a non-empty, uniform-width sequence.
pub fn bit_statistics(descriptors: &[BinaryDescriptor]) -> Result<BitStatistics> {
    BitStatistics::from_descriptors(descriptors)
}
