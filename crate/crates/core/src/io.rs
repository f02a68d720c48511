//! On-disk formats: the `HBSTD001` descriptor file, the CSV outputs and the
//! pose text file.
//!
//! Descriptor file layout (little-endian):
//!
//! ```text
//! "HBSTD001" | u32 dim_bits | u64 record_count
//! record := u32 image_id | u32 keypoint_id | f32 x | f32 y | dim_bits/8 payload bytes
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::descriptor::{check_width, BinaryDescriptor, DescriptorEntry};
use crate::error::{HbstError, Result};
use crate::eval::{PoseRecord, PrCurve};
use crate::oracle::{BitwiseCompleteness, CompletenessReport};
use crate::retrieval::ImageScore;
use crate::tree::MatchRecord;

pub const DESCRIPTOR_MAGIC: &[u8; 8] = b"HBSTD001";

pub const GROUND_TRUTH_HEADER: [&str; 2] = ["query_id", "reference_id"];
pub const PR_HEADER: [&str; 4] = ["threshold", "precision", "recall", "f1"];
pub const MATCH_HEADER: [&str; 5] = ["query_image", "query_kp", "ref_image", "ref_kp", "distance"];
pub const BITWISE_HEADER: [&str; 3] = ["bit", "tau", "completeness"];
pub const DEPTH_HEADER: [&str; 4] = ["depth", "tau", "measured", "predicted"];
pub const TIMING_HEADER: [&str; 2] = ["image", "seconds"];
pub const SCORES_HEADER: [&str; 4] = ["query_id", "reference_id", "votes", "score"];

/// Bounds-checked little-endian cursor; running short is a format error.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(HbstError::format(format!(
                "truncated stream: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.remaining() == 0
    }
}

pub(crate) fn write_entry<W: Write>(e: &DescriptorEntry, out: &mut W) -> Result<()> {
    out.write_all(&e.image_id.to_le_bytes())?;
    out.write_all(&e.keypoint_id.to_le_bytes())?;
    out.write_all(&e.keypoint[0].to_le_bytes())?;
    out.write_all(&e.keypoint[1].to_le_bytes())?;
    out.write_all(&e.descriptor.to_bytes())?;
    Ok(())
}

pub(crate) fn read_entry(r: &mut ByteReader<'_>, dim_bits: u32) -> Result<DescriptorEntry> {
    let image_id = r.u32()?;
    let keypoint_id = r.u32()?;
    let x = r.f32()?;
    let y = r.f32()?;
    if !x.is_finite() || !y.is_finite() {
        return Err(HbstError::format(format!(
            "non-finite keypoint for image {image_id}, keypoint {keypoint_id}"
        )));
    }
    let descriptor = BinaryDescriptor::from_bytes(r.take(dim_bits as usize / 8)?, dim_bits)?;
    Ok(DescriptorEntry {
        descriptor,
        image_id,
        keypoint_id,
        keypoint: [x, y],
    })
}

/// Contents of a descriptor file.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorFile {
    pub dim_bits: u32,
    pub entries: Vec<DescriptorEntry>,
}

impl DescriptorFile {
    pub fn new(dim_bits: u32, entries: Vec<DescriptorEntry>) -> Result<Self> {
        if dim_bits == 0 || dim_bits % 8 != 0 {
            return Err(HbstError::usage(format!(
                "descriptor files need a positive width divisible by 8, got {dim_bits}"
            )));
        }
        check_width(&entries, dim_bits)?;
        Ok(DescriptorFile { dim_bits, entries })
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(DESCRIPTOR_MAGIC)?;
        out.write_all(&self.dim_bits.to_le_bytes())?;
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            write_entry(e, out)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(20 + self.entries.len() * (16 + self.dim_bits as usize / 8));
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != DESCRIPTOR_MAGIC {
            return Err(HbstError::format("not a descriptor file (bad magic)"));
        }
        let dim_bits = r.u32()?;
        if dim_bits == 0 || dim_bits % 8 != 0 {
            return Err(HbstError::format(format!("invalid descriptor width {dim_bits}")));
        }
        let count = r.u64()?;
        let record = 16 + dim_bits as u64 / 8;
        if count.saturating_mul(record) != r.remaining() as u64 {
            return Err(HbstError::format(format!(
                "record count {count} does not match {} payload bytes",
                r.remaining()
            )));
        }
        let entries = (0..count)
            .map(|_| read_entry(&mut r, dim_bits))
            .collect::<Result<Vec<_>>>()?;
        Ok(DescriptorFile { dim_bits, entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

fn csv_writer<W: Write>(out: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

pub fn write_ground_truth<W: Write>(pairs: &BTreeSet<(u32, u32)>, out: W) -> Result<()> {
    let mut w = csv_writer(out, &GROUND_TRUTH_HEADER)?;
    for (q, r) in pairs {
        w.write_record([q.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth<R: Read>(input: R) -> Result<BTreeSet<(u32, u32)>> {
    let rows = read_csv_rows(input, &GROUND_TRUTH_HEADER)?;
    rows.iter()
        .map(|row| {
            let parse = |s: &str| {
                s.trim()
                    .parse::<u32>()
                    .map_err(|_| HbstError::format(format!("invalid image id {s:?} in ground truth")))
            };
            Ok((parse(&row[0])?, parse(&row[1])?))
        })
        .collect()
}

pub fn write_pr_curve<W: Write>(curve: &PrCurve, out: W) -> Result<()> {
    let mut w = csv_writer(out, &PR_HEADER)?;
    for p in &curve.points {
        w.write_record([
            p.threshold.to_string(),
            p.precision.to_string(),
            p.recall.to_string(),
            p.f1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matches<W: Write>(matches: &[MatchRecord], out: W) -> Result<()> {
    let mut w = csv_writer(out, &MATCH_HEADER)?;
    for m in matches {
        w.write_record([
            m.query.image_id.to_string(),
            m.query.keypoint_id.to_string(),
            m.reference.image_id.to_string(),
            m.reference.keypoint_id.to_string(),
            m.distance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bitwise_completeness<W: Write>(result: &BitwiseCompleteness, out: W) -> Result<()> {
    let mut w = csv_writer(out, &BITWISE_HEADER)?;
    for (tau, per_bit) in result.taus.iter().zip(&result.per_bit) {
        for (bit, c) in per_bit.iter().enumerate() {
            w.write_record([bit.to_string(), tau.to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_depth_completeness<W: Write>(reports: &[CompletenessReport], out: W) -> Result<()> {
    let mut w = csv_writer(out, &DEPTH_HEADER)?;
    for rep in reports {
        for (depth, measured) in &rep.per_depth_measured {
            let predicted = rep.per_depth_predicted[depth];
            w.write_record([
                depth.to_string(),
                rep.tau.to_string(),
                measured.to_string(),
                predicted.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing<W: Write>(rows: &[(u32, f64)], out: W) -> Result<()> {
    let mut w = csv_writer(out, &TIMING_HEADER)?;
    for (image, seconds) in rows {
        w.write_record([image.to_string(), seconds.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scores<W: Write>(rows: &[(u32, Vec<ImageScore>)], out: W) -> Result<()> {
    let mut w = csv_writer(out, &SCORES_HEADER)?;
    for (query, scores) in rows {
        for s in scores {
            w.write_record([
                query.to_string(),
                s.image_id.to_string(),
                s.votes.to_string(),
                s.score.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a headed CSV, checking the header and the column count of every row.
pub fn read_csv_rows<R: Read>(input: R, header: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let found: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if found != header {
        return Err(HbstError::format(format!("expected CSV header {header:?}, found {found:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(HbstError::format(format!(
                "CSV row {} has {} columns, expected {}",
                i + 1,
                rec.len(),
                header.len()
            )));
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

/// Parses `image_id tx ty tz qx qy qz qw` lines. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_poses(text: &str) -> Result<Vec<PoseRecord>> {
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(HbstError::format(format!(
                "pose line {} has {} fields, expected 8",
                lineno + 1,
                fields.len()
            )));
        }
        let bad = |what: &str| HbstError::format(format!("invalid {what} on pose line {}", lineno + 1));
        let image_id: u32 = fields[0].parse().map_err(|_| bad("image id"))?;
        let mut v = [0f64; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| bad("number"))?;
            if !slot.is_finite() {
                return Err(bad("number"));
            }
        }
        let pose = PoseRecord::from_quaternion(image_id, [v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]])
            .map_err(|_| bad("quaternion"))?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn load_poses(path: impl AsRef<Path>) -> Result<Vec<PoseRecord>> {
    parse_poses(&fs::read_to_string(path)?)
}
