//! `HBT1` tree files.
//!
//! ```text
//! "HBT1" | u8 version = 1 | u32 dim_bits | preorder nodes
//! node := 0u8 | u32 count | count * record      (leaf)
//!       | 1u8 | u16 bit_index | node | node     (internal, left first)
//! ```
//! Records use the descriptor-file layout. All integers are little-endian.

use std::io::Write;

use super::{HbstTree, Node};
use crate::error::{HbstError, Result};
use crate::io::{read_entry, write_entry, ByteReader};

pub const TREE_MAGIC: &[u8; 4] = b"HBT1";
pub const TREE_VERSION: u8 = 1;

const TAG_LEAF: u8 = 0;
const TAG_INTERNAL: u8 = 1;

impl HbstTree {
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        if self.dim_bits % 8 != 0 {
            return Err(HbstError::usage(format!(
                "tree files need a width divisible by 8, got {}",
                self.dim_bits
            )));
        }
        if self.dim_bits > u32::from(u16::MAX) + 1 {
            return Err(HbstError::usage("tree files store bit indices as u16"));
        }
        out.write_all(TREE_MAGIC)?;
        out.write_all(&[TREE_VERSION])?;
        out.write_all(&self.dim_bits.to_le_bytes())?;
        write_node(&self.root, out)
    }

    pub fn serialize(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    /// Parses a tree file and checks the structural invariants.
    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != TREE_MAGIC {
            return Err(HbstError::format("not a tree file (bad magic)"));
        }
        let version = r.u8()?;
        if version != TREE_VERSION {
            return Err(HbstError::format(format!("unsupported tree file version {version}")));
        }
        let dim_bits = r.u32()?;
        if dim_bits == 0 || dim_bits % 8 != 0 {
            return Err(HbstError::format(format!("invalid descriptor width {dim_bits}")));
        }
        let root = read_node(&mut r, dim_bits, 0)?;
        if !r.is_empty() {
            return Err(HbstError::format(format!("{} trailing bytes after tree", r.remaining())));
        }
        HbstTree::from_root(dim_bits, root).map_err(|e| match e {
            HbstError::Consistency(msg) => HbstError::Format(msg),
            other => other,
        })
    }
}

fn write_node<W: Write>(node: &Node, out: &mut W) -> Result<()> {
    match node {
        Node::Leaf { entries } => {
            let count = u32::try_from(entries.len()).map_err(|_| HbstError::usage("leaf too large for u32 count"))?;
            out.write_all(&[TAG_LEAF])?;
            out.write_all(&count.to_le_bytes())?;
            for e in entries {
                write_entry(e, out)?;
            }
        }
        Node::Internal { bit_index, left, right } => {
            out.write_all(&[TAG_INTERNAL])?;
            out.write_all(&(*bit_index as u16).to_le_bytes())?;
            write_node(left, out)?;
            write_node(right, out)?;
        }
    }
    Ok(())
}

fn read_node(r: &mut ByteReader<'_>, dim_bits: u32, depth: u32) -> Result<Node> {
    if depth > dim_bits {
        return Err(HbstError::format("tree deeper than the descriptor width"));
    }
    match r.u8()? {
        TAG_LEAF => {
            let count = r.u32()? as usize;
            let record = 16 + dim_bits as usize / 8;
            if count.saturating_mul(record) > r.remaining() {
                return Err(HbstError::format("truncated leaf"));
            }
            let entries = (0..count)
                .map(|_| read_entry(r, dim_bits))
                .collect::<Result<Vec<_>>>()?;
            Ok(Node::leaf(entries))
        }
        TAG_INTERNAL => {
            let bit_index = u32::from(r.u16()?);
            if bit_index >= dim_bits {
                return Err(HbstError::format(format!("bit index {bit_index} out of range")));
            }
            let left = read_node(r, dim_bits, depth + 1)?;
            let right = read_node(r, dim_bits, depth + 1)?;
            Ok(Node::internal(bit_index, left, right))
        }
        tag => Err(HbstError::format(format!("unknown node tag {tag}"))),
    }
}
