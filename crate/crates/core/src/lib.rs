//! Hamming distance embedding binary search tree (HBST).
//!
//! Binary descriptors are stored in a binary tree whose internal nodes each
//! test a single descriptor bit. A search descends greedily to one leaf and
//! scans it linearly, so lookups cost `O(h + N / 2^h)` instead of `O(N)`.
//! Each stored descriptor remembers the image it came from, which lets the
//! same tree answer image retrieval queries through per-image voting.
//!
//! Besides the tree, the crate carries a brute-force oracle, the completeness
//! instrumentation used to reason about the greedy search, a synthetic data
//! generator, and a precision/recall harness for sequential place recognition.
//! Matching strategies share the [`Matcher`] trait and are looked up by name
//! through a [`MatcherRegistry`].

pub mod bench;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod io;
pub mod matcher;
pub mod oracle;
pub mod retrieval;
pub mod synthetic;
pub mod tree;

pub use descriptor::{bit_statistics, hamming, BinaryDescriptor, BitStatistics, DescriptorEntry, Image};
pub use error::{HbstError, Result};
pub use matcher::{BruteForceMatcher, HbstMatcher, Matcher, MatcherParams, MatcherRegistry};
pub use retrieval::{query_image, retrieve_above, retrieve_best, ImageScore, RetrievalConfig};
pub use tree::{HbstTree, MatchRecord, Node, SearchResult, TreeConfig};
