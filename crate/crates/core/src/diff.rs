//! Comparison of two layer-size sequences.
//!
//! Ordered mode lines the sequences up position by position. Multiset mode
//! only asks whether both contain the same sizes the same number of times,
//! which is what survives when two exporters list the same layers in a
//! different order.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DiffMode {
    Ordered,
    Multiset,
}

impl fmt::Display for DiffMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiffMode::Ordered => "ordered",
            DiffMode::Multiset => "multiset",
        })
    }
}

/// One disagreement.
///
/// In ordered mode `key` is a position and `left`/`right` are the sizes there.
/// In multiset mode `key` is a size and `left`/`right` are how many times it
/// occurs on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Mismatch {
    pub key: u64,
    pub left: u64,
    pub right: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct DiffReport {
    pub mode: DiffMode,
    pub left_len: usize,
    pub right_len: usize,
    pub mismatches: Vec<Mismatch>,
    /// Ordered: the tail of the longer left side. Multiset: sizes left has
    /// in surplus, ascending, repeated by surplus count.
    pub left_only: Vec<u64>,
    pub right_only: Vec<u64>,
    pub is_match: bool,
}

impl DiffReport {
    pub fn length_mismatch(&self) -> bool {
        self.left_len != self.right_len
    }
}

pub fn diff_sizes(left: &[u64], right: &[u64], mode: DiffMode) -> DiffReport {
    let (mismatches, left_only, right_only) = match mode {
        DiffMode::Ordered => {
            let mismatches = left
                .iter()
                .zip(right)
                .enumerate()
                .filter(|(_, (l, r))| l != r)
                .map(|(i, (&l, &r))| Mismatch {
                    key: i as u64,
                    left: l,
                    right: r,
                })
                .collect();
            let common = left.len().min(right.len());
            (
                mismatches,
                left[common..].to_vec(),
                right[common..].to_vec(),
            )
        }
        DiffMode::Multiset => {
            let mut counts: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
            for &s in left {
                counts.entry(s).or_default().0 += 1;
            }
            for &s in right {
                counts.entry(s).or_default().1 += 1;
            }
            let mut mismatches = Vec::new();
            let (mut left_only, mut right_only) = (Vec::new(), Vec::new());
            for (&size, &(l, r)) in &counts {
                if l == r {
                    continue;
                }
                mismatches.push(Mismatch {
                    key: size,
                    left: l,
                    right: r,
                });
                let surplus = if l > r {
                    &mut left_only
                } else {
                    &mut right_only
                };
                surplus.extend(core::iter::repeat_n(size, l.abs_diff(r) as usize));
            }
            (mismatches, left_only, right_only)
        }
    };
    let is_match = mismatches.is_empty() && left_only.is_empty() && right_only.is_empty();
    DiffReport {
        mode,
        left_len: left.len(),
        right_len: right.len(),
        mismatches,
        left_only,
        right_only,
        is_match,
    }
}
