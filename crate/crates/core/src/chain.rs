//! Mixed-derivative chain rule for the reaction term.
//!
//! Differentiating `a(x, u(t1, t2))` at `t = 0` in two boundary-data
//! directions produces one contribution per set partition of the `p + q`
//! derivative slots: a partition with `j` blocks contributes the `j`-th
//! reaction coefficient times the product of lattice fields indexed by
//! each block's slot counts. Partitions with a single block carry the
//! first reaction derivative, which vanishes because the series starts
//! at order two, so they are dropped. Partitions sharing the same
//! multiset of block counts are merged with an integer multiplicity.

use crate::error::{Error, Result};

/// One merged term of the mixed chain rule at the zero base point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainRuleTerm {
    /// Order of the reaction coefficient in front (number of blocks).
    pub a_order: usize,
    /// Sorted multiset of per-block slot counts `(p_b, q_b)`.
    pub blocks: Vec<(usize, usize)>,
    /// Number of set partitions collapsing onto this block multiset.
    pub count: u64,
}

/// All merged terms of the `(p, q)` mixed derivative of the reaction
/// term, sorted by coefficient order and block signature. The first
/// derivatives `(1, 0)` and `(0, 1)` have no terms.
pub fn chain_rule_terms(p: usize, q: usize) -> Result<Vec<ChainRuleTerm>> {
    if p + q == 0 {
        return Err(Error::InvalidParameter(
            "mixed derivative order must be at least one".into(),
        ));
    }
    let n = p + q;
    let mut merged: std::collections::BTreeMap<(usize, Vec<(usize, usize)>), u64> =
        std::collections::BTreeMap::new();
    // Restricted growth strings enumerate set partitions of n slots;
    // slot i < p differentiates the first direction, the rest the second.
    let mut assign = vec![0usize; n];
    loop {
        let n_blocks = assign.iter().copied().max().unwrap() + 1;
        if n_blocks >= 2 {
            let mut blocks = vec![(0usize, 0usize); n_blocks];
            for (slot, &b) in assign.iter().enumerate() {
                if slot < p {
                    blocks[b].0 += 1;
                } else {
                    blocks[b].1 += 1;
                }
            }
            blocks.sort_unstable();
            *merged.entry((n_blocks, blocks)).or_insert(0) += 1;
        }
        // Advance to the next restricted growth string.
        let mut i = n;
        loop {
            if i == 1 {
                return Ok(merged
                    .into_iter()
                    .map(|((a_order, blocks), count)| ChainRuleTerm {
                        a_order,
                        blocks,
                        count,
                    })
                    .collect());
            }
            i -= 1;
            let cap = assign[..i].iter().copied().max().unwrap() + 1;
            if assign[i] < cap {
                assign[i] += 1;
                for a in assign[i + 1..].iter_mut() {
                    *a = 0;
                }
                break;
            }
        }
    }
}
