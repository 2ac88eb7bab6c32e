//! Registry of every block whose parity has been compared, and the batched
//! binary-search state built on top of it.
//!
//! Both parties keep an identical registry. A block's `odd` flag is the XOR of
//! the two parties' parities over that block. Flipping a bit toggles `odd` on
//! every registered block that contains it, in every round; blocks that end up
//! odd wait in the look-back list until a batch picks them up.
//!
//! Blocks are nested halves of top-level partition blocks: a block of length
//! `len` splits into `ceil(len / 2)` and `floor(len / 2)`. The registered
//! blocks of one round therefore form a forest, and the blocks listed for
//! look-back in one round never partially overlap.

use std::collections::BTreeSet;

use rustc_hash::FxHashMap;

use crate::bitframe::BitFrame;
use crate::error::{Error, Result};
use crate::permute::PermutationKey;

/// Identity of a block: an interval of one round's permuted order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId {
    pub round: u32,
    pub start: usize,
    pub len: usize,
}

impl BlockId {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// A registered block together with the reference side's parity over it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRef {
    pub round: u32,
    pub start: usize,
    pub len: usize,
    pub parity_known: bool,
}

impl BlockRef {
    pub fn id(&self) -> BlockId {
        BlockId {
            round: self.round,
            start: self.start,
            len: self.len,
        }
    }
}

/// Top-level blocks of a round: contiguous runs of `k`, the last one possibly shorter.
pub fn partition(n: usize, k: usize) -> impl Iterator<Item = (usize, usize)> {
    let k = k.max(1);
    (0..n.div_ceil(k)).map(move |b| {
        let start = b * k;
        (start, k.min(n - start))
    })
}

#[inline]
fn halves(start: usize, len: usize) -> ((usize, usize), (usize, usize)) {
    let left = len.div_ceil(2);
    ((start, left), (start + left, len - left))
}

#[derive(Debug, Clone, Copy)]
struct Node {
    reference_parity: bool,
    odd: bool,
}

#[derive(Debug)]
struct RoundBlocks {
    key: PermutationKey,
    block_size: usize,
    nodes: FxHashMap<(usize, usize), Node>,
}

#[derive(Debug)]
pub struct BlockRegistry {
    n: usize,
    rounds: Vec<RoundBlocks>,
    lookback: BTreeSet<BlockId>,
}

impl BlockRegistry {
    pub fn new(n: usize) -> Self {
        BlockRegistry {
            n,
            rounds: Vec::new(),
            lookback: BTreeSet::new(),
        }
    }

    pub fn rounds(&self) -> u32 {
        self.rounds.len() as u32
    }

    pub fn key(&self, round: u32) -> &PermutationKey {
        &self.rounds[round as usize - 1].key
    }

    /// Registers the top-level blocks of the next round after its parity
    /// exchange. Returns the blocks whose parities disagreed, in order.
    pub fn add_round(
        &mut self,
        key: PermutationKey,
        block_size: usize,
        reference_parities: &BitFrame,
        mismatches: &BitFrame,
    ) -> Result<Vec<BlockRef>> {
        let round = self.rounds() + 1;
        if key.round() != round || key.domain() != self.n {
            return Err(Error::contract(format!(
                "expected key for round {round} over {} indices",
                self.n
            )));
        }
        let blocks = self.n.div_ceil(block_size.max(1));
        if reference_parities.len() != blocks || mismatches.len() != blocks {
            return Err(Error::corruption(format!(
                "round {round} has {blocks} blocks, got {} parities and {} mismatch bits",
                reference_parities.len(),
                mismatches.len()
            )));
        }
        let mut nodes = FxHashMap::default();
        nodes.reserve(blocks);
        let mut odd = Vec::new();
        for (b, (start, len)) in partition(self.n, block_size).enumerate() {
            let node = Node {
                reference_parity: reference_parities.get(b),
                odd: mismatches.get(b),
            };
            nodes.insert((start, len), node);
            if node.odd {
                odd.push(BlockRef {
                    round,
                    start,
                    len,
                    parity_known: node.reference_parity,
                });
            }
        }
        self.rounds.push(RoundBlocks {
            key,
            block_size,
            nodes,
        });
        Ok(odd)
    }

    pub fn get(&self, id: BlockId) -> Option<BlockRef> {
        let rb = self.rounds.get((id.round as usize).checked_sub(1)?)?;
        rb.nodes.get(&(id.start, id.len)).map(|node| BlockRef {
            round: id.round,
            start: id.start,
            len: id.len,
            parity_known: node.reference_parity,
        })
    }

    pub fn is_odd(&self, id: BlockId) -> Option<bool> {
        let rb = self.rounds.get((id.round as usize).checked_sub(1)?)?;
        rb.nodes.get(&(id.start, id.len)).map(|node| node.odd)
    }

    /// Registers both halves of an odd block being searched and returns the
    /// half that now holds the odd parity.
    pub fn split(
        &mut self,
        parent: BlockRef,
        left_reference_parity: bool,
        error_in_right: bool,
    ) -> Result<BlockRef> {
        let rb = &mut self.rounds[parent.round as usize - 1];
        let (left, right) = halves(parent.start, parent.len);
        let right_reference_parity = parent.parity_known ^ left_reference_parity;
        for (span, reference_parity, odd) in [
            (left, left_reference_parity, !error_in_right),
            (right, right_reference_parity, error_in_right),
        ] {
            let node = Node {
                reference_parity,
                odd,
            };
            if let Some(old) = rb.nodes.insert(span, node) {
                if old.reference_parity != reference_parity {
                    return Err(Error::corruption(format!(
                        "round {} block {span:?} re-registered with a different parity",
                        parent.round
                    )));
                }
            }
        }
        let (start, len, parity_known) = if error_in_right {
            (right.0, right.1, right_reference_parity)
        } else {
            (left.0, left.1, left_reference_parity)
        };
        Ok(BlockRef {
            round: parent.round,
            start,
            len,
            parity_known,
        })
    }

    /// Toggles the odd flag of every registered block containing original
    /// index `x` and returns the blocks that became odd (they join the
    /// look-back list). Blocks that became even leave it.
    pub fn lookback_collect(&mut self, x: usize) -> Vec<BlockRef> {
        let n = self.n;
        let mut joined = Vec::new();
        for (r, rb) in self.rounds.iter_mut().enumerate() {
            let round = r as u32 + 1;
            let pos = rb.key.map(x);
            let k = rb.block_size;
            let top = pos / k * k;
            let mut span = (top, k.min(n - top));
            while let Some(node) = rb.nodes.get_mut(&span) {
                node.odd = !node.odd;
                let id = BlockId {
                    round,
                    start: span.0,
                    len: span.1,
                };
                if node.odd {
                    self.lookback.insert(id);
                    joined.push(BlockRef {
                        round,
                        start: span.0,
                        len: span.1,
                        parity_known: node.reference_parity,
                    });
                } else {
                    self.lookback.remove(&id);
                }
                if span.1 == 1 {
                    break;
                }
                let (left, right) = halves(span.0, span.1);
                span = if pos < right.0 { left } else { right };
            }
        }
        joined
    }

    pub fn lookback_len(&self) -> usize {
        self.lookback.len()
    }

    pub fn lookback_list(&self) -> impl Iterator<Item = &BlockId> {
        self.lookback.iter()
    }

    /// Removes and returns the innermost listed blocks of the earliest round
    /// that has any. Innermost blocks never overlap, so they can be searched
    /// together.
    pub fn take_lookback_batch(&mut self) -> Option<(u32, Vec<BlockRef>)> {
        let round = self.lookback.first()?.round;
        let mut listed: Vec<BlockId> = self
            .lookback
            .range(
                BlockId {
                    round,
                    start: 0,
                    len: 0,
                }..BlockId {
                    round: round + 1,
                    start: 0,
                    len: 0,
                },
            )
            .copied()
            .collect();
        listed.sort_by(|a, b| a.start.cmp(&b.start).then(b.len.cmp(&a.len)));
        let mut batch = Vec::new();
        for (i, id) in listed.iter().enumerate() {
            let encloses_next = listed.get(i + 1).is_some_and(|next| next.start < id.end());
            if !encloses_next {
                self.lookback.remove(id);
                batch.push(self.get(*id).expect("listed blocks are registered"));
            }
        }
        Some((round, batch))
    }

    /// Number of registered blocks across all rounds.
    pub fn len(&self) -> usize {
        self.rounds.iter().map(|rb| rb.nodes.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Estimated heap footprint of the registry.
    pub fn heap_bytes(&self) -> usize {
        let entry = std::mem::size_of::<((usize, usize), Node)>() + 1;
        self.rounds
            .iter()
            .map(|rb| rb.nodes.capacity() * entry)
            .sum::<usize>()
            + self.lookback.len() * std::mem::size_of::<BlockId>() * 2
    }

    /// Recomputes every registered block's parities from both frames and
    /// checks the stored reference parity and odd flag against them.
    pub fn audit(&self, reference: &BitFrame, correcting: &BitFrame) -> std::result::Result<(), String> {
        for (r, rb) in self.rounds.iter().enumerate() {
            for (&(start, len), node) in &rb.nodes {
                let mut pa = false;
                let mut pb = false;
                for p in start..start + len {
                    let x = rb.key.unmap(p);
                    pa ^= reference.get(x);
                    pb ^= correcting.get(x);
                }
                if pa != node.reference_parity || (pa ^ pb) != node.odd {
                    return Err(format!(
                        "round {} block ({start}, {len}): stored parity {} odd {}, actual parity {pa} odd {}",
                        r + 1,
                        node.reference_parity,
                        node.odd,
                        pa ^ pb
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Blocks of one round under simultaneous binary search. Every active block
/// holds odd relative parity; each step halves all of them at once.
#[derive(Debug, Clone)]
pub struct SearchBatch {
    round: u32,
    active: Vec<BlockRef>,
}

impl SearchBatch {
    /// Starts a batch. Blocks of length 1 are already located and are returned
    /// separately instead of joining the batch.
    pub fn new(round: u32, blocks: Vec<BlockRef>) -> (Self, Vec<BlockRef>) {
        let (located, active): (Vec<_>, Vec<_>) = blocks.into_iter().partition(|b| b.len == 1);
        (SearchBatch { round, active }, located)
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn blocks(&self) -> &[BlockRef] {
        &self.active
    }

    /// First halves of the active blocks, as `(start, len)` in round order.
    pub fn left_halves(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.active.iter().map(|b| halves(b.start, b.len).0)
    }

    /// Applies one search step: registers both halves of every active block
    /// and keeps the odd one. Returns the round-order positions located by
    /// this step (blocks that shrank to a single bit).
    pub fn advance(
        &mut self,
        registry: &mut BlockRegistry,
        left_reference_parities: &BitFrame,
        error_in_right: &BitFrame,
    ) -> Result<Vec<usize>> {
        if left_reference_parities.len() != self.active.len() || error_in_right.len() != self.active.len() {
            return Err(Error::corruption(format!(
                "search step over {} blocks got {} parities and {} directions",
                self.active.len(),
                left_reference_parities.len(),
                error_in_right.len()
            )));
        }
        let mut located = Vec::new();
        let mut next = Vec::with_capacity(self.active.len());
        for (i, block) in self.active.iter().enumerate() {
            let child = registry.split(*block, left_reference_parities.get(i), error_in_right.get(i))?;
            if child.len == 1 {
                located.push(child.start);
            } else {
                next.push(child);
            }
        }
        self.active = next;
        Ok(located)
    }
}
