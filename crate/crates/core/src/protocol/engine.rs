//! Reconciliation state shared by both roles.
//!
//! The two parties run identical engines. Every state change is driven by
//! data both of them hold after each exchange (the mismatch and direction
//! masks), so the registries, look-back lists and batch choices stay in
//! lockstep without extra messages. Only the correcting side changes its frame.

use sha2::{Digest, Sha256};

use crate::bitframe::{BitFrame, ParityIndex};
use crate::error::{Error, Result};
use crate::permute::PermutationKey;
use crate::protocol::registry::{partition, BlockRef, BlockRegistry, SearchBatch};
use crate::protocol::schedule::PartitionSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Holds the reference frame ("Alice"); answers queries.
    Reference,
    /// Corrects its frame towards the reference ("Bob"); drives the exchange.
    Correcting,
}

/// 64-bit check value over `(seed, n, frame)`: the first 8 bytes of SHA-256, little-endian.
pub fn frame_digest(session_seed: u128, frame: &BitFrame) -> u64 {
    let mut h = Sha256::new();
    h.update(session_seed.to_le_bytes());
    h.update((frame.len() as u64).to_le_bytes());
    h.update(frame.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 is 32 bytes"))
}

#[derive(Debug)]
pub struct Engine {
    role: Role,
    frame: BitFrame,
    schedule: PartitionSchedule,
    session_seed: u128,
    identity_first_round: bool,
    keys: Vec<PermutationKey>,
    indices: Vec<ParityIndex>,
    registry: BlockRegistry,
    leaked: u64,
    flips: Vec<usize>,
    oracle: Option<BitFrame>,
}

impl Engine {
    pub fn new(
        role: Role,
        frame: BitFrame,
        schedule: PartitionSchedule,
        session_seed: u128,
        identity_first_round: bool,
    ) -> Self {
        let n = frame.len();
        Engine {
            role,
            frame,
            schedule,
            session_seed,
            identity_first_round,
            keys: Vec::new(),
            indices: Vec::new(),
            registry: BlockRegistry::new(n),
            leaked: 0,
            flips: Vec::new(),
            oracle: None,
        }
    }

    /// Attaches the reference frame so every flip can be checked against the
    /// truth. Simulation only.
    pub fn attach_oracle(&mut self, reference: BitFrame) -> Result<()> {
        if reference.len() != self.frame.len() {
            return Err(Error::LengthMismatch {
                left: self.frame.len(),
                right: reference.len(),
            });
        }
        self.oracle = Some(reference);
        Ok(())
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn frame(&self) -> &BitFrame {
        &self.frame
    }

    pub fn into_frame(self) -> BitFrame {
        self.frame
    }

    pub fn schedule(&self) -> &PartitionSchedule {
        &self.schedule
    }

    pub fn registry(&self) -> &BlockRegistry {
        &self.registry
    }

    /// Rounds whose parities have been exchanged.
    pub fn rounds_done(&self) -> u32 {
        self.registry.rounds()
    }

    pub fn leaked(&self) -> u64 {
        self.leaked
    }

    pub fn flips(&self) -> &[usize] {
        &self.flips
    }

    pub fn digest(&self) -> u64 {
        frame_digest(self.session_seed, &self.frame)
    }

    /// Bytes held by the frame, the parity indexes and the registry.
    pub fn state_bytes(&self) -> usize {
        self.frame.heap_bytes()
            + self.indices.iter().map(ParityIndex::heap_bytes).sum::<usize>()
            + self.registry.heap_bytes()
            + self.flips.capacity() * std::mem::size_of::<usize>()
    }

    /// Permutes the current frame for `round`, indexes it and returns this
    /// side's parity of every top-level block.
    pub fn open_round(&mut self, round: u32) -> Result<BitFrame> {
        if round != self.keys.len() as u32 + 1 || round as usize > self.schedule.rounds() {
            return Err(Error::corruption(format!(
                "round {round} out of order after {} of {} rounds",
                self.keys.len(),
                self.schedule.rounds()
            )));
        }
        let n = self.frame.len();
        let key = PermutationKey::for_round(self.session_seed, round, n, self.identity_first_round)?;
        let index = if key.is_identity() {
            ParityIndex::build(&self.frame)
        } else {
            let mut permuted = BitFrame::zeros(n);
            for x in self.frame.ones() {
                permuted.toggle(key.map(x));
            }
            ParityIndex::build(&permuted)
        };
        let k = self.schedule.block_size(round);
        let parities = BitFrame::from_bits(partition(n, k).map(|(s, l)| index.parity_unchecked(s, l)));
        self.keys.push(key);
        self.indices.push(index);
        Ok(parities)
    }

    /// Registers the opened round given this side's parities and the mismatch
    /// mask. Returns the batch searching the odd blocks.
    pub fn record_round(&mut self, round: u32, own: &BitFrame, mismatches: &BitFrame) -> Result<SearchBatch> {
        if round != self.keys.len() as u32 || round != self.registry.rounds() + 1 {
            return Err(Error::corruption(format!("round {round} was not opened")));
        }
        if own.len() != mismatches.len() {
            return Err(Error::corruption(format!(
                "round {round}: {} blocks but {} mismatch bits",
                own.len(),
                mismatches.len()
            )));
        }
        let reference = match self.role {
            Role::Reference => own.clone(),
            Role::Correcting => own.xor(mismatches)?,
        };
        let k = self.schedule.block_size(round);
        let odd = self
            .registry
            .add_round(self.keys[round as usize - 1].clone(), k, &reference, mismatches)?;
        self.leaked += own.len() as u64;
        self.start_batch(round, odd)
    }

    /// This side's parities of the first halves of every active block.
    pub fn half_parities(&self, batch: &SearchBatch) -> BitFrame {
        let index = &self.indices[batch.round() as usize - 1];
        BitFrame::from_bits(batch.left_halves().map(|(s, l)| index.parity_unchecked(s, l)))
    }

    /// Reference side: bit `i` set when first-half parities agree, meaning the
    /// error of block `i` lies in its second half.
    pub fn directions(own: &BitFrame, peer: &BitFrame) -> Result<BitFrame> {
        if own.len() != peer.len() {
            return Err(Error::corruption(format!(
                "{} half parities for {} active blocks",
                peer.len(),
                own.len()
            )));
        }
        Ok(BitFrame::from_bits(own.iter().zip(peer.iter()).map(|(a, b)| a == b)))
    }

    /// Applies one search step given this side's half parities and the direction mask.
    pub fn advance(&mut self, batch: &mut SearchBatch, own: &BitFrame, error_in_right: &BitFrame) -> Result<()> {
        if own.len() != batch.len() || error_in_right.len() != batch.len() {
            return Err(Error::corruption(format!(
                "search step over {} blocks with {} parities and {} directions",
                batch.len(),
                own.len(),
                error_in_right.len()
            )));
        }
        let reference = match self.role {
            Role::Reference => own.clone(),
            Role::Correcting => BitFrame::from_bits(
                own.iter().zip(error_in_right.iter()).map(|(p, right)| p ^ !right),
            ),
        };
        self.leaked += own.len() as u64;
        let round = batch.round();
        for pos in batch.advance(&mut self.registry, &reference, error_in_right)? {
            self.locate(round, pos)?;
        }
        Ok(())
    }

    /// Next look-back batch, or `None` when the look-back list is empty.
    pub fn next_batch(&mut self) -> Result<Option<SearchBatch>> {
        while let Some((round, blocks)) = self.registry.take_lookback_batch() {
            let batch = self.start_batch(round, blocks)?;
            if !batch.is_empty() {
                return Ok(Some(batch));
            }
        }
        Ok(None)
    }

    fn start_batch(&mut self, round: u32, blocks: Vec<BlockRef>) -> Result<SearchBatch> {
        let (batch, located) = SearchBatch::new(round, blocks);
        for b in located {
            self.locate(round, b.start)?;
        }
        Ok(batch)
    }

    /// An error was located at `pos` of `round`'s order: flip it (correcting
    /// side) and propagate the parity change to every registered block.
    fn locate(&mut self, round: u32, pos: usize) -> Result<()> {
        let x = self.keys[round as usize - 1].unmap(pos);
        if self.role == Role::Correcting {
            if let Some(reference) = &self.oracle {
                if reference.get(x) == self.frame.get(x) {
                    return Err(Error::corruption(format!(
                        "round {round} located bit {x}, which already matches the reference"
                    )));
                }
            }
            self.frame.toggle(x);
            for (key, index) in self.keys.iter().zip(&mut self.indices) {
                index.flip(key.map(x))?;
            }
        }
        self.registry.lookback_collect(x);
        self.flips.push(x);
        Ok(())
    }
}
