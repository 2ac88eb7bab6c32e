//! CASCADE information reconciliation over a two-party message protocol.
//!
//! The correcting party batches every parity query of a protocol step into one
//! message, so a round costs one round trip plus one per binary-search depth,
//! independent of how many blocks hold errors. Both parties keep a registry of
//! every block whose parity was compared and re-search any block a later
//! correction makes odd.
//!
//! ```
//! use cascade_ir::channel_sim::{generate_pair, ChannelConfig};
//! use cascade_ir::harness::{simulate, SimOptions};
//! use cascade_ir::protocol::{Outcome, ScheduleVariant};
//!
//! let pair = generate_pair(&ChannelConfig::new(1 << 14, 0.02, 1)).unwrap();
//! let run = simulate(&pair, &SimOptions::new(0.02, ScheduleVariant::Original)).unwrap();
//! assert_eq!(run.correcting.outcome, Outcome::Corrected);
//! assert_eq!(run.correcting.corrected, pair.reference);
//! ```

pub mod bitframe;
pub mod channel_sim;
pub mod error;
pub mod harness;
pub mod permute;
pub mod protocol;
pub mod wire;

pub use bitframe::{hamming_distance, BitFrame, ParityIndex, PrefixParity};
pub use error::{Error, Result};
pub use permute::PermutationKey;
