//! Per-round partition sizes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First-round block size constant of the original schedule, `k1 = ceil(c / qber)`.
pub const ORIGINAL_FIRST_ROUND_CONSTANT: f64 = 0.70;

const ORIGINAL_ROUNDS: usize = 4;
const HIGH_EFFICIENCY_ROUNDS: usize = 10;
const HIGH_EFFICIENCY_THIRD: usize = 1_000;
const HIGH_EFFICIENCY_LATE: usize = 1_000_000;

#[repr(u8)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleVariant {
    /// Four rounds, `k1 = ceil(0.70 / qber)`, doubling each round.
    Original = 0,
    /// Ten rounds: `0.8/qber`, `4/qber`, `1000`, then seven rounds of `10^6`.
    #[serde(rename = "high-eff")]
    HighEfficiency = 1,
}

impl TryFrom<u8> for ScheduleVariant {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Self::Original),
            1 => Ok(Self::HighEfficiency),
            other => Err(Error::Decode(format!("unknown schedule variant {other}"))),
        }
    }
}

impl fmt::Display for ScheduleVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Original => "original",
            Self::HighEfficiency => "high-eff",
        })
    }
}

impl FromStr for ScheduleVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Self::Original),
            "high-eff" | "high-efficiency" => Ok(Self::HighEfficiency),
            other => Err(Error::contract(format!("unknown schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSchedule {
    pub variant: ScheduleVariant,
    /// Block size of each round, round 1 first.
    pub sizes: Vec<usize>,
}

impl PartitionSchedule {
    pub fn rounds(&self) -> usize {
        self.sizes.len()
    }

    /// Block size of `round` (1-based).
    pub fn block_size(&self, round: u32) -> usize {
        self.sizes[round as usize - 1]
    }

    /// `sum_i ceil(log2(k_i))`: the binary-search depth budget over all rounds.
    pub fn nominal_search_depth(&self) -> u64 {
        self.sizes.iter().map(|&k| ceil_log2(k) as u64).sum()
    }
}

pub fn ceil_log2(k: usize) -> u32 {
    if k <= 1 {
        0
    } else {
        usize::BITS - (k - 1).leading_zeros()
    }
}

/// `ceil(c / q)`, treating quotients within rounding noise of an integer as exact.
fn ceil_ratio(c: f64, q: f64) -> usize {
    let x = c / q;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

pub fn make_schedule(qber: f64, n: usize, variant: ScheduleVariant) -> Result<PartitionSchedule> {
    make_schedule_with_constant(qber, n, variant, ORIGINAL_FIRST_ROUND_CONSTANT)
}

/// Like [`make_schedule`] with an explicit first-round constant for the original variant.
pub fn make_schedule_with_constant(
    qber: f64,
    n: usize,
    variant: ScheduleVariant,
    first_round_constant: f64,
) -> Result<PartitionSchedule> {
    if !(qber > 0.0) {
        return Err(Error::contract(
            "qber must be positive; skip reconciliation when no errors are expected",
        ));
    }
    if qber > 0.5 {
        return Err(Error::contract(format!("qber {qber} exceeds 0.5")));
    }
    if n < 2 {
        return Err(Error::contract("frame must hold at least 2 bits"));
    }
    if !(first_round_constant > 0.0) {
        return Err(Error::contract("first-round constant must be positive"));
    }
    let limit = (n / 2).max(1);
    let raw: Vec<usize> = match variant {
        ScheduleVariant::Original => {
            let k1 = ceil_ratio(first_round_constant, qber);
            (0..ORIGINAL_ROUNDS)
                .map(|i| k1.saturating_mul(1 << i))
                .collect()
        }
        ScheduleVariant::HighEfficiency => {
            let mut sizes = vec![
                ceil_ratio(0.8, qber),
                ceil_ratio(4.0, qber),
                HIGH_EFFICIENCY_THIRD,
            ];
            sizes.resize(HIGH_EFFICIENCY_ROUNDS, HIGH_EFFICIENCY_LATE);
            sizes
        }
    };
    let sizes = raw.into_iter().map(|k| k.clamp(1, limit)).collect();
    Ok(PartitionSchedule { variant, sizes })
}
