//! Efficiency and key-rate algebra, and the per-session metrics record.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::protocol::session::Outcome;

/// `h2(p) = -p log2 p - (1-p) log2 (1-p)`, with `h2(0) = h2(1) = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::contract(format!("probability {p} outside [0, 1]")));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::contract(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Secret bits left per frame: `(1 - fer) * (alpha * i_ab - i_e)`, floored at 0.
pub fn secret_bits_per_frame(fer: f64, alpha: f64, i_ab: f64, i_e: f64) -> Result<f64> {
    check_fraction("fer", fer)?;
    check_fraction("alpha", alpha)?;
    if !(i_e >= 0.0) || !(i_ab >= 0.0) {
        return Err(Error::contract("information quantities must be non-negative"));
    }
    Ok(((1.0 - fer) * (alpha * i_ab - i_e)).max(0.0))
}

/// Secret-key rate behind a reconciliation stage running at `r_ir` input
/// bits per second: `r_ir * (1 - fer) * (alpha * i_ab_frac - i_e_frac)`, floored at 0.
pub fn performance_rate(r_ir: f64, fer: f64, alpha: f64, i_ab_frac: f64, i_e_frac: f64) -> Result<f64> {
    if !(r_ir >= 0.0) {
        return Err(Error::contract(format!("rate {r_ir} is negative")));
    }
    check_fraction("i_ab_frac", i_ab_frac)?;
    check_fraction("i_e_frac", i_e_frac)?;
    Ok(r_ir * secret_bits_per_frame(fer, alpha, i_ab_frac, i_e_frac)?)
}

/// `(n - leaked) / (n * (1 - h2(q)))`, the share of the mutual information kept.
pub fn efficiency(n: usize, leaked: u64, q: f64) -> Result<f64> {
    let capacity = n as f64 * (1.0 - binary_entropy(q)?);
    if capacity <= 0.0 {
        return Err(Error::contract("no mutual information at qber 0.5"));
    }
    Ok((n as f64 - leaked as f64) / capacity)
}

/// One reconciled frame.
#[derive(Debug, Clone, Serialize)]
pub struct SessionMetrics {
    pub n: usize,
    /// Configured channel QBER, also used as the session's estimate.
    pub qber: f64,
    /// Measured from the generated pair.
    pub qber_true: f64,
    pub leaked_bits: u64,
    pub round_trips: u64,
    pub parity_exchanges: u64,
    pub search_round_trips: u64,
    pub lookback_exchanges: u64,
    pub nominal_round_trips: u64,
    pub messages: u64,
    pub bytes: u64,
    pub flips: usize,
    pub wrong_flips: usize,
    pub wall_time_s: f64,
    pub compute_time_s: f64,
    pub comm_time_s: f64,
    pub outcome: Outcome,
    pub efficiency: f64,
    pub throughput_bps: f64,
    pub state_bytes: usize,
}
