//! Runs both parties of a session in one process over a loopback transport.

use std::time::Duration;

use crate::channel_sim::FramePair;
use crate::error::{Error, Result};
use crate::harness::metrics::{efficiency, SessionMetrics};
use crate::protocol::schedule::ScheduleVariant;
use crate::protocol::session::{run_correcting, run_reference, ReconciliationResult, ReferenceReport, SessionConfig};
use crate::wire::transport::{Loopback, Transport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// QBER the session sizes its blocks for.
    pub qber_estimate: f64,
    pub variant: ScheduleVariant,
    pub one_way_latency: Duration,
    pub session_seed: u128,
    pub session_id: u16,
    pub identity_first_round: bool,
    /// Fail the session on the first flip that does not fix an error.
    pub check_flips: bool,
    pub record_transcript: bool,
}

impl SimOptions {
    pub fn new(qber_estimate: f64, variant: ScheduleVariant) -> Self {
        SimOptions {
            qber_estimate,
            variant,
            one_way_latency: Duration::ZERO,
            session_seed: 0x5EED,
            session_id: 0,
            identity_first_round: true,
            check_flips: true,
            record_transcript: false,
        }
    }

    fn session_config(&self) -> SessionConfig {
        SessionConfig {
            qber_estimate: self.qber_estimate,
            variant: self.variant,
            session_seed: self.session_seed,
            session_id: self.session_id,
            identity_first_round: self.identity_first_round,
        }
    }
}

/// Both sides' view of one simulated session.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub correcting: ReconciliationResult,
    pub reference: ReferenceReport,
    pub metrics: SessionMetrics,
    /// Frames exchanged, as seen by the correcting side, if recorded.
    pub transcript: Option<Vec<(crate::wire::transport::Direction, Vec<u8>)>>,
}

pub fn simulate(pair: &FramePair, opts: &SimOptions) -> Result<SimRun> {
    let (mut alice, mut bob) = Loopback::pair(opts.one_way_latency);
    if opts.record_transcript {
        bob.record_transcript();
    }
    let reference = &pair.reference;
    let (bob_result, alice_result) = std::thread::scope(|s| {
        let server = s.spawn(move || run_reference(&mut alice, reference));
        let oracle = opts.check_flips.then_some(reference);
        let result = run_correcting(&mut bob, pair.noisy.clone(), opts.session_config(), oracle);
        let transcript = bob.transcript().map(<[_]>::to_vec);
        drop(bob);
        let served = server.join().expect("reference thread panicked");
        ((result, transcript), served)
    });
    let (bob_result, transcript) = bob_result;
    let correcting = bob_result?;
    let reference = alice_result?;
    let metrics = session_metrics(pair, opts.qber_estimate, &correcting, &reference)?;
    Ok(SimRun {
        correcting,
        reference,
        metrics,
        transcript,
    })
}

/// Metrics for a finished session, using the pair as ground truth.
pub fn session_metrics(
    pair: &FramePair,
    qber: f64,
    bob: &ReconciliationResult,
    alice: &ReferenceReport,
) -> Result<SessionMetrics> {
    let n = pair.reference.len();
    if bob.corrected.len() != n {
        return Err(Error::LengthMismatch {
            left: bob.corrected.len(),
            right: n,
        });
    }
    let qber_true = pair.qber();
    let wrong_flips = bob
        .flips
        .iter()
        .filter(|&&x| pair.errors.binary_search(&x).is_err())
        .count();
    let wall = bob.wall_time.as_secs_f64();
    let compute = bob.busy_time.as_secs_f64() + alice.busy_time.as_secs_f64();
    Ok(SessionMetrics {
        n,
        qber,
        qber_true,
        leaked_bits: bob.leaked_bits,
        round_trips: bob.round_trips,
        parity_exchanges: bob.parity_exchanges,
        search_round_trips: bob.search_round_trips(),
        lookback_exchanges: bob.lookback_round_trips,
        nominal_round_trips: bob.nominal_round_trips,
        messages: bob.transport.messages_sent + bob.transport.messages_received,
        bytes: bob.transport.bytes_sent + bob.transport.bytes_received,
        flips: bob.flips.len(),
        wrong_flips,
        wall_time_s: wall,
        compute_time_s: compute,
        comm_time_s: (wall - compute).max(0.0),
        outcome: bob.outcome,
        efficiency: efficiency(n, bob.leaked_bits, qber_true)?,
        throughput_bps: if wall > 0.0 { n as f64 / wall } else { f64::INFINITY },
        state_bytes: bob.state_bytes,
    })
}
