//! Session drivers for the two roles.
//!
//! The correcting side opens every exchange:
//!
//! ```text
//! HELLO            ->          <- SCHEDULE
//! ROUND_PARITIES   ->          <- MISMATCH_MASK     once per round
//! HALF_PARITIES    ->          <- DIRECTION_MASK    once per search depth
//! DIGEST           ->          <- DIGEST
//! ```
//!
//! Look-back batches use the same half-parity exchange; the reference side
//! infers which batch is active from its own mirrored engine.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::bitframe::BitFrame;
use crate::error::{Error, Result};
use crate::protocol::engine::{Engine, Role};
use crate::protocol::registry::{BlockRegistry, SearchBatch};
use crate::protocol::schedule::{make_schedule, PartitionSchedule, ScheduleVariant};
use crate::wire::message::{Abort, Body, Hello, Message, ScheduleAck, PROTOCOL_VERSION};
use crate::wire::transport::{Transport, TransportStats};

const ABORT_CORRUPTION: u8 = 1;
const ABORT_PARAMETERS: u8 = 2;
const ABORT_OTHER: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    /// Estimated QBER used to size the blocks; sent in parts per million.
    pub qber_estimate: f64,
    pub variant: ScheduleVariant,
    pub session_seed: u128,
    pub session_id: u16,
    pub identity_first_round: bool,
}

impl SessionConfig {
    pub fn new(qber_estimate: f64, variant: ScheduleVariant, session_seed: u128) -> Self {
        SessionConfig {
            qber_estimate,
            variant,
            session_seed,
            session_id: 0,
            identity_first_round: true,
        }
    }

    fn hello(&self, n: usize) -> Result<Hello> {
        if !(0.0..=0.5).contains(&self.qber_estimate) {
            return Err(Error::contract(format!("qber {} outside [0, 0.5]", self.qber_estimate)));
        }
        Ok(Hello {
            version: PROTOCOL_VERSION,
            n: n as u64,
            qber_ppm: (self.qber_estimate * 1e6).round() as u32,
            variant: self.variant,
            identity_first_round: self.identity_first_round,
            session_seed: self.session_seed,
        })
    }
}

fn schedule_for(hello: &Hello) -> Result<PartitionSchedule> {
    let n = usize::try_from(hello.n).map_err(|_| Error::contract("frame too large"))?;
    make_schedule(hello.qber_ppm as f64 / 1e6, n, hello.variant)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Corrected,
    /// Digests differ after the last round.
    FrameFailed,
}

/// Everything the correcting side learns from one session.
#[derive(Debug, Clone)]
pub struct ReconciliationResult {
    pub corrected: BitFrame,
    pub schedule: PartitionSchedule,
    pub outcome: Outcome,
    /// Parity bits disclosed: one per block per round plus one per searched half.
    pub leaked_bits: u64,
    /// Round parity exchanges, one per round.
    pub parity_exchanges: u64,
    /// Search depth of each round's main batch.
    pub search_depths: Vec<u32>,
    /// Search steps spent on look-back batches.
    pub lookback_round_trips: u64,
    pub lookback_batches: u64,
    /// `parity_exchanges + sum(search_depths) + lookback_round_trips`.
    pub round_trips: u64,
    /// `r + sum(ceil(log2 k_i))`, the bound on the first two terms.
    pub nominal_round_trips: u64,
    /// Original-order positions flipped, in order.
    pub flips: Vec<usize>,
    /// From the end of the handshake until the peer's digest arrives.
    pub wall_time: Duration,
    /// Part of `wall_time` spent outside request/reply exchanges.
    pub busy_time: Duration,
    /// Time from sending each request until its reply arrived.
    pub wait_time: Duration,
    /// Transport counters over the whole session, handshake included.
    pub transport: TransportStats,
    /// Frame, parity indexes and block registry at the end of the session.
    pub state_bytes: usize,
}

impl ReconciliationResult {
    pub fn search_round_trips(&self) -> u64 {
        self.search_depths.iter().map(|&d| d as u64).sum()
    }
}

/// What the reference side reports after serving one session.
#[derive(Debug, Clone)]
pub struct ReferenceReport {
    pub params: Hello,
    pub schedule: PartitionSchedule,
    pub outcome: Outcome,
    pub leaked_bits: u64,
    /// From sending SCHEDULE until replying to DIGEST.
    pub wall_time: Duration,
    /// Time between receiving each request and sending its reply.
    pub busy_time: Duration,
    pub transport: TransportStats,
    pub state_bytes: usize,
}

fn abort_code(e: &Error) -> u8 {
    match e {
        Error::ProtocolCorruption(_) => ABORT_CORRUPTION,
        Error::Contract(_) => ABORT_PARAMETERS,
        _ => ABORT_OTHER,
    }
}

/// Tells the peer why the session ends, unless the peer is already gone.
fn send_abort<T: Transport + ?Sized>(t: &mut T, session: u16, err: &Error) {
    if !matches!(err, Error::PeerClosed | Error::Aborted(_) | Error::Io(_)) {
        let _ = t.send(&Message::new(
            session,
            0,
            Body::Abort(Abort {
                code: abort_code(err),
                reason: err.to_string(),
            }),
        ));
    }
}

fn unexpected(msg: &Message, wanted: &str) -> Error {
    match &msg.body {
        Body::Abort(a) => Error::Aborted(format!("code {}: {}", a.code, a.reason)),
        _ => Error::corruption(format!(
            "expected {wanted}, got {:?} for round {}",
            msg.message_type(),
            msg.round
        )),
    }
}

/// The correcting party's side of one session.
pub struct CorrectingSession<'t, T: Transport + ?Sized> {
    transport: &'t mut T,
    engine: Engine,
    config: SessionConfig,
    search_depths: Vec<u32>,
    lookback_round_trips: u64,
    lookback_batches: u64,
    /// Time from the start of each request until its reply is decoded.
    exchange_time: Duration,
}

impl<'t, T: Transport + ?Sized> CorrectingSession<'t, T> {
    /// Agrees on parameters with the reference side.
    pub fn handshake(transport: &'t mut T, frame: BitFrame, config: SessionConfig) -> Result<Self> {
        let result = Self::negotiate(transport, &frame, &config);
        match result {
            Ok(schedule) => Ok(CorrectingSession {
                transport,
                engine: Engine::new(
                    Role::Correcting,
                    frame,
                    schedule,
                    config.session_seed,
                    config.identity_first_round,
                ),
                config,
                search_depths: Vec::new(),
                lookback_round_trips: 0,
                lookback_batches: 0,
                exchange_time: Duration::ZERO,
            }),
            Err(e) => {
                send_abort(transport, config.session_id, &e);
                Err(e)
            }
        }
    }

    fn negotiate(transport: &mut T, frame: &BitFrame, config: &SessionConfig) -> Result<PartitionSchedule> {
        let hello = config.hello(frame.len())?;
        let schedule = schedule_for(&hello)?;
        transport.send(&Message::new(config.session_id, 0, Body::Hello(hello)))?;
        let reply = transport.recv()?;
        let Body::Schedule(ack) = &reply.body else {
            return Err(unexpected(&reply, "SCHEDULE"));
        };
        let sizes: Vec<u64> = schedule.sizes.iter().map(|&k| k as u64).collect();
        if ack.params != hello || ack.sizes != sizes || reply.session != config.session_id {
            return Err(Error::corruption("reference side accepted different parameters"));
        }
        Ok(schedule)
    }

    /// Checks every flip against the reference frame. Simulation only.
    pub fn with_oracle(mut self, reference: BitFrame) -> Result<Self> {
        self.engine.attach_oracle(reference)?;
        Ok(self)
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn registry(&self) -> &BlockRegistry {
        self.engine.registry()
    }

    pub fn transport_stats(&self) -> &TransportStats {
        self.transport.stats()
    }

    fn request(&mut self, round: u32, body: Body) -> Result<Message> {
        let started = Instant::now();
        self.transport.send(&Message::new(self.config.session_id, round, body))?;
        let reply = self.transport.recv();
        self.exchange_time += started.elapsed();
        let reply = reply?;
        if reply.session != self.config.session_id || reply.round != round {
            return Err(Error::corruption(format!(
                "reply for session {} round {} while expecting round {round}",
                reply.session, reply.round
            )));
        }
        Ok(reply)
    }

    /// Sends every block parity of `round` in one message and registers the
    /// reply. Returns the batch over the blocks whose parities disagree.
    pub fn exchange_round_parities(&mut self, round: u32) -> Result<SearchBatch> {
        let own = self.engine.open_round(round)?;
        let reply = self.request(round, Body::RoundParities(own.clone()))?;
        let Body::MismatchMask(mismatches) = &reply.body else {
            return Err(unexpected(&reply, "MISMATCH_MASK"));
        };
        self.engine.record_round(round, &own, mismatches)
    }

    /// Halves every active block once per round trip until each has located
    /// its error. Returns the number of round trips.
    pub fn binary_search_batch(&mut self, mut batch: SearchBatch) -> Result<u32> {
        let mut depth = 0;
        while !batch.is_empty() {
            let own = self.engine.half_parities(&batch);
            let reply = self.request(batch.round(), Body::HalfParities(own.clone()))?;
            let Body::DirectionMask(dirs) = &reply.body else {
                return Err(unexpected(&reply, "DIRECTION_MASK"));
            };
            self.engine.advance(&mut batch, &own, dirs)?;
            depth += 1;
        }
        Ok(depth)
    }

    /// Searches look-back batches until the list is empty. Returns the round trips used.
    pub fn lookback_execute(&mut self) -> Result<u64> {
        let mut trips = 0;
        while let Some(batch) = self.engine.next_batch()? {
            self.lookback_batches += 1;
            trips += self.binary_search_batch(batch)? as u64;
        }
        self.lookback_round_trips += trips;
        Ok(trips)
    }

    /// Runs every round, then compares digests.
    pub fn run(mut self) -> Result<ReconciliationResult> {
        match self.run_inner() {
            Ok(r) => Ok(r),
            Err(e) => {
                send_abort(self.transport, self.config.session_id, &e);
                Err(e)
            }
        }
    }

    fn run_inner(&mut self) -> Result<ReconciliationResult> {
        let started = Instant::now();
        let exchanged_before = self.exchange_time;
        let rounds = self.engine.schedule().rounds() as u32;
        for round in 1..=rounds {
            let batch = self.exchange_round_parities(round)?;
            let depth = self.binary_search_batch(batch)?;
            self.search_depths.push(depth);
            self.lookback_execute()?;
        }
        let own = self.engine.digest();
        let reply = self.request(rounds + 1, Body::Digest(own))?;
        let Body::Digest(theirs) = reply.body else {
            return Err(unexpected(&reply, "DIGEST"));
        };
        let wall_time = started.elapsed();
        let wait_time = self.exchange_time - exchanged_before;
        let schedule = self.engine.schedule().clone();
        let parity_exchanges = rounds as u64;
        let search: u64 = self.search_depths.iter().map(|&d| d as u64).sum();
        Ok(ReconciliationResult {
            corrected: self.engine.frame().clone(),
            outcome: if theirs == own {
                Outcome::Corrected
            } else {
                Outcome::FrameFailed
            },
            leaked_bits: self.engine.leaked(),
            parity_exchanges,
            search_depths: self.search_depths.clone(),
            lookback_round_trips: self.lookback_round_trips,
            lookback_batches: self.lookback_batches,
            round_trips: parity_exchanges + search + self.lookback_round_trips,
            nominal_round_trips: parity_exchanges + schedule.nominal_search_depth(),
            schedule,
            flips: self.engine.flips().to_vec(),
            wall_time,
            busy_time: wall_time.saturating_sub(wait_time),
            wait_time,
            transport: self.transport.stats().clone(),
            state_bytes: self.engine.state_bytes(),
        })
    }
}

/// Runs a full session as the correcting side.
pub fn run_correcting<T: Transport + ?Sized>(
    transport: &mut T,
    frame: BitFrame,
    config: SessionConfig,
    oracle: Option<&BitFrame>,
) -> Result<ReconciliationResult> {
    let mut session = CorrectingSession::handshake(transport, frame, config)?;
    if let Some(reference) = oracle {
        session = session.with_oracle(reference.clone())?;
    }
    session.run()
}

/// Serves one session as the reference side.
pub fn run_reference<T: Transport + ?Sized>(transport: &mut T, frame: &BitFrame) -> Result<ReferenceReport> {
    let mut session_id = 0;
    let result = serve(transport, frame, &mut session_id);
    if let Err(e) = &result {
        send_abort(transport, session_id, e);
    }
    result
}

fn serve<T: Transport + ?Sized>(transport: &mut T, frame: &BitFrame, session_id: &mut u16) -> Result<ReferenceReport> {
    let first = transport.recv()?;
    *session_id = first.session;
    let Body::Hello(hello) = first.body else {
        return Err(unexpected(&first, "HELLO"));
    };
    if hello.version != PROTOCOL_VERSION {
        return Err(Error::contract(format!("unsupported protocol version {}", hello.version)));
    }
    if hello.n != frame.len() as u64 {
        return Err(Error::contract(format!(
            "peer frame has {} bits, ours has {}",
            hello.n,
            frame.len()
        )));
    }
    let schedule = schedule_for(&hello)?;
    let ack = ScheduleAck {
        params: hello,
        sizes: schedule.sizes.iter().map(|&k| k as u64).collect(),
    };
    transport.send(&Message::new(*session_id, 0, Body::Schedule(ack)))?;
    let started = Instant::now();
    let mut busy = Duration::ZERO;

    let rounds = schedule.rounds() as u32;
    let mut engine = Engine::new(
        Role::Reference,
        frame.clone(),
        schedule.clone(),
        hello.session_seed,
        hello.identity_first_round,
    );
    let mut active: Option<SearchBatch> = None;
    let outcome = loop {
        let msg = transport.recv()?;
        let handling = Instant::now();
        if msg.session != *session_id {
            return Err(Error::corruption(format!("message for session {}", msg.session)));
        }
        let reply = match &msg.body {
            Body::RoundParities(peer) => {
                settle(&mut engine, &active)?;
                let own = engine.open_round(msg.round)?;
                if peer.len() != own.len() {
                    return Err(Error::corruption(format!(
                        "round {}: {} parities for {} blocks",
                        msg.round,
                        peer.len(),
                        own.len()
                    )));
                }
                let mismatches = own.xor(peer)?;
                let batch = engine.record_round(msg.round, &own, &mismatches)?;
                active = (!batch.is_empty()).then_some(batch);
                Body::MismatchMask(mismatches)
            }
            Body::HalfParities(peer) => {
                let mut batch = match active.take() {
                    Some(b) => b,
                    None => engine
                        .next_batch()?
                        .ok_or_else(|| Error::corruption("half parities with no block under search"))?,
                };
                if batch.round() != msg.round {
                    return Err(Error::corruption(format!(
                        "half parities for round {} while searching round {}",
                        msg.round,
                        batch.round()
                    )));
                }
                let own = engine.half_parities(&batch);
                let dirs = Engine::directions(&own, peer)?;
                engine.advance(&mut batch, &own, &dirs)?;
                active = (!batch.is_empty()).then_some(batch);
                Body::DirectionMask(dirs)
            }
            Body::Digest(theirs) => {
                settle(&mut engine, &active)?;
                if engine.rounds_done() != rounds {
                    return Err(Error::corruption(format!(
                        "digest after {} of {rounds} rounds",
                        engine.rounds_done()
                    )));
                }
                let own = engine.digest();
                busy += handling.elapsed();
                transport.send(&Message::new(*session_id, msg.round, Body::Digest(own)))?;
                break if own == *theirs {
                    Outcome::Corrected
                } else {
                    Outcome::FrameFailed
                };
            }
            _ => return Err(unexpected(&msg, "a parity list or DIGEST")),
        };
        busy += handling.elapsed();
        transport.send(&Message::new(*session_id, msg.round, reply))?;
    };
    let wall_time = started.elapsed();
    Ok(ReferenceReport {
        params: hello,
        schedule,
        outcome,
        leaked_bits: engine.leaked(),
        wall_time,
        busy_time: busy,
        transport: transport.stats().clone(),
        state_bytes: engine.state_bytes(),
    })
}

/// The peer moved on to a new phase: no search may still be pending here.
fn settle(engine: &mut Engine, active: &Option<SearchBatch>) -> Result<()> {
    if active.is_some() || engine.next_batch()?.is_some() {
        return Err(Error::corruption("peer left a search unfinished"));
    }
    Ok(())
}
