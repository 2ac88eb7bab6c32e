use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use cascade_ir::channel_sim::{generate_pair, plant_errors, ChannelConfig, FramePair};
use cascade_ir::harness::{simulate, SimOptions};
use cascade_ir::permute::PermutationKey;
use cascade_ir::protocol::{
    make_schedule, run_correcting, run_reference, CorrectingSession, Outcome, ScheduleVariant, SessionConfig,
};
use cascade_ir::wire::{decode, Body, Direction, Loopback, Message, TcpTransport, Transport};
use cascade_ir::{hamming_distance, BitFrame, Error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_frame(n: usize, seed: u64) -> BitFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BitFrame::from_bits((0..n).map(|_| rng.random::<bool>()))
}

fn pair_with(reference: BitFrame, errors: &[usize]) -> FramePair {
    let noisy = plant_errors(&reference, errors).unwrap();
    let mut errors = errors.to_vec();
    errors.sort_unstable();
    FramePair {
        reference,
        noisy,
        errors,
    }
}

/// QBER estimate whose original schedule starts at block size `k`.
fn qber_for_block(k: usize) -> f64 {
    let q = 0.7 / k as f64;
    let s = make_schedule((q * 1e6).round() / 1e6, 1 << 20, ScheduleVariant::Original).unwrap();
    assert_eq!(s.sizes[0], k, "no ppm-exact qber for k = {k}");
    q
}

/// Runs `steps` against a reference thread over loopback, then hangs up.
fn with_session<R>(
    pair: &FramePair,
    cfg: SessionConfig,
    steps: impl FnOnce(&mut CorrectingSession<'_, Loopback>) -> R,
) -> R {
    let (mut alice, mut bob) = Loopback::pair(Duration::ZERO);
    let reference = pair.reference.clone();
    let server = thread::spawn(move || run_reference(&mut alice, &reference));
    let out = {
        let mut session = CorrectingSession::handshake(&mut bob, pair.noisy.clone(), cfg)
            .unwrap()
            .with_oracle(pair.reference.clone())
            .unwrap();
        steps(&mut session)
    };
    drop(bob);
    let _ = server.join().unwrap();
    out
}

#[test]
fn identical_frames_need_only_parity_exchanges() {
    let f = random_frame(10_000, 1);
    let pair = pair_with(f, &[]);
    let run = simulate(&pair, &SimOptions::new(0.02, ScheduleVariant::Original)).unwrap();
    let r = &run.correcting;
    assert!(r.flips.is_empty());
    assert_eq!(r.round_trips, 4);
    let expected: u64 = r.schedule.sizes.iter().map(|&k| 10_000usize.div_ceil(k) as u64).sum();
    assert_eq!(r.leaked_bits, expected);
    assert_eq!(r.outcome, Outcome::Corrected);
}

#[test]
fn single_error_in_eight_bit_block() {
    let q = qber_for_block(8);
    let pair = pair_with(random_frame(64, 2), &[5]);
    let (mismatch, depth, flips) = with_session(&pair, SessionConfig::new(q, ScheduleVariant::Original, 3), |s| {
        let batch = s.exchange_round_parities(1).unwrap();
        let mismatch: Vec<usize> = batch.blocks().iter().map(|b| b.start / 8).collect();
        let depth = s.binary_search_batch(batch).unwrap();
        (mismatch, depth, s.engine().flips().to_vec())
    });
    assert_eq!(mismatch, vec![0]);
    assert_eq!(depth, 3);
    assert_eq!(flips, vec![5]);
}

#[test]
fn mismatch_set_reports_odd_blocks_only() {
    let q = qber_for_block(8);
    // Block 3 holds one error, block 1 two, block 6 three.
    let errors = [26, 9, 12, 48, 50, 53];
    let pair = pair_with(random_frame(64, 4), &errors);
    let odd = with_session(&pair, SessionConfig::new(q, ScheduleVariant::Original, 5), |s| {
        let batch = s.exchange_round_parities(1).unwrap();
        batch.blocks().iter().map(|b| b.start / 8).collect::<Vec<_>>()
    });
    assert_eq!(odd, vec![3, 6]);
}

#[test]
fn single_bit_block_is_fixed_without_search() {
    // k1 = 2 at qber 0.5; n = 9 leaves a final block of one bit.
    let pair = pair_with(random_frame(9, 6), &[8]);
    let (depth, flips, trips) = with_session(&pair, SessionConfig::new(0.5, ScheduleVariant::Original, 7), |s| {
        let batch = s.exchange_round_parities(1).unwrap();
        let before = s.engine().flips().to_vec();
        let depth = s.binary_search_batch(batch).unwrap();
        (depth, before, s.engine().flips().len())
    });
    assert_eq!(flips, vec![8]);
    assert_eq!(depth, 0);
    assert_eq!(trips, 1);
}

#[test]
fn batch_depth_is_independent_of_block_count() {
    for k in [8usize, 64, 1024] {
        let q = qber_for_block(k);
        for b in [1usize, 10, 100] {
            let n = 2 * b * k;
            let mut rng = ChaCha8Rng::seed_from_u64((k * b) as u64);
            // One error in each even-numbered block.
            let errors: Vec<usize> = (0..b).map(|i| 2 * i * k + rng.random_range(0..k)).collect();
            let pair = pair_with(random_frame(n, 8), &errors);
            let (odd, depth, trips, flips) =
                with_session(&pair, SessionConfig::new(q, ScheduleVariant::Original, 9), |s| {
                    let batch = s.exchange_round_parities(1).unwrap();
                    let odd = batch.len();
                    let before = s.engine().flips().len();
                    let trips_before = s_round_trips(s);
                    let depth = s.binary_search_batch(batch).unwrap();
                    let trips = s_round_trips(s) - trips_before;
                    (odd, depth, trips, s.engine().flips().len() - before)
                });
            assert_eq!(odd, b);
            assert_eq!(depth as usize, k.trailing_zeros() as usize, "k={k} B={b}");
            assert_eq!(trips, depth as u64);
            assert_eq!(flips, b);
        }
    }
}

fn s_round_trips(s: &CorrectingSession<'_, Loopback>) -> u64 {
    s.transport_stats().round_trips
}

/// Errors `x, y` share a round-1 block and `z, w` share another, so round 1
/// sees nothing. Round 2 separates `x` and `w` into error-free blocks but
/// puts `y` with `z`. Round 2 finds `x` and `w`; look-back on round 1 then
/// finds `y` and `z` together.
#[test]
fn lookback_finds_errors_hidden_in_even_blocks() {
    let n = 64;
    let q = qber_for_block(8);
    let seed = 11u128;
    let key = PermutationKey::new(seed, 2, n).unwrap();
    let b2 = |i: usize| key.forward(i).unwrap() / 16;
    let (x, y) = (0, 1);
    assert_ne!(b2(x), b2(y));
    let z = (8..n).find(|&z| b2(z) == b2(y)).expect("no z");
    let w = (z / 8 * 8..z / 8 * 8 + 8)
        .find(|&w| w != z && ![b2(x), b2(y)].contains(&b2(w)))
        .expect("no w");
    let pair = pair_with(random_frame(n, 12), &[x, y, z, w]);
    let (mut alice, mut bob) = Loopback::pair(Duration::ZERO);
    let reference = pair.reference.clone();
    let server = thread::spawn(move || run_reference(&mut alice, &reference));
    let result = run_correcting(&mut bob, pair.noisy.clone(), SessionConfig::new(q, ScheduleVariant::Original, seed), Some(&pair.reference)).unwrap();
    server.join().unwrap().unwrap();

    assert_eq!(result.search_depths[0], 0);
    assert_eq!(result.search_depths[1], 4);
    assert_eq!(result.lookback_batches, 1);
    assert_eq!(result.lookback_round_trips, 3);
    // Round 2 fixes x and w, look-back fixes y and z.
    let sorted = |v: &[usize]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v
    };
    assert_eq!(sorted(&result.flips[..2]), sorted(&[x, w]));
    assert_eq!(sorted(&result.flips[2..]), sorted(&[y, z]));
    assert_eq!(result.corrected, pair.reference);
    assert_eq!(result.round_trips, 4 + 4 + 3);
}

#[test]
fn registry_matches_frames_after_session() {
    for (n, q, seed) in [(4096, 0.05, 1u64), (3001, 0.15, 2), (20_000, 0.02, 3)] {
        let pair = generate_pair(&ChannelConfig::new(n, q, seed)).unwrap();
        let (audit, lookback_left, corrected) =
            with_session(&pair, SessionConfig::new(q, ScheduleVariant::Original, seed as u128), |s| {
                for round in 1..=4 {
                    let batch = s.exchange_round_parities(round).unwrap();
                    s.binary_search_batch(batch).unwrap();
                    s.lookback_execute().unwrap();
                    s.registry().audit(&pair.reference, s.engine().frame()).unwrap();
                }
                (
                    s.registry().audit(&pair.reference, s.engine().frame()),
                    s.registry().lookback_len(),
                    s.engine().frame().clone(),
                )
            });
        audit.unwrap();
        assert_eq!(lookback_left, 0);
        assert_eq!(corrected, pair.reference, "n={n} q={q}");
    }
}

fn bob_messages(transcript: &[(Direction, Vec<u8>)]) -> Vec<(Direction, Message)> {
    transcript.iter().map(|(d, b)| (*d, decode(b).unwrap())).collect()
}

#[test]
fn leakage_equals_parities_in_transcript() {
    for (q, v) in [(0.03, ScheduleVariant::Original), (0.1, ScheduleVariant::Original), (0.05, ScheduleVariant::HighEfficiency)] {
        let pair = generate_pair(&ChannelConfig::new(50_000, q, 21)).unwrap();
        let opts = SimOptions {
            record_transcript: true,
            ..SimOptions::new(q, v)
        };
        let run = simulate(&pair, &opts).unwrap();
        let msgs = bob_messages(run.transcript.as_ref().unwrap());
        let disclosed: usize = msgs.iter().map(|(_, m)| m.disclosed_parities()).sum();
        assert_eq!(disclosed as u64, run.correcting.leaked_bits);
        assert_eq!(run.reference.leaked_bits, run.correcting.leaked_bits);
        // Every round trip is one request and one reply; two extra for hello and digest.
        assert_eq!(run.correcting.transport.round_trips, run.correcting.round_trips + 2);
        assert_eq!(msgs.len() as u64, 2 * (run.correcting.round_trips + 2));
        let halves = msgs
            .iter()
            .filter(|(_, m)| matches!(m.body, Body::HalfParities(_)))
            .count() as u64;
        assert_eq!(halves, run.correcting.search_round_trips() + run.correcting.lookback_round_trips);
        assert!(run.correcting.search_depths.iter().zip(&run.correcting.schedule.sizes).all(|(&d, &k)| d <= k.next_power_of_two().trailing_zeros()));
    }
}

#[test]
fn transcripts_are_deterministic_and_backend_independent() {
    let pair = generate_pair(&ChannelConfig::new(30_000, 0.04, 5)).unwrap();
    let cfg = SessionConfig::new(0.04, ScheduleVariant::Original, 77);

    let loopback = || {
        let (mut alice, mut bob) = Loopback::pair(Duration::ZERO);
        bob.record_transcript();
        let reference = pair.reference.clone();
        let server = thread::spawn(move || run_reference(&mut alice, &reference));
        let r = run_correcting(&mut bob, pair.noisy.clone(), cfg, None).unwrap();
        server.join().unwrap().unwrap();
        (r, bob.transcript().unwrap().to_vec())
    };
    let (r1, t1) = loopback();
    let (_, t2) = loopback();
    assert_eq!(t1, t2);

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let reference = pair.reference.clone();
    let server = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut t = TcpTransport::from_stream(stream).unwrap();
        t.record_transcript();
        let report = run_reference(&mut t, &reference).unwrap();
        (report, t.transcript().unwrap().to_vec())
    });
    let mut tcp = TcpTransport::connect(addr).unwrap();
    tcp.record_transcript();
    let r3 = run_correcting(&mut tcp, pair.noisy.clone(), cfg, None).unwrap();
    let t3 = tcp.transcript().unwrap().to_vec();
    drop(tcp);
    let (report, server_log) = server.join().unwrap();
    assert_eq!(t1, t3);
    assert_eq!(r1.corrected, r3.corrected);
    assert_eq!(r3.corrected, pair.reference);
    assert_eq!(report.outcome, Outcome::Corrected);
    assert_eq!(server_log.len(), t3.len());
    for ((d1, b1), (d2, b2)) in t3.iter().zip(&server_log) {
        assert_ne!(d1, d2);
        assert_eq!(b1, b2);
    }
}

#[test]
fn length_mismatch_is_rejected_by_reference_side() {
    let (mut alice, mut bob) = Loopback::pair(Duration::ZERO);
    let server = thread::spawn(move || run_reference(&mut alice, &BitFrame::zeros(100)));
    let err = run_correcting(&mut bob, BitFrame::zeros(101), SessionConfig::new(0.02, ScheduleVariant::Original, 1), None)
        .unwrap_err();
    assert!(matches!(err, Error::Aborted(_)), "{err}");
    assert!(matches!(server.join().unwrap(), Err(Error::Contract(_))));
}

#[test]
fn out_of_turn_half_parities_are_corruption() {
    let (mut alice, mut bob) = Loopback::pair(Duration::ZERO);
    let server = thread::spawn(move || run_reference(&mut alice, &BitFrame::zeros(1000)));
    let hello = Message::new(
        0,
        0,
        Body::Hello(cascade_ir::wire::Hello {
            version: cascade_ir::wire::PROTOCOL_VERSION,
            n: 1000,
            qber_ppm: 20_000,
            variant: ScheduleVariant::Original,
            identity_first_round: true,
            session_seed: 1,
        }),
    );
    bob.send(&hello).unwrap();
    assert!(matches!(bob.recv().unwrap().body, Body::Schedule(_)));
    bob.send(&Message::new(0, 1, Body::HalfParities(BitFrame::zeros(3)))).unwrap();
    let reply = bob.recv().unwrap();
    assert!(matches!(reply.body, Body::Abort(ref a) if a.code == 1));
    assert!(matches!(server.join().unwrap(), Err(Error::ProtocolCorruption(_))));
}

#[test]
fn wrong_flip_is_caught_by_oracle() {
    // The reference thread holds a frame that differs from the oracle copy,
    // so the located error does not match the oracle.
    let pair = pair_with(random_frame(256, 30), &[17]);
    let other = plant_errors(&pair.reference, &[17, 100]).unwrap();
    let (mut alice, mut bob) = Loopback::pair(Duration::ZERO);
    let server = thread::spawn(move || run_reference(&mut alice, &pair.reference.clone()));
    let err = run_correcting(&mut bob, other.clone(), SessionConfig::new(0.05, ScheduleVariant::Original, 3), Some(&other))
        .unwrap_err();
    assert!(matches!(err, Error::ProtocolCorruption(_)), "{err}");
    drop(bob);
    let _ = server.join();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_flip_fixes_a_planted_error(
        n in 16usize..3000,
        q in 0.01f64..0.15,
        seed in any::<u64>(),
        high_eff in any::<bool>(),
    ) {
        let pair = generate_pair(&ChannelConfig::new(n, q, seed)).unwrap();
        let variant = if high_eff { ScheduleVariant::HighEfficiency } else { ScheduleVariant::Original };
        let opts = SimOptions { session_seed: seed as u128 * 3 + 1, ..SimOptions::new(q, variant) };
        // check_flips aborts on the first wrong flip; wrong_flips recounts from the pair.
        let run = simulate(&pair, &opts).unwrap();
        prop_assert_eq!(run.metrics.wrong_flips, 0);
        prop_assert_eq!(run.correcting.flips.len() as u64 + hamming_distance(&run.correcting.corrected, &pair.reference).unwrap() as u64, pair.errors.len() as u64);
        let corrected = run.correcting.corrected == pair.reference;
        prop_assert_eq!(run.correcting.outcome == Outcome::Corrected, corrected);
    }
}
