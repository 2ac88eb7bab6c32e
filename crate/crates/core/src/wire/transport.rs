//! Reliable in-order message transports.
//!
//! [`Loopback`] connects two endpoints in one process and holds every message
//! back until `send time + one-way latency`. [`TcpTransport`] speaks the same
//! frames over a stream socket with no injected delay.

use std::io::{BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, Sender};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::wire::message::{self, Message};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

/// Per-endpoint traffic counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransportStats {
    pub messages_sent: u64,
    pub messages_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Receive phases that followed a send phase. On the requesting side this
    /// is the number of request/response exchanges.
    pub round_trips: u64,
    /// Time spent blocked in `recv`, including injected latency.
    pub recv_wait: Duration,
}

pub trait Transport {
    fn send(&mut self, msg: &Message) -> Result<()>;
    fn recv(&mut self) -> Result<Message>;
    fn stats(&self) -> &TransportStats;
    /// Every frame sent or received so far, if recording was enabled.
    fn transcript(&self) -> Option<&[(Direction, Vec<u8>)]>;
}

#[derive(Debug, Default)]
struct Meter {
    stats: TransportStats,
    awaiting_reply: bool,
    transcript: Option<Vec<(Direction, Vec<u8>)>>,
}

impl Meter {
    fn on_send(&mut self, bytes: &[u8]) {
        self.stats.messages_sent += 1;
        self.stats.bytes_sent += bytes.len() as u64;
        self.awaiting_reply = true;
        if let Some(t) = &mut self.transcript {
            t.push((Direction::Sent, bytes.to_vec()));
        }
    }

    fn on_recv(&mut self, bytes: &[u8], waited: Duration) {
        self.stats.messages_received += 1;
        self.stats.bytes_received += bytes.len() as u64;
        self.stats.recv_wait += waited;
        if self.awaiting_reply {
            self.stats.round_trips += 1;
            self.awaiting_reply = false;
        }
        if let Some(t) = &mut self.transcript {
            t.push((Direction::Received, bytes.to_vec()));
        }
    }
}

/// In-process endpoint with injected one-way latency.
pub struct Loopback {
    tx: Sender<(Instant, Vec<u8>)>,
    rx: Receiver<(Instant, Vec<u8>)>,
    latency: Duration,
    meter: Meter,
}

impl Loopback {
    /// Two connected endpoints; each direction delays delivery by `one_way_latency`.
    pub fn pair(one_way_latency: Duration) -> (Loopback, Loopback) {
        let (tx_a, rx_b) = mpsc::channel();
        let (tx_b, rx_a) = mpsc::channel();
        let a = Loopback {
            tx: tx_a,
            rx: rx_a,
            latency: one_way_latency,
            meter: Meter::default(),
        };
        let b = Loopback {
            tx: tx_b,
            rx: rx_b,
            latency: one_way_latency,
            meter: Meter::default(),
        };
        (a, b)
    }

    pub fn latency(&self) -> Duration {
        self.latency
    }

    pub fn record_transcript(&mut self) {
        self.meter.transcript.get_or_insert_with(Vec::new);
    }
}

impl Transport for Loopback {
    fn send(&mut self, msg: &Message) -> Result<()> {
        let bytes = message::encode(msg)?;
        self.meter.on_send(&bytes);
        self.tx
            .send((Instant::now() + self.latency, bytes))
            .map_err(|_| Error::PeerClosed)
    }

    fn recv(&mut self) -> Result<Message> {
        let started = Instant::now();
        let (deliver_at, bytes) = self.rx.recv().map_err(|_| Error::PeerClosed)?;
        let now = Instant::now();
        if deliver_at > now {
            std::thread::sleep(deliver_at - now);
        }
        self.meter.on_recv(&bytes, started.elapsed());
        message::decode(&bytes)
    }

    fn stats(&self) -> &TransportStats {
        &self.meter.stats
    }

    fn transcript(&self) -> Option<&[(Direction, Vec<u8>)]> {
        self.meter.transcript.as_deref()
    }
}

/// Stream-socket transport. Outgoing frames are buffered until the next
/// `recv`, so a burst of sends leaves as one write.
pub struct TcpTransport {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    pending: Vec<u8>,
    meter: Meter,
}

impl TcpTransport {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        Self::from_stream(TcpStream::connect(addr)?)
    }

    pub fn from_stream(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(TcpTransport {
            writer: stream,
            reader,
            pending: Vec::new(),
            meter: Meter::default(),
        })
    }

    pub fn record_transcript(&mut self) {
        self.meter.transcript.get_or_insert_with(Vec::new);
    }

    /// Writes any buffered frames to the socket.
    pub fn flush(&mut self) -> Result<()> {
        if !self.pending.is_empty() {
            self.writer.write_all(&self.pending)?;
            self.pending.clear();
        }
        Ok(())
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, msg: &Message) -> Result<()> {
        let bytes = message::encode(msg)?;
        self.meter.on_send(&bytes);
        self.pending.extend_from_slice(&bytes);
        Ok(())
    }

    fn recv(&mut self) -> Result<Message> {
        self.flush()?;
        let started = Instant::now();
        let frame = message::read_frame(&mut self.reader)?.ok_or(Error::PeerClosed)?;
        self.meter.on_recv(&frame, started.elapsed());
        let msg = message::decode(&frame)?;
        Ok(msg)
    }

    fn stats(&self) -> &TransportStats {
        &self.meter.stats
    }

    fn transcript(&self) -> Option<&[(Direction, Vec<u8>)]> {
        self.meter.transcript.as_deref()
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitframe::BitFrame;
    use crate::wire::message::Body;
    use std::net::TcpListener;

    fn ping(i: u32) -> Message {
        Message::new(1, i, Body::Digest(i as u64))
    }

    #[test]
    fn loopback_zero_latency_delivers_immediately() {
        let (mut a, mut b) = Loopback::pair(Duration::ZERO);
        a.send(&ping(1)).unwrap();
        assert_eq!(b.recv().unwrap(), ping(1));
        assert_eq!(a.stats().messages_sent, 1);
        assert_eq!(b.stats().messages_received, 1);
        assert_eq!(a.stats().bytes_sent, b.stats().bytes_received);
    }

    #[test]
    fn loopback_preserves_order() {
        let (mut a, mut b) = Loopback::pair(Duration::ZERO);
        for i in 0..50 {
            a.send(&ping(i)).unwrap();
        }
        for i in 0..50 {
            assert_eq!(b.recv().unwrap(), ping(i));
        }
    }

    #[test]
    fn loopback_latency_lower_bound() {
        let latency = Duration::from_millis(5);
        let (mut a, mut b) = Loopback::pair(latency);
        let echo = std::thread::spawn(move || {
            for _ in 0..10 {
                let m = b.recv().unwrap();
                b.send(&m).unwrap();
            }
        });
        let started = Instant::now();
        for i in 0..10 {
            a.send(&ping(i)).unwrap();
            assert_eq!(a.recv().unwrap(), ping(i));
        }
        let elapsed = started.elapsed();
        echo.join().unwrap();
        assert!(elapsed >= Duration::from_millis(100), "{elapsed:?}");
        assert_eq!(a.stats().round_trips, 10);
        assert!(a.stats().recv_wait >= Duration::from_millis(100));
    }

    #[test]
    fn closed_peer_is_reported() {
        let (mut a, b) = Loopback::pair(Duration::ZERO);
        drop(b);
        assert!(matches!(a.recv(), Err(Error::PeerClosed)));
        assert!(matches!(a.send(&ping(0)), Err(Error::PeerClosed)));
    }

    #[test]
    fn tcp_round_trip_and_transcripts_match() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut t = TcpTransport::from_stream(stream).unwrap();
            t.record_transcript();
            loop {
                match t.recv() {
                    Ok(m) => t.send(&m).unwrap(),
                    Err(Error::PeerClosed) => break,
                    Err(e) => panic!("{e}"),
                }
            }
            t.transcript().unwrap().to_vec()
        });
        let mut client = TcpTransport::connect(addr).unwrap();
        client.record_transcript();
        let big = Message::new(3, 7, Body::HalfParities(BitFrame::from_bits((0..5000).map(|i| i % 3 == 0))));
        for m in [ping(1), big.clone(), ping(2)] {
            client.send(&m).unwrap();
            assert_eq!(client.recv().unwrap(), m);
        }
        assert_eq!(client.stats().round_trips, 3);
        let client_log = client.transcript().unwrap().to_vec();
        drop(client);
        let server_log = server.join().unwrap();
        assert_eq!(client_log.len(), server_log.len());
        for ((d1, b1), (d2, b2)) in client_log.iter().zip(&server_log) {
            assert_ne!(d1, d2);
            assert_eq!(b1, b2);
        }
    }
}
