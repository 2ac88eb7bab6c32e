use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use cascade_ir::channel_sim::{generate_pair, write_pair, ChannelConfig, FrameFile};
use cascade_ir::harness::experiment::{run_cell, write_csv, Cell, CellSummary, ExperimentReport};
use cascade_ir::harness::{binary_entropy, performance_rate, run_experiment, secret_bits_per_frame, table_one, ExperimentConfig};
use cascade_ir::protocol::{run_correcting, run_reference, Outcome, ScheduleVariant, SessionConfig};
use cascade_ir::wire::TcpTransport;
use cascade_ir::Error;

/// CASCADE information reconciliation: simulation benchmarks and a two-host mode.
#[derive(Parser)]
#[command(name = "cascade", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconcile simulated frame pairs over the in-process loopback transport.
    Bench {
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        #[arg(long, default_value_t = 0.01)]
        qber: f64,
        #[arg(long, default_value = "original")]
        schedule: ScheduleVariant,
        /// Injected one-way latency.
        #[arg(long, default_value_t = 0.0)]
        latency_ms: f64,
        #[arg(long, default_value_t = 1)]
        sessions: usize,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Hold the reference frame and answer sessions over TCP.
    Serve {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        frame_file: PathBuf,
        /// Serve this many sessions, then exit. 0 serves forever.
        #[arg(long, default_value_t = 1)]
        sessions: usize,
    },
    /// Correct a frame against a serving peer.
    Connect {
        #[arg(long)]
        peer: String,
        #[arg(long)]
        frame_file: PathBuf,
        /// QBER estimate; defaults to the one stored in the frame file.
        #[arg(long)]
        qber: Option<f64>,
        #[arg(long, default_value = "original")]
        schedule: ScheduleVariant,
        #[arg(long, default_value_t = 1)]
        seed: u128,
        /// Write the corrected frame here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Efficiency table over QBER 1, 3, 5, 10 and 15 %.
    Table {
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Add high-efficiency schedule rows at 1 % and 5 %.
        #[arg(long)]
        high_eff: bool,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Run a full experiment grid from a TOML config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Secret-key rate behind a reconciliation stage.
    Perf {
        /// Reconciliation input rate, bits per second.
        #[arg(long)]
        r_ir: f64,
        #[arg(long)]
        fer: f64,
        #[arg(long)]
        alpha: f64,
        /// Channel QBER; mutual information per bit is 1 - h2(qber).
        #[arg(long, required_unless_present = "i_ab", conflicts_with = "i_ab")]
        qber: Option<f64>,
        /// Mutual information per input bit, instead of deriving it from --qber.
        #[arg(long)]
        i_ab: Option<f64>,
        /// Eavesdropper information per input bit.
        #[arg(long, default_value_t = 0.0)]
        i_e: f64,
    },
    /// Write a simulated frame pair as two frame files.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        qber: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value = "pair")]
        stem: String,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let corrupted = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::ProtocolCorruption(_))));
            ExitCode::from(if corrupted { 3 } else { 1 })
        }
    }
}

fn print_cell(s: &CellSummary) {
    println!(
        "n={} qber={} schedule={} latency={}ms sessions={} frames={} alpha={:.4} fer={} rt={:.1} (nominal {:.1}, lookback {:.1}) wall={:.4}s compute={:.4}s comm={:.4}s throughput={:.3} Mbps aggregate={:.3} Mbps",
        s.n,
        s.qber,
        s.schedule,
        s.latency_ms,
        s.sessions,
        s.frames,
        s.mean_efficiency,
        s.fer,
        s.mean_round_trips,
        s.mean_nominal_round_trips,
        s.mean_lookback_exchanges,
        s.mean_wall_time_s,
        s.mean_compute_time_s,
        s.mean_comm_time_s,
        s.mean_throughput_bps / 1e6,
        s.aggregate_throughput_bps / 1e6,
    );
}

fn finish(report: &ExperimentReport, out: &Path) -> anyhow::Result<ExitCode> {
    report.write(out).with_context(|| format!("writing results to {}", out.display()))?;
    for c in &report.cells {
        print_cell(c);
    }
    println!("results written to {}", out.display());
    let corrupted: usize = report.cells.iter().map(|c| c.corrupted).sum();
    if corrupted > 0 {
        eprintln!("{corrupted} session(s) hit a protocol corruption");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Bench {
            n,
            qber,
            schedule,
            latency_ms,
            sessions,
            frames,
            seed,
            out,
        } => {
            let config = ExperimentConfig {
                frame_sizes: vec![n],
                qbers: vec![qber],
                schedule,
                latencies_ms: vec![latency_ms],
                sessions,
                frames,
                seed,
                check_flips: true,
            };
            config.validate()?;
            let cell = Cell {
                n,
                qber,
                latency_ms,
                schedule,
                sessions,
            };
            let (records, summary) = run_cell(&cell, frames, seed, 0, true);
            let report = ExperimentReport {
                config,
                cells: vec![summary],
                frames: records,
            };
            finish(&report, &out)
        }
        Command::Sweep { config, out } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let report = run_experiment(&cfg)?;
            finish(&report, &out)
        }
        Command::Table {
            frames,
            n,
            seed,
            high_eff,
            out,
        } => {
            let rows = table_one(frames, n, seed, high_eff)?;
            println!("{:>6}  {:<9} {:>8} {:>8} {:>8} {:>8}", "qber", "schedule", "alpha", "target", "fer", "rt");
            for r in &rows {
                println!(
                    "{:>6.3}  {:<9} {:>8.4} {:>8} {:>8.4} {:>8.1}",
                    r.qber,
                    r.schedule.to_string(),
                    r.efficiency,
                    r.target.map_or("-".to_string(), |t| format!("{t:.4}")),
                    r.fer,
                    r.mean_round_trips
                );
            }
            std::fs::create_dir_all(&out)?;
            write_csv(&out.join("table.csv"), &rows)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Perf {
            r_ir,
            fer,
            alpha,
            qber,
            i_ab,
            i_e,
        } => {
            let i_ab = match (i_ab, qber) {
                (Some(i), _) => i,
                (None, Some(q)) => 1.0 - binary_entropy(q)?,
                (None, None) => bail!("either --qber or --i-ab is required"),
            };
            let rate = performance_rate(r_ir, fer, alpha, i_ab, i_e)?;
            let per_bit = secret_bits_per_frame(fer, alpha, i_ab, i_e)?;
            println!("mutual_information_per_bit {i_ab}");
            println!("secret_bits_per_bit {per_bit}");
            println!("secret_key_rate_bps {rate}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Gen {
            n,
            qber,
            seed,
            out_dir,
            stem,
        } => {
            let cfg = ChannelConfig::new(n, qber, seed);
            let pair = generate_pair(&cfg)?;
            std::fs::create_dir_all(&out_dir)?;
            let (r, b) = write_pair(&cfg, &pair, &out_dir, &stem)?;
            println!("{} ({} errors)", r.display(), pair.errors.len());
            println!("{}", b.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            listen,
            frame_file,
            sessions,
        } => {
            let file = FrameFile::read(&frame_file).with_context(|| format!("reading {}", frame_file.display()))?;
            let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            eprintln!("serving {} bits on {}", file.frame.len(), listener.local_addr()?);
            let mut served = 0;
            for stream in listener.incoming() {
                let mut t = TcpTransport::from_stream(stream?)?;
                let report = run_reference(&mut t, &file.frame)?;
                println!(
                    "session done: outcome={:?} leaked={} busy={:.4}s wall={:.4}s messages={}",
                    report.outcome,
                    report.leaked_bits,
                    report.busy_time.as_secs_f64(),
                    report.wall_time.as_secs_f64(),
                    report.transport.messages_sent + report.transport.messages_received
                );
                served += 1;
                if sessions != 0 && served >= sessions {
                    break;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Connect {
            peer,
            frame_file,
            qber,
            schedule,
            seed,
            output,
        } => {
            let file = FrameFile::read(&frame_file).with_context(|| format!("reading {}", frame_file.display()))?;
            let qber = qber.unwrap_or(file.qber());
            let mut t = TcpTransport::connect(&peer).with_context(|| format!("connecting to {peer}"))?;
            let result = run_correcting(&mut t, file.frame.clone(), SessionConfig::new(qber, schedule, seed), None)?;
            println!(
                "outcome={:?} flips={} leaked={} round_trips={} (parity {}, search {}, lookback {}) wall={:.4}s busy={:.4}s",
                result.outcome,
                result.flips.len(),
                result.leaked_bits,
                result.round_trips,
                result.parity_exchanges,
                result.search_round_trips(),
                result.lookback_round_trips,
                result.wall_time.as_secs_f64(),
                result.busy_time.as_secs_f64()
            );
            if let Some(path) = output {
                FrameFile {
                    frame: result.corrected.clone(),
                    ..file
                }
                .write(&path)?;
            }
            if result.outcome == Outcome::FrameFailed {
                bail!("digests differ after the last round");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
