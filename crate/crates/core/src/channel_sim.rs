//! Binary symmetric channel simulation and frame files.
//!
//! Frames come from `ChaCha8Rng::seed_from_u64(seed)`: first `ceil(n / 8)`
//! random bytes form the reference frame (padding cleared), then one `f64`
//! per bit decides whether that bit flips (`draw < qber`). The same config
//! therefore always yields the same pair, on any platform.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitframe::BitFrame;
use crate::error::{Error, Result};

const FRAME_MAGIC: &[u8; 4] = b"CSCF";
const FRAME_HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub n: usize,
    /// Flip probability, in `[0, 0.5]`.
    pub qber: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(n: usize, qber: f64, seed: u64) -> Self {
        ChannelConfig { n, qber, seed }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.qber) {
            return Err(Error::contract(format!("qber {} outside [0, 0.5]", self.qber)));
        }
        Ok(())
    }
}

/// A reference frame, its noisy copy and where they differ.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub reference: BitFrame,
    pub noisy: BitFrame,
    /// Sorted positions of the flipped bits. For oracles only.
    pub errors: Vec<usize>,
}

impl FramePair {
    pub fn qber(&self) -> f64 {
        if self.reference.is_empty() {
            0.0
        } else {
            self.errors.len() as f64 / self.reference.len() as f64
        }
    }
}

pub fn random_frame(rng: &mut impl RngCore, n: usize) -> BitFrame {
    let mut bytes = vec![0u8; n.div_ceil(8)];
    rng.fill_bytes(&mut bytes);
    if !n.is_multiple_of(8) {
        let last = bytes.len() - 1;
        bytes[last] &= (1u8 << (n % 8)) - 1;
    }
    BitFrame::from_bytes(bytes, n).expect("padding was cleared")
}

pub fn generate_pair(cfg: &ChannelConfig) -> Result<FramePair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let reference = random_frame(&mut rng, cfg.n);
    let mut noisy = reference.clone();
    let mut errors = Vec::new();
    for i in 0..cfg.n {
        if rng.random::<f64>() < cfg.qber {
            noisy.toggle(i);
            errors.push(i);
        }
    }
    Ok(FramePair {
        reference,
        noisy,
        errors,
    })
}

/// Copy of `frame` with exactly the listed positions flipped.
pub fn plant_errors(frame: &BitFrame, positions: &[usize]) -> Result<BitFrame> {
    let mut noisy = frame.clone();
    let mut sorted = positions.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::contract(format!("position {} listed twice", w[0])));
    }
    for &i in &sorted {
        if i >= frame.len() {
            return Err(Error::contract(format!(
                "position {i} outside frame of {} bits",
                frame.len()
            )));
        }
        noisy.toggle(i);
    }
    Ok(noisy)
}

/// Contents of a frame file.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFile {
    pub frame: BitFrame,
    pub qber_ppm: u32,
    /// Low 32 bits of the generating seed.
    pub seed_tag: u32,
}

impl FrameFile {
    pub fn qber(&self) -> f64 {
        self.qber_ppm as f64 / 1e6
    }

    /// Header (`"CSCF"`, n, qber ppm, seed tag as little-endian u32) then the packed bits.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = u32::try_from(self.frame.len())
            .map_err(|_| Error::FrameFile("frame files hold at most 2^32 - 1 bits".into()))?;
        let mut out = Vec::with_capacity(FRAME_HEADER_BYTES + self.frame.as_bytes().len());
        out.extend_from_slice(FRAME_MAGIC);
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&self.qber_ppm.to_le_bytes());
        out.extend_from_slice(&self.seed_tag.to_le_bytes());
        out.extend_from_slice(self.frame.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FRAME_HEADER_BYTES {
            return Err(Error::FrameFile(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != FRAME_MAGIC {
            return Err(Error::FrameFile("bad magic".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let n = word(4) as usize;
        let body = &bytes[FRAME_HEADER_BYTES..];
        if body.len() != n.div_ceil(8) {
            return Err(Error::FrameFile(format!(
                "header says {n} bits but {} payload bytes follow",
                body.len()
            )));
        }
        let frame = BitFrame::from_bytes(body.to_vec(), n).map_err(|e| Error::FrameFile(e.to_string()))?;
        Ok(FrameFile {
            frame,
            qber_ppm: word(8),
            seed_tag: word(12),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Writes the two frames of a generated pair as `<stem>.ref.frame` and `<stem>.noisy.frame`.
pub fn write_pair(cfg: &ChannelConfig, pair: &FramePair, dir: &Path, stem: &str) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let qber_ppm = (cfg.qber * 1e6).round() as u32;
    let seed_tag = cfg.seed as u32;
    let ref_path = dir.join(format!("{stem}.ref.frame"));
    let noisy_path = dir.join(format!("{stem}.noisy.frame"));
    FrameFile {
        frame: pair.reference.clone(),
        qber_ppm,
        seed_tag,
    }
    .write(&ref_path)?;
    FrameFile {
        frame: pair.noisy.clone(),
        qber_ppm,
        seed_tag,
    }
    .write(&noisy_path)?;
    Ok((ref_path, noisy_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitframe::hamming_distance;

    #[test]
    fn zero_qber_gives_identical_frames() {
        let pair = generate_pair(&ChannelConfig::new(10_000, 0.0, 3)).unwrap();
        assert_eq!(pair.reference, pair.noisy);
        assert!(pair.errors.is_empty());
    }

    #[test]
    fn reproducible() {
        let cfg = ChannelConfig::new(4099, 0.1, 42);
        let a = generate_pair(&cfg).unwrap();
        let b = generate_pair(&cfg).unwrap();
        assert_eq!(a.reference, b.reference);
        assert_eq!(a.noisy, b.noisy);
        let c = generate_pair(&ChannelConfig::new(4099, 0.1, 43)).unwrap();
        assert_ne!(a.reference, c.reference);
    }

    #[test]
    fn errors_are_the_differing_positions() {
        let pair = generate_pair(&ChannelConfig::new(20_001, 0.07, 9)).unwrap();
        let diff = pair.reference.xor(&pair.noisy).unwrap();
        assert_eq!(diff.ones().collect::<Vec<_>>(), pair.errors);
    }

    #[test]
    fn binomial_concentration() {
        let (n, p) = (1_000_000usize, 0.05);
        let pair = generate_pair(&ChannelConfig::new(n, p, 1)).unwrap();
        let d = hamming_distance(&pair.reference, &pair.noisy).unwrap() as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((d - 50_000.0).abs() <= 5.0 * sd, "{d}");
    }

    #[test]
    fn empirical_qber_over_many_frames() {
        let (n, p) = (1_000_000usize, 0.03);
        let mut total = 0usize;
        for seed in 0..100 {
            total += generate_pair(&ChannelConfig::new(n, p, 1000 + seed)).unwrap().errors.len();
        }
        let q = total as f64 / (100 * n) as f64;
        assert!((0.029..=0.031).contains(&q), "{q}");
    }

    #[test]
    fn invalid_qber_rejected() {
        assert!(generate_pair(&ChannelConfig::new(10, 0.6, 0)).is_err());
        assert!(generate_pair(&ChannelConfig::new(10, -0.1, 0)).is_err());
    }

    #[test]
    fn plant_examples() {
        let f: BitFrame = "00000000".parse().unwrap();
        assert_eq!(plant_errors(&f, &[]).unwrap(), f);
        let g = plant_errors(&f, &[5]).unwrap();
        assert_eq!(g.to_string(), "00000100");
        let big = BitFrame::zeros(1000);
        let pos = [1, 17, 300, 999];
        assert_eq!(hamming_distance(&big, &plant_errors(&big, &pos).unwrap()).unwrap(), 4);
        assert!(matches!(plant_errors(&f, &[2, 2]), Err(Error::Contract(_))));
        assert!(matches!(plant_errors(&f, &[8]), Err(Error::Contract(_))));
    }

    #[test]
    fn frame_file_round_trip() {
        let pair = generate_pair(&ChannelConfig::new(1001, 0.02, 77)).unwrap();
        let ff = FrameFile {
            frame: pair.noisy.clone(),
            qber_ppm: 20_000,
            seed_tag: 77,
        };
        let bytes = ff.to_bytes().unwrap();
        assert_eq!(bytes.len(), 16 + 126);
        assert_eq!(&bytes[..4], b"CSCF");
        assert_eq!(FrameFile::from_bytes(&bytes).unwrap(), ff);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.frame");
        ff.write(&path).unwrap();
        assert_eq!(FrameFile::read(&path).unwrap(), ff);
    }

    #[test]
    fn frame_file_rejects_damage() {
        let ff = FrameFile {
            frame: BitFrame::zeros(12),
            qber_ppm: 1,
            seed_tag: 2,
        };
        let bytes = ff.to_bytes().unwrap();
        assert!(FrameFile::from_bytes(&bytes[..10]).is_err());
        assert!(FrameFile::from_bytes(&bytes[..17]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(FrameFile::from_bytes(&bad).is_err());
        let mut pad = bytes;
        pad[17] = 0xF0;
        assert!(FrameFile::from_bytes(&pad).is_err());
    }
}
