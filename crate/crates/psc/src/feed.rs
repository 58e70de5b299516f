//! Observation feeds. A data provider ingests a line-delimited event file
//! during the collection period; each `observe <identifier>` line maps the
//! identifier to a bin by hash truncation, so distinct identifiers can
//! collide into one bin (a documented accuracy loss at small bin counts).

use std::fmt;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

#[derive(Debug)]
pub enum FeedError {
    Io(std::io::Error),
    /// Line number and offending text of an unparseable feed line.
    BadLine(usize, String),
}

impl fmt::Display for FeedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeedError::Io(e) => write!(f, "feed io: {e}"),
            FeedError::BadLine(n, line) => write!(f, "feed line {n}: expected `observe <identifier>`, got {line:?}"),
        }
    }
}

impl std::error::Error for FeedError {}

impl From<std::io::Error> for FeedError {
    fn from(e: std::io::Error) -> FeedError {
        FeedError::Io(e)
    }
}

/// Map an identifier to a bin: the first lg(bins) bits of SHA-256, with
/// rejection sampling (a counter appended to the hash input) when the bin
/// count is not a power of two. Deterministic, so every party that sees
/// the same identifier counts the same bin.
pub fn bin_of_identifier(identifier: &str, bins: usize) -> usize {
    assert!(bins >= 1, "at least one bin");
    if bins == 1 {
        return 0;
    }
    let k = bins.next_power_of_two().trailing_zeros();
    for counter in 0u32.. {
        let mut hasher = Sha256::new();
        hasher.update(b"psc.bin-map");
        hasher.update(counter.to_be_bytes());
        hasher.update(identifier.as_bytes());
        let digest = hasher.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        let value = (u64::from_be_bytes(word) >> (64 - k)) as usize;
        if value < bins {
            return value;
        }
    }
    unreachable!("rejection sampling terminates");
}

/// Parse feed text into bins. Blank lines and `#` comments are skipped;
/// anything else must be `observe <identifier>`.
pub fn parse_feed(text: &str, bins: usize) -> Result<Vec<usize>, FeedError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.strip_prefix("observe ") {
            Some(identifier) if !identifier.trim().is_empty() => {
                out.push(bin_of_identifier(identifier.trim(), bins));
            }
            _ => return Err(FeedError::BadLine(n + 1, line.to_string())),
        }
    }
    Ok(out)
}

pub fn load_feed(path: &Path, bins: usize) -> Result<Vec<usize>, FeedError> {
    let text = fs::read_to_string(path)?;
    parse_feed(&text, bins)
}
