//! The measurement protocol itself: parameters and noise sizing, the data
//! provider and computation party state machines across all seven phases,
//! the session key generation subprotocol, the lockstep engine that drives
//! parties over a transport, and the ideal-functionality reference oracle
//! used by differential tests.

pub mod cp;
pub mod dp;
pub mod engine;
pub mod oracle;
pub mod params;
pub mod rng;

pub use cp::CpState;
pub use dp::{DpInit, DpState};
pub use engine::{
    outcome_deadline, run_session, seeded_config, simulate, AdversaryPlan, CpEnv, Deviation,
    DpDeviation, DpEnv, EngineError, RoleEnv, SessionConfig, SessionHandle, SimReport, Step,
};
pub use oracle::reference_oracle;
pub use params::{noise_size, Mode, ParamsError, ProtocolParams, Rosters};

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use crate::wire::{PartyId, PhaseTag, Reader};

/// Evidence category carried by a blame report. Every honest CP derives the
/// same category from the same broadcast outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Evidence {
    /// Two validly signed, distinct payloads from one broadcaster.
    Equivocation,
    /// An expected broadcast never delivered.
    MissingMessage,
    /// A zero-knowledge proof failed verification.
    InvalidProof,
    /// A proof verified but over the wrong statement (stale input vector,
    /// foreign key share).
    WrongStatement,
    /// A rerandomization-decryption output with an identity first component.
    IdentityFirstComponent,
    /// A key signature that does not verify, or signatures over distinct
    /// joint keys.
    BadKeySignature,
}

impl Evidence {
    pub fn tag(&self) -> u8 {
        match self {
            Evidence::Equivocation => 1,
            Evidence::MissingMessage => 2,
            Evidence::InvalidProof => 3,
            Evidence::WrongStatement => 4,
            Evidence::IdentityFirstComponent => 5,
            Evidence::BadKeySignature => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Evidence> {
        match tag {
            1 => Some(Evidence::Equivocation),
            2 => Some(Evidence::MissingMessage),
            3 => Some(Evidence::InvalidProof),
            4 => Some(Evidence::WrongStatement),
            5 => Some(Evidence::IdentityFirstComponent),
            6 => Some(Evidence::BadKeySignature),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Evidence::Equivocation => "equivocation",
            Evidence::MissingMessage => "missing-message",
            Evidence::InvalidProof => "invalid-proof",
            Evidence::WrongStatement => "wrong-statement",
            Evidence::IdentityFirstComponent => "identity-first-component",
            Evidence::BadKeySignature => "bad-key-signature",
        }
    }
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Verdict against one or more CPs. DPs are never accused: a misbehaving DP
/// is excluded from the aggregate instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlameReport {
    pub phase: PhaseTag,
    pub accused: BTreeSet<PartyId>,
    pub evidence: Evidence,
}

impl BlameReport {
    pub fn single(phase: PhaseTag, cp: PartyId, evidence: Evidence) -> BlameReport {
        let mut accused = BTreeSet::new();
        accused.insert(cp);
        BlameReport {
            phase,
            accused,
            evidence,
        }
    }
}

/// Wall-clock spent per phase, in microseconds, indexed by `PhaseTag as u8
/// - 1`. Filled by drivers that have a clock; the core state machines leave
/// it zeroed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseTimings {
    pub micros: [u64; 7],
}

impl PhaseTimings {
    pub fn record(&mut self, phase: PhaseTag, micros: u64) {
        self.micros[phase as usize - 1] += micros;
    }
}

/// The protocol's answer. `noisy_count` can be negative: the binomial noise
/// is centered by subtracting n/2.
#[derive(Debug, Clone, Copy)]
pub struct MeasurementResult {
    pub noisy_count: i64,
    pub n: usize,
    pub mode: Mode,
    pub timings: PhaseTimings,
}

/// Timings are diagnostics, not part of the measured value; two results are
/// equal when they agree on count, noise size, and mode.
impl PartialEq for MeasurementResult {
    fn eq(&self, other: &MeasurementResult) -> bool {
        self.noisy_count == other.noisy_count && self.n == other.n && self.mode == other.mode
    }
}

impl Eq for MeasurementResult {}

/// Terminal state of a session at one party.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Result(MeasurementResult),
    Blame(BlameReport),
}

impl Outcome {
    pub fn result(&self) -> Option<&MeasurementResult> {
        match self {
            Outcome::Result(r) => Some(r),
            Outcome::Blame(_) => None,
        }
    }

    pub fn blame(&self) -> Option<&BlameReport> {
        match self {
            Outcome::Result(_) => None,
            Outcome::Blame(b) => Some(b),
        }
    }

    /// Wire form sent to DPs at termination. Timings are local diagnostics
    /// and stay out, so outcomes from different CPs compare byte-equal.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Outcome::Result(r) => {
                out.push(1u8);
                out.extend_from_slice(&r.noisy_count.to_be_bytes());
                out.extend_from_slice(&(r.n as u32).to_be_bytes());
                out.push(r.mode.tag());
            }
            Outcome::Blame(b) => {
                out.push(2u8);
                out.push(b.phase as u8);
                out.push(b.evidence.tag());
                out.extend_from_slice(&(b.accused.len() as u16).to_be_bytes());
                for id in &b.accused {
                    out.extend_from_slice(&id.0.to_be_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Outcome> {
        let mut r = Reader::new(bytes);
        let outcome = match r.u8().ok()? {
            1 => {
                let mut raw = [0u8; 8];
                raw.copy_from_slice(r.take(8).ok()?);
                let noisy_count = i64::from_be_bytes(raw);
                let n = r.u32().ok()? as usize;
                let mode = Mode::from_tag(r.u8().ok()?)?;
                Outcome::Result(MeasurementResult {
                    noisy_count,
                    n,
                    mode,
                    timings: PhaseTimings::default(),
                })
            }
            2 => {
                let phase = PhaseTag::from_u8(r.u8().ok()?)?;
                let evidence = Evidence::from_tag(r.u8().ok()?)?;
                let count = r.u16().ok()? as usize;
                let mut accused = BTreeSet::new();
                for _ in 0..count {
                    accused.insert(PartyId(r.u16().ok()?));
                }
                Outcome::Blame(BlameReport {
                    phase,
                    accused,
                    evidence,
                })
            }
            _ => return None,
        };
        if r.remaining() != 0 {
            return None;
        }
        Some(outcome)
    }
}
