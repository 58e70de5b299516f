//! Proof systems: Schnorr DL knowledge, the rerandomization-decryption
//! Σ-protocol, the binary pair-shuffle OR-proof, a general verifiable
//! re-encryption shuffle, hash commitments with committee coin flipping, and
//! an interactive one-to-many mode compiled from any 3-move Σ-protocol.
//!
//! Every non-interactive challenge is recomputed by the verifier from
//! (domain tag, context, full statement, commitments), so proofs bind to
//! their statement and cannot be replayed across sessions, phases, provers,
//! or rounds.

pub mod commit;
pub mod dl;
pub mod interactive;
pub mod pair_shuffle;
pub mod rrd;
pub mod shuffle;

pub use commit::{coin_flip_combine, commit, verify_opening, Commitment, Opening};
pub use dl::{prove_dl, verify_dl, DlProof};
pub use interactive::{
    open_chosen, prove_round1, validate_round1, verify_transcript, InteractiveTranscript,
    ProverState, Round1, INTERACTIVE_REPETITIONS,
};
pub use pair_shuffle::{
    apply_pair_shuffle, prove_pair_shuffle, verify_pair_shuffle, verify_pair_shuffle_batch,
    PairShuffleProof, PairShuffleStatement,
};
pub use rrd::{
    extract_rrd, prove_rrd, verify_rrd, verify_rrd_batch, RrdProof, RrdStatement, RrdWitness,
};
pub use shuffle::{
    derive_generators, prove_shuffle, shuffle, verify_shuffle, ShuffleProof, ShuffleWitness,
};

use alloc::vec::Vec;
use core::fmt;

use crate::group::{hash_bytes, hash_to_scalar, Element, Scalar};
use crate::wire::{PartyId, PhaseTag};

/// Protocol version tag folded into every Fiat-Shamir context.
pub const VERSION_TAG: &[u8] = b"psc-v1";

/// Wire scheme tags for serialized proofs.
pub const TAG_DL: u8 = 1;
pub const TAG_RRD: u8 = 2;
pub const TAG_PAIR_SHUFFLE: u8 = 3;
pub const TAG_SHUFFLE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZkpError {
    /// Witness extraction needs two transcripts with distinct challenges.
    SameChallenge,
    /// Statement vectors disagree in length (or are empty).
    LengthMismatch,
    /// Serialized proof bytes do not parse.
    Malformed,
}

impl fmt::Display for ZkpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZkpError::SameChallenge => f.write_str("transcripts share a challenge"),
            ZkpError::LengthMismatch => f.write_str("statement vector length mismatch"),
            ZkpError::Malformed => f.write_str("malformed proof encoding"),
        }
    }
}

impl core::error::Error for ZkpError {}

/// Binds a proof to its place in the protocol. `bytes()` is the context
/// string passed to the prove/verify operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FsContext {
    pub session: [u8; 16],
    pub phase: PhaseTag,
    pub prover: PartyId,
    pub round: u32,
}

impl FsContext {
    pub fn bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(VERSION_TAG.len() + 16 + 1 + 2 + 4);
        out.extend_from_slice(VERSION_TAG);
        out.extend_from_slice(&self.session);
        out.push(self.phase as u8);
        out.extend_from_slice(&self.prover.0.to_be_bytes());
        out.extend_from_slice(&self.round.to_be_bytes());
        out
    }
}

/// A 3-move protocol in the shape the interactive compiler consumes:
/// commitment message, scalar challenge, response, with byte encodings for
/// commitment and response so they can be hash-committed and broadcast.
///
/// `commit_msg` takes the witness because OR-compositions simulate their
/// dead branch during the commitment move.
pub trait Sigma {
    type Statement;
    type Witness;
    /// Commitment randomness kept by the prover between moves.
    type State;

    fn commit_msg(
        stmt: &Self::Statement,
        wit: &Self::Witness,
        rng: &mut impl rand_core::CryptoRngCore,
    ) -> (Self::State, Vec<u8>);

    fn respond(
        stmt: &Self::Statement,
        wit: &Self::Witness,
        state: &Self::State,
        challenge: &Scalar,
    ) -> Vec<u8>;

    fn verify(stmt: &Self::Statement, alpha: &[u8], challenge: &Scalar, gamma: &[u8]) -> bool;
}

/// Accumulates group equations of the form Σ sᵢ·Pᵢ + b·g = 0 so a whole
/// verification (or a batch of them) collapses into one multiscalar
/// multiplication.
pub(crate) struct EquationAccumulator {
    scalars: Vec<Scalar>,
    points: Vec<Element>,
    base: Scalar,
}

impl EquationAccumulator {
    pub(crate) fn new() -> EquationAccumulator {
        EquationAccumulator {
            scalars: Vec::new(),
            points: Vec::new(),
            base: Scalar::ZERO,
        }
    }

    pub(crate) fn term(&mut self, scalar: Scalar, point: &Element) {
        self.scalars.push(scalar);
        self.points.push(*point);
    }

    pub(crate) fn base_term(&mut self, scalar: Scalar) {
        self.base = self.base + scalar;
    }

    pub(crate) fn holds(&self) -> bool {
        let sum = Element::vartime_multiscalar(&self.scalars, &self.points)
            + Element::base_exp(&self.base);
        sum.is_identity()
    }
}

/// Verifier-side batching weights, derived from the full transcript so a
/// prover cannot anticipate them. `seed_parts` must cover every statement
/// and proof byte in the batch.
pub(crate) fn batch_weights(domain: &[u8], seed_parts: &[&[u8]], count: usize) -> Vec<Scalar> {
    let seed = hash_bytes(domain, seed_parts);
    (0..count)
        .map(|i| hash_to_scalar(domain, &[&seed, &(i as u64).to_be_bytes()]))
        .collect()
}
