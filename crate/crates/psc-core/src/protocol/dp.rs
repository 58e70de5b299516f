//! Data provider side: blind generation, the collection period, input
//! submission payloads, and the durable state snapshot that survives
//! restarts during the collection period.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use rand_core::CryptoRngCore;

use crate::elgamal::{add, encrypt, Ciphertext, JointPublicKey};
use crate::group::{Element, Scalar};
use crate::wire::{PartyId, PhaseTag, Reader};
use crate::zkp::{prove_dl, verify_dl, DlProof, FsContext};

use super::cp::verify_session_key;
use super::params::Mode;
use super::{BlameReport, Evidence};

/// Encoded sizes of the per-bin payload entries: a ciphertext followed by a
/// knowledge proof for its first component.
const CT_LEN: usize = 64;
const PROOF_LEN: usize = 97;

pub const SNAPSHOT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpError {
    /// Observation bin index is outside `0..b`.
    OutOfRange,
    /// Snapshot bytes do not parse, or carry an unknown version.
    BadSnapshot,
}

impl fmt::Display for DpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DpError::OutOfRange => f.write_str("observation bin out of range"),
            DpError::BadSnapshot => f.write_str("snapshot bytes rejected"),
        }
    }
}

impl core::error::Error for DpError {}

/// Everything a DP keeps between key distribution and input submission.
///
/// Deliberately absent: the blind plaintexts, encryption randomness, and
/// proof nonces drawn during setup. In union mode the counters alone reveal
/// nothing about which bins were observed once the matching blind is gone,
/// so a seized snapshot is inert. Intersection mode instead keeps the
/// negated blinds as its fixed zero values; there the per-bin submission
/// ciphertexts are what get replaced on observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DpState {
    pub phase: PhaseTag,
    pub party: PartyId,
    pub session: [u8; 16],
    pub mode: Mode,
    /// Joint session key all blinds were encrypted under.
    pub key: Element,
    /// Union: live counters, initially the negated blinds, overwritten with
    /// fresh uniform scalars on observation. Intersection: the fixed
    /// negated blinds.
    pub counters: Vec<Scalar>,
    /// Intersection only: per-bin submission ciphertext and its proof,
    /// initially an encryption of a random value, replaced by an encryption
    /// of the matching zero value on observation.
    pub submissions: Vec<(Ciphertext, DlProof)>,
}

/// Result of `dp_init`: the persistent state plus the one-shot blind
/// ciphertexts that go to the CPs and are then forgotten.
pub struct DpInit {
    pub state: DpState,
    pub blinds: Vec<(Ciphertext, DlProof)>,
}

impl DpState {
    pub fn advance_to(&mut self, phase: PhaseTag) {
        assert!(phase as u8 >= self.phase as u8, "phase order is monotone");
        self.phase = phase;
    }
}

fn blind_context(session: &[u8; 16], party: PartyId) -> Vec<u8> {
    FsContext {
        session: *session,
        phase: PhaseTag::DataCollection,
        prover: party,
        round: 0,
    }
    .bytes()
}

fn submission_context(session: &[u8; 16], party: PartyId) -> Vec<u8> {
    FsContext {
        session: *session,
        phase: PhaseTag::InputSubmission,
        prover: party,
        round: 0,
    }
    .bytes()
}

/// Draw blinds and set up the counter vector under the accepted session
/// key.
///
/// Draw order from `rng`, fixed so tests can replay the stream: for each
/// bin, the blind, the encryption randomness, then the proof nonce; in
/// intersection mode a second pass draws, per bin, the random submission
/// value, its encryption randomness, then the proof nonce.
pub fn dp_init(
    session: [u8; 16],
    party: PartyId,
    mode: Mode,
    b: usize,
    key: Element,
    rng: &mut impl CryptoRngCore,
) -> DpInit {
    let y = JointPublicKey {
        key,
        shares: Vec::new(),
    };
    let ctx = blind_context(&session, party);
    let mut counters = Vec::with_capacity(b);
    let mut blinds = Vec::with_capacity(b);
    for _ in 0..b {
        let beta = Scalar::random(rng);
        let r = Scalar::random(rng);
        let ct = encrypt(&y, &beta, &r);
        let proof = prove_dl(&r, &ct.a, &ctx, rng);
        counters.push(-beta);
        blinds.push((ct, proof));
    }
    let mut submissions = Vec::new();
    if mode == Mode::Intersection {
        let ctx = submission_context(&session, party);
        submissions.reserve(b);
        for _ in 0..b {
            let value = Scalar::random(rng);
            let s = Scalar::random(rng);
            let ct = encrypt(&y, &value, &s);
            let proof = prove_dl(&s, &ct.a, &ctx, rng);
            submissions.push((ct, proof));
        }
    }
    DpInit {
        state: DpState {
            phase: PhaseTag::DataCollection,
            party,
            session,
            mode,
            key,
            counters,
            submissions,
        },
        blinds,
    }
}

/// Record one observation during the collection period. Idempotent in
/// effect: repeat observations of a bin re-randomize it but leave its
/// meaning unchanged.
pub fn dp_observe(
    state: &mut DpState,
    bin: usize,
    rng: &mut impl CryptoRngCore,
) -> Result<(), DpError> {
    if bin >= state.counters.len() {
        return Err(DpError::OutOfRange);
    }
    match state.mode {
        Mode::Union => {
            state.counters[bin] = Scalar::random(rng);
        }
        Mode::Intersection => {
            let y = JointPublicKey {
                key: state.key,
                shares: Vec::new(),
            };
            let s = Scalar::random(rng);
            let ct = encrypt(&y, &state.counters[bin], &s);
            let ctx = submission_context(&state.session, state.party);
            let proof = prove_dl(&s, &ct.a, &ctx, rng);
            state.submissions[bin] = (ct, proof);
        }
    }
    Ok(())
}

/// Wire payload for the blind ciphertexts sent right after key acceptance.
pub fn encode_blinds(blinds: &[(Ciphertext, DlProof)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(blinds.len() * (CT_LEN + PROOF_LEN));
    for (ct, proof) in blinds {
        out.extend_from_slice(&ct.encode());
        out.extend_from_slice(&proof.encode());
    }
    out
}

/// Wire payload for input submission. Union mode sends the plaintext
/// counters; intersection mode sends the submission ciphertexts with their
/// proofs.
pub fn encode_counters(state: &DpState) -> Vec<u8> {
    match state.mode {
        Mode::Union => {
            let mut out = Vec::with_capacity(state.counters.len() * 32);
            for c in &state.counters {
                out.extend_from_slice(&c.encode());
            }
            out
        }
        Mode::Intersection => {
            let mut out = Vec::with_capacity(state.submissions.len() * (CT_LEN + PROOF_LEN));
            for (ct, proof) in &state.submissions {
                out.extend_from_slice(&ct.encode());
                out.extend_from_slice(&proof.encode());
            }
            out
        }
    }
}

/// A decoded, proof-checked input submission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CounterPayload {
    Plain(Vec<Scalar>),
    Encrypted(Vec<Ciphertext>),
}

fn decode_proved_cts(
    bytes: &[u8],
    b: usize,
    ctx: &[u8],
) -> Option<Vec<Ciphertext>> {
    let mut r = Reader::new(bytes);
    let mut out = Vec::with_capacity(b);
    for _ in 0..b {
        let ct = Ciphertext::decode(r.take(CT_LEN).ok()?).ok()?;
        let proof = DlProof::decode(r.take(PROOF_LEN).ok()?).ok()?;
        if !verify_dl(&ct.a, &proof, ctx) {
            return None;
        }
        out.push(ct);
    }
    if r.remaining() != 0 {
        return None;
    }
    Some(out)
}

/// CP-side check of one DP's blind payload: exact shape and a valid
/// knowledge proof for every first component. `None` means the DP is
/// excluded from the aggregate.
pub fn validate_blinds_payload(
    bytes: &[u8],
    b: usize,
    session: &[u8; 16],
    dp: PartyId,
) -> Option<Vec<Ciphertext>> {
    decode_proved_cts(bytes, b, &blind_context(session, dp))
}

/// CP-side check of one DP's input submission.
pub fn validate_counters_payload(
    bytes: &[u8],
    b: usize,
    mode: Mode,
    session: &[u8; 16],
    dp: PartyId,
) -> Option<CounterPayload> {
    match mode {
        Mode::Union => {
            if bytes.len() != b * 32 {
                return None;
            }
            let mut r = Reader::new(bytes);
            let mut out = Vec::with_capacity(b);
            for _ in 0..b {
                out.push(r.scalar().ok()?);
            }
            Some(CounterPayload::Plain(out))
        }
        Mode::Intersection => decode_proved_cts(bytes, b, &submission_context(session, dp))
            .map(CounterPayload::Encrypted),
    }
}

fn parse_key_bundle(
    bytes: &[u8],
    session: &[u8; 16],
    cps: &[(PartyId, Element)],
) -> Option<Element> {
    let mut r = Reader::new(bytes);
    let y = r.element().ok()?;
    for (k, (_, pk)) in cps.iter().enumerate() {
        let mut sig = [0u8; 64];
        sig.copy_from_slice(r.take(64).ok()?);
        if !verify_session_key(pk, session, k as u16, &y, &sig) {
            return None;
        }
    }
    if r.remaining() != 0 {
        return None;
    }
    Some(y)
}

/// Decide the session key from the bundles each CP forwarded.
///
/// Exactly one fully countersigned key across all bundles is the good
/// case. None at all indicts the silent CPs; two distinct fully signed
/// keys prove every CP signed both, so the whole committee is accused.
pub fn decide_key(
    bundles: &BTreeMap<PartyId, Vec<u8>>,
    session: &[u8; 16],
    cps: &[(PartyId, Element)],
) -> Result<Element, BlameReport> {
    let mut senders_ok = BTreeSet::new();
    let mut keys: BTreeMap<[u8; 32], Element> = BTreeMap::new();
    for (sender, bytes) in bundles {
        if let Some(y) = parse_key_bundle(bytes, session, cps) {
            senders_ok.insert(*sender);
            keys.insert(y.encode(), y);
        }
    }
    match keys.len() {
        1 => Ok(*keys.values().next().expect("one key")),
        0 => Err(BlameReport {
            phase: PhaseTag::KeyGen,
            accused: cps
                .iter()
                .map(|(id, _)| *id)
                .filter(|id| !senders_ok.contains(id))
                .collect(),
            evidence: Evidence::MissingMessage,
        }),
        _ => Err(BlameReport {
            phase: PhaseTag::KeyGen,
            accused: cps.iter().map(|(id, _)| *id).collect(),
            evidence: Evidence::BadKeySignature,
        }),
    }
}

impl DpState {
    /// Durable form written to disk between protocol rounds. Versioned so a
    /// future layout change fails loudly instead of misparsing.
    pub fn snapshot(&self) -> Vec<u8> {
        let b = self.counters.len();
        let mut out = Vec::with_capacity(24 + 32 + b * 32);
        out.push(SNAPSHOT_VERSION);
        out.push(self.phase as u8);
        out.push(self.mode.tag());
        out.extend_from_slice(&self.party.0.to_be_bytes());
        out.extend_from_slice(&self.session);
        out.extend_from_slice(&self.key.encode());
        out.extend_from_slice(&(b as u32).to_be_bytes());
        for c in &self.counters {
            out.extend_from_slice(&c.encode());
        }
        if self.mode == Mode::Intersection {
            for (ct, proof) in &self.submissions {
                out.extend_from_slice(&ct.encode());
                out.extend_from_slice(&proof.encode());
            }
        }
        out
    }

    pub fn restore(bytes: &[u8]) -> Result<DpState, DpError> {
        let bad = DpError::BadSnapshot;
        let mut r = Reader::new(bytes);
        if r.u8().map_err(|_| bad)? != SNAPSHOT_VERSION {
            return Err(bad);
        }
        let phase = PhaseTag::from_u8(r.u8().map_err(|_| bad)?).ok_or(bad)?;
        let mode = Mode::from_tag(r.u8().map_err(|_| bad)?).ok_or(bad)?;
        let party = PartyId(r.u16().map_err(|_| bad)?);
        if !party.is_dp() {
            return Err(bad);
        }
        let mut session = [0u8; 16];
        session.copy_from_slice(r.take(16).map_err(|_| bad)?);
        let key = r.element().map_err(|_| bad)?;
        let b = r.u32().map_err(|_| bad)? as usize;
        let mut counters = Vec::with_capacity(b);
        for _ in 0..b {
            counters.push(r.scalar().map_err(|_| bad)?);
        }
        let mut submissions = Vec::new();
        if mode == Mode::Intersection {
            submissions.reserve(b);
            for _ in 0..b {
                let ct = Ciphertext::decode(r.take(CT_LEN).map_err(|_| bad)?)
                    .map_err(|_| bad)?;
                let proof = DlProof::decode(r.take(PROOF_LEN).map_err(|_| bad)?)
                    .map_err(|_| bad)?;
                submissions.push((ct, proof));
            }
        }
        if r.remaining() != 0 {
            return Err(bad);
        }
        Ok(DpState {
            phase,
            party,
            session,
            mode,
            key,
            counters,
            submissions,
        })
    }
}

/// For tests and the reference pipeline: the submission a CP folds into
/// bin `i`, union mode. The deterministic encryption of the counter uses
/// the fixed generator as first component, matching the aggregation rule.
pub fn union_submission_ct(y: &JointPublicKey, counter: &Scalar) -> Ciphertext {
    crate::elgamal::deterministic_encrypt(y, counter)
}

/// Sum of a blind and the matching submission; zero plaintext exactly when
/// the bin is unobserved (union) or observed (intersection).
pub fn folded_bin(blind: &Ciphertext, submission: &Ciphertext) -> Ciphertext {
    add(blind, submission)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broadcast::SigningKey;
    use crate::elgamal::{decrypt_element, deterministic_encrypt, KeyShare};
    use crate::protocol::cp::sign_session_key;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup(mode: Mode, b: usize) -> (Vec<KeyShare>, JointPublicKey, DpInit, ChaCha20Rng) {
        let mut rng = ChaCha20Rng::seed_from_u64(901);
        let shares: Vec<KeyShare> = (0..2).map(|j| KeyShare::generate(j, &mut rng)).collect();
        let joint = JointPublicKey::from_shares(shares.iter().map(|s| s.public).collect());
        let init = dp_init([3; 16], PartyId::dp(0), mode, b, joint.key, &mut rng);
        (shares, joint, init, rng)
    }

    #[test]
    fn union_blinds_cancel_initial_counters() {
        let (shares, joint, init, _) = setup(Mode::Union, 6);
        for (i, (blind, _)) in init.blinds.iter().enumerate() {
            let sub = deterministic_encrypt(&joint, &init.state.counters[i]);
            let folded = add(blind, &sub);
            assert!(decrypt_element(&shares, &folded).is_identity(), "bin {i}");
        }
    }

    #[test]
    fn union_observation_breaks_cancellation() {
        let (shares, joint, mut init, mut rng) = setup(Mode::Union, 4);
        dp_observe(&mut init.state, 2, &mut rng).unwrap();
        for (i, (blind, _)) in init.blinds.iter().enumerate() {
            let sub = deterministic_encrypt(&joint, &init.state.counters[i]);
            let folded = add(blind, &sub);
            assert_eq!(
                decrypt_element(&shares, &folded).is_identity(),
                i != 2,
                "bin {i}"
            );
        }
        assert!(matches!(
            dp_observe(&mut init.state, 4, &mut rng),
            Err(DpError::OutOfRange)
        ));
    }

    #[test]
    fn intersection_observation_creates_zero() {
        let (shares, _, mut init, mut rng) = setup(Mode::Intersection, 4);
        dp_observe(&mut init.state, 1, &mut rng).unwrap();
        // Repeat observation keeps the bin at zero.
        dp_observe(&mut init.state, 3, &mut rng).unwrap();
        dp_observe(&mut init.state, 3, &mut rng).unwrap();
        for (i, (blind, _)) in init.blinds.iter().enumerate() {
            let folded = add(blind, &init.state.submissions[i].0);
            let observed = i == 1 || i == 3;
            assert_eq!(
                decrypt_element(&shares, &folded).is_identity(),
                observed,
                "bin {i}"
            );
        }
    }

    #[test]
    fn blind_payload_roundtrip_and_tamper() {
        let (_, _, init, _) = setup(Mode::Union, 5);
        let bytes = encode_blinds(&init.blinds);
        let session = [3; 16];
        let cts = validate_blinds_payload(&bytes, 5, &session, PartyId::dp(0)).unwrap();
        assert_eq!(cts.len(), 5);
        assert_eq!(cts[0], init.blinds[0].0);

        // Wrong prover identity breaks the proof context.
        assert!(validate_blinds_payload(&bytes, 5, &session, PartyId::dp(1)).is_none());
        // Shape errors.
        assert!(validate_blinds_payload(&bytes[..bytes.len() - 1], 5, &session, PartyId::dp(0))
            .is_none());
        assert!(validate_blinds_payload(&bytes, 4, &session, PartyId::dp(0)).is_none());
        // Bit flip in a proof.
        let mut bad = bytes.clone();
        bad[70] ^= 1;
        assert!(validate_blinds_payload(&bad, 5, &session, PartyId::dp(0)).is_none());
    }

    #[test]
    fn counter_payloads_validate_per_mode() {
        let (_, _, init, _) = setup(Mode::Union, 3);
        let bytes = encode_counters(&init.state);
        match validate_counters_payload(&bytes, 3, Mode::Union, &[3; 16], PartyId::dp(0)).unwrap()
        {
            CounterPayload::Plain(cs) => assert_eq!(cs, init.state.counters),
            CounterPayload::Encrypted(_) => panic!("union payload is plaintext"),
        }
        assert!(validate_counters_payload(&bytes, 4, Mode::Union, &[3; 16], PartyId::dp(0))
            .is_none());

        let (_, _, init, _) = setup(Mode::Intersection, 3);
        let bytes = encode_counters(&init.state);
        match validate_counters_payload(&bytes, 3, Mode::Intersection, &[3; 16], PartyId::dp(0))
            .unwrap()
        {
            CounterPayload::Encrypted(cts) => {
                assert_eq!(cts.len(), 3);
                assert_eq!(cts[2], init.state.submissions[2].0);
            }
            CounterPayload::Plain(_) => panic!("intersection payload is encrypted"),
        }
        let mut bad = bytes.clone();
        bad[100] ^= 1;
        assert!(
            validate_counters_payload(&bad, 3, Mode::Intersection, &[3; 16], PartyId::dp(0))
                .is_none()
        );
    }

    #[test]
    fn snapshot_roundtrip_both_modes() {
        for mode in [Mode::Union, Mode::Intersection] {
            let (_, _, mut init, mut rng) = setup(mode, 4);
            dp_observe(&mut init.state, 0, &mut rng).unwrap();
            let bytes = init.state.snapshot();
            let back = DpState::restore(&bytes).unwrap();
            assert_eq!(back, init.state);

            let mut bad = bytes.clone();
            bad[0] = 9;
            assert!(DpState::restore(&bad).is_err());
            assert!(DpState::restore(&bytes[..bytes.len() - 2]).is_err());
            let mut long = bytes.clone();
            long.push(0);
            assert!(DpState::restore(&long).is_err());
        }
    }

    fn signed_bundle(
        session: &[u8; 16],
        y: &crate::group::Element,
        keys: &[SigningKey],
    ) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&y.encode());
        for (k, key) in keys.iter().enumerate() {
            out.extend_from_slice(&sign_session_key(key, session, k as u16, y));
        }
        out
    }

    #[test]
    fn key_decision_accepts_one_full_key() {
        let mut rng = ChaCha20Rng::seed_from_u64(902);
        let keys: Vec<SigningKey> = (0..3).map(|_| SigningKey::generate(&mut rng)).collect();
        let cps: Vec<(PartyId, crate::group::Element)> = keys
            .iter()
            .enumerate()
            .map(|(j, k)| (PartyId::cp(j as u16), k.public))
            .collect();
        let session = [9; 16];
        let y = crate::group::Element::base_exp(&Scalar::random(&mut rng));
        let bundle = signed_bundle(&session, &y, &keys);

        let mut bundles = BTreeMap::new();
        for (id, _) in &cps {
            bundles.insert(*id, bundle.clone());
        }
        assert_eq!(decide_key(&bundles, &session, &cps).unwrap(), y);

        // A truncated bundle from one CP is ignored as long as another CP
        // delivered the full one.
        bundles.insert(PartyId::cp(1), bundle[..40].to_vec());
        assert_eq!(decide_key(&bundles, &session, &cps).unwrap(), y);
    }

    #[test]
    fn key_decision_blames_silence_and_split_keys() {
        let mut rng = ChaCha20Rng::seed_from_u64(903);
        let keys: Vec<SigningKey> = (0..2).map(|_| SigningKey::generate(&mut rng)).collect();
        let cps: Vec<(PartyId, crate::group::Element)> = keys
            .iter()
            .enumerate()
            .map(|(j, k)| (PartyId::cp(j as u16), k.public))
            .collect();
        let session = [9; 16];

        // Nothing valid arrives: blame the CPs that sent nothing.
        let mut bundles = BTreeMap::new();
        bundles.insert(PartyId::cp(0), alloc::vec![0u8; 10]);
        let report = decide_key(&bundles, &session, &cps).unwrap_err();
        assert_eq!(report.evidence, Evidence::MissingMessage);
        assert!(report.accused.contains(&PartyId::cp(1)));
        assert_eq!(report.phase, PhaseTag::KeyGen);

        // Two fully signed distinct keys: everyone signed both.
        let y1 = crate::group::Element::base_exp(&Scalar::random(&mut rng));
        let y2 = crate::group::Element::base_exp(&Scalar::random(&mut rng));
        let mut bundles = BTreeMap::new();
        bundles.insert(PartyId::cp(0), signed_bundle(&session, &y1, &keys));
        bundles.insert(PartyId::cp(1), signed_bundle(&session, &y2, &keys));
        let report = decide_key(&bundles, &session, &cps).unwrap_err();
        assert_eq!(report.evidence, Evidence::BadKeySignature);
        assert_eq!(report.accused.len(), 2);
    }
}
