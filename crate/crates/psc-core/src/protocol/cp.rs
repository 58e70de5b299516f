//! Computation party side: session key material, input aggregation for
//! both measurement modes, the pairwise noise pipeline, vector shuffles,
//! rerandomization-decryption stages, and the final count.
//!
//! Everything here is a pure function over explicit inputs; the engine
//! module owns frame routing and scheduling.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::CryptoRngCore;
use subtle::Choice;

use crate::broadcast::{sign_parts, verify_parts, verify_sig, Roster, SigningKey};
use crate::elgamal::{
    add, deterministic_encrypt, is_zero_plaintext, rrd_step_sampled, Ciphertext, JointPublicKey,
    KeyShare,
};
use crate::group::{hash_bytes, Element, Scalar};
use crate::wire::{Frame, MsgType, PartyId, PhaseTag, Reader};
use crate::zkp::commit::{pack_bits, unpack_bits};
use crate::zkp::{
    apply_pair_shuffle, prove_dl, prove_pair_shuffle, prove_rrd, prove_shuffle, shuffle,
    verify_dl, verify_pair_shuffle_batch, verify_rrd_batch, verify_shuffle, DlProof,
    PairShuffleProof, PairShuffleStatement, RrdProof, RrdStatement, RrdWitness, ShuffleProof,
    ZkpError,
};

use super::dp::{validate_blinds_payload, validate_counters_payload, CounterPayload};
use super::params::{Mode, ProtocolParams};
use super::{Evidence, MeasurementResult, PhaseTimings};

const CT_LEN: usize = 64;
const RRD_PROOF_LEN: usize = 225;

/// Countersignature domain for the joint session key.
pub const DOMAIN_SESSION_KEY: &[u8] = b"psc.session-key";
const DOMAIN_VECTOR: &[u8] = b"psc.vector";

/// Protocol-visible state of one CP. The engine embeds this and keeps the
/// in-flight broadcast machinery separate.
#[derive(Debug, Clone)]
pub struct CpState {
    pub phase: PhaseTag,
    pub me: PartyId,
    pub share: Option<KeyShare>,
    pub joint: Option<JointPublicKey>,
    /// DPs left out of the aggregate; exclusion is silent, never blamed.
    pub excluded: BTreeSet<PartyId>,
}

impl CpState {
    pub fn new(me: PartyId) -> CpState {
        CpState {
            phase: PhaseTag::KeyGen,
            me,
            share: None,
            joint: None,
            excluded: BTreeSet::new(),
        }
    }

    pub fn advance_to(&mut self, phase: PhaseTag) {
        assert!(phase as u8 >= self.phase as u8, "phase order is monotone");
        self.phase = phase;
    }
}

pub fn sign_session_key(
    key: &SigningKey,
    session: &[u8; 16],
    j: u16,
    y: &Element,
) -> [u8; 64] {
    sign_parts(
        key,
        DOMAIN_SESSION_KEY,
        &[session, &j.to_be_bytes(), &y.encode()],
    )
}

pub fn verify_session_key(
    pk: &Element,
    session: &[u8; 16],
    j: u16,
    y: &Element,
    sig: &[u8; 64],
) -> bool {
    verify_parts(
        pk,
        DOMAIN_SESSION_KEY,
        &[session, &j.to_be_bytes(), &y.encode()],
        sig,
    )
}

/// Broadcast content announcing a key share: the share itself plus a proof
/// of knowledge of its discrete log.
pub fn encode_key_share(
    share: &KeyShare,
    context: &[u8],
    rng: &mut impl CryptoRngCore,
) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 97);
    out.extend_from_slice(&share.public.encode());
    out.extend_from_slice(&prove_dl(&share.secret, &share.public, context, rng).encode());
    out
}

pub fn decode_key_share(bytes: &[u8], context: &[u8]) -> Option<Element> {
    let mut r = Reader::new(bytes);
    let y = r.element().ok()?;
    let proof = DlProof::decode(r.take(97).ok()?).ok()?;
    if r.remaining() != 0 || !verify_dl(&y, &proof, context) {
        return None;
    }
    Some(y)
}

/// The key bundle a CP forwards to every DP: the joint key plus every CP's
/// countersignature in roster order.
pub fn encode_key_bundle(y: &Element, sigs: &[[u8; 64]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + sigs.len() * 64);
    out.extend_from_slice(&y.encode());
    for sig in sigs {
        out.extend_from_slice(sig);
    }
    out
}

pub fn zero_ciphertext() -> Ciphertext {
    Ciphertext {
        a: Element::identity(),
        b: Element::identity(),
    }
}

/// Binding digest of a ciphertext vector, used by every stage broadcast to
/// commit to the exact input it transformed.
pub fn vector_digest(cts: &[Ciphertext]) -> [u8; 32] {
    let mut bytes = Vec::with_capacity(cts.len() * CT_LEN);
    for ct in cts {
        bytes.extend_from_slice(&ct.encode());
    }
    hash_bytes(DOMAIN_VECTOR, &[&bytes])
}

pub fn pairs_digest(pairs: &[[Ciphertext; 2]]) -> [u8; 32] {
    let mut bytes = Vec::with_capacity(pairs.len() * 2 * CT_LEN);
    for pair in pairs {
        bytes.extend_from_slice(&pair[0].encode());
        bytes.extend_from_slice(&pair[1].encode());
    }
    hash_bytes(DOMAIN_VECTOR, &[&bytes])
}

/// Fold the included DPs' blinds and submissions into the aggregate bins.
/// Union submissions arrive as plaintext counters and are deterministically
/// encrypted here; intersection submissions are already ciphertexts.
pub fn aggregate_inputs(
    y: &JointPublicKey,
    b: usize,
    inputs: &[(Vec<Ciphertext>, CounterPayload)],
) -> Vec<Ciphertext> {
    let mut bins = vec![zero_ciphertext(); b];
    for (blinds, counters) in inputs {
        for i in 0..b {
            let sub = match counters {
                CounterPayload::Plain(cs) => deterministic_encrypt(y, &cs[i]),
                CounterPayload::Encrypted(cts) => cts[i],
            };
            bins[i] = add(&bins[i], &add(&blinds[i], &sub));
        }
    }
    bins
}

/// The well-known start of the noise pipeline: n deterministic encryptions
/// of the pair (0, 1), identical at every CP.
pub fn initial_noise_pairs(y: &JointPublicKey, n: usize) -> Vec<[Ciphertext; 2]> {
    let zero = deterministic_encrypt(y, &Scalar::ZERO);
    let one = deterministic_encrypt(y, &Scalar::from_u64(1));
    vec![[zero, one]; n]
}

pub struct NoiseStep {
    pub pairs: Vec<[Ciphertext; 2]>,
    pub proofs: Vec<PairShuffleProof>,
}

/// Apply this CP's swap bits to every noise pair and prove each
/// re-encryption-or-swap without revealing which.
pub fn noise_step(
    key: &Element,
    prev: &[[Ciphertext; 2]],
    swaps: &[bool],
    context: &[u8],
    rng: &mut impl CryptoRngCore,
) -> NoiseStep {
    debug_assert_eq!(prev.len(), swaps.len());
    let mut pairs = Vec::with_capacity(prev.len());
    let mut proofs = Vec::with_capacity(prev.len());
    for (input, &swap) in prev.iter().zip(swaps) {
        let factors = [Scalar::random(rng), Scalar::random(rng)];
        let output = apply_pair_shuffle(key, input, Choice::from(swap as u8), &factors);
        let stmt = PairShuffleStatement {
            key: *key,
            input: *input,
            output,
        };
        proofs.push(prove_pair_shuffle(&stmt, swap, &factors, context, rng));
        pairs.push(output);
    }
    NoiseStep { pairs, proofs }
}

/// Stage content: digest of the input pairs, then the output pairs, then
/// one proof per pair.
pub fn encode_noise_step(prev_digest: &[u8; 32], step: &NoiseStep) -> Vec<u8> {
    let n = step.pairs.len();
    let mut out = Vec::with_capacity(32 + n * (2 * CT_LEN + PairShuffleProof::ENCODED_LEN));
    out.extend_from_slice(prev_digest);
    for pair in &step.pairs {
        out.extend_from_slice(&pair[0].encode());
        out.extend_from_slice(&pair[1].encode());
    }
    for proof in &step.proofs {
        out.extend_from_slice(&proof.encode());
    }
    out
}

/// Check one CP's noise stage against the pairs every honest CP currently
/// holds. Returns the new pairs, or the evidence category the broadcaster
/// earned.
pub fn verify_noise_step(
    key: &Element,
    prev: &[[Ciphertext; 2]],
    content: &[u8],
    context: &[u8],
) -> Result<Vec<[Ciphertext; 2]>, Evidence> {
    let n = prev.len();
    if content.len() != 32 + n * (2 * CT_LEN + PairShuffleProof::ENCODED_LEN) {
        return Err(Evidence::InvalidProof);
    }
    let mut r = Reader::new(content);
    let claimed = r.take(32).expect("sized");
    if claimed != pairs_digest(prev) {
        return Err(Evidence::WrongStatement);
    }
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let a = Ciphertext::decode(r.take(CT_LEN).expect("sized"))
            .map_err(|_| Evidence::InvalidProof)?;
        let b = Ciphertext::decode(r.take(CT_LEN).expect("sized"))
            .map_err(|_| Evidence::InvalidProof)?;
        pairs.push([a, b]);
    }
    let mut stmts = Vec::with_capacity(n);
    let mut proofs = Vec::with_capacity(n);
    for i in 0..n {
        let proof = PairShuffleProof::decode(
            r.take(PairShuffleProof::ENCODED_LEN).expect("sized"),
        )
        .map_err(|_| Evidence::InvalidProof)?;
        stmts.push(PairShuffleStatement {
            key: *key,
            input: prev[i],
            output: pairs[i],
        });
        proofs.push(proof);
    }
    if !verify_pair_shuffle_batch(&stmts, &proofs, context) {
        return Err(Evidence::InvalidProof);
    }
    Ok(pairs)
}

/// After all m noise stages: the first element of each pair is the noise
/// counter that joins the aggregate.
pub fn noise_vector(pairs: &[[Ciphertext; 2]]) -> Vec<Ciphertext> {
    pairs.iter().map(|p| p[0]).collect()
}

pub struct ShuffleStep {
    pub outputs: Vec<Ciphertext>,
    pub proof: ShuffleProof,
}

pub fn shuffle_step(
    key: &Element,
    prev: &[Ciphertext],
    generators: &[Element],
    context: &[u8],
    rng: &mut impl CryptoRngCore,
) -> Result<ShuffleStep, ZkpError> {
    let (outputs, witness) = shuffle(key, prev, rng);
    let proof = prove_shuffle(key, prev, &outputs, &witness, generators, context, rng)?;
    Ok(ShuffleStep { outputs, proof })
}

/// Stage content: digest of the input vector, the permuted re-encrypted
/// vector, then the length-prefixed shuffle argument.
pub fn encode_shuffle_step(prev_digest: &[u8; 32], step: &ShuffleStep) -> Vec<u8> {
    let proof = step.proof.encode();
    let mut out =
        Vec::with_capacity(32 + step.outputs.len() * CT_LEN + 4 + proof.len());
    out.extend_from_slice(prev_digest);
    for ct in &step.outputs {
        out.extend_from_slice(&ct.encode());
    }
    out.extend_from_slice(&(proof.len() as u32).to_be_bytes());
    out.extend_from_slice(&proof);
    out
}

pub fn verify_shuffle_step(
    key: &Element,
    prev: &[Ciphertext],
    generators: &[Element],
    content: &[u8],
    context: &[u8],
) -> Result<Vec<Ciphertext>, Evidence> {
    let mut r = Reader::new(content);
    let claimed = r.take(32).map_err(|_| Evidence::InvalidProof)?;
    if claimed != vector_digest(prev) {
        return Err(Evidence::WrongStatement);
    }
    let mut outputs = Vec::with_capacity(prev.len());
    for _ in 0..prev.len() {
        let ct = Ciphertext::decode(r.take(CT_LEN).map_err(|_| Evidence::InvalidProof)?)
            .map_err(|_| Evidence::InvalidProof)?;
        outputs.push(ct);
    }
    let proof_bytes = r.bytes().map_err(|_| Evidence::InvalidProof)?;
    if r.remaining() != 0 {
        return Err(Evidence::InvalidProof);
    }
    let proof = ShuffleProof::decode(proof_bytes).map_err(|_| Evidence::InvalidProof)?;
    match verify_shuffle(key, prev, &outputs, &proof, generators, context) {
        Ok(true) => Ok(outputs),
        _ => Err(Evidence::InvalidProof),
    }
}

pub struct RrdStage {
    pub outputs: Vec<Ciphertext>,
    pub proofs: Vec<RrdProof>,
}

/// Apply this CP's rerandomization-decryption to every slot. `j` is the
/// 0-based stage index; the statement key is the joint key of the CPs that
/// have not yet stepped, this one included.
pub fn rrd_stage_step(
    prev: &[Ciphertext],
    joint: &JointPublicKey,
    share: &KeyShare,
    j: usize,
    context: &[u8],
    rng: &mut impl CryptoRngCore,
) -> RrdStage {
    let remaining = joint.remaining(j);
    let mut outputs = Vec::with_capacity(prev.len());
    let mut proofs = Vec::with_capacity(prev.len());
    for ct in prev {
        let (out, sigma, r) =
            rrd_step_sampled(ct, &remaining, share, rng).expect("retry cap is generous");
        let stmt = RrdStatement {
            input: *ct,
            output: out,
            key: remaining,
            share_key: share.public,
        };
        let wit = RrdWitness {
            r,
            sigma,
            x_j: share.secret,
        };
        proofs.push(prove_rrd(&stmt, &wit, context, rng));
        outputs.push(out);
    }
    RrdStage { outputs, proofs }
}

/// Stage content: digest of the input vector, the share key the prover
/// claims to decrypt under, the outputs, then one proof per slot.
pub fn encode_rrd_stage(
    prev_digest: &[u8; 32],
    share_key: &Element,
    stage: &RrdStage,
) -> Vec<u8> {
    let len = stage.outputs.len();
    let mut out = Vec::with_capacity(32 + 32 + len * (CT_LEN + RRD_PROOF_LEN));
    out.extend_from_slice(prev_digest);
    out.extend_from_slice(&share_key.encode());
    for ct in &stage.outputs {
        out.extend_from_slice(&ct.encode());
    }
    for proof in &stage.proofs {
        out.extend_from_slice(&proof.encode());
    }
    out
}

/// Check stage `j` of the rerandomized decryption. Evidence precedence is
/// fixed so every honest CP derives the same verdict: wrong statement
/// (stale vector or foreign share key), then an identity first component,
/// then proof validity.
pub fn verify_rrd_stage(
    prev: &[Ciphertext],
    joint: &JointPublicKey,
    j: usize,
    content: &[u8],
    context: &[u8],
) -> Result<Vec<Ciphertext>, Evidence> {
    let len = prev.len();
    if content.len() != 64 + len * (CT_LEN + RRD_PROOF_LEN) {
        return Err(Evidence::InvalidProof);
    }
    let mut r = Reader::new(content);
    let claimed = r.take(32).expect("sized");
    if claimed != vector_digest(prev) {
        return Err(Evidence::WrongStatement);
    }
    let share_key = r.element().map_err(|_| Evidence::InvalidProof)?;
    if share_key != joint.shares[j] {
        return Err(Evidence::WrongStatement);
    }
    let mut outputs = Vec::with_capacity(len);
    for _ in 0..len {
        let ct = Ciphertext::decode(r.take(CT_LEN).expect("sized"))
            .map_err(|_| Evidence::InvalidProof)?;
        outputs.push(ct);
    }
    if outputs.iter().any(|ct| ct.a.is_identity()) {
        return Err(Evidence::IdentityFirstComponent);
    }
    let remaining = joint.remaining(j);
    let mut items = Vec::with_capacity(len);
    for i in 0..len {
        let proof = RrdProof::decode(r.take(RRD_PROOF_LEN).expect("sized"))
            .map_err(|_| Evidence::InvalidProof)?;
        items.push((
            RrdStatement {
                input: prev[i],
                output: outputs[i],
                key: remaining,
                share_key,
            },
            proof,
        ));
    }
    verify_rrd_batch(&items, context).map_err(|_| Evidence::InvalidProof)?;
    Ok(outputs)
}

/// Count the final vector. Union counts the nonzero slots, intersection
/// the zero slots; both subtract the noise mean n/2.
pub fn measure(finals: &[Ciphertext], n: usize, mode: Mode) -> MeasurementResult {
    let nonzero = finals.iter().filter(|ct| !is_zero_plaintext(ct)).count() as i64;
    let counted = match mode {
        Mode::Union => nonzero,
        Mode::Intersection => finals.len() as i64 - nonzero,
    };
    MeasurementResult {
        noisy_count: counted - (n as i64) / 2,
        n,
        mode,
        timings: PhaseTimings::default(),
    }
}

/// Fast-path consensus content at input submission: which DPs this CP
/// includes, and a digest of the aggregate it computed from them. All m
/// contents byte-equal means every CP starts shuffling the same vector.
pub fn encode_aggregate_summary(included: &[bool], aggregate: &[Ciphertext]) -> Vec<u8> {
    let mut out = pack_bits(included);
    out.extend_from_slice(&vector_digest(aggregate));
    out
}

pub fn decode_aggregate_summary(bytes: &[u8], d: usize) -> Option<(Vec<bool>, [u8; 32])> {
    let bitmap_len = d.div_ceil(8);
    if bytes.len() != bitmap_len + 32 {
        return None;
    }
    let included = unpack_bits(&bytes[..bitmap_len], d);
    let mut digest = [0u8; 32];
    digest.copy_from_slice(&bytes[bitmap_len..]);
    Some((included, digest))
}

/// One DP's raw submission frames as witnessed by one CP: everything that
/// arrived, capped at two distinct frames per kind since two already prove
/// equivocation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DpEvidence {
    pub blinds: Vec<Vec<u8>>,
    pub counters: Vec<Vec<u8>>,
}

const EVIDENCE_CAP: usize = 2;

fn encode_entries(out: &mut Vec<u8>, entries: &[Vec<u8>]) {
    debug_assert!(entries.len() <= EVIDENCE_CAP);
    out.push(entries.len() as u8);
    for e in entries {
        out.extend_from_slice(&(e.len() as u32).to_be_bytes());
        out.extend_from_slice(e);
    }
}

/// Fallback consensus content: every DP's submission frames verbatim, in
/// roster order, so all CPs can re-derive one agreed aggregate.
pub fn encode_fallback(evidence: &[DpEvidence]) -> Vec<u8> {
    let mut out = Vec::new();
    for dp in evidence {
        encode_entries(&mut out, &dp.blinds);
        encode_entries(&mut out, &dp.counters);
    }
    out
}

fn decode_entries(r: &mut Reader<'_>) -> Option<Vec<Vec<u8>>> {
    let count = r.u8().ok()? as usize;
    if count > EVIDENCE_CAP {
        return None;
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(r.bytes().ok()?.to_vec());
    }
    Some(out)
}

pub fn decode_fallback(bytes: &[u8], d: usize) -> Option<Vec<DpEvidence>> {
    let mut r = Reader::new(bytes);
    let mut out = Vec::with_capacity(d);
    for _ in 0..d {
        let blinds = decode_entries(&mut r)?;
        let counters = decode_entries(&mut r)?;
        out.push(DpEvidence { blinds, counters });
    }
    if r.remaining() != 0 {
        return None;
    }
    Some(out)
}

/// A frame offered as DP evidence counts only if the named DP really signed
/// that exact submission for this session and phase.
fn frame_payload_if_genuine(
    bytes: &[u8],
    roster: &Roster,
    session: &[u8; 16],
    dp: PartyId,
    phase: PhaseTag,
) -> Option<Vec<u8>> {
    let frame = Frame::decode(bytes).ok()?;
    if frame.msg_type != MsgType::P2p
        || frame.session != *session
        || frame.phase != phase
        || frame.sender != dp
    {
        return None;
    }
    let (signer, sig) = frame.sigs.first()?;
    if *signer != dp {
        return None;
    }
    verify_sig(
        roster,
        *signer,
        session,
        frame.phase,
        frame.round,
        frame.sender,
        &frame.payload,
        sig,
    )
    .ok()?;
    Some(frame.payload)
}

/// Resolve the fallback broadcasts into one agreed included set and its
/// inputs. A DP stays in only if the union of all CPs' evidence contains
/// exactly one genuinely signed blind payload and exactly one genuinely
/// signed counter payload, and both validate. Everything else excludes the
/// DP; CPs are never blamed for a DP's misbehavior.
pub fn resolve_dp_inputs(
    evidence_per_cp: &[Vec<DpEvidence>],
    params: &ProtocolParams,
    roster: &Roster,
) -> (Vec<bool>, Vec<(Vec<Ciphertext>, CounterPayload)>) {
    let d = params.d;
    let mut included = vec![false; d];
    let mut inputs = Vec::new();
    for (t, (dp, _)) in params.rosters.dps.iter().enumerate() {
        let mut blind_payloads: BTreeSet<Vec<u8>> = BTreeSet::new();
        let mut counter_payloads: BTreeSet<Vec<u8>> = BTreeSet::new();
        for ev in evidence_per_cp {
            for raw in &ev[t].blinds {
                if let Some(p) = frame_payload_if_genuine(
                    raw,
                    roster,
                    &params.session,
                    *dp,
                    PhaseTag::DataCollection,
                ) {
                    blind_payloads.insert(p);
                }
            }
            for raw in &ev[t].counters {
                if let Some(p) = frame_payload_if_genuine(
                    raw,
                    roster,
                    &params.session,
                    *dp,
                    PhaseTag::InputSubmission,
                ) {
                    counter_payloads.insert(p);
                }
            }
        }
        if blind_payloads.len() != 1 || counter_payloads.len() != 1 {
            continue;
        }
        let blinds = validate_blinds_payload(
            blind_payloads.iter().next().expect("one"),
            params.b,
            &params.session,
            *dp,
        );
        let counters = validate_counters_payload(
            counter_payloads.iter().next().expect("one"),
            params.b,
            params.mode,
            &params.session,
            *dp,
        );
        if let (Some(blinds), Some(counters)) = (blinds, counters) {
            included[t] = true;
            inputs.push((blinds, counters));
        }
    }
    (included, inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elgamal::decrypt_element;
    use crate::protocol::dp::{dp_init, dp_observe, encode_counters};
    use crate::zkp::derive_generators;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn keys(m: usize, rng: &mut ChaCha20Rng) -> (Vec<KeyShare>, JointPublicKey) {
        let shares: Vec<KeyShare> = (0..m as u16).map(|j| KeyShare::generate(j, rng)).collect();
        let joint = JointPublicKey::from_shares(shares.iter().map(|s| s.public).collect());
        (shares, joint)
    }

    #[test]
    fn key_share_content_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(910);
        let share = KeyShare::generate(0, &mut rng);
        let ctx = b"kctx";
        let bytes = encode_key_share(&share, ctx, &mut rng);
        assert_eq!(decode_key_share(&bytes, ctx).unwrap(), share.public);
        assert!(decode_key_share(&bytes, b"other").is_none());
        let mut bad = bytes.clone();
        bad[40] ^= 1;
        assert!(decode_key_share(&bad, ctx).is_none());
        assert!(decode_key_share(&bytes[..100], ctx).is_none());
    }

    /// Full pipeline at the vector level: aggregate two DPs' union inputs,
    /// push noise and bins through every stage, and compare the count with
    /// direct decryption.
    #[test]
    fn union_pipeline_counts_observed_bins() {
        let mut rng = ChaCha20Rng::seed_from_u64(911);
        let (shares, joint) = keys(2, &mut rng);
        let b = 5;
        let session = [4; 16];

        let mut inits = [
            dp_init(session, PartyId::dp(0), Mode::Union, b, joint.key, &mut rng),
            dp_init(session, PartyId::dp(1), Mode::Union, b, joint.key, &mut rng),
        ];
        // DP0 observes bins 0 and 2; DP1 observes bin 2.
        dp_observe(&mut inits[0].state, 0, &mut rng).unwrap();
        dp_observe(&mut inits[0].state, 2, &mut rng).unwrap();
        dp_observe(&mut inits[1].state, 2, &mut rng).unwrap();

        let inputs: Vec<(Vec<Ciphertext>, CounterPayload)> = inits
            .iter()
            .map(|init| {
                (
                    init.blinds.iter().map(|(ct, _)| *ct).collect(),
                    CounterPayload::Plain(init.state.counters.clone()),
                )
            })
            .collect();
        let bins = aggregate_inputs(&joint, b, &inputs);
        for (i, bin) in bins.iter().enumerate() {
            let zero = decrypt_element(&shares, bin).is_identity();
            assert_eq!(zero, !(i == 0 || i == 2), "bin {i}");
        }

        // Noise: two CPs, swap patterns xor to [true, false].
        let n = 2;
        let mut pairs = initial_noise_pairs(&joint, n);
        let swaps = [[true, true], [false, true]];
        for (j, swap) in swaps.iter().enumerate() {
            let ctx = alloc::format!("noise{j}");
            let step = noise_step(&joint.key, &pairs, swap, ctx.as_bytes(), &mut rng);
            let content = encode_noise_step(&pairs_digest(&pairs), &step);
            pairs =
                verify_noise_step(&joint.key, &pairs, &content, ctx.as_bytes()).unwrap();
        }
        let mut vec = noise_vector(&pairs);
        vec.extend_from_slice(&bins);

        // Two shuffle stages, then two decryption stages.
        let gens = derive_generators(vec.len(), b"testgens");
        for j in 0..2 {
            let ctx = alloc::format!("shuf{j}");
            let step = shuffle_step(&joint.key, &vec, &gens, ctx.as_bytes(), &mut rng).unwrap();
            let content = encode_shuffle_step(&vector_digest(&vec), &step);
            vec = verify_shuffle_step(&joint.key, &vec, &gens, &content, ctx.as_bytes())
                .unwrap();
        }
        for j in 0..2 {
            let ctx = alloc::format!("rrd{j}");
            let stage = rrd_stage_step(&vec, &joint, &shares[j], j, ctx.as_bytes(), &mut rng);
            let content = encode_rrd_stage(&vector_digest(&vec), &shares[j].public, &stage);
            let out = verify_rrd_stage(&vec, &joint, j, &content, ctx.as_bytes()).unwrap();
            vec = out;
        }

        // Expected: 2 observed bins + 1 raised noise counter − n/2.
        let result = measure(&vec, n, Mode::Union);
        assert_eq!(result.noisy_count, 2 + 1 - 1);
    }

    #[test]
    fn intersection_pipeline_counts_common_bins() {
        let mut rng = ChaCha20Rng::seed_from_u64(912);
        let (shares, joint) = keys(2, &mut rng);
        let b = 4;
        let session = [5; 16];
        let mode = Mode::Intersection;

        let mut inits = [
            dp_init(session, PartyId::dp(0), mode, b, joint.key, &mut rng),
            dp_init(session, PartyId::dp(1), mode, b, joint.key, &mut rng),
        ];
        // Intersection is {1}: DP0 observes {1, 3}, DP1 observes {1}.
        dp_observe(&mut inits[0].state, 1, &mut rng).unwrap();
        dp_observe(&mut inits[0].state, 3, &mut rng).unwrap();
        dp_observe(&mut inits[1].state, 1, &mut rng).unwrap();

        let inputs: Vec<(Vec<Ciphertext>, CounterPayload)> = inits
            .iter()
            .map(|init| {
                let payload = encode_counters(&init.state);
                let counters =
                    validate_counters_payload(&payload, b, mode, &session, init.state.party)
                        .unwrap();
                (init.blinds.iter().map(|(ct, _)| *ct).collect(), counters)
            })
            .collect();
        let bins = aggregate_inputs(&joint, b, &inputs);
        for (i, bin) in bins.iter().enumerate() {
            let zero = decrypt_element(&shares, bin).is_identity();
            assert_eq!(zero, i == 1, "bin {i}");
        }

        // Zero raised noise counters: both CPs leave the pairs unswapped.
        let n = 2;
        let mut pairs = initial_noise_pairs(&joint, n);
        for _j in 0..2 {
            let step = noise_step(&joint.key, &pairs, &[false, false], b"nz", &mut rng);
            let content = encode_noise_step(&pairs_digest(&pairs), &step);
            pairs = verify_noise_step(&joint.key, &pairs, &content, b"nz").unwrap();
        }
        let mut vec = noise_vector(&pairs);
        vec.extend_from_slice(&bins);
        for j in 0..2 {
            let stage = rrd_stage_step(&vec, &joint, &shares[j], j, b"r", &mut rng);
            let content = encode_rrd_stage(&vector_digest(&vec), &shares[j].public, &stage);
            vec = verify_rrd_stage(&vec, &joint, j, &content, b"r").unwrap();
        }

        // Zeros: 1 common bin + 2 unraised noise slots; subtract n/2.
        let result = measure(&vec, n, mode);
        assert_eq!(result.noisy_count, 1 + 2 - 1);
    }

    #[test]
    fn noise_step_evidence_precedence() {
        let mut rng = ChaCha20Rng::seed_from_u64(913);
        let (_, joint) = keys(2, &mut rng);
        let pairs = initial_noise_pairs(&joint, 3);
        let step = noise_step(&joint.key, &pairs, &[true, false, true], b"ctx", &mut rng);
        let good = encode_noise_step(&pairs_digest(&pairs), &step);
        assert!(verify_noise_step(&joint.key, &pairs, &good, b"ctx").is_ok());

        // Malformed: truncated.
        assert_eq!(
            verify_noise_step(&joint.key, &pairs, &good[..good.len() - 1], b"ctx"),
            Err(Evidence::InvalidProof)
        );
        // Wrong input digest outranks the (valid) proofs.
        let mut wrong = good.clone();
        wrong[0] ^= 1;
        assert_eq!(
            verify_noise_step(&joint.key, &pairs, &wrong, b"ctx"),
            Err(Evidence::WrongStatement)
        );
        // Broken proof.
        let mut bad = good.clone();
        let last = bad.len() - 1;
        bad[last] ^= 1;
        assert_eq!(
            verify_noise_step(&joint.key, &pairs, &bad, b"ctx"),
            Err(Evidence::InvalidProof)
        );
        // Wrong context.
        assert_eq!(
            verify_noise_step(&joint.key, &pairs, &good, b"other"),
            Err(Evidence::InvalidProof)
        );
    }

    #[test]
    fn rrd_stage_evidence_precedence() {
        let mut rng = ChaCha20Rng::seed_from_u64(914);
        let (shares, joint) = keys(2, &mut rng);
        let y = JointPublicKey {
            key: joint.key,
            shares: Vec::new(),
        };
        let vec: Vec<Ciphertext> = (0..3)
            .map(|i| {
                crate::elgamal::encrypt(
                    &y,
                    &Scalar::from_u64(i),
                    &Scalar::random(&mut rng),
                )
            })
            .collect();
        let stage = rrd_stage_step(&vec, &joint, &shares[0], 0, b"ctx", &mut rng);
        let good = encode_rrd_stage(&vector_digest(&vec), &shares[0].public, &stage);
        assert!(verify_rrd_stage(&vec, &joint, 0, &good, b"ctx").is_ok());

        let mut wrong_digest = good.clone();
        wrong_digest[3] ^= 1;
        assert_eq!(
            verify_rrd_stage(&vec, &joint, 0, &wrong_digest, b"ctx"),
            Err(Evidence::WrongStatement)
        );

        // Claiming the other CP's share outranks proof failure.
        let foreign = encode_rrd_stage(&vector_digest(&vec), &shares[1].public, &stage);
        assert_eq!(
            verify_rrd_stage(&vec, &joint, 0, &foreign, b"ctx"),
            Err(Evidence::WrongStatement)
        );

        // Identity first component outranks the proof check.
        let mut identity = good.clone();
        let ct_start = 64;
        identity[ct_start..ct_start + 32].copy_from_slice(&Element::identity().encode());
        assert_eq!(
            verify_rrd_stage(&vec, &joint, 0, &identity, b"ctx"),
            Err(Evidence::IdentityFirstComponent)
        );

        let mut bad_proof = good.clone();
        let last = bad_proof.len() - 1;
        bad_proof[last] ^= 1;
        assert_eq!(
            verify_rrd_stage(&vec, &joint, 0, &bad_proof, b"ctx"),
            Err(Evidence::InvalidProof)
        );
    }

    #[test]
    fn aggregate_summary_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(915);
        let (_, joint) = keys(2, &mut rng);
        let agg = initial_noise_pairs(&joint, 2)
            .iter()
            .map(|p| p[0])
            .collect::<Vec<_>>();
        let included = [true, false, true];
        let bytes = encode_aggregate_summary(&included, &agg);
        let (inc, digest) = decode_aggregate_summary(&bytes, 3).unwrap();
        assert_eq!(inc, included);
        assert_eq!(digest, vector_digest(&agg));
        assert!(decode_aggregate_summary(&bytes, 9).is_none());
        assert!(decode_aggregate_summary(&bytes[..10], 3).is_none());
    }

    #[test]
    fn fallback_codec_roundtrip() {
        let evidence = alloc::vec![
            DpEvidence {
                blinds: alloc::vec![alloc::vec![1, 2, 3]],
                counters: alloc::vec![alloc::vec![4], alloc::vec![5, 6]],
            },
            DpEvidence::default(),
        ];
        let bytes = encode_fallback(&evidence);
        assert_eq!(decode_fallback(&bytes, 2).unwrap(), evidence);
        assert!(decode_fallback(&bytes, 3).is_none());
        let mut over = bytes.clone();
        over[0] = 3;
        assert!(decode_fallback(&over, 2).is_none());
    }
}
