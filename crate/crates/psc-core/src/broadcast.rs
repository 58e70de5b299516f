//! Accountable broadcast: Schnorr message signing and Dolev-Strong signature
//! chains over authenticated point-to-point links.
//!
//! One `DsInstance` is the per-party state machine for a single broadcast
//! slot. All chain signatures in an instance cover the same context
//! `(session, phase, slot round, broadcaster, payload)`; a chain processed at
//! logical round r is accepted only if it carries at least r distinct valid
//! signatures starting with the broadcaster's. The accept set caps at two
//! distinct payloads since two already prove equivocation. The decision after
//! round t+1 is Delivered for a singleton accept set and Blame(broadcaster)
//! otherwise.
//!
//! Round pacing (heartbeats, timeouts, fast-forward of idle rounds) lives in
//! the transports; nothing here waits.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use rand_core::CryptoRngCore;

use crate::group::{hash_bytes, hash_to_scalar, Element, Scalar};
use crate::wire::{put_bytes, Frame, MsgType, PartyId, PhaseTag, Reader};

const DOMAIN_SIG_NONCE: &[u8] = b"psc.sig.nonce";
const DOMAIN_SIG_CHALLENGE: &[u8] = b"psc.sig.challenge";
const DOMAIN_MESSAGE: &[u8] = b"psc.msg";
const DOMAIN_HEARTBEAT: &[u8] = b"psc.heartbeat";
const DOMAIN_PAYLOAD: &[u8] = b"psc.payload";

/// Long-term or session Schnorr signing key.
#[derive(Clone)]
pub struct SigningKey {
    secret: Scalar,
    pub public: Element,
}

impl SigningKey {
    pub fn generate(rng: &mut impl CryptoRngCore) -> SigningKey {
        SigningKey::from_secret(Scalar::random(rng))
    }

    pub fn from_secret(secret: Scalar) -> SigningKey {
        let public = Element::base_exp(&secret);
        SigningKey { secret, public }
    }

    pub fn secret(&self) -> &Scalar {
        &self.secret
    }
}

/// Schnorr signature over domain-tagged parts. The nonce is derived from the
/// secret and the message, so signing is deterministic and never reuses a
/// nonce across distinct messages.
pub fn sign_parts(key: &SigningKey, domain: &[u8], parts: &[&[u8]]) -> [u8; 64] {
    let sk = key.secret.encode();
    let mut nonce_parts: Vec<&[u8]> = Vec::with_capacity(parts.len() + 2);
    nonce_parts.push(&sk);
    nonce_parts.push(domain);
    nonce_parts.extend_from_slice(parts);
    let k = hash_to_scalar(DOMAIN_SIG_NONCE, &nonce_parts);
    let big_r = Element::base_exp(&k);
    let c = challenge(&key.public, &big_r, domain, parts);
    let z = k + c * key.secret;
    let mut sig = [0u8; 64];
    sig[..32].copy_from_slice(&big_r.encode());
    sig[32..].copy_from_slice(&z.encode());
    sig
}

pub fn verify_parts(public: &Element, domain: &[u8], parts: &[&[u8]], sig: &[u8; 64]) -> bool {
    let Ok(big_r) = Element::decode(&sig[..32]) else {
        return false;
    };
    let Ok(z) = Scalar::decode(&sig[32..]) else {
        return false;
    };
    let c = challenge(public, &big_r, domain, parts);
    // g^z == R · pk^c, checked as (-c)·pk + z·g == R.
    Element::vartime_exp_with_base(&(-c), public, &z) == big_r
}

fn challenge(public: &Element, big_r: &Element, domain: &[u8], parts: &[&[u8]]) -> Scalar {
    let pk = public.encode();
    let r = big_r.encode();
    let mut all: Vec<&[u8]> = Vec::with_capacity(parts.len() + 3);
    all.push(&pk);
    all.push(&r);
    all.push(domain);
    all.extend_from_slice(parts);
    hash_to_scalar(DOMAIN_SIG_CHALLENGE, &all)
}

/// Sign the standard message context `(session, phase, round, sender, payload)`.
pub fn sign(
    key: &SigningKey,
    session: &[u8; 16],
    phase: PhaseTag,
    round: u32,
    sender: PartyId,
    payload: &[u8],
) -> [u8; 64] {
    sign_parts(
        key,
        DOMAIN_MESSAGE,
        &[
            session,
            &[phase as u8],
            &round.to_be_bytes(),
            &sender.0.to_be_bytes(),
            payload,
        ],
    )
}

/// Verify a message-context signature by a roster member.
pub fn verify_sig(
    roster: &Roster,
    signer: PartyId,
    session: &[u8; 16],
    phase: PhaseTag,
    round: u32,
    sender: PartyId,
    payload: &[u8],
    sig: &[u8; 64],
) -> Result<(), BroadcastError> {
    let key = roster
        .key_of(signer)
        .ok_or(BroadcastError::UnknownSigner(signer))?;
    let ok = verify_parts(
        key,
        DOMAIN_MESSAGE,
        &[
            session,
            &[phase as u8],
            &round.to_be_bytes(),
            &sender.0.to_be_bytes(),
            payload,
        ],
        sig,
    );
    if ok {
        Ok(())
    } else {
        Err(BroadcastError::BadSignature(signer))
    }
}

/// Party roster with long-term public keys, sorted by id.
#[derive(Clone, Debug)]
pub struct Roster {
    entries: Vec<(PartyId, Element)>,
}

impl Roster {
    pub fn new(mut entries: Vec<(PartyId, Element)>) -> Roster {
        entries.sort_by_key(|(id, _)| *id);
        entries.dedup_by_key(|(id, _)| *id);
        Roster { entries }
    }

    pub fn key_of(&self, id: PartyId) -> Option<&Element> {
        self.entries
            .binary_search_by_key(&id, |(i, _)| *i)
            .ok()
            .map(|i| &self.entries[i].1)
    }

    pub fn ids(&self) -> impl Iterator<Item = PartyId> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }

    pub fn cp_ids(&self) -> impl Iterator<Item = PartyId> + '_ {
        self.ids().filter(|id| id.is_cp())
    }

    pub fn cp_count(&self) -> usize {
        self.cp_ids().count()
    }
}

/// Errors from signature and chain validation. Invalid inbound chains are
/// dropped by callers; the variant records why for tests and diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BroadcastError {
    /// Signer id is not in the roster (or not signature-eligible).
    UnknownSigner(PartyId),
    /// Signature bytes do not verify for the claimed signer.
    BadSignature(PartyId),
    /// The same signer appears twice in one chain.
    DuplicateSigner(PartyId),
    /// Chain carries no signatures at all.
    EmptyChain,
    /// First signer differs from the scheduled broadcaster.
    WrongBroadcaster,
    /// Chain addressed to a different (session, phase, slot, label).
    InstanceMismatch,
    /// Fewer signatures than the logical round requires.
    StaleChain,
    /// Payload bytes do not match the advertised digest.
    PayloadMismatch,
    /// Chain references a payload digest this party has not seen.
    NeedPayload([u8; 32]),
    Malformed,
}

impl fmt::Display for BroadcastError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BroadcastError::UnknownSigner(p) => write!(f, "unknown signer {p}"),
            BroadcastError::BadSignature(p) => write!(f, "bad signature from {p}"),
            BroadcastError::DuplicateSigner(p) => write!(f, "duplicate signer {p}"),
            BroadcastError::EmptyChain => f.write_str("signature chain is empty"),
            BroadcastError::WrongBroadcaster => f.write_str("first signer is not the broadcaster"),
            BroadcastError::InstanceMismatch => f.write_str("chain belongs to another instance"),
            BroadcastError::StaleChain => f.write_str("too few signatures for this round"),
            BroadcastError::PayloadMismatch => f.write_str("payload does not match digest"),
            BroadcastError::NeedPayload(_) => f.write_str("payload body not available"),
            BroadcastError::Malformed => f.write_str("malformed chain encoding"),
        }
    }
}

impl core::error::Error for BroadcastError {}

/// A broadcast payload with its signature chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedMessage {
    /// The broadcaster.
    pub sender: PartyId,
    pub session: [u8; 16],
    pub phase: PhaseTag,
    /// Schedule slot the instance started in; part of every signed context.
    pub round: u32,
    /// Instance label (length-prefixed) followed by the broadcast content.
    pub payload: Vec<u8>,
    /// Broadcaster first, then relayers, no duplicates. All cover the same
    /// context.
    pub signatures: Vec<(PartyId, [u8; 64])>,
}

impl SignedMessage {
    pub fn digest(&self) -> [u8; 32] {
        payload_digest(&self.payload)
    }

    pub fn label(&self) -> Result<&[u8], BroadcastError> {
        Reader::new(&self.payload)
            .bytes()
            .map_err(|_| BroadcastError::Malformed)
    }

    pub fn content(&self) -> Result<&[u8], BroadcastError> {
        let mut r = Reader::new(&self.payload);
        r.bytes().map_err(|_| BroadcastError::Malformed)?;
        Ok(r.rest())
    }

    /// Structural and cryptographic validity: distinct CP signers from the
    /// roster, broadcaster first, every signature over the shared context.
    pub fn verify(&self, roster: &Roster) -> Result<(), BroadcastError> {
        if self.signatures.is_empty() {
            return Err(BroadcastError::EmptyChain);
        }
        if self.signatures[0].0 != self.sender {
            return Err(BroadcastError::WrongBroadcaster);
        }
        let mut seen = BTreeSet::new();
        for (signer, sig) in &self.signatures {
            if !signer.is_cp() {
                return Err(BroadcastError::UnknownSigner(*signer));
            }
            if !seen.insert(*signer) {
                return Err(BroadcastError::DuplicateSigner(*signer));
            }
            verify_sig(
                roster,
                *signer,
                &self.session,
                self.phase,
                self.round,
                self.sender,
                &self.payload,
                sig,
            )?;
        }
        Ok(())
    }

    /// Copy of this chain with `signer`'s signature appended.
    pub fn with_signature(&self, signer: PartyId, key: &SigningKey) -> SignedMessage {
        let mut out = self.clone();
        let sig = sign(
            key,
            &self.session,
            self.phase,
            self.round,
            self.sender,
            &self.payload,
        );
        out.signatures.push((signer, sig));
        out
    }
}

/// Build the label-prefixed payload for a broadcast instance.
pub fn instance_payload(label: &[u8], content: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + label.len() + content.len());
    put_bytes(&mut out, label);
    out.extend_from_slice(content);
    out
}

/// Fresh chain as the broadcaster produces it in round 1.
pub fn make_chain(
    session: [u8; 16],
    phase: PhaseTag,
    slot: u32,
    label: &[u8],
    content: &[u8],
    broadcaster: PartyId,
    key: &SigningKey,
) -> SignedMessage {
    let payload = instance_payload(label, content);
    let sig = sign(key, &session, phase, slot, broadcaster, &payload);
    SignedMessage {
        sender: broadcaster,
        session,
        phase,
        round: slot,
        payload,
        signatures: alloc::vec![(broadcaster, sig)],
    }
}

pub fn payload_digest(payload: &[u8]) -> [u8; 32] {
    hash_bytes(DOMAIN_PAYLOAD, &[payload])
}

/// Final broadcast outcome; identical at all honest parties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BroadcastOutcome {
    Delivered(Vec<u8>),
    Blame(PartyId),
}

impl BroadcastOutcome {
    /// Content without the label prefix, for Delivered outcomes.
    pub fn delivered_content(&self) -> Option<&[u8]> {
        match self {
            BroadcastOutcome::Delivered(payload) => {
                let mut r = Reader::new(payload);
                r.bytes().ok()?;
                Some(r.rest())
            }
            BroadcastOutcome::Blame(_) => None,
        }
    }
}

/// Per-party Dolev-Strong state machine for one broadcast slot.
#[derive(Debug, Clone)]
pub struct DsInstance {
    pub session: [u8; 16],
    pub phase: PhaseTag,
    /// Schedule slot (the signed `round` value).
    pub slot: u32,
    pub label: Vec<u8>,
    pub broadcaster: PartyId,
    me: PartyId,
    /// Tolerated corruptions; the instance spans logical rounds 1..=t+1.
    t: u32,
    /// Accepted chains with distinct payloads, at most two.
    accepted: Vec<SignedMessage>,
    /// Highest logical round with substantive traffic at this party.
    last_active: u32,
}

impl DsInstance {
    pub fn new(
        session: [u8; 16],
        phase: PhaseTag,
        slot: u32,
        label: &[u8],
        broadcaster: PartyId,
        me: PartyId,
        t: u32,
    ) -> DsInstance {
        DsInstance {
            session,
            phase,
            slot,
            label: label.to_vec(),
            broadcaster,
            me,
            t,
            accepted: Vec::new(),
            last_active: 0,
        }
    }

    pub fn rounds(&self) -> u32 {
        self.t + 1
    }

    /// Broadcaster's round-1 chain. The broadcaster accepts its own payload
    /// immediately.
    pub fn start(&mut self, content: &[u8], key: &SigningKey) -> SignedMessage {
        debug_assert_eq!(self.me, self.broadcaster);
        let chain = make_chain(
            self.session,
            self.phase,
            self.slot,
            &self.label,
            content,
            self.broadcaster,
            key,
        );
        self.accepted.push(chain.clone());
        self.last_active = 1;
        chain
    }

    /// Process one inbound chain at logical round `ds_round` (1-based).
    /// Returns a chain to relay to all peers this round, if any.
    pub fn on_chain(
        &mut self,
        msg: &SignedMessage,
        ds_round: u32,
        roster: &Roster,
        key: &SigningKey,
    ) -> Result<Option<SignedMessage>, BroadcastError> {
        if msg.session != self.session
            || msg.phase != self.phase
            || msg.round != self.slot
            || msg.label()? != self.label.as_slice()
        {
            return Err(BroadcastError::InstanceMismatch);
        }
        if msg.sender != self.broadcaster {
            return Err(BroadcastError::WrongBroadcaster);
        }
        if ds_round < 1 || ds_round > self.rounds() || (msg.signatures.len() as u32) < ds_round {
            return Err(BroadcastError::StaleChain);
        }
        msg.verify(roster)?;

        self.last_active = self.last_active.max(ds_round);
        if self.accepted.iter().any(|m| m.payload == msg.payload) {
            return Ok(None);
        }
        // Two distinct payloads already prove equivocation; ignore further.
        if self.accepted.len() >= 2 {
            return Ok(None);
        }
        self.accepted.push(msg.clone());
        // Relay with own signature appended, unless the chain cannot arrive
        // within the round budget or this party already signed it.
        let already_signed = msg.signatures.iter().any(|(p, _)| *p == self.me);
        if ds_round <= self.t && !already_signed {
            self.last_active = self.last_active.max(ds_round + 1);
            return Ok(Some(msg.with_signature(self.me, key)));
        }
        Ok(None)
    }

    /// Decision after logical round t+1. Rounds with no inbound chains for
    /// this instance change no state, so idle tail rounds may be skipped by
    /// the caller.
    pub fn decide(&self) -> BroadcastOutcome {
        if self.accepted.len() == 1 {
            BroadcastOutcome::Delivered(self.accepted[0].payload.clone())
        } else {
            BroadcastOutcome::Blame(self.broadcaster)
        }
    }

    /// Two accepted chains with distinct payloads, normalized by digest
    /// order; proof material for an equivocation blame report.
    pub fn equivocation_evidence(&self) -> Option<(&SignedMessage, &SignedMessage)> {
        if self.accepted.len() < 2 {
            return None;
        }
        let (a, b) = (&self.accepted[0], &self.accepted[1]);
        if a.digest() <= b.digest() {
            Some((a, b))
        } else {
            Some((b, a))
        }
    }

    /// Highest logical round in which this party sent or received a chain;
    /// 2 in fault-free runs regardless of t.
    pub fn last_active_round(&self) -> u32 {
        self.last_active
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted.len()
    }
}

/// Chain frame payload: digest, then optionally the body.
pub fn chain_to_frame(msg: &SignedMessage, hop: PartyId, include_body: bool) -> Frame {
    let digest = msg.digest();
    let mut payload = Vec::with_capacity(33 + if include_body { 4 + msg.payload.len() } else { 0 });
    payload.extend_from_slice(&digest);
    if include_body {
        payload.push(1);
        put_bytes(&mut payload, &msg.payload);
    } else {
        payload.push(0);
    }
    Frame {
        msg_type: MsgType::Chain,
        session: msg.session,
        phase: msg.phase,
        round: msg.round,
        sender: hop,
        payload,
        sigs: msg.signatures.clone(),
    }
}

/// Reconstruct a chain from a frame, resolving the payload body through the
/// store. Inline bodies are digest-checked and cached.
pub fn chain_from_frame(
    frame: &Frame,
    store: &mut PayloadStore,
) -> Result<SignedMessage, BroadcastError> {
    if frame.msg_type != MsgType::Chain {
        return Err(BroadcastError::Malformed);
    }
    let mut r = Reader::new(&frame.payload);
    let digest: [u8; 32] = r
        .take(32)
        .map_err(|_| BroadcastError::Malformed)?
        .try_into()
        .unwrap();
    let has_body = r.u8().map_err(|_| BroadcastError::Malformed)? == 1;
    let payload = if has_body {
        let body = r.bytes().map_err(|_| BroadcastError::Malformed)?;
        if payload_digest(body) != digest {
            return Err(BroadcastError::PayloadMismatch);
        }
        store.insert(body.to_vec());
        body.to_vec()
    } else {
        store
            .get(&digest)
            .ok_or(BroadcastError::NeedPayload(digest))?
            .to_vec()
    };
    let sender = frame
        .sigs
        .first()
        .ok_or(BroadcastError::EmptyChain)?
        .0;
    Ok(SignedMessage {
        sender,
        session: frame.session,
        phase: frame.phase,
        round: frame.round,
        payload,
        signatures: frame.sigs.clone(),
    })
}

/// Payload bodies this party has seen, keyed by digest. Backs the hash-echo
/// optimization: peers that already hold a digest are sent only the digest.
#[derive(Debug, Clone, Default)]
pub struct PayloadStore {
    map: alloc::collections::BTreeMap<[u8; 32], Vec<u8>>,
}

impl PayloadStore {
    pub fn new() -> PayloadStore {
        PayloadStore::default()
    }

    pub fn insert(&mut self, body: Vec<u8>) -> [u8; 32] {
        let digest = payload_digest(&body);
        self.map.entry(digest).or_insert(body);
        digest
    }

    pub fn get(&self, digest: &[u8; 32]) -> Option<&[u8]> {
        self.map.get(digest).map(Vec::as_slice)
    }

    pub fn contains(&self, digest: &[u8; 32]) -> bool {
        self.map.contains_key(digest)
    }
}

/// Reply to a hash-echo offer: true when the payload body is already held,
/// so the sender may skip the body.
pub fn hash_echo_reply(store: &PayloadStore, digest: &[u8; 32]) -> bool {
    store.contains(digest)
}

/// Signed end-of-round marker.
pub fn heartbeat_frame(
    key: &SigningKey,
    session: [u8; 16],
    phase: PhaseTag,
    round: u32,
    me: PartyId,
) -> Frame {
    let sig = sign_parts(
        key,
        DOMAIN_HEARTBEAT,
        &[
            &session,
            &[phase as u8],
            &round.to_be_bytes(),
            &me.0.to_be_bytes(),
        ],
    );
    Frame {
        msg_type: MsgType::Heartbeat,
        session,
        phase,
        round,
        sender: me,
        payload: Vec::new(),
        sigs: alloc::vec![(me, sig)],
    }
}

pub fn verify_heartbeat(roster: &Roster, frame: &Frame) -> Result<(), BroadcastError> {
    let (signer, sig) = frame.sigs.first().ok_or(BroadcastError::EmptyChain)?;
    if *signer != frame.sender {
        return Err(BroadcastError::WrongBroadcaster);
    }
    let key = roster
        .key_of(*signer)
        .ok_or(BroadcastError::UnknownSigner(*signer))?;
    let ok = verify_parts(
        key,
        DOMAIN_HEARTBEAT,
        &[
            &frame.session,
            &[frame.phase as u8],
            &frame.round.to_be_bytes(),
            &frame.sender.0.to_be_bytes(),
        ],
        sig,
    );
    if ok {
        Ok(())
    } else {
        Err(BroadcastError::BadSignature(*signer))
    }
}

/// Tracks which peers have closed the current round with a substantive
/// message or heartbeat. The round may advance early once every expected
/// peer is accounted for; otherwise the transport's timeout applies.
#[derive(Debug, Clone)]
pub struct RoundTracker {
    expected: BTreeSet<PartyId>,
    seen: BTreeSet<PartyId>,
}

impl RoundTracker {
    pub fn new(expected: impl IntoIterator<Item = PartyId>) -> RoundTracker {
        RoundTracker {
            expected: expected.into_iter().collect(),
            seen: BTreeSet::new(),
        }
    }

    /// Record a peer's round-closing signal. Unknown peers are ignored.
    pub fn note(&mut self, peer: PartyId) {
        if self.expected.contains(&peer) {
            self.seen.insert(peer);
        }
    }

    pub fn is_complete(&self) -> bool {
        self.seen.len() == self.expected.len()
    }

    pub fn missing(&self) -> impl Iterator<Item = PartyId> + '_ {
        self.expected.difference(&self.seen).copied()
    }

    pub fn reset(&mut self) {
        self.seen.clear();
    }
}

/// Per-round message exchange as seen by one party. `next_round` closes the
/// party's current round (barrier in the simulator, heartbeat-or-timeout on
/// sockets) and returns the inbound frames for the new round.
pub trait RoundLinks {
    fn send(&mut self, to: PartyId, frame: Frame);
    fn next_round(&mut self) -> Vec<Frame>;
}

/// Run one complete broadcast as `me`, driving a single instance over the
/// links for t+1 logical rounds. `payload` must be Some iff `me` is the
/// broadcaster.
#[allow(clippy::too_many_arguments)]
pub fn ds_broadcast(
    me: PartyId,
    key: &SigningKey,
    roster: &Roster,
    broadcaster: PartyId,
    payload: Option<&[u8]>,
    t: u32,
    session: [u8; 16],
    phase: PhaseTag,
    slot: u32,
    label: &[u8],
    links: &mut impl RoundLinks,
) -> BroadcastOutcome {
    let mut inst = DsInstance::new(session, phase, slot, label, broadcaster, me, t);
    let mut store = PayloadStore::new();
    let peers: Vec<PartyId> = roster.cp_ids().filter(|p| *p != me).collect();
    if me == broadcaster {
        let chain = inst.start(payload.expect("broadcaster needs a payload"), key);
        for p in &peers {
            links.send(*p, chain_to_frame(&chain, me, true));
        }
    }
    for ds_round in 1..=t + 1 {
        for frame in links.next_round() {
            if frame.msg_type != MsgType::Chain {
                continue;
            }
            let Ok(msg) = chain_from_frame(&frame, &mut store) else {
                continue;
            };
            if let Ok(Some(relay)) = inst.on_chain(&msg, ds_round, roster, key) {
                for p in &peers {
                    links.send(*p, chain_to_frame(&relay, me, true));
                }
            }
        }
    }
    inst.decide()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const SESSION: [u8; 16] = [3u8; 16];
    const PHASE: PhaseTag = PhaseTag::NoiseGeneration;
    const SLOT: u32 = 7;
    const LABEL: &[u8] = b"noise";

    fn keys(m: usize) -> Vec<SigningKey> {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        (0..m).map(|_| SigningKey::generate(&mut rng)).collect()
    }

    fn roster_of(keys: &[SigningKey]) -> Roster {
        Roster::new(
            keys.iter()
                .enumerate()
                .map(|(i, k)| (PartyId::cp(i as u16), k.public))
                .collect(),
        )
    }

    #[test]
    fn sign_verify_context_binding() {
        let keys = keys(2);
        let roster = roster_of(&keys);
        let me = PartyId::cp(0);
        let sig = sign(&keys[0], &SESSION, PHASE, 5, me, b"hello");
        assert!(verify_sig(&roster, me, &SESSION, PHASE, 5, me, b"hello", &sig).is_ok());
        // Payload mutated.
        assert_eq!(
            verify_sig(&roster, me, &SESSION, PHASE, 5, me, b"hellp", &sig),
            Err(BroadcastError::BadSignature(me))
        );
        // Round mutated.
        assert_eq!(
            verify_sig(&roster, me, &SESSION, PHASE, 6, me, b"hello", &sig),
            Err(BroadcastError::BadSignature(me))
        );
        // Phase mutated.
        assert_eq!(
            verify_sig(&roster, me, &SESSION, PhaseTag::Rrd, 5, me, b"hello", &sig),
            Err(BroadcastError::BadSignature(me))
        );
        // Signer not in roster.
        assert_eq!(
            verify_sig(&roster, PartyId::cp(9), &SESSION, PHASE, 5, me, b"hello", &sig),
            Err(BroadcastError::UnknownSigner(PartyId::cp(9)))
        );
    }

    /// Drives a set of honest instances plus scripted injections through all
    /// t+1 logical rounds, delivering every sent chain to every honest party
    /// next round. Returns the instances for inspection.
    ///
    /// `injections[r]` holds (recipient, chain) pairs delivered at logical
    /// round r+1 in addition to honest traffic.
    fn run_instances(
        keys: &[SigningKey],
        honest: &[usize],
        broadcaster: PartyId,
        initial: &[(usize, SignedMessage)],
        injections: &[Vec<(usize, SignedMessage)>],
        t: u32,
    ) -> Vec<(usize, DsInstance)> {
        let roster = roster_of(keys);
        let mut insts: Vec<(usize, DsInstance)> = honest
            .iter()
            .map(|&i| {
                (
                    i,
                    DsInstance::new(
                        SESSION,
                        PHASE,
                        SLOT,
                        LABEL,
                        broadcaster,
                        PartyId::cp(i as u16),
                        t,
                    ),
                )
            })
            .collect();
        // inbox[party index] -> chains for the current round
        let mut inbox: Vec<Vec<SignedMessage>> = vec![Vec::new(); keys.len()];
        for (to, chain) in initial {
            inbox[*to].push(chain.clone());
        }
        for ds_round in 1..=t + 1 {
            if let Some(extra) = injections.get(ds_round as usize - 1) {
                for (to, chain) in extra {
                    inbox[*to].push(chain.clone());
                }
            }
            let mut next: Vec<Vec<SignedMessage>> = vec![Vec::new(); keys.len()];
            for (i, inst) in insts.iter_mut() {
                for msg in inbox[*i].drain(..) {
                    if let Ok(Some(relay)) = inst.on_chain(&msg, ds_round, &roster, &keys[*i]) {
                        for (to, slot) in next.iter_mut().enumerate() {
                            if to != *i {
                                slot.push(relay.clone());
                            }
                        }
                    }
                }
            }
            inbox = next;
        }
        insts
    }

    #[test]
    fn honest_run_delivers_in_two_rounds() {
        let keys = keys(4);
        let t = 3;
        let b = PartyId::cp(0);
        let mut b_inst = DsInstance::new(SESSION, PHASE, SLOT, LABEL, b, b, t);
        let chain = b_inst.start(b"payload", &keys[0]);
        let initial: Vec<(usize, SignedMessage)> =
            (1..4).map(|i| (i, chain.clone())).collect();
        let mut insts = run_instances(&keys, &[1, 2, 3], b, &initial, &[], t);
        insts.push((0, b_inst));
        for (_, inst) in &insts {
            assert_eq!(inst.decide(), BroadcastOutcome::Delivered(chain.payload.clone()));
            assert_eq!(
                inst.decide().delivered_content().unwrap(),
                b"payload"
            );
        }
        // Non-broadcasters: receive round 1, relay round 2. Broadcaster: send
        // round 1, receive relays round 2.
        for (_, inst) in &insts {
            assert!(inst.last_active_round() <= 2);
        }
    }

    #[test]
    fn equivocation_split_blames_broadcaster() {
        let keys = keys(4);
        let t = 3;
        let b = PartyId::cp(0);
        let x = make_chain(SESSION, PHASE, SLOT, LABEL, b"x", b, &keys[0]);
        let y = make_chain(SESSION, PHASE, SLOT, LABEL, b"y", b, &keys[0]);
        let initial = vec![(1, x.clone()), (2, x.clone()), (3, y.clone())];
        let insts = run_instances(&keys, &[1, 2, 3], b, &initial, &[], t);
        for (_, inst) in &insts {
            assert_eq!(inst.decide(), BroadcastOutcome::Blame(b));
            let (a, c) = inst.equivocation_evidence().unwrap();
            assert!(a.digest() < c.digest());
            assert!(a.verify(&roster_of(&keys)).is_ok());
            assert!(c.verify(&roster_of(&keys)).is_ok());
        }
    }

    #[test]
    fn silent_broadcaster_blamed() {
        let keys = keys(3);
        let insts = run_instances(&keys, &[1, 2], PartyId::cp(0), &[], &[], 2);
        for (_, inst) in &insts {
            assert_eq!(inst.decide(), BroadcastOutcome::Blame(PartyId::cp(0)));
            assert!(inst.equivocation_evidence().is_none());
        }
    }

    #[test]
    fn late_equivocation_still_agrees() {
        // Corrupt cp0 (broadcaster) and cp1. X goes to everyone at round 1;
        // a second chain {cp0, cp1} on Y reaches only cp2 at round 2. The
        // relay rule spreads Y to cp3 by round 3, so both honest parties
        // blame.
        let keys = keys(4);
        let t = 3;
        let b = PartyId::cp(0);
        let x = make_chain(SESSION, PHASE, SLOT, LABEL, b"x", b, &keys[0]);
        let y = make_chain(SESSION, PHASE, SLOT, LABEL, b"y", b, &keys[0])
            .with_signature(PartyId::cp(1), &keys[1]);
        let initial = vec![(2, x.clone()), (3, x.clone())];
        let injections = vec![Vec::new(), vec![(2, y.clone())]];
        let insts = run_instances(&keys, &[2, 3], b, &initial, &injections, t);
        for (_, inst) in &insts {
            assert_eq!(inst.decide(), BroadcastOutcome::Blame(b));
        }
    }

    #[test]
    fn stale_chain_rejected() {
        // A bare single-signature chain delivered at round 2 carries fewer
        // signatures than the round index and is dropped.
        let keys = keys(3);
        let b = PartyId::cp(0);
        let x = make_chain(SESSION, PHASE, SLOT, LABEL, b"x", b, &keys[0]);
        let injections = vec![Vec::new(), vec![(1, x.clone())]];
        let insts = run_instances(&keys, &[1, 2], b, &[], &injections, 2);
        for (_, inst) in &insts {
            assert_eq!(inst.decide(), BroadcastOutcome::Blame(b));
        }
    }

    #[test]
    fn chain_validation_rejects_malformed() {
        let keys = keys(3);
        let roster = roster_of(&keys);
        let b = PartyId::cp(0);
        let me = PartyId::cp(1);
        let mut inst = DsInstance::new(SESSION, PHASE, SLOT, LABEL, b, me, 2);
        let good = make_chain(SESSION, PHASE, SLOT, LABEL, b"x", b, &keys[0]);

        // Duplicate signer.
        let mut dup = good.clone();
        dup.signatures.push(dup.signatures[0]);
        assert_eq!(
            inst.on_chain(&dup, 2, &roster, &keys[1]),
            Err(BroadcastError::DuplicateSigner(b))
        );
        // First signer is not the broadcaster.
        let rogue = make_chain(SESSION, PHASE, SLOT, LABEL, b"x", PartyId::cp(2), &keys[2]);
        assert_eq!(
            inst.on_chain(&rogue, 1, &roster, &keys[1]),
            Err(BroadcastError::WrongBroadcaster)
        );
        // Tampered payload under the original signature.
        let mut forged = good.clone();
        forged.payload = instance_payload(LABEL, b"z");
        assert_eq!(
            inst.on_chain(&forged, 1, &roster, &keys[1]),
            Err(BroadcastError::BadSignature(b))
        );
        // Wrong label routes to a different instance.
        let other = make_chain(SESSION, PHASE, SLOT, b"other", b"x", b, &keys[0]);
        assert_eq!(
            inst.on_chain(&other, 1, &roster, &keys[1]),
            Err(BroadcastError::InstanceMismatch)
        );
        // Signature from a party outside the roster.
        let stranger = SigningKey::generate(&mut ChaCha20Rng::seed_from_u64(9));
        let alien = good.clone().with_signature(PartyId::cp(7), &stranger);
        assert_eq!(
            inst.on_chain(&alien, 2, &roster, &keys[1]),
            Err(BroadcastError::UnknownSigner(PartyId::cp(7)))
        );
        // DP ids are never chain-eligible.
        let dp_chain = good.clone().with_signature(PartyId::dp(0), &stranger);
        assert_eq!(
            inst.on_chain(&dp_chain, 2, &roster, &keys[1]),
            Err(BroadcastError::UnknownSigner(PartyId::dp(0)))
        );
        // The good chain still accepts afterwards.
        assert!(matches!(inst.on_chain(&good, 1, &roster, &keys[1]), Ok(Some(_))));
    }

    #[test]
    fn accept_set_caps_at_two() {
        let keys = keys(3);
        let roster = roster_of(&keys);
        let b = PartyId::cp(0);
        let me = PartyId::cp(1);
        let mut inst = DsInstance::new(SESSION, PHASE, SLOT, LABEL, b, me, 2);
        for (i, content) in [b"a", b"b", b"c"].iter().enumerate() {
            let chain = make_chain(SESSION, PHASE, SLOT, LABEL, *content, b, &keys[0]);
            let relay = inst.on_chain(&chain, 1, &roster, &keys[1]).unwrap();
            if i < 2 {
                assert!(relay.is_some(), "first two payloads relay");
            } else {
                assert!(relay.is_none(), "third payload ignored");
            }
        }
        assert_eq!(inst.accepted_count(), 2);
        assert_eq!(inst.decide(), BroadcastOutcome::Blame(b));
    }

    #[test]
    fn chain_frame_roundtrip_and_dedupe() {
        let keys = keys(2);
        let b = PartyId::cp(0);
        let msg = make_chain(SESSION, PHASE, SLOT, LABEL, b"body", b, &keys[0])
            .with_signature(PartyId::cp(1), &keys[1]);
        let mut store = PayloadStore::new();

        let full = chain_to_frame(&msg, PartyId::cp(1), true);
        let bytes = full.encode();
        let decoded = Frame::decode(&bytes).unwrap();
        assert_eq!(chain_from_frame(&decoded, &mut store).unwrap(), msg);
        assert!(hash_echo_reply(&store, &msg.digest()));

        // Digest-only frame resolves through the store now.
        let thin = chain_to_frame(&msg, PartyId::cp(1), false);
        assert_eq!(chain_from_frame(&thin, &mut store).unwrap(), msg);

        // Without the body cached, a digest-only frame reports what to fetch.
        let mut empty = PayloadStore::new();
        assert_eq!(
            chain_from_frame(&thin, &mut empty),
            Err(BroadcastError::NeedPayload(msg.digest()))
        );

        // Body tampered against the digest.
        let mut bad = full.clone();
        let plen = bad.payload.len();
        bad.payload[plen - 1] ^= 1;
        assert_eq!(
            chain_from_frame(&bad, &mut store),
            Err(BroadcastError::PayloadMismatch)
        );
    }

    #[test]
    fn heartbeat_roundtrip_and_tracker() {
        let keys = keys(3);
        let roster = roster_of(&keys);
        let hb = heartbeat_frame(&keys[1], SESSION, PHASE, 4, PartyId::cp(1));
        assert!(verify_heartbeat(&roster, &hb).is_ok());
        let mut wrong = hb.clone();
        wrong.round = 5;
        assert!(verify_heartbeat(&roster, &wrong).is_err());

        let mut tracker = RoundTracker::new([PartyId::cp(0), PartyId::cp(1), PartyId::cp(2)]);
        tracker.note(PartyId::cp(0));
        tracker.note(PartyId::cp(9)); // unknown: ignored
        assert!(!tracker.is_complete());
        assert_eq!(tracker.missing().count(), 2);
        tracker.note(PartyId::cp(1));
        tracker.note(PartyId::cp(2));
        assert!(tracker.is_complete());
        tracker.reset();
        assert!(!tracker.is_complete());
    }
}
