//! Lockstep session engine. Drives one measurement session per party over
//! a static round schedule: every honest party derives the same stage
//! boundaries from the party count alone, so the only communication is the
//! frames themselves.
//!
//! Schedule, in absolute 1-based rounds for committee size m (a secure
//! broadcast stage spans m rounds, tolerating t = m-1 corruptions):
//!
//! | step                         | round                |
//! |------------------------------|----------------------|
//! | key shares broadcast         | 1 .. 1+m             |
//! | key countersignatures        | 1+m .. 1+2m          |
//! | key bundles to DPs           | 1+2m                 |
//! | DPs accept key, send blinds  | 2+2m                 |
//! | noise stage j of m           | 3+2m+jm .. 3+2m+(j+1)m |
//! | DPs send counters            | 2+2m+m^2             |
//! | aggregate summary broadcast  | 3+2m+m^2 .. +m       |
//! | fallback broadcast (if any)  | .. +m                |
//! | shuffle stage j of m         | m rounds each        |
//! | decryption stage j of m      | m rounds each        |
//! | outcome frames to DPs        | final stage round    |
//!
//! The collection period between blinds and counters is compressed to the
//! noise phase here; deployments hold the same state open for days and
//! resume from a DP snapshot.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::ChaCha20Rng;

use crate::broadcast::{
    chain_from_frame, chain_to_frame, make_chain, sign, verify_sig, BroadcastOutcome,
    DsInstance, PayloadStore, Roster, RoundLinks, SignedMessage, SigningKey,
};
use crate::elgamal::{Ciphertext, JointPublicKey, KeyShare};
use crate::group::{hash_bytes, hash_to_scalar, Element};
use crate::transport::{FaultPlan, SimNet};
use crate::wire::{Frame, MsgType, PartyId, PhaseTag};
use crate::zkp::{derive_generators, FsContext};

use super::cp::{
    aggregate_inputs, decode_key_share, encode_aggregate_summary, encode_fallback,
    encode_key_bundle, encode_key_share, encode_noise_step, encode_rrd_stage,
    encode_shuffle_step, initial_noise_pairs, measure, noise_step, noise_vector,
    resolve_dp_inputs, rrd_stage_step, shuffle_step, sign_session_key, vector_digest,
    verify_noise_step, verify_rrd_stage, verify_session_key, verify_shuffle_step, CpState,
    DpEvidence,
};
use super::dp::{
    decide_key, dp_init, dp_observe, encode_blinds, encode_counters, validate_blinds_payload,
    validate_counters_payload, CounterPayload, DpState,
};
use super::params::{noise_size, Mode, ParamsError, ProtocolParams, Rosters};
use super::rng::{
    substream, swap_bits, LABEL_BLINDS, LABEL_KEYGEN, LABEL_NOISE_MISC, LABEL_NOISE_SWAP,
    LABEL_OBSERVE, LABEL_RRD, LABEL_SHUFFLE,
};
use super::{BlameReport, Evidence, Outcome, PhaseTimings};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineError {
    Params(ParamsError),
    /// A session failed to reach an outcome within the schedule plus
    /// margin. Indicates an engine defect, not protocol misbehavior.
    Stalled,
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::Params(e) => write!(f, "engine rejected parameters: {e}"),
            EngineError::Stalled => f.write_str("session stalled past its round budget"),
        }
    }
}

impl core::error::Error for EngineError {}

impl From<ParamsError> for EngineError {
    fn from(e: ParamsError) -> EngineError {
        EngineError::Params(e)
    }
}

/// Scripted CP misbehavior for accountability tests. Each deviation is a
/// hook inside the honest state machine, so a deviating party is the
/// honest code path plus exactly one twist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deviation {
    /// Drop all outbound frames once the local phase reaches `phase`.
    SilentFrom { phase: PhaseTag },
    /// Broadcast two distinct contents at this party's stage of `phase`.
    Equivocate { phase: PhaseTag },
    /// Corrupt the last byte of the stage content (lands in a proof).
    TamperProof { phase: PhaseTag },
    /// Prove against the wrong statement: a stale input digest, or at the
    /// decryption phase a foreign key share.
    WrongStatement { phase: PhaseTag },
    /// Emit an identity first component in the first decryption slot.
    IdentityFirst,
    /// Countersign a key other than the agreed one.
    BadKeySignature,
}

/// Scripted DP misbehavior. DPs are never blamed; each of these must end
/// in silent exclusion from the aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpDeviation {
    /// Send nothing at all.
    Silent,
    /// Submit one counter short of the agreed width.
    ShortVector,
    /// Corrupt a blind knowledge proof.
    BadBlindProof,
    /// Send different counter payloads to different CPs.
    Equivocate,
    /// Corrupt the submission payload tail (in intersection mode, the last
    /// submission proof).
    BadSubmissionProof,
}

#[derive(Debug, Clone, Default)]
pub struct AdversaryPlan {
    pub cps: BTreeMap<PartyId, Deviation>,
    pub dps: BTreeMap<PartyId, DpDeviation>,
}

/// Per-CP runtime environment: identity, long-term signing key, and the
/// session randomness seed.
#[derive(Clone)]
pub struct CpEnv {
    pub index: u16,
    pub signing: SigningKey,
    pub session_seed: [u8; 32],
    /// Monotonic microsecond clock for phase timings; None leaves timings
    /// zeroed.
    pub clock: Option<fn() -> u64>,
}

#[derive(Clone)]
pub struct DpEnv {
    pub index: u16,
    pub signing: SigningKey,
    pub session_seed: [u8; 32],
    /// Bins this provider observes during the collection period.
    pub observations: Vec<usize>,
    pub clock: Option<fn() -> u64>,
}

pub enum RoleEnv {
    Cp(CpEnv),
    Dp(DpEnv),
}

/// What one protocol step produced: frames to send this round, and the
/// terminal outcome once the session ends.
#[derive(Debug)]
pub struct Step {
    pub sends: Vec<(PartyId, Frame)>,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, Copy)]
struct Timeline {
    m: u32,
}

impl Timeline {
    fn ds_len(self) -> u32 {
        self.m
    }

    fn dp_key_step(self) -> u32 {
        2 + 2 * self.m
    }

    fn noise_start(self) -> u32 {
        3 + 2 * self.m
    }

    fn dp_counters_step(self) -> u32 {
        2 + 2 * self.m + self.m * self.m
    }

    /// Latest round at which outcome frames can arrive (fallback path),
    /// plus margin for delivery.
    fn deadline(self) -> u32 {
        3 * self.m * self.m + 4 * self.m + 6
    }
}

/// Round budget for one session with committee size m, including the DP
/// outcome deadline. Drivers should allow this many rounds plus a small
/// margin.
pub fn outcome_deadline(m: usize) -> u32 {
    Timeline { m: m as u32 }.deadline()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StageKind {
    KeyShare,
    KeySig,
    Noise(usize),
    Aggregate,
    Fallback,
    Shuffle(usize),
    Rrd(usize),
}

impl StageKind {
    fn phase(self) -> PhaseTag {
        match self {
            StageKind::KeyShare | StageKind::KeySig => PhaseTag::KeyGen,
            StageKind::Noise(_) => PhaseTag::NoiseGeneration,
            StageKind::Aggregate | StageKind::Fallback => PhaseTag::InputSubmission,
            StageKind::Shuffle(_) => PhaseTag::Shuffling,
            StageKind::Rrd(_) => PhaseTag::Rrd,
        }
    }

    fn label(self) -> &'static [u8] {
        match self {
            StageKind::KeyShare => b"skgd.share",
            StageKind::KeySig => b"skgd.sig",
            StageKind::Noise(_) => b"noise",
            StageKind::Aggregate => b"aggr",
            StageKind::Fallback => b"aggr.full",
            StageKind::Shuffle(_) => b"shuf",
            StageKind::Rrd(_) => b"rrd",
        }
    }
}

struct DsStage {
    kind: StageKind,
    start: u32,
    broadcasters: Vec<PartyId>,
    insts: Vec<DsInstance>,
    store: PayloadStore,
}

enum Stage {
    Ds(DsStage),
    Idle { until: u32 },
    Finished,
}

fn p2p_frame(
    key: &SigningKey,
    session: [u8; 16],
    phase: PhaseTag,
    round: u32,
    sender: PartyId,
    payload: Vec<u8>,
) -> Frame {
    let sig = sign(key, &session, phase, round, sender, &payload);
    Frame {
        msg_type: MsgType::P2p,
        session,
        phase,
        round,
        sender,
        payload,
        sigs: vec![(sender, sig)],
    }
}

/// Outputs a CP computed for its own broadcast, kept alongside the exact
/// bytes it sent. When the delivered stage content is byte-identical the
/// CP adopts these instead of re-verifying its own proofs. Never set for
/// a deviating CP: a cheater must re-check its own step so it reports the
/// same blame as everyone else.
enum OwnStage {
    Noise(Vec<[Ciphertext; 2]>),
    Vector(Vec<Ciphertext>),
}

/// One computation party's session. Owns the stage machinery and all
/// phase state; `step` is the only entry point.
pub struct CpSession {
    env: CpEnv,
    params: ProtocolParams,
    roster: Roster,
    timeline: Timeline,
    me: PartyId,
    cps: Vec<PartyId>,
    cp_peers: Vec<PartyId>,
    dps: Vec<PartyId>,
    state: CpState,
    stage: Stage,
    deviation: Option<Deviation>,
    share: Option<KeyShare>,
    joint: Option<JointPublicKey>,
    y_sigs: Vec<[u8; 64]>,
    swaps: Vec<bool>,
    own_stage: Option<(Vec<u8>, OwnStage)>,
    noise_pairs: Vec<[Ciphertext; 2]>,
    /// (payload, raw frame) per DP, at most two distinct payloads each.
    pool_blinds: BTreeMap<PartyId, Vec<(Vec<u8>, Vec<u8>)>>,
    pool_counters: BTreeMap<PartyId, Vec<(Vec<u8>, Vec<u8>)>>,
    blind_payloads: BTreeMap<PartyId, Vec<Ciphertext>>,
    counter_payloads: BTreeMap<PartyId, CounterPayload>,
    included: Vec<bool>,
    aggregate: Vec<Ciphertext>,
    my_summary: Vec<u8>,
    vector: Vec<Ciphertext>,
    gens: Vec<Element>,
    rng_keygen: ChaCha20Rng,
    rng_noise: ChaCha20Rng,
    rng_shuffle: ChaCha20Rng,
    rng_rrd: ChaCha20Rng,
    timings: PhaseTimings,
    done: Option<Outcome>,
}

impl CpSession {
    fn new(params: ProtocolParams, env: CpEnv, deviation: Option<Deviation>) -> CpSession {
        let me = PartyId::cp(env.index);
        let cps = params.rosters.cp_ids();
        let cp_peers = cps.iter().copied().filter(|p| *p != me).collect();
        let dps = params.rosters.dp_ids();
        let roster = Roster::new(params.rosters.all());
        let timeline = Timeline {
            m: params.m as u32,
        };
        let rng_keygen = substream(&env.session_seed, LABEL_KEYGEN, me);
        let rng_noise = substream(&env.session_seed, LABEL_NOISE_MISC, me);
        let rng_shuffle = substream(&env.session_seed, LABEL_SHUFFLE, me);
        let rng_rrd = substream(&env.session_seed, LABEL_RRD, me);
        CpSession {
            env,
            roster,
            timeline,
            me,
            cps,
            cp_peers,
            dps,
            state: CpState::new(me),
            stage: Stage::Idle { until: 1 },
            deviation,
            share: None,
            joint: None,
            y_sigs: Vec::new(),
            swaps: Vec::new(),
            own_stage: None,
            noise_pairs: Vec::new(),
            pool_blinds: BTreeMap::new(),
            pool_counters: BTreeMap::new(),
            blind_payloads: BTreeMap::new(),
            counter_payloads: BTreeMap::new(),
            included: vec![false; params.d],
            aggregate: Vec::new(),
            my_summary: Vec::new(),
            vector: Vec::new(),
            gens: Vec::new(),
            rng_keygen,
            rng_noise,
            rng_shuffle,
            rng_rrd,
            timings: PhaseTimings::default(),
            done: None,
            params,
        }
    }

    pub fn state(&self) -> &CpState {
        &self.state
    }

    fn deviating(&self, want: Deviation) -> bool {
        self.deviation == Some(want)
    }

    fn stage_context(&self, phase: PhaseTag, prover: PartyId, index: u32) -> Vec<u8> {
        FsContext {
            session: self.params.session,
            phase,
            prover,
            round: index,
        }
        .bytes()
    }

    pub fn step(&mut self, round: u32, inbox: Vec<Frame>) -> Step {
        let t0 = self.env.clock.map(|clock| clock());
        let phase0 = self.state.phase;
        let mut sends = Vec::new();
        if self.done.is_none() {
            for frame in inbox {
                match frame.msg_type {
                    MsgType::Chain => self.absorb_chain(frame, round, &mut sends),
                    MsgType::P2p => self.absorb_p2p(frame),
                    MsgType::Heartbeat => {}
                }
            }
            match self.stage {
                Stage::Ds(ref ds) if round == ds.start + self.timeline.ds_len() => {
                    self.finish_stage(round, &mut sends)
                }
                Stage::Idle { until } if round == until => self.leave_idle(round, &mut sends),
                _ => {}
            }
        }
        if let Some(Deviation::SilentFrom { phase }) = self.deviation {
            if self.state.phase >= phase {
                sends.clear();
            }
        }
        if let (Some(clock), Some(t0)) = (self.env.clock, t0) {
            self.timings.record(phase0, clock().saturating_sub(t0));
            if let Some(Outcome::Result(r)) = &mut self.done {
                r.timings = self.timings;
            }
        }
        Step {
            sends,
            outcome: self.done.clone(),
        }
    }

    fn absorb_chain(&mut self, frame: Frame, round: u32, sends: &mut Vec<(PartyId, Frame)>) {
        let Stage::Ds(ds) = &mut self.stage else {
            return;
        };
        if round <= ds.start {
            return;
        }
        let ds_round = round - ds.start;
        let Ok(msg) = chain_from_frame(&frame, &mut ds.store) else {
            return;
        };
        let Some(idx) = ds.broadcasters.iter().position(|b| *b == msg.sender) else {
            return;
        };
        if let Ok(Some(relay)) =
            ds.insts[idx].on_chain(&msg, ds_round, &self.roster, &self.env.signing)
        {
            let out = chain_to_frame(&relay, self.me, true);
            for peer in &self.cp_peers {
                sends.push((*peer, out.clone()));
            }
        }
    }

    /// Pool a DP submission frame. Signature must verify; beyond that the
    /// payload is stored as-is so it can serve as fallback evidence even
    /// when it later fails validation.
    fn absorb_p2p(&mut self, frame: Frame) {
        if frame.session != self.params.session || !frame.sender.is_dp() {
            return;
        }
        let Some((signer, sig)) = frame.sigs.first() else {
            return;
        };
        if *signer != frame.sender {
            return;
        }
        if verify_sig(
            &self.roster,
            *signer,
            &frame.session,
            frame.phase,
            frame.round,
            frame.sender,
            &frame.payload,
            sig,
        )
        .is_err()
        {
            return;
        }
        let pool = match frame.phase {
            PhaseTag::DataCollection => &mut self.pool_blinds,
            PhaseTag::InputSubmission => &mut self.pool_counters,
            _ => return,
        };
        let entry = pool.entry(frame.sender).or_default();
        if entry.len() >= 2 || entry.iter().any(|(p, _)| *p == frame.payload) {
            return;
        }
        let raw = frame.encode();
        entry.push((frame.payload, raw));
    }

    fn leave_idle(&mut self, round: u32, sends: &mut Vec<(PartyId, Frame)>) {
        if round == 1 {
            self.begin_keygen(round, sends);
        } else if round == self.timeline.noise_start() {
            self.begin_noise(round, sends);
        }
    }

    fn start_ds(
        &mut self,
        kind: StageKind,
        round: u32,
        broadcasters: Vec<PartyId>,
        my_content: Option<Vec<u8>>,
        sends: &mut Vec<(PartyId, Frame)>,
    ) {
        let phase = kind.phase();
        let label = kind.label();
        let t = self.timeline.m - 1;
        let mut insts = Vec::with_capacity(broadcasters.len());
        for b in &broadcasters {
            let mut inst = DsInstance::new(
                self.params.session,
                phase,
                round,
                label,
                *b,
                self.me,
                t,
            );
            if *b == self.me {
                let content = my_content.as_deref().expect("broadcaster content");
                let msg = inst.start(content, &self.env.signing);
                let alt: Option<SignedMessage> =
                    if self.deviating(Deviation::Equivocate { phase }) {
                        let mut other = content.to_vec();
                        other.push(0);
                        Some(make_chain(
                            self.params.session,
                            phase,
                            round,
                            label,
                            &other,
                            self.me,
                            &self.env.signing,
                        ))
                    } else {
                        None
                    };
                for (k, peer) in self.cp_peers.iter().enumerate() {
                    let chain = match &alt {
                        Some(b_chain) if k % 2 == 1 => b_chain,
                        _ => &msg,
                    };
                    sends.push((*peer, chain_to_frame(chain, self.me, true)));
                }
            }
            insts.push(inst);
        }
        self.stage = Stage::Ds(DsStage {
            kind,
            start: round,
            broadcasters,
            insts,
            store: PayloadStore::new(),
        });
    }

    fn finish_stage(&mut self, round: u32, sends: &mut Vec<(PartyId, Frame)>) {
        let Stage::Ds(ds) = core::mem::replace(&mut self.stage, Stage::Finished) else {
            return;
        };
        let mut blames: BTreeMap<PartyId, Evidence> = BTreeMap::new();
        let mut contents: Vec<Vec<u8>> = Vec::with_capacity(ds.insts.len());
        for (i, inst) in ds.insts.iter().enumerate() {
            let outcome = inst.decide();
            match &outcome {
                BroadcastOutcome::Blame(b) => {
                    let ev = if inst.accepted_count() >= 2 {
                        Evidence::Equivocation
                    } else {
                        Evidence::MissingMessage
                    };
                    blames.insert(*b, ev);
                    contents.push(Vec::new());
                }
                BroadcastOutcome::Delivered(_) => match outcome.delivered_content() {
                    Some(c) => contents.push(c.to_vec()),
                    None => {
                        blames.insert(ds.broadcasters[i], Evidence::InvalidProof);
                        contents.push(Vec::new());
                    }
                },
            }
        }
        if !blames.is_empty() {
            return self.fail(ds.kind.phase(), blames, round, sends);
        }
        match ds.kind {
            StageKind::KeyShare => self.on_key_shares(contents, round, sends),
            StageKind::KeySig => self.on_key_sigs(contents, round, sends),
            StageKind::Noise(j) => self.on_noise(j, contents.swap_remove(0), round, sends),
            StageKind::Aggregate => self.on_aggregate(contents, round, sends),
            StageKind::Fallback => self.on_fallback(contents, round, sends),
            StageKind::Shuffle(j) => self.on_shuffle(j, contents.swap_remove(0), round, sends),
            StageKind::Rrd(j) => self.on_rrd(j, contents.swap_remove(0), round, sends),
        }
    }

    /// Terminal blame. When one stage convicts several parties, the
    /// highest-precedence evidence wins and the report names exactly the
    /// parties convicted at that precedence, so every honest CP emits the
    /// identical report.
    fn fail(
        &mut self,
        phase: PhaseTag,
        blames: BTreeMap<PartyId, Evidence>,
        round: u32,
        sends: &mut Vec<(PartyId, Frame)>,
    ) {
        let evidence = *blames.values().min().expect("at least one conviction");
        let accused: BTreeSet<PartyId> = blames
            .iter()
            .filter(|(_, e)| **e == evidence)
            .map(|(p, _)| *p)
            .collect();
        let outcome = Outcome::Blame(BlameReport {
            phase,
            accused,
            evidence,
        });
        self.send_outcome(&outcome, round, sends);
        self.done = Some(outcome);
        self.stage = Stage::Finished;
    }

    fn send_outcome(&self, outcome: &Outcome, round: u32, sends: &mut Vec<(PartyId, Frame)>) {
        let payload = outcome.encode();
        for dp in &self.dps {
            sends.push((
                *dp,
                p2p_frame(
                    &self.env.signing,
                    self.params.session,
                    PhaseTag::Output,
                    round,
                    self.me,
                    payload.clone(),
                ),
            ));
        }
    }

    fn begin_keygen(&mut self, round: u32, sends: &mut Vec<(PartyId, Frame)>) {
        let share = KeyShare::generate(self.env.index, &mut self.rng_keygen);
        let ctx = self.stage_context(PhaseTag::KeyGen, self.me, 0);
        let mut content = encode_key_share(&share, &ctx, &mut self.rng_keygen);
        if self.deviating(Deviation::TamperProof {
            phase: PhaseTag::KeyGen,
        }) {
            *content.last_mut().expect("nonempty") ^= 1;
        }
        self.share = Some(share);
        self.start_ds(StageKind::KeyShare, round, self.cps.clone(), Some(content), sends);
    }

    fn on_key_shares(
        &mut self,
        contents: Vec<Vec<u8>>,
        round: u32,
        sends: &mut Vec<(PartyId, Frame)>,
    ) {
        let mut blames = BTreeMap::new();
        let mut shares = Vec::with_capacity(contents.len());
        for (i, content) in contents.iter().enumerate() {
            let b = self.cps[i];
            let ctx = self.stage_context(PhaseTag::KeyGen, b, 0);
            match decode_key_share(content, &ctx) {
                Some(y) => shares.push(y),
                None => {
                    blames.insert(b, Evidence::InvalidProof);
                }
            }
        }
        if !blames.is_empty() {
            return self.fail(PhaseTag::KeyGen, blames, round, sends);
        }
        let joint = JointPublicKey::from_shares(shares);
        self.state.share = self.share.clone();
        self.state.joint = Some(joint.clone());
        let mut y = joint.key;
        if self.deviating(Deviation::BadKeySignature) {
            y = y + Element::base_exp(&crate::group::Scalar::from_u64(1));
        }
        let sig = sign_session_key(&self.env.signing, &self.params.session, self.env.index, &y);
        self.joint = Some(joint);
        self.start_ds(
            StageKind::KeySig,
            round,
            self.cps.clone(),
            Some(sig.to_vec()),
            sends,
        );
    }

    fn on_key_sigs(
        &mut self,
        contents: Vec<Vec<u8>>,
        round: u32,
        sends: &mut Vec<(PartyId, Frame)>,
    ) {
        let y = self.joint.as_ref().expect("joint key set").key;
        let mut blames = BTreeMap::new();
        let mut sigs: Vec<[u8; 64]> = Vec::with_capacity(contents.len());
        for (i, content) in contents.iter().enumerate() {
            let pk = &self.params.rosters.cps[i].1;
            let mut sig = [0u8; 64];
            let ok = content.len() == 64 && {
                sig.copy_from_slice(content);
                verify_session_key(pk, &self.params.session, i as u16, &y, &sig)
            };
            if ok {
                sigs.push(sig);
            } else {
                blames.insert(self.cps[i], Evidence::BadKeySignature);
            }
        }
        if !blames.is_empty() {
            return self.fail(PhaseTag::KeyGen, blames, round, sends);
        }
        self.y_sigs = sigs;
        let bundle = encode_key_bundle(&y, &self.y_sigs);
        for dp in &self.dps {
            sends.push((
                *dp,
                p2p_frame(
                    &self.env.signing,
                    self.params.session,
                    PhaseTag::KeyGen,
                    round,
                    self.me,
                    bundle.clone(),
                ),
            ));
        }
        self.state.advance_to(PhaseTag::DataCollection);
        self.stage = Stage::Idle {
            until: self.timeline.noise_start(),
        };
    }

    fn begin_noise(&mut self, round: u32, sends: &mut Vec<(PartyId, Frame)>) {
        self.state.advance_to(PhaseTag::NoiseGeneration);
        // A DP that equivocated its blinds (two pooled payloads) or sent
        // garbage is dropped here; missing counters drop it later.
        for (dp, entries) in &self.pool_blinds {
            if entries.len() != 1 {
                continue;
            }
            if let Some(cts) = validate_blinds_payload(
                &entries[0].0,
                self.params.b,
                &self.params.session,
                *dp,
            ) {
                self.blind_payloads.insert(*dp, cts);
            }
        }
        let joint = self.joint.as_ref().expect("joint key set");
        let mut swap_rng = substream(&self.env.session_seed, LABEL_NOISE_SWAP, self.me);
        self.swaps = swap_bits(&mut swap_rng, self.params.n);
        self.noise_pairs = initial_noise_pairs(joint, self.params.n);
        self.start_noise(0, round, sends);
    }

    fn start_noise(&mut self, j: usize, round: u32, sends: &mut Vec<(PartyId, Frame)>) {
        let broadcaster = self.cps[j];
        let content = if broadcaster == self.me {
            let joint = self.joint.as_ref().expect("joint key set");
            let ctx = self.stage_context(PhaseTag::NoiseGeneration, self.me, j as u32);
            let step = noise_step(
                &joint.key,
                &self.noise_pairs,
                &self.swaps,
                &ctx,
                &mut self.rng_noise,
            );
            let mut digest = super::cp::pairs_digest(&self.noise_pairs);
            if self.deviating(Deviation::WrongStatement {
                phase: PhaseTag::NoiseGeneration,
            }) {
                digest[0] ^= 1;
            }
            let mut content = encode_noise_step(&digest, &step);
            if self.deviating(Deviation::TamperProof {
                phase: PhaseTag::NoiseGeneration,
            }) {
                *content.last_mut().expect("nonempty") ^= 1;
            }
            if self.deviation.is_none() {
                self.own_stage = Some((content.clone(), OwnStage::Noise(step.pairs)));
            }
            Some(content)
        } else {
            None
        };
        self.start_ds(StageKind::Noise(j), round, vec![broadcaster], content, sends);
    }

    fn on_noise(
        &mut self,
        j: usize,
        content: Vec<u8>,
        round: u32,
        sends: &mut Vec<(PartyId, Frame)>,
    ) {
        let broadcaster = self.cps[j];
        let cached = match self.own_stage.take() {
            Some((sent, OwnStage::Noise(pairs))) if broadcaster == self.me && sent == content => {
                Some(pairs)
            }
            _ => None,
        };
        match cached {
            Some(pairs) => self.noise_pairs = pairs,
            None => {
                let joint = self.joint.as_ref().expect("joint key set");
                let ctx = self.stage_context(PhaseTag::NoiseGeneration, broadcaster, j as u32);
                match verify_noise_step(&joint.key, &self.noise_pairs, &content, &ctx) {
                    Ok(pairs) => self.noise_pairs = pairs,
                    Err(ev) => {
                        let mut blames = BTreeMap::new();
                        blames.insert(broadcaster, ev);
                        return self.fail(PhaseTag::NoiseGeneration, blames, round, sends);
                    }
                }
            }
        }
        if j + 1 < self.params.m {
            return self.start_noise(j + 1, round, sends);
        }
        self.begin_input_submission(round, sends);
    }

    fn begin_input_submission(&mut self, round: u32, sends: &mut Vec<(PartyId, Frame)>) {
        self.state.advance_to(PhaseTag::InputSubmission);
        for (dp, entries) in &self.pool_counters {
            if entries.len() != 1 {
                continue;
            }
            if let Some(payload) = validate_counters_payload(
                &entries[0].0,
                self.params.b,
                self.params.mode,
                &self.params.session,
                *dp,
            ) {
                self.counter_payloads.insert(*dp, payload);
            }
        }
        let mut inputs = Vec::new();
        for (t, (dp, _)) in self.params.rosters.dps.iter().enumerate() {
            if let (Some(blinds), Some(counters)) = (
                self.blind_payloads.get(dp),
                self.counter_payloads.get(dp),
            ) {
                self.included[t] = true;
                inputs.push((blinds.clone(), counters.clone()));
            }
        }
        let joint = self.joint.as_ref().expect("joint key set");
        self.aggregate = aggregate_inputs(joint, self.params.b, &inputs);
        self.my_summary = encode_aggregate_summary(&self.included, &self.aggregate);
        self.start_ds(
            StageKind::Aggregate,
            round,
            self.cps.clone(),
            Some(self.my_summary.clone()),
            sends,
        );
    }

    fn on_aggregate(
        &mut self,
        contents: Vec<Vec<u8>>,
        round: u32,
        sends: &mut Vec<(PartyId, Frame)>,
    ) {
        if contents.iter().all(|c| *c == self.my_summary) {
            return self.begin_shuffling(round, sends);
        }
        // No agreement on the aggregate: broadcast the raw per-DP frames
        // and recompute from the union of everyone's evidence. Disagreement
        // alone blames nobody; a lying summary can only force this slower
        // path.
        let evidence: Vec<DpEvidence> = self
            .params
            .rosters
            .dps
            .iter()
            .map(|(dp, _)| DpEvidence {
                blinds: self
                    .pool_blinds
                    .get(dp)
                    .map(|v| v.iter().map(|(_, raw)| raw.clone()).collect())
                    .unwrap_or_default(),
                counters: self
                    .pool_counters
                    .get(dp)
                    .map(|v| v.iter().map(|(_, raw)| raw.clone()).collect())
                    .unwrap_or_default(),
            })
            .collect();
        let content = encode_fallback(&evidence);
        self.start_ds(
            StageKind::Fallback,
            round,
            self.cps.clone(),
            Some(content),
            sends,
        );
    }

    fn on_fallback(
        &mut self,
        contents: Vec<Vec<u8>>,
        round: u32,
        sends: &mut Vec<(PartyId, Frame)>,
    ) {
        let d = self.params.d;
        let evidence_per_cp: Vec<Vec<DpEvidence>> = contents
            .iter()
            .map(|c| {
                super::cp::decode_fallback(c, d)
                    .unwrap_or_else(|| vec![DpEvidence::default(); d])
            })
            .collect();
        let (included, inputs) = resolve_dp_inputs(&evidence_per_cp, &self.params, &self.roster);
        self.included = included;
        let joint = self.joint.as_ref().expect("joint key set");
        self.aggregate = aggregate_inputs(joint, self.params.b, &inputs);
        self.begin_shuffling(round, sends);
    }

    fn begin_shuffling(&mut self, round: u32, sends: &mut Vec<(PartyId, Frame)>) {
        for (t, (dp, _)) in self.params.rosters.dps.iter().enumerate() {
            if !self.included[t] {
                self.state.excluded.insert(*dp);
            }
        }
        self.state.advance_to(PhaseTag::Shuffling);
        self.vector = noise_vector(&self.noise_pairs);
        self.vector.extend_from_slice(&self.aggregate);
        let mut gen_seed = Vec::with_capacity(16 + 16);
        gen_seed.extend_from_slice(b"psc.shuffle-gens");
        gen_seed.extend_from_slice(&self.params.session);
        self.gens = derive_generators(self.vector.len(), &gen_seed);
        self.start_shuffle(0, round, sends);
    }

    fn start_shuffle(&mut self, j: usize, round: u32, sends: &mut Vec<(PartyId, Frame)>) {
        let broadcaster = self.cps[j];
        let content = if broadcaster == self.me {
            let joint = self.joint.as_ref().expect("joint key set");
            let ctx = self.stage_context(PhaseTag::Shuffling, self.me, j as u32);
            let step = shuffle_step(
                &joint.key,
                &self.vector,
                &self.gens,
                &ctx,
                &mut self.rng_shuffle,
            )
            .expect("nonempty vector");
            let mut digest = vector_digest(&self.vector);
            if self.deviating(Deviation::WrongStatement {
                phase: PhaseTag::Shuffling,
            }) {
                digest[0] ^= 1;
            }
            let mut content = encode_shuffle_step(&digest, &step);
            if self.deviating(Deviation::TamperProof {
                phase: PhaseTag::Shuffling,
            }) {
                *content.last_mut().expect("nonempty") ^= 1;
            }
            if self.deviation.is_none() {
                self.own_stage = Some((content.clone(), OwnStage::Vector(step.outputs)));
            }
            Some(content)
        } else {
            None
        };
        self.start_ds(StageKind::Shuffle(j), round, vec![broadcaster], content, sends);
    }

    fn on_shuffle(
        &mut self,
        j: usize,
        content: Vec<u8>,
        round: u32,
        sends: &mut Vec<(PartyId, Frame)>,
    ) {
        let broadcaster = self.cps[j];
        let cached = match self.own_stage.take() {
            Some((sent, OwnStage::Vector(outputs)))
                if broadcaster == self.me && sent == content =>
            {
                Some(outputs)
            }
            _ => None,
        };
        match cached {
            Some(outputs) => self.vector = outputs,
            None => {
                let joint = self.joint.as_ref().expect("joint key set");
                let ctx = self.stage_context(PhaseTag::Shuffling, broadcaster, j as u32);
                match verify_shuffle_step(&joint.key, &self.vector, &self.gens, &content, &ctx) {
                    Ok(outputs) => self.vector = outputs,
                    Err(ev) => {
                        let mut blames = BTreeMap::new();
                        blames.insert(broadcaster, ev);
                        return self.fail(PhaseTag::Shuffling, blames, round, sends);
                    }
                }
            }
        }
        if j + 1 < self.params.m {
            return self.start_shuffle(j + 1, round, sends);
        }
        self.state.advance_to(PhaseTag::Rrd);
        self.start_rrd(0, round, sends);
    }

    fn start_rrd(&mut self, j: usize, round: u32, sends: &mut Vec<(PartyId, Frame)>) {
        let broadcaster = self.cps[j];
        let content = if broadcaster == self.me {
            let joint = self.joint.as_ref().expect("joint key set");
            let share = self.share.as_ref().expect("own share set");
            let ctx = self.stage_context(PhaseTag::Rrd, self.me, j as u32);
            let mut stage = rrd_stage_step(&self.vector, joint, share, j, &ctx, &mut self.rng_rrd);
            if self.deviating(Deviation::IdentityFirst) {
                stage.outputs[0].a = Element::identity();
            }
            let share_key = if self.deviating(Deviation::WrongStatement {
                phase: PhaseTag::Rrd,
            }) {
                joint.shares[(j + 1) % self.params.m]
            } else {
                share.public
            };
            let mut content = encode_rrd_stage(&vector_digest(&self.vector), &share_key, &stage);
            if self.deviating(Deviation::TamperProof {
                phase: PhaseTag::Rrd,
            }) {
                *content.last_mut().expect("nonempty") ^= 1;
            }
            if self.deviation.is_none() {
                self.own_stage = Some((content.clone(), OwnStage::Vector(stage.outputs)));
            }
            Some(content)
        } else {
            None
        };
        self.start_ds(StageKind::Rrd(j), round, vec![broadcaster], content, sends);
    }

    fn on_rrd(
        &mut self,
        j: usize,
        content: Vec<u8>,
        round: u32,
        sends: &mut Vec<(PartyId, Frame)>,
    ) {
        let broadcaster = self.cps[j];
        let cached = match self.own_stage.take() {
            Some((sent, OwnStage::Vector(outputs)))
                if broadcaster == self.me && sent == content =>
            {
                Some(outputs)
            }
            _ => None,
        };
        match cached {
            Some(outputs) => self.vector = outputs,
            None => {
                let joint = self.joint.as_ref().expect("joint key set");
                let ctx = self.stage_context(PhaseTag::Rrd, broadcaster, j as u32);
                match verify_rrd_stage(&self.vector, joint, j, &content, &ctx) {
                    Ok(outputs) => self.vector = outputs,
                    Err(ev) => {
                        let mut blames = BTreeMap::new();
                        blames.insert(broadcaster, ev);
                        return self.fail(PhaseTag::Rrd, blames, round, sends);
                    }
                }
            }
        }
        if j + 1 < self.params.m {
            return self.start_rrd(j + 1, round, sends);
        }
        self.state.advance_to(PhaseTag::Output);
        let mut result = measure(&self.vector, self.params.n, self.params.mode);
        result.timings = self.timings;
        let outcome = Outcome::Result(result);
        self.send_outcome(&outcome, round, sends);
        self.done = Some(outcome);
        self.stage = Stage::Finished;
    }
}

/// One data provider's session.
pub struct DpSession {
    env: DpEnv,
    params: ProtocolParams,
    roster: Roster,
    timeline: Timeline,
    me: PartyId,
    cps: Vec<PartyId>,
    deviation: Option<DpDeviation>,
    state: Option<DpState>,
    bundles: BTreeMap<PartyId, Vec<u8>>,
    outcomes: BTreeMap<PartyId, Outcome>,
    /// Key-distribution failure, held until the outcome deadline in case
    /// the CPs' own outcome frames explain the failure more precisely.
    pending_blame: Option<BlameReport>,
    done: Option<Outcome>,
}

impl DpSession {
    fn new(params: ProtocolParams, env: DpEnv, deviation: Option<DpDeviation>) -> DpSession {
        let me = PartyId::dp(env.index);
        let roster = Roster::new(params.rosters.all());
        let timeline = Timeline {
            m: params.m as u32,
        };
        DpSession {
            env,
            roster,
            timeline,
            me,
            cps: params.rosters.cp_ids(),
            deviation,
            state: None,
            bundles: BTreeMap::new(),
            outcomes: BTreeMap::new(),
            pending_blame: None,
            done: None,
            params,
        }
    }

    pub fn state(&self) -> Option<&DpState> {
        self.state.as_ref()
    }

    pub fn step(&mut self, round: u32, inbox: Vec<Frame>) -> Step {
        let mut sends = Vec::new();
        if self.done.is_none() {
            for frame in inbox {
                self.absorb(frame);
            }
            self.try_adopt(false);
        }
        if self.done.is_none() {
            if round == self.timeline.dp_key_step() {
                self.on_key_round(round, &mut sends);
            } else if round == self.timeline.dp_counters_step() {
                self.on_counters_round(round, &mut sends);
            } else if round >= self.timeline.deadline() {
                self.resolve_deadline();
            }
        }
        if matches!(self.deviation, Some(DpDeviation::Silent)) {
            sends.clear();
        }
        Step {
            sends,
            outcome: self.done.clone(),
        }
    }

    fn absorb(&mut self, frame: Frame) {
        if frame.msg_type != MsgType::P2p
            || frame.session != self.params.session
            || !frame.sender.is_cp()
        {
            return;
        }
        let Some((signer, sig)) = frame.sigs.first() else {
            return;
        };
        if *signer != frame.sender {
            return;
        }
        if verify_sig(
            &self.roster,
            *signer,
            &frame.session,
            frame.phase,
            frame.round,
            frame.sender,
            &frame.payload,
            sig,
        )
        .is_err()
        {
            return;
        }
        match frame.phase {
            PhaseTag::KeyGen => {
                self.bundles.entry(frame.sender).or_insert(frame.payload);
            }
            PhaseTag::Output => {
                if let Some(outcome) = Outcome::decode(&frame.payload) {
                    self.outcomes.entry(frame.sender).or_insert(outcome);
                }
            }
            _ => {}
        }
    }

    /// Adopt the CPs' outcome when they all agree. Before the deadline
    /// that requires all m; at the deadline any unanimous nonempty set
    /// wins, disagreement or total silence becomes blame.
    fn try_adopt(&mut self, at_deadline: bool) {
        let Some(first) = self.outcomes.values().next() else {
            if at_deadline {
                self.done = Some(Outcome::Blame(
                    self.pending_blame.take().unwrap_or(BlameReport {
                        phase: PhaseTag::Output,
                        accused: self.cps.iter().copied().collect(),
                        evidence: Evidence::MissingMessage,
                    }),
                ));
            }
            return;
        };
        if self.outcomes.values().all(|o| o == first) {
            if self.outcomes.len() == self.params.m || at_deadline {
                self.done = Some(first.clone());
            }
        } else if at_deadline {
            self.done = Some(Outcome::Blame(BlameReport {
                phase: PhaseTag::Output,
                accused: BTreeSet::new(),
                evidence: Evidence::Equivocation,
            }));
        }
    }

    fn resolve_deadline(&mut self) {
        self.try_adopt(true);
    }

    fn on_key_round(&mut self, round: u32, sends: &mut Vec<(PartyId, Frame)>) {
        match decide_key(&self.bundles, &self.params.session, &self.params.rosters.cps) {
            Err(report) => {
                // Halt: no blinds ever leave this party. The verdict waits
                // for the deadline; if the CPs' own outcomes arrive and
                // agree they carry more precise evidence.
                self.pending_blame = Some(report);
            }
            Ok(key) => {
                let mut rng = substream(&self.env.session_seed, LABEL_BLINDS, self.me);
                let init = dp_init(
                    self.params.session,
                    self.me,
                    self.params.mode,
                    self.params.b,
                    key,
                    &mut rng,
                );
                self.state = Some(init.state);
                let mut payload = encode_blinds(&init.blinds);
                if matches!(self.deviation, Some(DpDeviation::BadBlindProof)) {
                    *payload.last_mut().expect("nonempty") ^= 1;
                }
                for cp in &self.cps {
                    sends.push((
                        *cp,
                        p2p_frame(
                            &self.env.signing,
                            self.params.session,
                            PhaseTag::DataCollection,
                            round,
                            self.me,
                            payload.clone(),
                        ),
                    ));
                }
            }
        }
    }

    fn on_counters_round(&mut self, round: u32, sends: &mut Vec<(PartyId, Frame)>) {
        let Some(state) = &mut self.state else {
            return;
        };
        let mut rng = substream(&self.env.session_seed, LABEL_OBSERVE, self.me);
        for &bin in &self.env.observations {
            let _ = dp_observe(state, bin, &mut rng);
        }
        state.advance_to(PhaseTag::InputSubmission);
        let mut payload = encode_counters(state);
        let entry_len = match self.params.mode {
            Mode::Union => 32,
            Mode::Intersection => 64 + 97,
        };
        let mut alt = None;
        match self.deviation {
            Some(DpDeviation::ShortVector) => {
                payload.truncate(payload.len() - entry_len);
            }
            Some(DpDeviation::BadSubmissionProof) => {
                *payload.last_mut().expect("nonempty") ^= 1;
            }
            Some(DpDeviation::Equivocate) => {
                let mut other = payload.clone();
                if other.len() >= 2 * entry_len {
                    // Swap the first two bin entries; both payloads stay
                    // structurally valid yet differ.
                    let (a, rest) = other.split_at_mut(entry_len);
                    a.swap_with_slice(&mut rest[..entry_len]);
                } else {
                    *other.last_mut().expect("nonempty") ^= 1;
                }
                alt = Some(other);
            }
            _ => {}
        }
        for (k, cp) in self.cps.iter().enumerate() {
            let body = match &alt {
                Some(other) if k > 0 => other.clone(),
                _ => payload.clone(),
            };
            sends.push((
                *cp,
                p2p_frame(
                    &self.env.signing,
                    self.params.session,
                    PhaseTag::InputSubmission,
                    round,
                    self.me,
                    body,
                ),
            ));
        }
    }
}

/// A party's session behind one uniform `step` interface.
pub enum SessionHandle {
    Cp(Box<CpSession>),
    Dp(Box<DpSession>),
}

impl SessionHandle {
    pub fn new(params: &ProtocolParams, env: RoleEnv) -> Result<SessionHandle, EngineError> {
        SessionHandle::with_plan(params, env, &AdversaryPlan::default())
    }

    /// Like `new` but with scripted deviations, for accountability tests.
    pub fn with_plan(
        params: &ProtocolParams,
        env: RoleEnv,
        plan: &AdversaryPlan,
    ) -> Result<SessionHandle, EngineError> {
        params.validate()?;
        match env {
            RoleEnv::Cp(env) => {
                if (env.index as usize) >= params.m {
                    return Err(ParamsError::InvalidParams("cp index out of roster").into());
                }
                let dev = plan.cps.get(&PartyId::cp(env.index)).copied();
                Ok(SessionHandle::Cp(Box::new(CpSession::new(
                    params.clone(),
                    env,
                    dev,
                ))))
            }
            RoleEnv::Dp(env) => {
                if (env.index as usize) >= params.d {
                    return Err(ParamsError::InvalidParams("dp index out of roster").into());
                }
                if env.observations.iter().any(|&bin| bin >= params.b) {
                    return Err(ParamsError::InvalidParams("observation bin out of range").into());
                }
                let dev = plan.dps.get(&PartyId::dp(env.index)).copied();
                Ok(SessionHandle::Dp(Box::new(DpSession::new(
                    params.clone(),
                    env,
                    dev,
                ))))
            }
        }
    }

    pub fn party(&self) -> PartyId {
        match self {
            SessionHandle::Cp(s) => s.me,
            SessionHandle::Dp(s) => s.me,
        }
    }

    pub fn step(&mut self, round: u32, inbox: Vec<Frame>) -> Step {
        match self {
            SessionHandle::Cp(s) => s.step(round, inbox),
            SessionHandle::Dp(s) => s.step(round, inbox),
        }
    }
}

/// Drive one party's session over a transport until it reaches an outcome.
pub fn run_session(
    params: &ProtocolParams,
    env: RoleEnv,
    links: &mut impl RoundLinks,
) -> Result<Outcome, EngineError> {
    let mut handle = SessionHandle::new(params, env)?;
    let cap = outcome_deadline(params.m) + 5;
    let mut inbox = Vec::new();
    for round in 1..=cap {
        let step = handle.step(round, inbox);
        for (to, frame) in step.sends {
            links.send(to, frame);
        }
        if let Some(outcome) = step.outcome {
            return Ok(outcome);
        }
        inbox = links.next_round();
    }
    Err(EngineError::Stalled)
}

/// Everything needed to run all parties of one session locally.
#[derive(Clone)]
pub struct SessionConfig {
    pub params: ProtocolParams,
    pub cps: Vec<CpEnv>,
    pub dps: Vec<DpEnv>,
}

/// Deterministic session setup from one seed: long-term keys, rosters,
/// session id, and per-party environments all derive from it.
#[allow(clippy::too_many_arguments)]
pub fn seeded_config(
    seed: &[u8; 32],
    m: usize,
    d: usize,
    b: usize,
    n: Option<usize>,
    epsilon: f64,
    delta: f64,
    mode: Mode,
    observations: &[Vec<usize>],
) -> Result<SessionConfig, ParamsError> {
    if observations.len() != d {
        return Err(ParamsError::InvalidParams("one observation set per DP"));
    }
    let n = match n {
        Some(n) => n,
        None => noise_size(epsilon, delta)?,
    };
    let mut session = [0u8; 16];
    session.copy_from_slice(&hash_bytes(b"psc.session-id", &[seed])[..16]);

    let mut cps = Vec::with_capacity(m);
    let mut cp_roster = Vec::with_capacity(m);
    for j in 0..m as u16 {
        let secret = hash_to_scalar(b"psc.roster-seed", &[seed, &[0], &j.to_be_bytes()]);
        let signing = SigningKey::from_secret(secret);
        cp_roster.push((PartyId::cp(j), signing.public));
        cps.push(CpEnv {
            index: j,
            signing,
            session_seed: *seed,
            clock: None,
        });
    }
    let mut dps = Vec::with_capacity(d);
    let mut dp_roster = Vec::with_capacity(d);
    for (t, obs) in observations.iter().enumerate() {
        let t = t as u16;
        let secret = hash_to_scalar(b"psc.roster-seed", &[seed, &[1], &t.to_be_bytes()]);
        let signing = SigningKey::from_secret(secret);
        dp_roster.push((PartyId::dp(t), signing.public));
        dps.push(DpEnv {
            index: t,
            signing,
            session_seed: *seed,
            observations: obs.clone(),
            clock: None,
        });
    }
    let params = ProtocolParams {
        b,
        m,
        d,
        epsilon,
        delta,
        n,
        mode,
        session,
        rosters: Rosters {
            cps: cp_roster,
            dps: dp_roster,
        },
    };
    params.validate()?;
    Ok(SessionConfig { params, cps, dps })
}

/// Outcome of a simulated session: every party's terminal outcome in
/// roster order (CPs then DPs), the rounds consumed, and the network
/// transcript hash for replay comparisons.
#[derive(Debug, Clone)]
pub struct SimReport {
    pub outcomes: Vec<(PartyId, Outcome)>,
    pub rounds: u32,
    pub transcript: [u8; 32],
}

impl SimReport {
    pub fn outcome_of(&self, party: PartyId) -> Option<&Outcome> {
        self.outcomes
            .iter()
            .find(|(p, _)| *p == party)
            .map(|(_, o)| o)
    }
}

/// Run every party of one session in lockstep over the in-process network.
pub fn simulate(
    config: &SessionConfig,
    plan: &AdversaryPlan,
    faults: FaultPlan,
) -> Result<SimReport, EngineError> {
    let mut handles = Vec::with_capacity(config.cps.len() + config.dps.len());
    for env in &config.cps {
        handles.push(SessionHandle::with_plan(
            &config.params,
            RoleEnv::Cp(env.clone()),
            plan,
        )?);
    }
    for env in &config.dps {
        handles.push(SessionHandle::with_plan(
            &config.params,
            RoleEnv::Dp(env.clone()),
            plan,
        )?);
    }
    let mut net = SimNet::new(faults);
    let cap = outcome_deadline(config.params.m) + 5;
    let mut outcomes: Vec<Option<Outcome>> = vec![None; handles.len()];
    for round in 1..=cap {
        for (i, handle) in handles.iter_mut().enumerate() {
            if outcomes[i].is_some() {
                continue;
            }
            let inbox = net
                .sim_collect(handle.party(), round)
                .map_err(|_| EngineError::Stalled)?;
            let step = handle.step(round, inbox);
            for (to, frame) in step.sends {
                net.sim_send(handle.party(), to, round, frame)
                    .map_err(|_| EngineError::Stalled)?;
            }
            outcomes[i] = step.outcome;
        }
        if outcomes.iter().all(|o| o.is_some()) {
            return Ok(SimReport {
                outcomes: handles
                    .iter()
                    .zip(outcomes)
                    .map(|(h, o)| (h.party(), o.expect("all set")))
                    .collect(),
                rounds: round,
                transcript: net.transcript_hash(),
            });
        }
        net.advance_round();
    }
    Err(EngineError::Stalled)
}
