//! In-process synchronous network simulator with fault injection.
//!
//! Frames sent in round k are delivered at the start of round k+1. Delivery
//! order into a mailbox is per-sender send order, senders sorted by id, so a
//! replay with the same seed and fault plan yields a byte-identical
//! transcript. The socket transport in the companion crate mirrors these
//! ordering rules, sharing `TransportError`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::group::hash_bytes;
use crate::wire::{Frame, PartyId};

/// Channel-layer failures across both transports. The simulator only raises
/// `RoundClosed`; the rest belong to the socket realization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Send or collect referenced a round the barrier has moved past.
    RoundClosed,
    ConnectFailed,
    /// recv deadline elapsed before a full frame arrived.
    Deadline,
    /// Frame length prefix exceeds the 64 MiB cap; raised before allocation.
    FrameTooLarge,
    /// Peer failed mutual authentication against the roster key.
    AuthFailed,
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportError::RoundClosed => f.write_str("round already closed"),
            TransportError::ConnectFailed => f.write_str("connect failed"),
            TransportError::Deadline => f.write_str("receive deadline elapsed"),
            TransportError::FrameTooLarge => f.write_str("frame exceeds size cap"),
            TransportError::AuthFailed => f.write_str("peer authentication failed"),
        }
    }
}

impl core::error::Error for TransportError {}

/// What the network does to one sender's outbound frames in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultAction {
    Deliver,
    /// Silently discard every frame.
    Drop,
    /// Deliver normally, plus an extra copy to each listed party.
    DuplicateTo(Vec<PartyId>),
    /// Swap the frame payload for the given bytes; signatures then fail
    /// downstream and the receiver treats the message as absent.
    ReplacePayload(Vec<u8>),
}

/// Fault rules keyed by (sender, sending round); unlisted pairs deliver.
#[derive(Debug, Clone, Default)]
pub struct FaultPlan {
    rules: Vec<(PartyId, u32, FaultAction)>,
}

impl FaultPlan {
    pub fn new() -> FaultPlan {
        FaultPlan::default()
    }

    pub fn rule(mut self, sender: PartyId, round: u32, action: FaultAction) -> FaultPlan {
        self.rules.push((sender, round, action));
        self
    }

    pub fn action_for(&self, sender: PartyId, round: u32) -> &FaultAction {
        self.rules
            .iter()
            .find(|(p, r, _)| *p == sender && *r == round)
            .map(|(_, _, a)| a)
            .unwrap_or(&FaultAction::Deliver)
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Deterministic synchronous network. Rounds are 1-based; round k's sends
/// become round k+1's mailboxes when the barrier advances.
pub struct SimNet {
    round: u32,
    /// (from, per-sender seq, to, frame) sent during the open round.
    outbound: Vec<(PartyId, u32, PartyId, Frame)>,
    seq: BTreeMap<PartyId, u32>,
    inboxes: BTreeMap<PartyId, Vec<Frame>>,
    plan: FaultPlan,
    transcript: [u8; 32],
    delivered: u64,
}

impl SimNet {
    pub fn new(plan: FaultPlan) -> SimNet {
        SimNet {
            round: 1,
            outbound: Vec::new(),
            seq: BTreeMap::new(),
            inboxes: BTreeMap::new(),
            plan,
            transcript: [0u8; 32],
            delivered: 0,
        }
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    /// Queue a frame for next-round delivery. `round` must be the open round.
    pub fn sim_send(
        &mut self,
        from: PartyId,
        to: PartyId,
        round: u32,
        frame: Frame,
    ) -> Result<(), TransportError> {
        if round != self.round {
            return Err(TransportError::RoundClosed);
        }
        let seq = self.seq.entry(from).or_insert(0);
        *seq += 1;
        self.outbound.push((from, *seq, to, frame));
        Ok(())
    }

    /// Mailbox for the open round (frames sent in the previous round).
    pub fn sim_collect(&mut self, party: PartyId, round: u32) -> Result<Vec<Frame>, TransportError> {
        if round != self.round {
            return Err(TransportError::RoundClosed);
        }
        Ok(self.inboxes.remove(&party).unwrap_or_default())
    }

    /// Close the open round: apply the fault plan, fill next-round mailboxes,
    /// fold deliveries into the transcript hash.
    pub fn advance_round(&mut self) -> u32 {
        let sending_round = self.round;
        let mut sent = core::mem::take(&mut self.outbound);
        // Per-sender order is kept; senders are sorted so mailbox order does
        // not depend on interleaving of send calls across parties.
        sent.sort_by_key(|(from, seq, _, _)| (*from, *seq));
        let mut deliveries: Vec<(PartyId, Frame)> = Vec::new();
        for (from, _, to, frame) in sent {
            match self.plan.action_for(from, sending_round).clone() {
                FaultAction::Deliver => deliveries.push((to, frame)),
                FaultAction::Drop => {}
                FaultAction::DuplicateTo(extra) => {
                    deliveries.push((to, frame.clone()));
                    for dup_to in extra {
                        deliveries.push((dup_to, frame.clone()));
                    }
                }
                FaultAction::ReplacePayload(bytes) => {
                    let mut tampered = frame;
                    tampered.payload = bytes;
                    deliveries.push((to, tampered));
                }
            }
        }
        for (to, frame) in deliveries {
            let bytes = frame.encode();
            self.transcript = hash_bytes(
                b"psc.sim.transcript",
                &[&self.transcript, &to.0.to_be_bytes(), &bytes],
            );
            self.delivered += 1;
            self.inboxes.entry(to).or_default().push(frame);
        }
        self.seq.clear();
        self.round += 1;
        self.round
    }

    /// Running hash over every delivered frame, in delivery order.
    pub fn transcript_hash(&self) -> [u8; 32] {
        self.transcript
    }

    pub fn delivered_count(&self) -> u64 {
        self.delivered
    }
}
