//! Shared byte-layout vocabulary: party ids, phase tags, the length-prefixed
//! wire frame, and small codec helpers used by proofs and state snapshots.
//!
//! Frame layout (both transports):
//!
//! ```text
//! 4-byte BE total length of everything after the prefix
//! 1-byte msg type
//! 16-byte session id
//! 1-byte phase tag
//! 4-byte BE round
//! 2-byte BE sender id
//! 4-byte BE payload length ‖ payload
//! 2-byte BE signature count ‖ count × (2-byte signer id ‖ 64-byte signature)
//! ```

use alloc::vec::Vec;
use core::fmt;

use crate::group::{DecodeError, Element, Scalar};

/// Hard cap on a decoded frame; enforced before any allocation.
pub const MAX_FRAME: usize = 64 << 20;

/// Compact party identity: computation parties are `cp<i>` with id = i,
/// data parties are `dp<i>` with the high bit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartyId(pub u16);

const DP_BIT: u16 = 0x8000;

impl PartyId {
    pub fn cp(index: u16) -> PartyId {
        debug_assert!(index & DP_BIT == 0);
        PartyId(index)
    }

    pub fn dp(index: u16) -> PartyId {
        PartyId(DP_BIT | index)
    }

    pub fn is_cp(&self) -> bool {
        self.0 & DP_BIT == 0
    }

    pub fn is_dp(&self) -> bool {
        !self.is_cp()
    }

    /// Roster index within the party's own role.
    pub fn index(&self) -> usize {
        (self.0 & !DP_BIT) as usize
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_cp() {
            write!(f, "cp{}", self.index())
        } else {
            write!(f, "dp{}", self.index())
        }
    }
}

/// Protocol phase, stamped into every frame and every Fiat-Shamir context so
/// no message or proof can cross phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum PhaseTag {
    KeyGen = 1,
    DataCollection = 2,
    NoiseGeneration = 3,
    InputSubmission = 4,
    Shuffling = 5,
    Rrd = 6,
    Output = 7,
}

impl PhaseTag {
    pub fn from_u8(v: u8) -> Option<PhaseTag> {
        Some(match v {
            1 => PhaseTag::KeyGen,
            2 => PhaseTag::DataCollection,
            3 => PhaseTag::NoiseGeneration,
            4 => PhaseTag::InputSubmission,
            5 => PhaseTag::Shuffling,
            6 => PhaseTag::Rrd,
            7 => PhaseTag::Output,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PhaseTag::KeyGen => "KeyGen",
            PhaseTag::DataCollection => "DataCollection",
            PhaseTag::NoiseGeneration => "NoiseGeneration",
            PhaseTag::InputSubmission => "InputSubmission",
            PhaseTag::Shuffling => "Shuffling",
            PhaseTag::Rrd => "Rrd",
            PhaseTag::Output => "Output",
        }
    }
}

/// Frame discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    /// Dolev-Strong signature chain (payload: chain encoding).
    Chain = 1,
    /// End-of-round marker; also the liveness signal.
    Heartbeat = 2,
    /// Direct point-to-point payload (key distribution, DP submissions).
    P2p = 3,
}

impl MsgType {
    fn from_u8(v: u8) -> Option<MsgType> {
        Some(match v {
            1 => MsgType::Chain,
            2 => MsgType::Heartbeat,
            3 => MsgType::P2p,
            _ => return None,
        })
    }
}

/// Decode failures for frames and embedded structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireError {
    Truncated,
    /// Frame length prefix exceeds `MAX_FRAME`.
    Oversize,
    BadTag,
    Codec(DecodeError),
}

impl fmt::Display for WireError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WireError::Truncated => f.write_str("truncated frame"),
            WireError::Oversize => f.write_str("frame exceeds size cap"),
            WireError::BadTag => f.write_str("unknown tag value"),
            WireError::Codec(e) => write!(f, "codec: {e}"),
        }
    }
}

impl core::error::Error for WireError {}

impl From<DecodeError> for WireError {
    fn from(e: DecodeError) -> WireError {
        WireError::Codec(e)
    }
}

/// One authenticated message frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub session: [u8; 16],
    pub phase: PhaseTag,
    pub round: u32,
    pub sender: PartyId,
    pub payload: Vec<u8>,
    /// (signer, signature) pairs; interpretation is per msg_type.
    pub sigs: Vec<(PartyId, [u8; 64])>,
}

impl Frame {
    /// Serialize including the 4-byte length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let body_len = 1 + 16 + 1 + 4 + 2 + 4 + self.payload.len() + 2 + self.sigs.len() * 66;
        let mut out = Vec::with_capacity(4 + body_len);
        out.extend_from_slice(&(body_len as u32).to_be_bytes());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.session);
        out.push(self.phase as u8);
        out.extend_from_slice(&self.round.to_be_bytes());
        out.extend_from_slice(&self.sender.0.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&(self.sigs.len() as u16).to_be_bytes());
        for (signer, sig) in &self.sigs {
            out.extend_from_slice(&signer.0.to_be_bytes());
            out.extend_from_slice(sig);
        }
        out
    }

    /// Decode a frame from a buffer that starts with the length prefix and
    /// contains exactly one frame.
    pub fn decode(bytes: &[u8]) -> Result<Frame, WireError> {
        let mut r = Reader::new(bytes);
        let body_len = r.u32()? as usize;
        if body_len > MAX_FRAME {
            return Err(WireError::Oversize);
        }
        if r.remaining() != body_len {
            return Err(WireError::Truncated);
        }
        Frame::decode_body(r.rest())
    }

    /// Decode the frame body (everything after the length prefix).
    pub fn decode_body(body: &[u8]) -> Result<Frame, WireError> {
        let mut r = Reader::new(body);
        let msg_type = MsgType::from_u8(r.u8()?).ok_or(WireError::BadTag)?;
        let mut session = [0u8; 16];
        session.copy_from_slice(r.take(16)?);
        let phase = PhaseTag::from_u8(r.u8()?).ok_or(WireError::BadTag)?;
        let round = r.u32()?;
        let sender = PartyId(r.u16()?);
        let payload_len = r.u32()? as usize;
        if payload_len > MAX_FRAME {
            return Err(WireError::Oversize);
        }
        let payload = r.take(payload_len)?.to_vec();
        let sig_count = r.u16()? as usize;
        let mut sigs = Vec::with_capacity(sig_count);
        for _ in 0..sig_count {
            let signer = PartyId(r.u16()?);
            let mut sig = [0u8; 64];
            sig.copy_from_slice(r.take(64)?);
            sigs.push((signer, sig));
        }
        if r.remaining() != 0 {
            return Err(WireError::Truncated);
        }
        Ok(Frame {
            msg_type,
            session,
            phase,
            round,
            sender,
            payload,
            sigs,
        })
    }
}

/// Cursor over a byte buffer with bounds-checked reads.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.remaining() < n {
            return Err(WireError::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Length-prefixed byte string (u32 BE length).
    pub fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        let n = self.u32()? as usize;
        if n > MAX_FRAME {
            return Err(WireError::Oversize);
        }
        self.take(n)
    }

    pub fn scalar(&mut self) -> Result<Scalar, WireError> {
        Ok(Scalar::decode(self.take(32)?)?)
    }

    pub fn element(&mut self) -> Result<Element, WireError> {
        Ok(Element::decode(self.take(32)?)?)
    }
}

/// Append a u32-length-prefixed byte string.
pub fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn party_id_roles() {
        assert!(PartyId::cp(3).is_cp());
        assert!(PartyId::dp(3).is_dp());
        assert_eq!(PartyId::dp(3).index(), 3);
        assert_eq!(alloc::format!("{}", PartyId::cp(0)), "cp0");
        assert_eq!(alloc::format!("{}", PartyId::dp(12)), "dp12");
    }

    #[test]
    fn frame_roundtrip() {
        let frame = Frame {
            msg_type: MsgType::Chain,
            session: [7u8; 16],
            phase: PhaseTag::Shuffling,
            round: 9,
            sender: PartyId::cp(2),
            payload: alloc::vec![1, 2, 3, 4, 5],
            sigs: alloc::vec![(PartyId::cp(0), [9u8; 64]), (PartyId::cp(1), [8u8; 64])],
        };
        let bytes = frame.encode();
        assert_eq!(Frame::decode(&bytes).unwrap(), frame);
        // Truncation anywhere fails cleanly.
        for cut in [3, 10, bytes.len() - 1] {
            assert!(Frame::decode(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn oversize_rejected_before_alloc() {
        let mut bytes = alloc::vec![0u8; 8];
        bytes[..4].copy_from_slice(&((MAX_FRAME as u32) + 1).to_be_bytes());
        assert_eq!(Frame::decode(&bytes), Err(WireError::Oversize));
    }
}
