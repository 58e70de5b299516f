//! Deterministic per-party randomness.
//!
//! Simulated sessions and the reference oracle must draw the same random
//! values for the same (session seed, purpose, party) triple, so every
//! random decision in the protocol comes from a named substream. Daemons
//! running over real sockets seed the session from the OS instead; only the
//! substream discipline is shared.

use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::group::hash_bytes;
use crate::wire::PartyId;

/// Key-share and proof randomness for key generation.
pub const LABEL_KEYGEN: &[u8] = b"keygen";
/// DP blind scalars, encryption randomness, and proof randomness.
pub const LABEL_BLINDS: &[u8] = b"blinds";
/// DP observation counter values.
pub const LABEL_OBSERVE: &[u8] = b"observe";
/// CP noise pair swap bits; the reference oracle re-derives exactly these.
pub const LABEL_NOISE_SWAP: &[u8] = b"noise.swap";
/// CP noise re-encryption factors and proof randomness.
pub const LABEL_NOISE_MISC: &[u8] = b"noise.misc";
/// CP shuffle permutation, factors, and proof randomness.
pub const LABEL_SHUFFLE: &[u8] = b"shuffle";
/// CP rerandomization-decryption randomness.
pub const LABEL_RRD: &[u8] = b"rrd";

/// The named substream for one purpose at one party.
pub fn substream(session_seed: &[u8; 32], label: &[u8], party: PartyId) -> ChaCha20Rng {
    let seed = hash_bytes(b"psc.rng", &[session_seed, label, &party.0.to_be_bytes()]);
    ChaCha20Rng::from_seed(seed)
}

/// Uniform swap bits in slot order. The noise phase and the reference
/// oracle must call this with identical streams and counts.
pub fn swap_bits(rng: &mut ChaCha20Rng, count: usize) -> Vec<bool> {
    (0..count).map(|_| rng.next_u32() & 1 == 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_are_stable_and_separated() {
        let seed = [3u8; 32];
        let a1 = swap_bits(&mut substream(&seed, LABEL_NOISE_SWAP, PartyId::cp(0)), 64);
        let a2 = swap_bits(&mut substream(&seed, LABEL_NOISE_SWAP, PartyId::cp(0)), 64);
        assert_eq!(a1, a2);

        let other_party = swap_bits(&mut substream(&seed, LABEL_NOISE_SWAP, PartyId::cp(1)), 64);
        assert_ne!(a1, other_party);

        let other_label = swap_bits(&mut substream(&seed, LABEL_SHUFFLE, PartyId::cp(0)), 64);
        assert_ne!(a1, other_label);

        let other_seed = swap_bits(
            &mut substream(&[4u8; 32], LABEL_NOISE_SWAP, PartyId::cp(0)),
            64,
        );
        assert_ne!(a1, other_seed);
    }
}
