//! Hash commitments and the multiparty coin flip built on them.
//!
//! A commitment to `v` is `H("COM" ‖ nonce ‖ v)` with a fresh 32-byte nonce.
//! The coin flip has every participant commit to a random bit vector, open
//! in the next round, and XOR the openings; it stays unbiased as long as one
//! participant is honest, and anyone whose opening is missing or invalid is
//! reported instead of silently dropped.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::CryptoRngCore;

use crate::group::hash_bytes;
use crate::wire::PartyId;

const DOMAIN: &[u8] = b"COM";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Commitment {
    pub digest: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Opening {
    pub value: Vec<u8>,
    pub nonce: [u8; 32],
}

pub fn commit(value: &[u8], rng: &mut impl CryptoRngCore) -> (Commitment, Opening) {
    let mut nonce = [0u8; 32];
    rng.fill_bytes(&mut nonce);
    let digest = hash_bytes(DOMAIN, &[&nonce, value]);
    (
        Commitment { digest },
        Opening {
            value: value.to_vec(),
            nonce,
        },
    )
}

pub fn verify_opening(commitment: &Commitment, opening: &Opening) -> bool {
    hash_bytes(DOMAIN, &[&opening.nonce, &opening.value]) == commitment.digest
}

/// Bits packed least-significant-first into bytes.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &bit) in bits.iter().enumerate() {
        out[i / 8] |= (bit as u8) << (i % 8);
    }
    out
}

pub fn unpack_bits(bytes: &[u8], n_bits: usize) -> Vec<bool> {
    (0..n_bits)
        .map(|i| (bytes[i / 8] >> (i % 8)) & 1 == 1)
        .collect()
}

/// Combines one commit-then-open coin flip contribution per participant into
/// `n_bits` shared coins. Returns the XOR of all opened bit vectors, or the
/// identities of every participant whose opening is absent, fails to match
/// its commitment, or has the wrong length.
pub fn coin_flip_combine(
    n_bits: usize,
    contributions: &[(PartyId, Commitment, Option<Opening>)],
) -> Result<Vec<bool>, Vec<PartyId>> {
    let expected_len = n_bits.div_ceil(8);
    let mut coins = vec![false; n_bits];
    let mut cheaters = Vec::new();
    for (party, commitment, opening) in contributions {
        match opening {
            Some(op) if op.value.len() == expected_len && verify_opening(commitment, op) => {
                for (i, coin) in coins.iter_mut().enumerate() {
                    *coin ^= (op.value[i / 8] >> (i % 8)) & 1 == 1;
                }
            }
            _ => cheaters.push(*party),
        }
    }
    if cheaters.is_empty() {
        Ok(coins)
    } else {
        Err(cheaters)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn opening_binds_value_and_nonce() {
        let mut rng = ChaCha20Rng::seed_from_u64(20);
        let (c, o) = commit(b"hello", &mut rng);
        assert!(verify_opening(&c, &o));

        let mut bad = o.clone();
        bad.value[0] ^= 1;
        assert!(!verify_opening(&c, &bad));

        let mut bad = o.clone();
        bad.nonce[0] ^= 1;
        assert!(!verify_opening(&c, &bad));

        // Fresh nonces hide repeated values.
        let (c2, _) = commit(b"hello", &mut rng);
        assert_ne!(c.digest, c2.digest);
    }

    #[test]
    fn bit_packing_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        for n in [1usize, 7, 8, 9, 40, 64] {
            let bits: Vec<bool> = (0..n).map(|_| rng.next_u32() & 1 == 1).collect();
            assert_eq!(unpack_bits(&pack_bits(&bits), n), bits);
        }
    }

    #[test]
    fn coin_flip_xors_all_contributions() {
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let n = 40;
        let mut expected = vec![false; n];
        let contributions: Vec<(PartyId, Commitment, Option<Opening>)> = (0..3)
            .map(|j| {
                let bits: Vec<bool> = (0..n).map(|_| rng.next_u32() & 1 == 1).collect();
                for (e, b) in expected.iter_mut().zip(&bits) {
                    *e ^= b;
                }
                let (c, o) = commit(&pack_bits(&bits), &mut rng);
                (PartyId::cp(j), c, Some(o))
            })
            .collect();
        assert_eq!(coin_flip_combine(n, &contributions), Ok(expected));
    }

    #[test]
    fn coin_flip_reports_bad_openings() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let n = 16;
        let honest = |rng: &mut ChaCha20Rng, j: u16| {
            let bits: Vec<bool> = (0..n).map(|_| rng.next_u32() & 1 == 1).collect();
            let (c, o) = commit(&pack_bits(&bits), rng);
            (PartyId::cp(j), c, Some(o))
        };
        let mut contributions = vec![honest(&mut rng, 0), honest(&mut rng, 1), honest(&mut rng, 2)];

        // Withheld opening.
        contributions[1].2 = None;
        // Opening for a different value.
        let (_, other) = commit(&pack_bits(&vec![true; n]), &mut rng);
        contributions[2].2 = Some(other);

        assert_eq!(
            coin_flip_combine(n, &contributions),
            Err(vec![PartyId::cp(1), PartyId::cp(2)])
        );
    }
}
