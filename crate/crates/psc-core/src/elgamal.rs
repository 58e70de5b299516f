//! Exponential ElGamal over the joint session key.
//!
//! A ciphertext is E_y(r;m) = (g^r, y^r·g^m) with the plaintext m in the
//! exponent. Addition of plaintexts is the componentwise product, so vectors
//! of ciphertexts act as homomorphic counters. Decryption never computes a
//! discrete log: after every key share has been folded out by `rrd_step`,
//! the only question the residual element answers is whether m was zero.

use alloc::vec::Vec;
use core::fmt;

use rand_core::CryptoRngCore;

use crate::group::{ElementTable, Element, Scalar};

/// One CP's session key pair: secret x_j and public share y_j = g^{x_j}.
#[derive(Debug, Clone)]
pub struct KeyShare {
    pub secret: Scalar,
    pub public: Element,
    /// Roster index of the owning CP.
    pub owner: u16,
}

impl KeyShare {
    pub fn generate(owner: u16, rng: &mut impl CryptoRngCore) -> KeyShare {
        let secret = Scalar::random(rng);
        KeyShare {
            secret,
            public: Element::base_exp(&secret),
            owner,
        }
    }
}

/// The joint public key y = prod_j y_j plus the ordered per-CP shares.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointPublicKey {
    pub key: Element,
    pub shares: Vec<Element>,
}

impl JointPublicKey {
    pub fn from_shares(shares: Vec<Element>) -> JointPublicKey {
        let key = shares
            .iter()
            .fold(Element::identity(), |acc, s| acc + *s);
        JointPublicKey { key, shares }
    }

    /// The key remaining after CPs 0..j have already applied their partial
    /// decryptions: prod_{k >= j} y_k. `remaining(0)` is the full key.
    pub fn remaining(&self, j: usize) -> Element {
        self.shares[j..]
            .iter()
            .fold(Element::identity(), |acc, s| acc + *s)
    }
}

/// An ElGamal pair (a, b) = (g^r, y^r·g^m). 64-byte wire form a ‖ b.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ciphertext {
    pub a: Element,
    pub b: Element,
}

impl Ciphertext {
    pub fn encode(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(&self.a.encode());
        out[32..].copy_from_slice(&self.b.encode());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Ciphertext, crate::group::DecodeError> {
        if bytes.len() != 64 {
            return Err(crate::group::DecodeError::Length);
        }
        Ok(Ciphertext {
            a: Element::decode(&bytes[..32])?,
            b: Element::decode(&bytes[32..])?,
        })
    }
}

/// Errors from the ciphertext manipulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElgamalError {
    /// Rerandomization factor was zero (would erase the plaintext).
    ZeroFactor,
    /// rrd_step produced an identity first component; caller must resample
    /// its randomness and retry.
    RetryNeeded,
}

impl fmt::Display for ElgamalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElgamalError::ZeroFactor => f.write_str("rerandomization factor must be nonzero"),
            ElgamalError::RetryNeeded => {
                f.write_str("first component hit the identity; resample randomness")
            }
        }
    }
}

impl core::error::Error for ElgamalError {}

/// E_y(r;m) = (g^r, y^r·g^m).
pub fn encrypt(y: &JointPublicKey, m: &Scalar, r: &Scalar) -> Ciphertext {
    Ciphertext {
        a: Element::base_exp(r),
        b: y.key.exp(r) + Element::base_exp(m),
    }
}

/// Same, with a precomputed table for y (hot path for vector encryptions).
pub fn encrypt_with_table(y_table: &ElementTable, m: &Scalar, r: &Scalar) -> Ciphertext {
    Ciphertext {
        a: Element::base_exp(r),
        b: y_table.exp(r) + Element::base_exp(m),
    }
}

/// Encryption with the randomization factor pinned to 1: (g, y·g^m).
/// Intentionally non-hiding; used where the plaintext is already public
/// (noise seed pairs, counter values being aggregated).
pub fn deterministic_encrypt(y: &JointPublicKey, m: &Scalar) -> Ciphertext {
    Ciphertext {
        a: Element::generator(),
        b: y.key + Element::base_exp(m),
    }
}

/// Homomorphic addition of plaintexts: componentwise product.
pub fn add(c1: &Ciphertext, c2: &Ciphertext) -> Ciphertext {
    Ciphertext {
        a: c1.a + c2.a,
        b: c1.b + c2.b,
    }
}

/// Shift the randomization factor by s without touching the plaintext:
/// (a·g^s, b·y^s).
pub fn reencrypt(y: &JointPublicKey, c: &Ciphertext, s: &Scalar) -> Ciphertext {
    Ciphertext {
        a: c.a + Element::base_exp(s),
        b: c.b + y.key.exp(s),
    }
}

/// Multiply the plaintext (and randomization factor) by s: (a^s, b^s).
/// Zero plaintexts stay zero; nonzero stay nonzero (prime order).
pub fn rerandomize(c: &Ciphertext, s: &Scalar) -> Result<Ciphertext, ElgamalError> {
    if s.is_zero() {
        return Err(ElgamalError::ZeroFactor);
    }
    Ok(Ciphertext {
        a: c.a.exp(s),
        b: c.b.exp(s),
    })
}

/// One CP's combined re-encryption + rerandomization + partial decryption:
///
///   α = (a·g^σ)^r        β = (b·Y^σ)^r · α^{−x_j}
///
/// Y must be the key remaining for CPs j..m (`JointPublicKey::remaining(j)`,
/// including the caller's own share): earlier CPs already divided out their
/// shares, so re-encrypting against the full key would leave their residue
/// behind and break the zero predicate.
pub fn rrd_step(
    c: &Ciphertext,
    remaining_key: &Element,
    share: &KeyShare,
    sigma: &Scalar,
    r: &Scalar,
) -> Result<Ciphertext, ElgamalError> {
    if r.is_zero() {
        return Err(ElgamalError::ZeroFactor);
    }
    let alpha = (c.a + Element::base_exp(sigma)).exp(r);
    if alpha.is_identity() {
        return Err(ElgamalError::RetryNeeded);
    }
    let beta = (c.b + remaining_key.exp(sigma)).exp(r) + alpha.exp(&-share.secret);
    Ok(Ciphertext { a: alpha, b: beta })
}

/// Retry cap for `rrd_step_sampled`. A retry fires with probability ~1/q per
/// draw; the cap only guards against a broken RNG.
pub const RRD_RETRY_CAP: usize = 64;

/// Sample (σ, r) and apply `rrd_step`, resampling on an identity first
/// component. Returns the output together with the witnesses that produced
/// it (needed by the proof of the step).
pub fn rrd_step_sampled(
    c: &Ciphertext,
    remaining_key: &Element,
    share: &KeyShare,
    rng: &mut impl CryptoRngCore,
) -> Result<(Ciphertext, Scalar, Scalar), ElgamalError> {
    for _ in 0..RRD_RETRY_CAP {
        let sigma = Scalar::random(rng);
        let r = Scalar::random(rng);
        if r.is_zero() {
            continue;
        }
        match rrd_step(c, remaining_key, share, &sigma, &r) {
            Ok(out) => return Ok((out, sigma, r)),
            Err(ElgamalError::RetryNeeded) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(ElgamalError::RetryNeeded)
}

/// Zero test after all m rrd steps: the residual plaintext element is the
/// second component, and it is the identity exactly when m was 0.
pub fn is_zero_plaintext(final_ct: &Ciphertext) -> bool {
    final_ct.b.is_identity()
}

/// Full decryption with every key share in one hand: g^m = b / a^{Σx_j}.
/// The protocol never assembles all shares in one place; this exists for
/// differential oracles and pipeline tests.
pub fn decrypt_element(shares: &[KeyShare], c: &Ciphertext) -> Element {
    let x = shares.iter().fold(Scalar::ZERO, |acc, s| acc + s.secret);
    c.b - c.a.exp(&x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u8) -> ChaCha20Rng {
        ChaCha20Rng::from_seed([seed; 32])
    }

    fn setup(m: usize, r: &mut ChaCha20Rng) -> (Vec<KeyShare>, JointPublicKey) {
        let shares: Vec<KeyShare> = (0..m).map(|j| KeyShare::generate(j as u16, r)).collect();
        let joint = JointPublicKey::from_shares(shares.iter().map(|s| s.public).collect());
        (shares, joint)
    }

    /// Run the whole rrd pipeline through every share in order.
    fn rrd_pipeline(
        shares: &[KeyShare],
        joint: &JointPublicKey,
        c: Ciphertext,
        r: &mut ChaCha20Rng,
    ) -> Ciphertext {
        let mut cur = c;
        for (j, share) in shares.iter().enumerate() {
            let remaining = joint.remaining(j);
            let (next, _, _) = rrd_step_sampled(&cur, &remaining, share, r).unwrap();
            cur = next;
        }
        cur
    }

    #[test]
    fn homomorphism() {
        let mut r = rng(10);
        let (shares, joint) = setup(2, &mut r);
        for _ in 0..200 {
            let (m1, m2) = (Scalar::random(&mut r), Scalar::random(&mut r));
            let (r1, r2) = (Scalar::random(&mut r), Scalar::random(&mut r));
            let sum = add(&encrypt(&joint, &m1, &r1), &encrypt(&joint, &m2, &r2));
            assert_eq!(
                decrypt_element(&shares, &sum),
                Element::base_exp(&(m1 + m2))
            );
        }
    }

    #[test]
    fn encrypt_edge_cases() {
        let mut r = rng(11);
        let (shares, joint) = setup(3, &mut r);
        // m = 0 decrypts to the identity.
        let c0 = encrypt(&joint, &Scalar::ZERO, &Scalar::random(&mut r));
        assert!(decrypt_element(&shares, &c0).is_identity());
        // r = 0 degenerates to (identity, g^m).
        let m = Scalar::random(&mut r);
        let c = encrypt(&joint, &m, &Scalar::ZERO);
        assert!(c.a.is_identity());
        assert_eq!(c.b, Element::base_exp(&m));
        // Fresh randomness separates equal plaintexts.
        assert_ne!(
            encrypt(&joint, &m, &Scalar::random(&mut r)),
            encrypt(&joint, &m, &Scalar::random(&mut r))
        );
        // Deterministic encryption is encrypt(y, m, 1) exactly.
        assert_eq!(
            deterministic_encrypt(&joint, &m),
            encrypt(&joint, &m, &Scalar::ONE)
        );
        assert_eq!(deterministic_encrypt(&joint, &Scalar::ZERO).a, Element::generator());
        assert_eq!(deterministic_encrypt(&joint, &Scalar::ZERO).b, joint.key);
        assert_eq!(
            deterministic_encrypt(&joint, &Scalar::ONE).b,
            joint.key + Element::generator()
        );
        // Blind plus deterministic encryption of its negation cancels.
        let beta = Scalar::random(&mut r);
        let blind = encrypt(&joint, &beta, &Scalar::random(&mut r));
        let cancelled = add(&blind, &deterministic_encrypt(&joint, &-beta));
        assert!(decrypt_element(&shares, &cancelled).is_identity());
    }

    #[test]
    fn reencrypt_properties() {
        let mut r = rng(12);
        let (shares, joint) = setup(2, &mut r);
        let m = Scalar::random(&mut r);
        let c = encrypt(&joint, &m, &Scalar::random(&mut r));
        assert_eq!(reencrypt(&joint, &c, &Scalar::ZERO), c);
        let (s1, s2) = (Scalar::random(&mut r), Scalar::random(&mut r));
        assert_eq!(
            decrypt_element(&shares, &reencrypt(&joint, &c, &s1)),
            decrypt_element(&shares, &c)
        );
        assert_eq!(
            reencrypt(&joint, &reencrypt(&joint, &c, &s1), &s2),
            reencrypt(&joint, &c, &(s1 + s2))
        );
    }

    #[test]
    fn rerandomize_properties() {
        let mut r = rng(13);
        let (shares, joint) = setup(2, &mut r);
        let c0 = encrypt(&joint, &Scalar::ZERO, &Scalar::random(&mut r));
        let s = Scalar::random(&mut r);
        assert!(decrypt_element(&shares, &rerandomize(&c0, &s).unwrap()).is_identity());
        let m = Scalar::random(&mut r);
        let cm = encrypt(&joint, &m, &Scalar::random(&mut r));
        assert_eq!(
            decrypt_element(&shares, &rerandomize(&cm, &s).unwrap()),
            Element::base_exp(&(m * s))
        );
        assert_eq!(rerandomize(&cm, &Scalar::ONE).unwrap(), cm);
        assert_eq!(
            rerandomize(&cm, &Scalar::ZERO),
            Err(ElgamalError::ZeroFactor)
        );
    }

    #[test]
    fn rrd_pipeline_zero_predicate() {
        let mut r = rng(14);
        for m_cps in 1..=5usize {
            let (shares, joint) = setup(m_cps, &mut r);
            for trial in 0..100 {
                let plain = if trial % 2 == 0 {
                    Scalar::ZERO
                } else {
                    Scalar::random(&mut r)
                };
                let c = encrypt(&joint, &plain, &Scalar::random(&mut r));
                let out = rrd_pipeline(&shares, &joint, c, &mut r);
                assert!(!out.a.is_identity());
                assert_eq!(is_zero_plaintext(&out), plain.is_zero());
            }
        }
    }

    #[test]
    fn rrd_single_step_formulas() {
        let mut r = rng(15);
        let (shares, joint) = setup(1, &mut r);
        let c = encrypt(&joint, &Scalar::ZERO, &Scalar::random(&mut r));
        let sigma = Scalar::random(&mut r);
        let rr = Scalar::random(&mut r);
        let out = rrd_step(&c, &joint.remaining(0), &shares[0], &sigma, &rr).unwrap();
        // For a zero plaintext under one share, β must collapse to identity.
        assert!(is_zero_plaintext(&out));
        // And the α formula must match the direct computation.
        assert_eq!(out.a, (c.a + Element::base_exp(&sigma)).exp(&rr));
        assert_eq!(
            rrd_step(&c, &joint.remaining(0), &shares[0], &sigma, &Scalar::ZERO),
            Err(ElgamalError::ZeroFactor)
        );
    }

    /// rrd_step equals reencrypt-then-rerandomize-then-partial-decrypt,
    /// recomputed side by side on sampled instances.
    #[test]
    fn rrd_matches_composed_manipulations() {
        let mut r = rng(16);
        let (shares, joint) = setup(1, &mut r);
        for _ in 0..32 {
            let m = Scalar::random(&mut r);
            let c = encrypt(&joint, &m, &Scalar::random(&mut r));
            let sigma = Scalar::random(&mut r);
            let rr = Scalar::random(&mut r);
            let stepped = rrd_step(&c, &joint.remaining(0), &shares[0], &sigma, &rr).unwrap();
            let composed = rerandomize(&reencrypt(&joint, &c, &sigma), &rr).unwrap();
            let decrypted = Ciphertext {
                a: composed.a,
                b: composed.b + composed.a.exp(&-shares[0].secret),
            };
            assert_eq!(stepped, decrypted);
        }
    }

    #[test]
    fn mixed_vector_zero_count() {
        let mut r = rng(17);
        let (shares, joint) = setup(3, &mut r);
        let mut cts = alloc::vec::Vec::new();
        let zeros = 5usize;
        let nonzeros = 7usize;
        for _ in 0..zeros {
            cts.push(encrypt(&joint, &Scalar::ZERO, &Scalar::random(&mut r)));
        }
        for _ in 0..nonzeros {
            cts.push(encrypt(&joint, &Scalar::random(&mut r), &Scalar::random(&mut r)));
        }
        let count = cts
            .into_iter()
            .map(|c| rrd_pipeline(&shares, &joint, c, &mut r))
            .filter(is_zero_plaintext_ref)
            .count();
        assert_eq!(count, zeros);
    }

    fn is_zero_plaintext_ref(c: &Ciphertext) -> bool {
        is_zero_plaintext(c)
    }

    #[test]
    fn ciphertext_codec() {
        let mut r = rng(18);
        let (_, joint) = setup(2, &mut r);
        let c = encrypt(&joint, &Scalar::random(&mut r), &Scalar::random(&mut r));
        let bytes = c.encode();
        assert_eq!(Ciphertext::decode(&bytes).unwrap(), c);
        assert!(Ciphertext::decode(&bytes[..63]).is_err());
    }

    #[test]
    fn remaining_key_chain() {
        let mut r = rng(19);
        let (shares, joint) = setup(4, &mut r);
        assert_eq!(joint.remaining(0), joint.key);
        assert_eq!(joint.remaining(4), Element::identity());
        let tail = shares[2].public + shares[3].public;
        assert_eq!(joint.remaining(2), tail);
    }
}
