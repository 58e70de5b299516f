//! Prime-order group layer.
//!
//! The group is ristretto255 (a prime-order abstraction over the Edwards
//! 25519 curve), so every `Element` encoding is a canonical 32-byte string
//! and cofactor pitfalls do not exist. `Scalar` is the field Z_q for the
//! group order q. Everything above this module is generic over these two
//! types plus the two hash maps below; no other curve detail leaks out.

use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, AddAssign, Mul, Neg, Sub};

use curve25519_dalek::constants::{RISTRETTO_BASEPOINT_POINT, RISTRETTO_BASEPOINT_TABLE};
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoBasepointTable, RistrettoPoint};
use curve25519_dalek::scalar::Scalar as DalekScalar;
use curve25519_dalek::traits::{Identity, MultiscalarMul, VartimeMultiscalarMul};
use rand_core::CryptoRngCore;
use sha2::{Digest, Sha256, Sha512};
use subtle::{Choice, ConditionallySelectable};

/// Error for rejecting malformed 32-byte encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeError {
    /// Scalar bytes encode a value >= q (or the high bit is set).
    NonCanonicalScalar,
    /// Bytes are not a canonical ristretto255 element encoding.
    InvalidElement,
    /// Input was not exactly 32 bytes.
    Length,
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeError::NonCanonicalScalar => f.write_str("non-canonical scalar encoding"),
            DecodeError::InvalidElement => f.write_str("invalid group element encoding"),
            DecodeError::Length => f.write_str("encoding must be exactly 32 bytes"),
        }
    }
}

impl core::error::Error for DecodeError {}

/// An integer modulo the group order q, canonically encoded as 32
/// little-endian bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scalar(pub(crate) DalekScalar);

impl Scalar {
    pub const ZERO: Scalar = Scalar(DalekScalar::ZERO);
    pub const ONE: Scalar = Scalar(DalekScalar::ONE);

    pub fn from_u64(v: u64) -> Scalar {
        Scalar(DalekScalar::from(v))
    }

    /// Uniform scalar from an entropy source.
    pub fn random(rng: &mut impl CryptoRngCore) -> Scalar {
        Scalar(DalekScalar::random(rng))
    }

    pub fn invert(&self) -> Scalar {
        Scalar(self.0.invert())
    }

    pub fn is_zero(&self) -> bool {
        self.0 == DalekScalar::ZERO
    }

    /// Constant-time choice between two scalars: `b` when the flag is set,
    /// `a` otherwise.
    pub fn select(a: &Scalar, b: &Scalar, flag: Choice) -> Scalar {
        Scalar(DalekScalar::conditional_select(&a.0, &b.0, flag))
    }

    pub fn encode(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Scalar, DecodeError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| DecodeError::Length)?;
        Option::<DalekScalar>::from(DalekScalar::from_canonical_bytes(arr))
            .map(Scalar)
            .ok_or(DecodeError::NonCanonicalScalar)
    }
}

impl Add for Scalar {
    type Output = Scalar;
    fn add(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 + rhs.0)
    }
}

impl AddAssign for Scalar {
    fn add_assign(&mut self, rhs: Scalar) {
        self.0 += rhs.0;
    }
}

impl Sub for Scalar {
    type Output = Scalar;
    fn sub(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 - rhs.0)
    }
}

impl Mul for Scalar {
    type Output = Scalar;
    fn mul(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 * rhs.0)
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar(-self.0)
    }
}

/// A member of the group, canonically encoded as 32 bytes. Decoding rejects
/// every byte string that is not the canonical encoding of some element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Element(pub(crate) RistrettoPoint);

impl Element {
    pub fn identity() -> Element {
        Element(RistrettoPoint::identity())
    }

    /// The fixed generator g (the ristretto255 basepoint).
    pub fn generator() -> Element {
        Element(RISTRETTO_BASEPOINT_POINT)
    }

    /// g^e via the precomputed basepoint table.
    pub fn base_exp(e: &Scalar) -> Element {
        Element(RISTRETTO_BASEPOINT_TABLE * &e.0)
    }

    /// self^e (multiplicative notation; the group is written additively by
    /// the curve library).
    pub fn exp(&self, e: &Scalar) -> Element {
        Element(self.0 * e.0)
    }

    pub fn is_identity(&self) -> bool {
        self.0 == RistrettoPoint::identity()
    }

    pub fn encode(&self) -> [u8; 32] {
        self.0.compress().to_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Element, DecodeError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| DecodeError::Length)?;
        CompressedRistretto(arr)
            .decompress()
            .map(Element)
            .ok_or(DecodeError::InvalidElement)
    }

    /// Variable-time sum of scalars[i] * points[i]; the workhorse for batch
    /// verification (Pippenger under the hood for large inputs). Public
    /// inputs only.
    pub fn vartime_multiscalar(scalars: &[Scalar], points: &[Element]) -> Element {
        Element(RistrettoPoint::vartime_multiscalar_mul(
            scalars.iter().map(|s| s.0),
            points.iter().map(|p| p.0),
        ))
    }

    /// Constant-time multiscalar for prover-side sums whose scalars are
    /// secret (shuffle responses keyed by the hidden permutation).
    pub fn multiscalar(scalars: &[Scalar], points: &[Element]) -> Element {
        Element(RistrettoPoint::multiscalar_mul(
            scalars.iter().map(|s| s.0),
            points.iter().map(|p| p.0),
        ))
    }

    /// Variable-time a*A + b*g. Public inputs only.
    pub fn vartime_exp_with_base(a: &Scalar, big_a: &Element, b: &Scalar) -> Element {
        Element(RistrettoPoint::vartime_double_scalar_mul_basepoint(
            &a.0, &big_a.0, &b.0,
        ))
    }

    /// Constant-time choice between two elements: `b` when the flag is set,
    /// `a` otherwise.
    pub fn select(a: &Element, b: &Element, flag: Choice) -> Element {
        Element(RistrettoPoint::conditional_select(&a.0, &b.0, flag))
    }
}

impl Add for Element {
    type Output = Element;
    fn add(self, rhs: Element) -> Element {
        Element(self.0 + rhs.0)
    }
}

impl Sub for Element {
    type Output = Element;
    fn sub(self, rhs: Element) -> Element {
        Element(self.0 - rhs.0)
    }
}

impl Neg for Element {
    type Output = Element;
    fn neg(self) -> Element {
        Element(-self.0)
    }
}

/// Precomputed fixed-base table for a frequently reused base (session keys,
/// remaining joint keys). Build cost is ~30 plain multiplications, so only
/// worth it for bases used across a whole phase.
pub struct ElementTable(RistrettoBasepointTable);

impl ElementTable {
    pub fn new(base: &Element) -> ElementTable {
        ElementTable(RistrettoBasepointTable::create(&base.0))
    }

    pub fn exp(&self, e: &Scalar) -> Element {
        Element(&self.0 * &e.0)
    }
}

fn absorb_parts(hasher: &mut impl Digest, domain_tag: &[u8], parts: &[&[u8]]) {
    // Length-prefix every field so distinct part lists can never collide on
    // their concatenation.
    debug_assert!(!domain_tag.is_empty());
    hasher.update((domain_tag.len() as u64).to_le_bytes());
    hasher.update(domain_tag);
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
}

/// Deterministic map to Z_q: SHA-256 over the length-prefixed domain tag and
/// parts, reduced modulo q. Distinct domain tags give independent functions.
pub fn hash_to_scalar(domain_tag: &[u8], parts: &[&[u8]]) -> Scalar {
    let mut hasher = Sha256::new();
    absorb_parts(&mut hasher, domain_tag, parts);
    let digest: [u8; 32] = hasher.finalize().into();
    Scalar(DalekScalar::from_bytes_mod_order(digest))
}

/// Deterministic map to the group with unknown discrete log of the output
/// (used to derive independent commitment generators).
pub fn hash_to_element(domain_tag: &[u8], parts: &[&[u8]]) -> Element {
    let mut hasher = Sha512::new();
    absorb_parts(&mut hasher, domain_tag, parts);
    let digest: [u8; 64] = hasher.finalize().into();
    Element(RistrettoPoint::from_uniform_bytes(&digest))
}

/// SHA-256 digest of length-prefixed parts; the payload digest used by the
/// broadcast layer and consensus summaries.
pub fn hash_bytes(domain_tag: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    absorb_parts(&mut hasher, domain_tag, parts);
    hasher.finalize().into()
}

/// Encode a slice of elements as the concatenation of their encodings.
pub fn encode_elements(elems: &[Element]) -> Vec<u8> {
    let mut out = Vec::with_capacity(elems.len() * 32);
    for e in elems {
        out.extend_from_slice(&e.encode());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u8) -> ChaCha20Rng {
        ChaCha20Rng::from_seed([seed; 32])
    }

    #[test]
    fn scalar_roundtrip_and_laws() {
        let mut r = rng(1);
        for _ in 0..1000 {
            let s = Scalar::random(&mut r);
            assert_eq!(Scalar::decode(&s.encode()).unwrap(), s);
        }
        let (a, b, c) = (
            Scalar::random(&mut r),
            Scalar::random(&mut r),
            Scalar::random(&mut r),
        );
        assert_eq!((a + b) + c, a + (b + c));
        assert_eq!(a + Scalar::ZERO, a);
        assert_eq!(a * a.invert(), Scalar::ONE);
        assert_eq!(a + (-a), Scalar::ZERO);
    }

    #[test]
    fn element_roundtrip_and_laws() {
        let mut r = rng(2);
        for _ in 0..1000 {
            let e = Element::base_exp(&Scalar::random(&mut r));
            assert_eq!(Element::decode(&e.encode()).unwrap(), e);
        }
        let g = Element::generator();
        let (a, b) = (Scalar::random(&mut r), Scalar::random(&mut r));
        assert_eq!(g.exp(&Scalar::ZERO), Element::identity());
        assert_eq!(g.exp(&Scalar::ONE), g);
        assert_eq!(g.exp(&(a + b)), g.exp(&a) + g.exp(&b));
        assert_eq!(g.exp(&a).exp(&b), g.exp(&(a * b)));
        assert_eq!(g.exp(&a) + (-g.exp(&a)), Element::identity());
        assert_eq!(Element::base_exp(&a), g.exp(&a));
    }

    #[test]
    fn decode_rejects_mutations() {
        let mut r = rng(3);
        let mut rejected = 0u32;
        for i in 0..256 {
            let p = Element::base_exp(&Scalar::random(&mut r));
            let mut bytes = p.encode();
            bytes[i % 32] ^= 1 << (i / 32);
            match Element::decode(&bytes) {
                // Encodings are canonical: a flip that still decodes names
                // a different point, never an alias of the original.
                Ok(q) => assert_ne!(q, p),
                Err(_) => rejected += 1,
            }
        }
        // Field canonicity, the sign convention, and the curve equation
        // together reject about three quarters of single-bit flips.
        assert!(rejected > 150, "only {rejected} mutations rejected");
        assert_eq!(Element::decode(&[0u8; 31]), Err(DecodeError::Length));

        // Scalar encodings with the top bit set are never canonical.
        let mut hi = [0u8; 32];
        hi[31] = 0xff;
        assert_eq!(Scalar::decode(&hi), Err(DecodeError::NonCanonicalScalar));
    }

    #[test]
    fn hash_to_scalar_separation() {
        let a = hash_to_scalar(b"DL", &[b"part"]);
        assert_eq!(a, hash_to_scalar(b"DL", &[b"part"]));
        assert_ne!(a, hash_to_scalar(b"RRD", &[b"part"]));
        assert_ne!(a, hash_to_scalar(b"DL", &[b"paru"]));
        // Length prefixing: ("ab","c") must differ from ("a","bc").
        assert_ne!(
            hash_to_scalar(b"T", &[b"ab", b"c"]),
            hash_to_scalar(b"T", &[b"a", b"bc"])
        );
    }

    #[test]
    fn multiscalar_matches_naive() {
        let mut r = rng(4);
        let scalars: Vec<Scalar> = (0..17).map(|_| Scalar::random(&mut r)).collect();
        let points: Vec<Element> = (0..17)
            .map(|_| Element::base_exp(&Scalar::random(&mut r)))
            .collect();
        let naive = scalars
            .iter()
            .zip(&points)
            .fold(Element::identity(), |acc, (s, p)| acc + p.exp(s));
        assert_eq!(Element::vartime_multiscalar(&scalars, &points), naive);

        let (a, b) = (Scalar::random(&mut r), Scalar::random(&mut r));
        let big_a = points[0];
        assert_eq!(
            Element::vartime_exp_with_base(&a, &big_a, &b),
            big_a.exp(&a) + Element::base_exp(&b)
        );
    }

    #[test]
    fn table_matches_exp() {
        let mut r = rng(5);
        let base = Element::base_exp(&Scalar::random(&mut r));
        let table = ElementTable::new(&base);
        for _ in 0..8 {
            let e = Scalar::random(&mut r);
            assert_eq!(table.exp(&e), base.exp(&e));
        }
    }

    /// Golden vectors pinning the byte formats this artifact ships. These are
    /// self-consistent (no external standard fixes them) but must never change
    /// silently: wire frames, proofs, and snapshots all build on them.
    #[test]
    fn golden_encodings() {
        assert_eq!(
            hex::encode(Element::generator().encode()),
            "e2f2ae0a6abc4e71a884a961c500515f58e30b6aa582dd8db6a65945e08d2d76"
        );
        assert_eq!(
            hex::encode(Element::identity().encode()),
            "0000000000000000000000000000000000000000000000000000000000000000"
        );
        assert_eq!(
            hex::encode(Scalar::from_u64(7).encode()),
            "0700000000000000000000000000000000000000000000000000000000000000"
        );
        assert_eq!(
            hex::encode(Element::base_exp(&Scalar::from_u64(7)).encode()),
            "44f53520926ec81fbd5a387845beb7df85a96a24ece18738bdcfa6a7822a176d"
        );
        assert_eq!(
            hex::encode(hash_to_scalar(b"psc.test", &[b"golden"]).encode()),
            "d5bc64a65eaad9a51c42b66f4161ab9204f2d33ef059cc2f1f1e48901b2ad806"
        );
        assert_eq!(
            hex::encode(hash_to_element(b"psc.test", &[b"golden"]).encode()),
            "369f7078744185ced036171e95d9d3f195efe4e2b5a694d945b75fb7ef3a9465"
        );
    }
}
