//! Schnorr proof of knowledge of a discrete log.

use alloc::vec::Vec;

use rand_core::CryptoRngCore;

use super::{Sigma, ZkpError, TAG_DL};
use crate::group::{hash_to_scalar, Element, Scalar};

const DOMAIN: &[u8] = b"DL";

/// Transcript for knowledge of x with Y = g^x.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DlProof {
    pub commitment: Element,
    pub challenge: Scalar,
    pub response: Scalar,
}

fn dl_challenge(context: &[u8], statement: &Element, commitment: &Element) -> Scalar {
    hash_to_scalar(
        DOMAIN,
        &[context, &statement.encode(), &commitment.encode()],
    )
}

pub fn prove_dl(x: &Scalar, statement: &Element, context: &[u8], rng: &mut impl CryptoRngCore) -> DlProof {
    let t = Scalar::random(rng);
    let commitment = Element::base_exp(&t);
    let challenge = dl_challenge(context, statement, &commitment);
    DlProof {
        commitment,
        challenge,
        response: t + challenge * *x,
    }
}

/// g^z = T · Y^c with c recomputed from (context, Y, T).
pub fn verify_dl(statement: &Element, proof: &DlProof, context: &[u8]) -> bool {
    if proof.challenge != dl_challenge(context, statement, &proof.commitment) {
        return false;
    }
    Element::vartime_exp_with_base(&(-proof.challenge), statement, &proof.response)
        == proof.commitment
}

impl DlProof {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 3 * 32);
        out.push(TAG_DL);
        out.extend_from_slice(&self.commitment.encode());
        out.extend_from_slice(&self.challenge.encode());
        out.extend_from_slice(&self.response.encode());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<DlProof, ZkpError> {
        if bytes.len() != 1 + 3 * 32 || bytes[0] != TAG_DL {
            return Err(ZkpError::Malformed);
        }
        Ok(DlProof {
            commitment: Element::decode(&bytes[1..33]).map_err(|_| ZkpError::Malformed)?,
            challenge: Scalar::decode(&bytes[33..65]).map_err(|_| ZkpError::Malformed)?,
            response: Scalar::decode(&bytes[65..97]).map_err(|_| ZkpError::Malformed)?,
        })
    }
}

/// 3-move form for the interactive compiler: α = T, γ = z.
pub struct DlSigma;

impl Sigma for DlSigma {
    type Statement = Element;
    type Witness = Scalar;
    type State = Scalar;

    fn commit_msg(_stmt: &Element, _wit: &Scalar, rng: &mut impl CryptoRngCore) -> (Scalar, Vec<u8>) {
        let t = Scalar::random(rng);
        (t, Element::base_exp(&t).encode().to_vec())
    }

    fn respond(_stmt: &Element, wit: &Scalar, state: &Scalar, challenge: &Scalar) -> Vec<u8> {
        (*state + *challenge * *wit).encode().to_vec()
    }

    fn verify(stmt: &Element, alpha: &[u8], challenge: &Scalar, gamma: &[u8]) -> bool {
        let (Ok(t), Ok(z)) = (Element::decode(alpha), Scalar::decode(gamma)) else {
            return false;
        };
        Element::vartime_exp_with_base(&(-*challenge), stmt, &z) == t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn roundtrip_and_bindings() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x = Scalar::random(&mut rng);
            let y = Element::base_exp(&x);
            let proof = prove_dl(&x, &y, b"ctx", &mut rng);
            assert!(verify_dl(&y, &proof, b"ctx"));
            // Statement substitution.
            let other = Element::base_exp(&Scalar::random(&mut rng));
            assert!(!verify_dl(&other, &proof, b"ctx"));
            // Context substitution.
            assert!(!verify_dl(&y, &proof, b"xtc"));
            // Response mutated.
            let mut bad = proof;
            bad.response = bad.response + Scalar::ONE;
            assert!(!verify_dl(&y, &bad, b"ctx"));
            // Challenge field mutated: hash recomputation catches it.
            let mut bad = proof;
            bad.challenge = bad.challenge + Scalar::ONE;
            assert!(!verify_dl(&y, &bad, b"ctx"));
        }
    }

    #[test]
    fn context_separates_challenges() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = Scalar::random(&mut rng);
        let y = Element::base_exp(&x);
        let p1 = prove_dl(&x, &y, b"a", &mut rng);
        let p2 = prove_dl(&x, &y, b"b", &mut rng);
        assert_ne!(
            dl_challenge(b"a", &y, &p1.commitment),
            dl_challenge(b"b", &y, &p1.commitment)
        );
        assert!(verify_dl(&y, &p1, b"a") && verify_dl(&y, &p2, b"b"));
    }

    #[test]
    fn codec_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = Scalar::random(&mut rng);
        let y = Element::base_exp(&x);
        let proof = prove_dl(&x, &y, b"ctx", &mut rng);
        let decoded = DlProof::decode(&proof.encode()).unwrap();
        assert_eq!(decoded, proof);
        assert_eq!(DlProof::decode(&[0u8; 5]), Err(ZkpError::Malformed));
    }

    #[test]
    fn sigma_form_verifies() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let x = Scalar::random(&mut rng);
        let y = Element::base_exp(&x);
        let (state, alpha) = DlSigma::commit_msg(&y, &x, &mut rng);
        let c = Scalar::random(&mut rng);
        let gamma = DlSigma::respond(&y, &x, &state, &c);
        assert!(DlSigma::verify(&y, &alpha, &c, &gamma));
        assert!(!DlSigma::verify(&y, &alpha, &(c + Scalar::ONE), &gamma));
    }
}
