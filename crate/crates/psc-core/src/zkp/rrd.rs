//! Σ-protocol for the combined re-encryption, rerandomization, and partial
//! decryption step.
//!
//! Statement: input ciphertext (A, B), output (α, β), the remaining joint
//! key y this step decrypts towards, and the prover's key share y_j = g^{x_j}.
//! Witness (r, σ, x_j) with α = (A·g^σ)^r and β = (B·y^σ)^r·α^{−x_j}.
//!
//! Moves: T1 = A^{t1}·g^{t2}, T2 = B^{t1}·y^{t2}·α^{t3}, T3 = g^{t3};
//! responses r1 = r·c + t1, r2 = σ·r·c + t2, r3 = −x_j·c + t3. The verifier
//! accepts iff A^{r1}·g^{r2} = α^c·T1, B^{r1}·y^{r2}·α^{r3} = β^c·T2, and
//! g^{r3} = y_j^{−c}·T3.

use alloc::vec::Vec;

use rand_core::CryptoRngCore;

use super::{batch_weights, EquationAccumulator, Sigma, ZkpError, TAG_RRD};
use crate::elgamal::Ciphertext;
use crate::group::{hash_to_scalar, Element, Scalar};

const DOMAIN: &[u8] = b"RRD";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RrdStatement {
    pub input: Ciphertext,
    pub output: Ciphertext,
    /// Joint key of the CPs that have not yet applied their step.
    pub key: Element,
    /// The proving CP's own public key share.
    pub share_key: Element,
}

#[derive(Debug, Clone, Copy)]
pub struct RrdWitness {
    pub r: Scalar,
    pub sigma: Scalar,
    pub x_j: Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RrdProof {
    pub t1: Element,
    pub t2: Element,
    pub t3: Element,
    pub challenge: Scalar,
    pub r1: Scalar,
    pub r2: Scalar,
    pub r3: Scalar,
}

/// Commitment randomness between the Σ-protocol moves.
#[derive(Debug, Clone, Copy)]
pub struct RrdState {
    t: [Scalar; 3],
    pub t1: Element,
    pub t2: Element,
    pub t3: Element,
}

pub fn rrd_commit(stmt: &RrdStatement, rng: &mut impl CryptoRngCore) -> RrdState {
    let t = [
        Scalar::random(rng),
        Scalar::random(rng),
        Scalar::random(rng),
    ];
    // Prover-side exponentiations stay constant-time.
    let t1 = stmt.input.a.exp(&t[0]) + Element::base_exp(&t[1]);
    let t2 = stmt.input.b.exp(&t[0]) + stmt.key.exp(&t[1]) + stmt.output.a.exp(&t[2]);
    let t3 = Element::base_exp(&t[2]);
    RrdState { t, t1, t2, t3 }
}

pub fn rrd_respond(wit: &RrdWitness, state: &RrdState, c: &Scalar) -> (Scalar, Scalar, Scalar) {
    (
        wit.r * *c + state.t[0],
        wit.sigma * wit.r * *c + state.t[1],
        -(wit.x_j * *c) + state.t[2],
    )
}

fn rrd_challenge(
    context: &[u8],
    stmt: &RrdStatement,
    t1: &Element,
    t2: &Element,
    t3: &Element,
) -> Scalar {
    hash_to_scalar(
        DOMAIN,
        &[
            context,
            &stmt.input.encode(),
            &stmt.output.encode(),
            &stmt.key.encode(),
            &stmt.share_key.encode(),
            &t1.encode(),
            &t2.encode(),
            &t3.encode(),
        ],
    )
}

pub fn prove_rrd(
    stmt: &RrdStatement,
    wit: &RrdWitness,
    context: &[u8],
    rng: &mut impl CryptoRngCore,
) -> RrdProof {
    let state = rrd_commit(stmt, rng);
    let challenge = rrd_challenge(context, stmt, &state.t1, &state.t2, &state.t3);
    let (r1, r2, r3) = rrd_respond(wit, &state, &challenge);
    RrdProof {
        t1: state.t1,
        t2: state.t2,
        t3: state.t3,
        challenge,
        r1,
        r2,
        r3,
    }
}

/// The three verification equations with an externally supplied challenge
/// (interactive mode); folded into one multiscalar check.
pub fn rrd_equations_hold(
    stmt: &RrdStatement,
    t1: &Element,
    t2: &Element,
    t3: &Element,
    c: &Scalar,
    r1: &Scalar,
    r2: &Scalar,
    r3: &Scalar,
) -> bool {
    let mut acc = EquationAccumulator::new();
    let seed_parts = [
        stmt.input.encode().to_vec(),
        stmt.output.encode().to_vec(),
        t1.encode().to_vec(),
        t2.encode().to_vec(),
        t3.encode().to_vec(),
        r1.encode().to_vec(),
        r2.encode().to_vec(),
        r3.encode().to_vec(),
    ];
    let refs: Vec<&[u8]> = seed_parts.iter().map(Vec::as_slice).collect();
    let w = batch_weights(b"RRD.eq", &refs, 3);
    accumulate_rrd(&mut acc, stmt, t1, t2, t3, c, r1, r2, r3, &w);
    acc.holds()
}

#[allow(clippy::too_many_arguments)]
fn accumulate_rrd(
    acc: &mut EquationAccumulator,
    stmt: &RrdStatement,
    t1: &Element,
    t2: &Element,
    t3: &Element,
    c: &Scalar,
    r1: &Scalar,
    r2: &Scalar,
    r3: &Scalar,
    weights: &[Scalar],
) {
    // w0 · (A^{r1} g^{r2} α^{−c} T1^{−1}) = 1
    let w = weights[0];
    acc.term(w * *r1, &stmt.input.a);
    acc.base_term(w * *r2);
    acc.term(-(w * *c), &stmt.output.a);
    acc.term(-w, t1);
    // w1 · (B^{r1} y^{r2} α^{r3} β^{−c} T2^{−1}) = 1
    let w = weights[1];
    acc.term(w * *r1, &stmt.input.b);
    acc.term(w * *r2, &stmt.key);
    acc.term(w * *r3, &stmt.output.a);
    acc.term(-(w * *c), &stmt.output.b);
    acc.term(-w, t2);
    // w2 · (g^{r3} y_j^{c} T3^{−1}) = 1
    let w = weights[2];
    acc.base_term(w * *r3);
    acc.term(w * *c, &stmt.share_key);
    acc.term(-w, t3);
}

pub fn verify_rrd(stmt: &RrdStatement, proof: &RrdProof, context: &[u8]) -> bool {
    if proof.challenge != rrd_challenge(context, stmt, &proof.t1, &proof.t2, &proof.t3) {
        return false;
    }
    rrd_equations_hold(
        stmt,
        &proof.t1,
        &proof.t2,
        &proof.t3,
        &proof.challenge,
        &proof.r1,
        &proof.r2,
        &proof.r3,
    )
}

/// Batch verification of many (statement, proof) pairs under one context,
/// folding every equation into a single multiscalar multiplication with
/// transcript-derived weights. On failure, falls back to per-proof checks
/// and returns the failing indices so blame can be localized.
pub fn verify_rrd_batch(
    items: &[(RrdStatement, RrdProof)],
    context: &[u8],
) -> Result<(), Vec<usize>> {
    if items.is_empty() {
        return Ok(());
    }
    let mut seed = Vec::with_capacity(items.len() * (4 * 64) + context.len());
    seed.extend_from_slice(context);
    for (stmt, proof) in items {
        seed.extend_from_slice(&stmt.input.encode());
        seed.extend_from_slice(&stmt.output.encode());
        seed.extend_from_slice(&stmt.key.encode());
        seed.extend_from_slice(&stmt.share_key.encode());
        seed.extend_from_slice(&proof.encode());
    }
    let weights = batch_weights(b"RRD.batch", &[&seed], 3 * items.len());
    let mut acc = EquationAccumulator::new();
    let mut challenges_ok = true;
    for (i, (stmt, proof)) in items.iter().enumerate() {
        if proof.challenge != rrd_challenge(context, stmt, &proof.t1, &proof.t2, &proof.t3) {
            challenges_ok = false;
            break;
        }
        accumulate_rrd(
            &mut acc,
            stmt,
            &proof.t1,
            &proof.t2,
            &proof.t3,
            &proof.challenge,
            &proof.r1,
            &proof.r2,
            &proof.r3,
            &weights[3 * i..3 * i + 3],
        );
    }
    if challenges_ok && acc.holds() {
        return Ok(());
    }
    let failing: Vec<usize> = items
        .iter()
        .enumerate()
        .filter(|(_, (stmt, proof))| !verify_rrd(stmt, proof, context))
        .map(|(i, _)| i)
        .collect();
    // The batch can only fail if some member fails.
    debug_assert!(!failing.is_empty());
    Err(failing)
}

/// Special-soundness extractor: two accepting transcripts with the same
/// commitments and distinct challenges yield the witness.
pub fn extract_rrd(p1: &RrdProof, p2: &RrdProof) -> Result<RrdWitness, ZkpError> {
    if p1.challenge == p2.challenge {
        return Err(ZkpError::SameChallenge);
    }
    let dc_inv = (p1.challenge - p2.challenge).invert();
    let r = (p1.r1 - p2.r1) * dc_inv;
    let sigma = (p1.r2 - p2.r2) * dc_inv * r.invert();
    let x_j = -((p1.r3 - p2.r3) * dc_inv);
    Ok(RrdWitness { r, sigma, x_j })
}

impl RrdProof {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 7 * 32);
        out.push(TAG_RRD);
        for e in [&self.t1, &self.t2, &self.t3] {
            out.extend_from_slice(&e.encode());
        }
        for s in [&self.challenge, &self.r1, &self.r2, &self.r3] {
            out.extend_from_slice(&s.encode());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<RrdProof, ZkpError> {
        if bytes.len() != 1 + 7 * 32 || bytes[0] != TAG_RRD {
            return Err(ZkpError::Malformed);
        }
        let e = |i: usize| Element::decode(&bytes[1 + 32 * i..33 + 32 * i]);
        let s = |i: usize| Scalar::decode(&bytes[1 + 32 * i..33 + 32 * i]);
        Ok(RrdProof {
            t1: e(0).map_err(|_| ZkpError::Malformed)?,
            t2: e(1).map_err(|_| ZkpError::Malformed)?,
            t3: e(2).map_err(|_| ZkpError::Malformed)?,
            challenge: s(3).map_err(|_| ZkpError::Malformed)?,
            r1: s(4).map_err(|_| ZkpError::Malformed)?,
            r2: s(5).map_err(|_| ZkpError::Malformed)?,
            r3: s(6).map_err(|_| ZkpError::Malformed)?,
        })
    }
}

/// 3-move form for the interactive compiler: α = T1‖T2‖T3, γ = r1‖r2‖r3.
pub struct RrdSigma;

impl Sigma for RrdSigma {
    type Statement = RrdStatement;
    type Witness = RrdWitness;
    type State = RrdState;

    fn commit_msg(
        stmt: &RrdStatement,
        _wit: &RrdWitness,
        rng: &mut impl CryptoRngCore,
    ) -> (RrdState, Vec<u8>) {
        let state = rrd_commit(stmt, rng);
        let mut alpha = Vec::with_capacity(96);
        alpha.extend_from_slice(&state.t1.encode());
        alpha.extend_from_slice(&state.t2.encode());
        alpha.extend_from_slice(&state.t3.encode());
        (state, alpha)
    }

    fn respond(
        _stmt: &RrdStatement,
        wit: &RrdWitness,
        state: &RrdState,
        challenge: &Scalar,
    ) -> Vec<u8> {
        let (r1, r2, r3) = rrd_respond(wit, state, challenge);
        let mut gamma = Vec::with_capacity(96);
        gamma.extend_from_slice(&r1.encode());
        gamma.extend_from_slice(&r2.encode());
        gamma.extend_from_slice(&r3.encode());
        gamma
    }

    fn verify(stmt: &RrdStatement, alpha: &[u8], challenge: &Scalar, gamma: &[u8]) -> bool {
        if alpha.len() != 96 || gamma.len() != 96 {
            return false;
        }
        let (Ok(t1), Ok(t2), Ok(t3)) = (
            Element::decode(&alpha[..32]),
            Element::decode(&alpha[32..64]),
            Element::decode(&alpha[64..]),
        ) else {
            return false;
        };
        let (Ok(r1), Ok(r2), Ok(r3)) = (
            Scalar::decode(&gamma[..32]),
            Scalar::decode(&gamma[32..64]),
            Scalar::decode(&gamma[64..]),
        ) else {
            return false;
        };
        rrd_equations_hold(stmt, &t1, &t2, &t3, challenge, &r1, &r2, &r3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elgamal::{encrypt, rrd_step, JointPublicKey, KeyShare};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn sample(rng: &mut ChaCha20Rng, message: u64) -> (RrdStatement, RrdWitness) {
        // Two shares; the prover is the first, so the remaining key covers
        // both shares.
        let s0 = KeyShare::generate(0, rng);
        let s1 = KeyShare::generate(1, rng);
        let joint = JointPublicKey::from_shares(alloc::vec![s0.public, s1.public]);
        let y = joint.remaining(0);
        let input = encrypt(&joint, &Scalar::from_u64(message), &Scalar::random(rng));
        let sigma = Scalar::random(rng);
        let r = Scalar::random(rng);
        let output = rrd_step(&input, &y, &s0, &sigma, &r).unwrap();
        (
            RrdStatement {
                input,
                output,
                key: y,
                share_key: s0.public,
            },
            RrdWitness {
                r,
                sigma,
                x_j: s0.secret,
            },
        )
    }

    #[test]
    fn completeness_and_bindings() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        for i in 0..30 {
            let (stmt, wit) = sample(&mut rng, i % 4);
            let proof = prove_rrd(&stmt, &wit, b"ctx", &mut rng);
            assert!(verify_rrd(&stmt, &proof, b"ctx"));
            assert!(!verify_rrd(&stmt, &proof, b"other"));

            // α shifted by g.
            let mut bad = stmt;
            bad.output.a = bad.output.a + Element::generator();
            assert!(!verify_rrd(&bad, &proof, b"ctx"));

            // Another CP's share key in the third equation.
            let mut bad = stmt;
            bad.share_key = Element::base_exp(&Scalar::random(&mut rng));
            assert!(!verify_rrd(&bad, &proof, b"ctx"));

            // Statement element reordering (swap key and share key).
            let swapped = RrdStatement {
                input: stmt.input,
                output: stmt.output,
                key: stmt.share_key,
                share_key: stmt.key,
            };
            assert!(!verify_rrd(&swapped, &proof, b"ctx"));
        }
    }

    #[test]
    fn extractor_recovers_witness() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (stmt, wit) = sample(&mut rng, 1);
            let state = rrd_commit(&stmt, &mut rng);
            let c1 = Scalar::random(&mut rng);
            let c2 = Scalar::random(&mut rng);
            let fork = |c: &Scalar| {
                let (r1, r2, r3) = rrd_respond(&wit, &state, c);
                RrdProof {
                    t1: state.t1,
                    t2: state.t2,
                    t3: state.t3,
                    challenge: *c,
                    r1,
                    r2,
                    r3,
                }
            };
            let (p1, p2) = (fork(&c1), fork(&c2));
            assert!(rrd_equations_hold(
                &stmt, &p1.t1, &p1.t2, &p1.t3, &p1.challenge, &p1.r1, &p1.r2, &p1.r3
            ));
            let extracted = extract_rrd(&p1, &p2).unwrap();
            assert_eq!(extracted.r, wit.r);
            assert_eq!(extracted.sigma, wit.sigma);
            assert_eq!(extracted.x_j, wit.x_j);
            // Extracted witness re-proves.
            let reproof = prove_rrd(&stmt, &extracted, b"ctx", &mut rng);
            assert!(verify_rrd(&stmt, &reproof, b"ctx"));
        }
    }

    #[test]
    fn same_challenge_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let (stmt, wit) = sample(&mut rng, 1);
        let proof = prove_rrd(&stmt, &wit, b"ctx", &mut rng);
        assert!(matches!(
            extract_rrd(&proof, &proof),
            Err(ZkpError::SameChallenge)
        ));
    }

    #[test]
    fn batch_verifies_and_localizes() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let mut items: Vec<(RrdStatement, RrdProof)> = (0..8)
            .map(|i| {
                let (stmt, wit) = sample(&mut rng, i % 3);
                let proof = prove_rrd(&stmt, &wit, b"ctx", &mut rng);
                (stmt, proof)
            })
            .collect();
        assert!(verify_rrd_batch(&items, b"ctx").is_ok());
        items[3].1.r1 = items[3].1.r1 + Scalar::ONE;
        items[6].1.r2 = items[6].1.r2 + Scalar::ONE;
        assert_eq!(verify_rrd_batch(&items, b"ctx"), Err(alloc::vec![3, 6]));
    }

    #[test]
    fn codec_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let (stmt, wit) = sample(&mut rng, 2);
        let proof = prove_rrd(&stmt, &wit, b"ctx", &mut rng);
        assert_eq!(RrdProof::decode(&proof.encode()).unwrap(), proof);
    }
}
