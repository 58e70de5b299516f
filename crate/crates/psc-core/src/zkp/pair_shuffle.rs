//! OR-proof that an output ciphertext pair is a re-encryption of an input
//! pair in some order, without revealing whether the order was kept or
//! swapped.
//!
//! For branch d ∈ {0, 1} and slot k, the differences
//! U_{d,k} = out_k.a − in_{k⊕d}.a and V_{d,k} = out_k.b − in_{k⊕d}.b are
//! (g^{r_k}, y^{r_k}) exactly when branch d matches the real permutation.
//! Each branch is a two-fold Chaum-Pedersen conjunction (shared response per
//! slot); the two branches are composed with the standard challenge split
//! c_0 + c_1 = c, simulating the branch that does not hold.
//!
//! The prover is constant-time in the swap bit: both branches are computed
//! with the same operation sequence and merged with conditional selects.

use alloc::vec::Vec;

use rand_core::CryptoRngCore;
use subtle::Choice;

use super::{batch_weights, EquationAccumulator, Sigma, ZkpError, TAG_PAIR_SHUFFLE};
use crate::elgamal::Ciphertext;
use crate::group::{hash_to_scalar, Element, Scalar};

const DOMAIN: &[u8] = b"PS2";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairShuffleStatement {
    /// Joint public key the pair is encrypted under.
    pub key: Element,
    pub input: [Ciphertext; 2],
    pub output: [Ciphertext; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairShuffleProof {
    /// Per branch, per slot: commitment to the g-side equation.
    pub t_g: [[Element; 2]; 2],
    /// Per branch, per slot: commitment to the y-side equation.
    pub t_y: [[Element; 2]; 2],
    /// Branch challenges; they must sum to the transcript challenge.
    pub c: [Scalar; 2],
    /// Per branch, per slot: the shared Chaum-Pedersen response.
    pub z: [[Scalar; 2]; 2],
}

/// Constant-time component select for ciphertexts.
fn ct_select(a: &Ciphertext, b: &Ciphertext, flag: Choice) -> Ciphertext {
    Ciphertext {
        a: Element::select(&a.a, &b.a, flag),
        b: Element::select(&a.b, &b.b, flag),
    }
}

/// Re-encrypt the pair in the order given by `swap`, in constant time:
/// out_k = (in_{k⊕swap}.a + g^{r_k}, in_{k⊕swap}.b + y^{r_k}).
pub fn apply_pair_shuffle(
    key: &Element,
    input: &[Ciphertext; 2],
    swap: Choice,
    factors: &[Scalar; 2],
) -> [Ciphertext; 2] {
    let src = [
        ct_select(&input[0], &input[1], swap),
        ct_select(&input[1], &input[0], swap),
    ];
    [
        Ciphertext {
            a: src[0].a + Element::base_exp(&factors[0]),
            b: src[0].b + key.exp(&factors[0]),
        },
        Ciphertext {
            a: src[1].a + Element::base_exp(&factors[1]),
            b: src[1].b + key.exp(&factors[1]),
        },
    ]
}

fn pair_challenge(context: &[u8], stmt: &PairShuffleStatement, proof_t: &[[u8; 32]; 8]) -> Scalar {
    hash_to_scalar(
        DOMAIN,
        &[
            context,
            &stmt.key.encode(),
            &stmt.input[0].encode(),
            &stmt.input[1].encode(),
            &stmt.output[0].encode(),
            &stmt.output[1].encode(),
            &proof_t[0],
            &proof_t[1],
            &proof_t[2],
            &proof_t[3],
            &proof_t[4],
            &proof_t[5],
            &proof_t[6],
            &proof_t[7],
        ],
    )
}

fn encode_commitments(t_g: &[[Element; 2]; 2], t_y: &[[Element; 2]; 2]) -> [[u8; 32]; 8] {
    let mut out = [[0u8; 32]; 8];
    let mut i = 0;
    for d in 0..2 {
        for k in 0..2 {
            out[i] = t_g[d][k].encode();
            out[i + 1] = t_y[d][k].encode();
            i += 2;
        }
    }
    out
}

/// Commitment phase output plus everything needed to respond.
pub struct PairState {
    sw: Choice,
    t: [Scalar; 2],
    z_sim: [Scalar; 2],
    c_sim: Scalar,
    t_g: [[Element; 2]; 2],
    t_y: [[Element; 2]; 2],
}

fn pair_commit(
    stmt: &PairShuffleStatement,
    swap: bool,
    rng: &mut impl CryptoRngCore,
) -> PairState {
    let sw = Choice::from(swap as u8);
    // The simulated branch pairs out_k with in_{k⊕swap⊕1}, selected without
    // branching on the secret bit.
    let alt = [
        ct_select(&stmt.input[1], &stmt.input[0], sw),
        ct_select(&stmt.input[0], &stmt.input[1], sw),
    ];
    let u_sim = [stmt.output[0].a - alt[0].a, stmt.output[1].a - alt[1].a];
    let v_sim = [stmt.output[0].b - alt[0].b, stmt.output[1].b - alt[1].b];

    let t = [Scalar::random(rng), Scalar::random(rng)];
    let z_sim = [Scalar::random(rng), Scalar::random(rng)];
    let c_sim = Scalar::random(rng);

    let t_real_g = [Element::base_exp(&t[0]), Element::base_exp(&t[1])];
    let t_real_y = [stmt.key.exp(&t[0]), stmt.key.exp(&t[1])];
    let t_sim_g = [
        Element::base_exp(&z_sim[0]) - u_sim[0].exp(&c_sim),
        Element::base_exp(&z_sim[1]) - u_sim[1].exp(&c_sim),
    ];
    let t_sim_y = [
        stmt.key.exp(&z_sim[0]) - v_sim[0].exp(&c_sim),
        stmt.key.exp(&z_sim[1]) - v_sim[1].exp(&c_sim),
    ];

    // Branch 0 carries the real transcript exactly when swap is 0.
    let pick = |real: &[Element; 2], sim: &[Element; 2]| {
        [
            [
                Element::select(&real[0], &sim[0], sw),
                Element::select(&real[1], &sim[1], sw),
            ],
            [
                Element::select(&sim[0], &real[0], sw),
                Element::select(&sim[1], &real[1], sw),
            ],
        ]
    };
    PairState {
        sw,
        t,
        z_sim,
        c_sim,
        t_g: pick(&t_real_g, &t_sim_g),
        t_y: pick(&t_real_y, &t_sim_y),
    }
}

fn pair_respond(
    state: &PairState,
    factors: &[Scalar; 2],
    challenge: &Scalar,
) -> ([Scalar; 2], [[Scalar; 2]; 2]) {
    let c_real = *challenge - state.c_sim;
    let z_real = [
        state.t[0] + c_real * factors[0],
        state.t[1] + c_real * factors[1],
    ];
    let c = [
        Scalar::select(&c_real, &state.c_sim, state.sw),
        Scalar::select(&state.c_sim, &c_real, state.sw),
    ];
    let z = [
        [
            Scalar::select(&z_real[0], &state.z_sim[0], state.sw),
            Scalar::select(&z_real[1], &state.z_sim[1], state.sw),
        ],
        [
            Scalar::select(&state.z_sim[0], &z_real[0], state.sw),
            Scalar::select(&state.z_sim[1], &z_real[1], state.sw),
        ],
    ];
    (c, z)
}

pub fn prove_pair_shuffle(
    stmt: &PairShuffleStatement,
    swap: bool,
    factors: &[Scalar; 2],
    context: &[u8],
    rng: &mut impl CryptoRngCore,
) -> PairShuffleProof {
    let state = pair_commit(stmt, swap, rng);
    let challenge = pair_challenge(context, stmt, &encode_commitments(&state.t_g, &state.t_y));
    let (c, z) = pair_respond(&state, factors, &challenge);
    PairShuffleProof {
        t_g: state.t_g,
        t_y: state.t_y,
        c,
        z,
    }
}

/// Push one proof's eight verification equations, scaled by `weights`, onto
/// a shared accumulator.
fn pair_accumulate(
    stmt: &PairShuffleStatement,
    t_g: &[[Element; 2]; 2],
    t_y: &[[Element; 2]; 2],
    c: &[Scalar; 2],
    z: &[[Scalar; 2]; 2],
    weights: &[Scalar],
    acc: &mut EquationAccumulator,
) {
    let mut wi = 0;
    for d in 0..2 {
        for k in 0..2 {
            let u = stmt.output[k].a - stmt.input[k ^ d].a;
            let v = stmt.output[k].b - stmt.input[k ^ d].b;
            // g^{z_{d,k}} = T_{g,d,k} + c_d·U_{d,k}
            let w = weights[wi];
            acc.base_term(w * z[d][k]);
            acc.term(-(w * c[d]), &u);
            acc.term(-w, &t_g[d][k]);
            // y^{z_{d,k}} = T_{y,d,k} + c_d·V_{d,k}
            let w = weights[wi + 1];
            acc.term(w * z[d][k], &stmt.key);
            acc.term(-(w * c[d]), &v);
            acc.term(-w, &t_y[d][k]);
            wi += 2;
        }
    }
}

fn pair_equations_hold(
    stmt: &PairShuffleStatement,
    t_g: &[[Element; 2]; 2],
    t_y: &[[Element; 2]; 2],
    c: &[Scalar; 2],
    z: &[[Scalar; 2]; 2],
) -> bool {
    let mut seed = Vec::with_capacity(16 * 32);
    for row in encode_commitments(t_g, t_y) {
        seed.extend_from_slice(&row);
    }
    for d in 0..2 {
        seed.extend_from_slice(&c[d].encode());
        seed.extend_from_slice(&z[d][0].encode());
        seed.extend_from_slice(&z[d][1].encode());
    }
    let weights = batch_weights(b"PS2.eq", &[&seed], 8);
    let mut acc = EquationAccumulator::new();
    pair_accumulate(stmt, t_g, t_y, c, z, &weights, &mut acc);
    acc.holds()
}

pub fn verify_pair_shuffle(
    stmt: &PairShuffleStatement,
    proof: &PairShuffleProof,
    context: &[u8],
) -> bool {
    let challenge = pair_challenge(context, stmt, &encode_commitments(&proof.t_g, &proof.t_y));
    if proof.c[0] + proof.c[1] != challenge {
        return false;
    }
    pair_equations_hold(stmt, &proof.t_g, &proof.t_y, &proof.c, &proof.z)
}

/// Verify a whole stage of pair-shuffle proofs with one combined equation.
/// Challenge splits are still checked per proof; the group equations are
/// folded into a single multiscalar with weights seeded from every statement
/// and proof byte in the batch, so a prover cannot steer one bad proof past
/// the combined check. Rejects without naming the offending pair, which is
/// all the callers need.
pub fn verify_pair_shuffle_batch(
    stmts: &[PairShuffleStatement],
    proofs: &[PairShuffleProof],
    context: &[u8],
) -> bool {
    if stmts.len() != proofs.len() {
        return false;
    }
    if stmts.is_empty() {
        return true;
    }
    let mut seed = Vec::with_capacity(stmts.len() * (5 * 64 + 14 * 32));
    for (stmt, proof) in stmts.iter().zip(proofs) {
        let enc = encode_commitments(&proof.t_g, &proof.t_y);
        let challenge = pair_challenge(context, stmt, &enc);
        if proof.c[0] + proof.c[1] != challenge {
            return false;
        }
        seed.extend_from_slice(&stmt.key.encode());
        for ct in stmt.input.iter().chain(&stmt.output) {
            seed.extend_from_slice(&ct.encode());
        }
        for row in enc {
            seed.extend_from_slice(&row);
        }
        for d in 0..2 {
            seed.extend_from_slice(&proof.c[d].encode());
            seed.extend_from_slice(&proof.z[d][0].encode());
            seed.extend_from_slice(&proof.z[d][1].encode());
        }
    }
    let weights = batch_weights(b"PS2.batch", &[context, &seed], 8 * stmts.len());
    let mut acc = EquationAccumulator::new();
    for (i, (stmt, proof)) in stmts.iter().zip(proofs).enumerate() {
        pair_accumulate(
            stmt,
            &proof.t_g,
            &proof.t_y,
            &proof.c,
            &proof.z,
            &weights[8 * i..8 * (i + 1)],
            &mut acc,
        );
    }
    acc.holds()
}

impl PairShuffleProof {
    pub const ENCODED_LEN: usize = 1 + 14 * 32;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::ENCODED_LEN);
        out.push(TAG_PAIR_SHUFFLE);
        for row in encode_commitments(&self.t_g, &self.t_y) {
            out.extend_from_slice(&row);
        }
        out.extend_from_slice(&self.c[0].encode());
        out.extend_from_slice(&self.c[1].encode());
        for d in 0..2 {
            for k in 0..2 {
                out.extend_from_slice(&self.z[d][k].encode());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<PairShuffleProof, ZkpError> {
        if bytes.len() != Self::ENCODED_LEN || bytes[0] != TAG_PAIR_SHUFFLE {
            return Err(ZkpError::Malformed);
        }
        let at =
            |i: usize| -> &[u8] { &bytes[1 + 32 * i..33 + 32 * i] };
        let mut t_g = [[Element::identity(); 2]; 2];
        let mut t_y = [[Element::identity(); 2]; 2];
        let mut i = 0;
        for d in 0..2 {
            for k in 0..2 {
                t_g[d][k] = Element::decode(at(i)).map_err(|_| ZkpError::Malformed)?;
                t_y[d][k] = Element::decode(at(i + 1)).map_err(|_| ZkpError::Malformed)?;
                i += 2;
            }
        }
        let c = [
            Scalar::decode(at(8)).map_err(|_| ZkpError::Malformed)?,
            Scalar::decode(at(9)).map_err(|_| ZkpError::Malformed)?,
        ];
        let mut z = [[Scalar::ZERO; 2]; 2];
        let mut i = 10;
        for row in &mut z {
            for cell in row.iter_mut() {
                *cell = Scalar::decode(at(i)).map_err(|_| ZkpError::Malformed)?;
                i += 1;
            }
        }
        Ok(PairShuffleProof { t_g, t_y, c, z })
    }
}

/// 3-move form: α is the 8 commitments, γ is c_0 ‖ c_1 ‖ z (the verifier
/// checks c_0 + c_1 against its challenge).
pub struct PairShuffleSigma;

impl Sigma for PairShuffleSigma {
    type Statement = PairShuffleStatement;
    /// (swap, re-encryption factors).
    type Witness = (bool, [Scalar; 2]);
    type State = PairState;

    fn commit_msg(
        stmt: &PairShuffleStatement,
        wit: &(bool, [Scalar; 2]),
        rng: &mut impl CryptoRngCore,
    ) -> (PairState, Vec<u8>) {
        let state = pair_commit(stmt, wit.0, rng);
        let enc = encode_commitments(&state.t_g, &state.t_y);
        let mut alpha = Vec::with_capacity(8 * 32);
        for row in enc {
            alpha.extend_from_slice(&row);
        }
        (state, alpha)
    }

    fn respond(
        _stmt: &PairShuffleStatement,
        wit: &(bool, [Scalar; 2]),
        state: &PairState,
        challenge: &Scalar,
    ) -> Vec<u8> {
        let (c, z) = pair_respond(state, &wit.1, challenge);
        let mut gamma = Vec::with_capacity(6 * 32);
        gamma.extend_from_slice(&c[0].encode());
        gamma.extend_from_slice(&c[1].encode());
        for row in &z {
            for cell in row {
                gamma.extend_from_slice(&cell.encode());
            }
        }
        gamma
    }

    fn verify(stmt: &PairShuffleStatement, alpha: &[u8], challenge: &Scalar, gamma: &[u8]) -> bool {
        if alpha.len() != 8 * 32 || gamma.len() != 6 * 32 {
            return false;
        }
        let mut t_g = [[Element::identity(); 2]; 2];
        let mut t_y = [[Element::identity(); 2]; 2];
        let mut i = 0;
        for d in 0..2 {
            for k in 0..2 {
                let (Ok(g), Ok(y)) = (
                    Element::decode(&alpha[32 * i..32 * i + 32]),
                    Element::decode(&alpha[32 * i + 32..32 * i + 64]),
                ) else {
                    return false;
                };
                t_g[d][k] = g;
                t_y[d][k] = y;
                i += 2;
            }
        }
        let scalar_at = |i: usize| Scalar::decode(&gamma[32 * i..32 * i + 32]);
        let (Ok(c0), Ok(c1)) = (scalar_at(0), scalar_at(1)) else {
            return false;
        };
        if c0 + c1 != *challenge {
            return false;
        }
        let mut z = [[Scalar::ZERO; 2]; 2];
        for d in 0..2 {
            for k in 0..2 {
                let Ok(s) = scalar_at(2 + 2 * d + k) else {
                    return false;
                };
                z[d][k] = s;
            }
        }
        pair_equations_hold(stmt, &t_g, &t_y, &[c0, c1], &z)
    }
}
