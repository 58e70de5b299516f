//! Verifiable re-encryption shuffle for ciphertext vectors (commitment-
//! consistent proof of a shuffle in the Terelius-Wikström style).
//!
//! The prover commits to its permutation as a vector of Pedersen
//! commitments over independent generators, chains a second commitment
//! vector along challenge-derived scalars so the committed matrix is
//! provably a permutation matrix, and ties both to the re-encryption
//! relation Σ u'_i·out_i = Σ u_j·in_j + E(0; r') with one combined
//! Σ-protocol. Verification folds every equation into a single multiscalar
//! multiplication with transcript-derived weights.
//!
//! Prover-side exponentiations use constant-time operations because the
//! exponents (chain scalars, masks) are correlated with the hidden
//! permutation. Array indexing by the permutation itself is not hardened
//! against cache probes, matching reference mixnet implementations.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::CryptoRngCore;

use super::{batch_weights, EquationAccumulator, ZkpError, TAG_SHUFFLE};
use crate::elgamal::Ciphertext;
use crate::group::{hash_bytes, hash_to_element, hash_to_scalar, Element, Scalar};

const DOMAIN_GEN: &[u8] = b"SHUF.gen";
const DOMAIN_PREFIX: &[u8] = b"SHUF.prefix";
const DOMAIN_U: &[u8] = b"SHUF.u";
const DOMAIN_C: &[u8] = b"SHUF.c";
const DOMAIN_W: &[u8] = b"SHUF.w";

/// Independent commitment generators: index 0 seeds the chained commitment,
/// indices 1..=count back the permutation commitments. Derived by hashing,
/// so no party knows their relative discrete logs.
pub fn derive_generators(count: usize, seed: &[u8]) -> Vec<Element> {
    (0..=count as u64)
        .map(|i| hash_to_element(DOMAIN_GEN, &[seed, &i.to_be_bytes()]))
        .collect()
}

/// out[i] = reencrypt(in[perm[i]], factors[i]); factors are output-indexed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShuffleWitness {
    pub perm: Vec<usize>,
    pub factors: Vec<Scalar>,
}

/// Uniform random permutation of 0..n (Fisher-Yates; the u64 modulo bias is
/// below 2^-40 for any vector this protocol shuffles).
pub fn random_permutation(n: usize, rng: &mut impl CryptoRngCore) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Re-encrypt `inputs` in a fresh random order under `key`, returning the
/// outputs together with the witness needed to prove the shuffle.
pub fn shuffle(
    key: &Element,
    inputs: &[Ciphertext],
    rng: &mut impl CryptoRngCore,
) -> (Vec<Ciphertext>, ShuffleWitness) {
    let perm = random_permutation(inputs.len(), rng);
    let factors: Vec<Scalar> = (0..inputs.len()).map(|_| Scalar::random(rng)).collect();
    let outputs = perm
        .iter()
        .zip(&factors)
        .map(|(&j, s)| Ciphertext {
            a: inputs[j].a + Element::base_exp(s),
            b: inputs[j].b + key.exp(s),
        })
        .collect();
    (outputs, ShuffleWitness { perm, factors })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShuffleProof {
    /// Permutation commitments (input-indexed).
    pub cs: Vec<Element>,
    /// Chained commitments along the permuted challenge scalars.
    pub c_hats: Vec<Element>,
    pub t1: Element,
    pub t2: Element,
    pub t3: Element,
    pub t41: Element,
    pub t42: Element,
    pub t_hats: Vec<Element>,
    pub s1: Scalar,
    pub s2: Scalar,
    pub s3: Scalar,
    pub s4: Scalar,
    pub s_hats: Vec<Scalar>,
    pub s_primes: Vec<Scalar>,
}

fn encode_cts(cts: &[Ciphertext]) -> Vec<u8> {
    let mut out = Vec::with_capacity(cts.len() * 64);
    for ct in cts {
        out.extend_from_slice(&ct.encode());
    }
    out
}

fn encode_points(points: &[Element]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 32);
    for p in points {
        out.extend_from_slice(&p.encode());
    }
    out
}

/// Statement prefix binding context, key, both vectors, and the permutation
/// commitments; the per-position challenge scalars derive from it.
fn statement_prefix(
    context: &[u8],
    key: &Element,
    inputs: &[Ciphertext],
    outputs: &[Ciphertext],
    cs: &[Element],
) -> [u8; 32] {
    hash_bytes(
        DOMAIN_PREFIX,
        &[
            context,
            &key.encode(),
            &encode_cts(inputs),
            &encode_cts(outputs),
            &encode_points(cs),
        ],
    )
}

fn position_challenges(prefix: &[u8; 32], n: usize) -> Vec<Scalar> {
    (0..n as u64)
        .map(|j| hash_to_scalar(DOMAIN_U, &[prefix, &j.to_be_bytes()]))
        .collect()
}

struct Transcript {
    prefix: [u8; 32],
    c_hats: Vec<Element>,
    t1: Element,
    t2: Element,
    t3: Element,
    t41: Element,
    t42: Element,
    t_hats: Vec<Element>,
}

fn main_challenge(tr: &Transcript) -> Scalar {
    hash_to_scalar(
        DOMAIN_C,
        &[
            &tr.prefix,
            &encode_points(&tr.c_hats),
            &tr.t1.encode(),
            &tr.t2.encode(),
            &tr.t3.encode(),
            &tr.t41.encode(),
            &tr.t42.encode(),
            &encode_points(&tr.t_hats),
        ],
    )
}

pub fn prove_shuffle(
    key: &Element,
    inputs: &[Ciphertext],
    outputs: &[Ciphertext],
    witness: &ShuffleWitness,
    generators: &[Element],
    context: &[u8],
    rng: &mut impl CryptoRngCore,
) -> Result<ShuffleProof, ZkpError> {
    let n = inputs.len();
    if n == 0
        || outputs.len() != n
        || witness.perm.len() != n
        || witness.factors.len() != n
        || generators.len() < n + 1
    {
        return Err(ZkpError::LengthMismatch);
    }
    let h0 = generators[0];
    let hs = &generators[1..=n];

    // Permutation commitments: for output position i with j = perm[i],
    // cs[j] = g^{t_j} + h_i.
    let mut ts = vec![Scalar::ZERO; n];
    let mut cs = vec![Element::identity(); n];
    for (i, &j) in witness.perm.iter().enumerate() {
        ts[j] = Scalar::random(rng);
        cs[j] = Element::base_exp(&ts[j]) + hs[i];
    }

    let prefix = statement_prefix(context, key, inputs, outputs, &cs);
    let us = position_challenges(&prefix, n);
    let u_primes: Vec<Scalar> = witness.perm.iter().map(|&j| us[j]).collect();

    // Chained commitments ĉ_i = g^{r̂_i} + u'_i·ĉ_{i-1}, ĉ_{-1} = h0.
    let r_hats: Vec<Scalar> = (0..n).map(|_| Scalar::random(rng)).collect();
    let mut c_hats = Vec::with_capacity(n);
    let mut prev = h0;
    for i in 0..n {
        let c_hat = Element::base_exp(&r_hats[i]) + prev.exp(&u_primes[i]);
        c_hats.push(c_hat);
        prev = c_hat;
    }

    // Suffix products vs[i] = Π_{k>i} u'_k and the response aggregates.
    let mut vs = vec![Scalar::ONE; n];
    for i in (0..n - 1).rev() {
        vs[i] = u_primes[i + 1] * vs[i + 1];
    }
    let r_bar = ts.iter().fold(Scalar::ZERO, |acc, t| acc + *t);
    let r_hat = r_hats
        .iter()
        .zip(&vs)
        .fold(Scalar::ZERO, |acc, (r, v)| acc + *r * *v);
    let r_tilde = ts
        .iter()
        .zip(&us)
        .fold(Scalar::ZERO, |acc, (t, u)| acc + *t * *u);
    let r_prime = witness
        .factors
        .iter()
        .zip(&u_primes)
        .fold(Scalar::ZERO, |acc, (f, u)| acc + *f * *u);

    let omega: [Scalar; 4] = core::array::from_fn(|_| Scalar::random(rng));
    let omega_hats: Vec<Scalar> = (0..n).map(|_| Scalar::random(rng)).collect();
    let omega_primes: Vec<Scalar> = (0..n).map(|_| Scalar::random(rng)).collect();

    let out_a: Vec<Element> = outputs.iter().map(|c| c.a).collect();
    let out_b: Vec<Element> = outputs.iter().map(|c| c.b).collect();

    let t1 = Element::base_exp(&omega[0]);
    let t2 = Element::base_exp(&omega[1]);
    // The masks ω' blind permutation-dependent scalars, so these sums must
    // not go through the variable-time path.
    let t3 = Element::base_exp(&omega[2]) + Element::multiscalar(&omega_primes, hs);
    let t41 = -key.exp(&omega[3]) + Element::multiscalar(&omega_primes, &out_b);
    let t42 = -Element::base_exp(&omega[3]) + Element::multiscalar(&omega_primes, &out_a);
    let mut t_hats = Vec::with_capacity(n);
    for i in 0..n {
        let prev = if i == 0 { h0 } else { c_hats[i - 1] };
        t_hats.push(Element::base_exp(&omega_hats[i]) + prev.exp(&omega_primes[i]));
    }

    let c = main_challenge(&Transcript {
        prefix,
        c_hats: c_hats.clone(),
        t1,
        t2,
        t3,
        t41,
        t42,
        t_hats: t_hats.clone(),
    });

    let s_hats: Vec<Scalar> = omega_hats
        .iter()
        .zip(&r_hats)
        .map(|(w, r)| *w + c * *r)
        .collect();
    let s_primes: Vec<Scalar> = omega_primes
        .iter()
        .zip(&u_primes)
        .map(|(w, u)| *w + c * *u)
        .collect();

    Ok(ShuffleProof {
        cs,
        c_hats,
        t1,
        t2,
        t3,
        t41,
        t42,
        t_hats,
        s1: omega[0] + c * r_bar,
        s2: omega[1] + c * r_hat,
        s3: omega[2] + c * r_tilde,
        s4: omega[3] + c * r_prime,
        s_hats,
        s_primes,
    })
}

/// Ok(true) iff the proof verifies. Err(LengthMismatch) when the statement
/// vectors disagree in length (or are empty) or the generator vector is too
/// short; a structurally broken proof returns Ok(false).
pub fn verify_shuffle(
    key: &Element,
    inputs: &[Ciphertext],
    outputs: &[Ciphertext],
    proof: &ShuffleProof,
    generators: &[Element],
    context: &[u8],
) -> Result<bool, ZkpError> {
    let n = inputs.len();
    if n == 0 || outputs.len() != n || generators.len() < n + 1 {
        return Err(ZkpError::LengthMismatch);
    }
    if proof.cs.len() != n
        || proof.c_hats.len() != n
        || proof.t_hats.len() != n
        || proof.s_hats.len() != n
        || proof.s_primes.len() != n
    {
        return Ok(false);
    }
    let h0 = generators[0];
    let hs = &generators[1..=n];

    let prefix = statement_prefix(context, key, inputs, outputs, &proof.cs);
    let us = position_challenges(&prefix, n);
    let c = main_challenge(&Transcript {
        prefix,
        c_hats: proof.c_hats.clone(),
        t1: proof.t1,
        t2: proof.t2,
        t3: proof.t3,
        t41: proof.t41,
        t42: proof.t42,
        t_hats: proof.t_hats.clone(),
    });

    // Aggregates over public data.
    let ones = vec![Scalar::ONE; n];
    let c_bar = Element::vartime_multiscalar(&ones, &proof.cs)
        - Element::vartime_multiscalar(&ones, hs);
    let u_product = us.iter().fold(Scalar::ONE, |acc, u| acc * *u);
    let c_hat_agg = proof.c_hats[n - 1] - h0.exp(&u_product);
    let c_tilde = Element::vartime_multiscalar(&us, &proof.cs);
    let in_a: Vec<Element> = inputs.iter().map(|ct| ct.a).collect();
    let in_b: Vec<Element> = inputs.iter().map(|ct| ct.b).collect();
    let big_a = Element::vartime_multiscalar(&us, &in_a);
    let big_b = Element::vartime_multiscalar(&us, &in_b);

    // Fold the 5 + n verification equations into one multiscalar check with
    // weights derived from the full transcript.
    let mut seed = Vec::with_capacity((5 * n + 12) * 32 + 32);
    seed.extend_from_slice(&prefix);
    seed.extend_from_slice(&encode_points(&proof.c_hats));
    for t in [proof.t1, proof.t2, proof.t3, proof.t41, proof.t42] {
        seed.extend_from_slice(&t.encode());
    }
    seed.extend_from_slice(&encode_points(&proof.t_hats));
    for s in [proof.s1, proof.s2, proof.s3, proof.s4] {
        seed.extend_from_slice(&s.encode());
    }
    for s in proof.s_hats.iter().chain(&proof.s_primes) {
        seed.extend_from_slice(&s.encode());
    }
    let w = batch_weights(DOMAIN_W, &[&seed], 5 + n);

    let mut acc = EquationAccumulator::new();
    // t1 = -c·c_bar + s1·g
    acc.term(w[0], &proof.t1);
    acc.term(w[0] * c, &c_bar);
    acc.base_term(-(w[0] * proof.s1));
    // t2 = -c·c_hat_agg + s2·g
    acc.term(w[1], &proof.t2);
    acc.term(w[1] * c, &c_hat_agg);
    acc.base_term(-(w[1] * proof.s2));
    // t3 = -c·c_tilde + s3·g + Σ s'_i·h_i
    acc.term(w[2], &proof.t3);
    acc.term(w[2] * c, &c_tilde);
    acc.base_term(-(w[2] * proof.s3));
    for (s, h) in proof.s_primes.iter().zip(hs) {
        acc.term(-(w[2] * *s), h);
    }
    // t41 = -c·big_b − s4·y + Σ s'_i·out_i.b
    acc.term(w[3], &proof.t41);
    acc.term(w[3] * c, &big_b);
    acc.term(w[3] * proof.s4, key);
    for (s, ct) in proof.s_primes.iter().zip(outputs) {
        acc.term(-(w[3] * *s), &ct.b);
    }
    // t42 = -c·big_a − s4·g + Σ s'_i·out_i.a
    acc.term(w[4], &proof.t42);
    acc.term(w[4] * c, &big_a);
    acc.base_term(w[4] * proof.s4);
    for (s, ct) in proof.s_primes.iter().zip(outputs) {
        acc.term(-(w[4] * *s), &ct.a);
    }
    // t̂_i = -c·ĉ_i + ŝ_i·g + s'_i·ĉ_{i-1}
    for i in 0..n {
        let wi = w[5 + i];
        let prev = if i == 0 { h0 } else { proof.c_hats[i - 1] };
        acc.term(wi, &proof.t_hats[i]);
        acc.term(wi * c, &proof.c_hats[i]);
        acc.base_term(-(wi * proof.s_hats[i]));
        acc.term(-(wi * proof.s_primes[i]), &prev);
    }
    Ok(acc.holds())
}

impl ShuffleProof {
    pub fn encode(&self) -> Vec<u8> {
        let n = self.cs.len();
        let mut out = Vec::with_capacity(1 + 4 + (5 * n + 9) * 32);
        out.push(TAG_SHUFFLE);
        out.extend_from_slice(&(n as u32).to_be_bytes());
        out.extend_from_slice(&encode_points(&self.cs));
        out.extend_from_slice(&encode_points(&self.c_hats));
        for t in [self.t1, self.t2, self.t3, self.t41, self.t42] {
            out.extend_from_slice(&t.encode());
        }
        out.extend_from_slice(&encode_points(&self.t_hats));
        for s in [self.s1, self.s2, self.s3, self.s4] {
            out.extend_from_slice(&s.encode());
        }
        for s in self.s_hats.iter().chain(&self.s_primes) {
            out.extend_from_slice(&s.encode());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<ShuffleProof, ZkpError> {
        if bytes.len() < 5 || bytes[0] != TAG_SHUFFLE {
            return Err(ZkpError::Malformed);
        }
        let n = u32::from_be_bytes(bytes[1..5].try_into().unwrap()) as usize;
        if n == 0 || bytes.len() != 5 + (5 * n + 9) * 32 {
            return Err(ZkpError::Malformed);
        }
        let mut off = 5;
        let mut next = || {
            let piece = &bytes[off..off + 32];
            off += 32;
            piece
        };
        let mut points = |count: usize| -> Result<Vec<Element>, ZkpError> {
            (0..count)
                .map(|_| Element::decode(next()).map_err(|_| ZkpError::Malformed))
                .collect()
        };
        let cs = points(n)?;
        let c_hats = points(n)?;
        let head = points(5)?;
        let t_hats = points(n)?;
        let mut scalars = |count: usize| -> Result<Vec<Scalar>, ZkpError> {
            (0..count)
                .map(|_| Scalar::decode(next()).map_err(|_| ZkpError::Malformed))
                .collect()
        };
        let s_head = scalars(4)?;
        let s_hats = scalars(n)?;
        let s_primes = scalars(n)?;
        Ok(ShuffleProof {
            cs,
            c_hats,
            t1: head[0],
            t2: head[1],
            t3: head[2],
            t41: head[3],
            t42: head[4],
            t_hats,
            s1: s_head[0],
            s2: s_head[1],
            s3: s_head[2],
            s4: s_head[3],
            s_hats,
            s_primes,
        })
    }
}
