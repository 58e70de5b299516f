//! Interactive one-to-many mode for 3-move Σ-protocols.
//!
//! The prover runs n parallel instances: it broadcasts the n commitment
//! messages, a pair of candidate challenges per instance, and hash
//! commitments to both responses. A committee coin flip then selects one
//! challenge per instance and the prover opens only the chosen responses.
//! A prover without a witness can prepare at most one verifying
//! (challenge, response) per instance, so it survives the coin flip with
//! probability 2^-n.
//!
//! Rounds: (1) prover broadcasts `Round1`; (2) verifiers run
//! `validate_round1` and jointly flip n coins (hash commitments composed
//! with `coin_flip_combine`); (3) prover broadcasts `open_chosen`;
//! (4) verifiers run `verify_transcript`.

use alloc::vec::Vec;

use rand_core::CryptoRngCore;

use super::commit::{commit, verify_opening, Commitment, Opening};
use super::Sigma;
use crate::group::Scalar;

/// Default instance count; callers may lower it in tests.
pub const INTERACTIVE_REPETITIONS: usize = 40;

/// The prover's first broadcast: per instance, the commitment message, two
/// candidate challenges, and hash commitments to the two responses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Round1 {
    pub alphas: Vec<Vec<u8>>,
    pub beta0: Vec<Scalar>,
    pub beta1: Vec<Scalar>,
    pub commitments: Vec<[Commitment; 2]>,
}

/// Response openings the prover keeps private until the coins land.
pub struct ProverState {
    openings: Vec<[Opening; 2]>,
}

/// Everything a verifier needs after the protocol completes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractiveTranscript {
    pub round1: Round1,
    pub coins: Vec<bool>,
    pub openings: Vec<Opening>,
}

pub fn prove_round1<S: Sigma>(
    stmt: &S::Statement,
    wit: &S::Witness,
    repetitions: usize,
    rng: &mut impl CryptoRngCore,
) -> (ProverState, Round1) {
    let mut alphas = Vec::with_capacity(repetitions);
    let mut beta0 = Vec::with_capacity(repetitions);
    let mut beta1 = Vec::with_capacity(repetitions);
    let mut commitments = Vec::with_capacity(repetitions);
    let mut openings = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let (state, alpha) = S::commit_msg(stmt, wit, rng);
        let b0 = Scalar::random(rng);
        // Resampling keeps the candidate pair distinct; a collision has
        // probability ~2^-252 but the validity check is mandatory.
        let b1 = loop {
            let candidate = Scalar::random(rng);
            if candidate != b0 {
                break candidate;
            }
        };
        let g0 = S::respond(stmt, wit, &state, &b0);
        let g1 = S::respond(stmt, wit, &state, &b1);
        let (c0, o0) = commit(&g0, rng);
        let (c1, o1) = commit(&g1, rng);
        alphas.push(alpha);
        beta0.push(b0);
        beta1.push(b1);
        commitments.push([c0, c1]);
        openings.push([o0, o1]);
    }
    (
        ProverState { openings },
        Round1 {
            alphas,
            beta0,
            beta1,
            commitments,
        },
    )
}

/// Structural checks every verifier applies before the coin flip: vectors
/// agree in length and are nonempty, commitment messages are pairwise
/// distinct, and each challenge pair is distinct.
pub fn validate_round1(round1: &Round1) -> bool {
    let n = round1.alphas.len();
    if n == 0
        || round1.beta0.len() != n
        || round1.beta1.len() != n
        || round1.commitments.len() != n
    {
        return false;
    }
    for i in 0..n {
        if round1.beta0[i] == round1.beta1[i] {
            return false;
        }
        for j in 0..i {
            if round1.alphas[i] == round1.alphas[j] {
                return false;
            }
        }
    }
    true
}

/// After the coins land, release the opening for the chosen response of
/// each instance. Coin `false` selects the beta0 response.
pub fn open_chosen(state: &ProverState, coins: &[bool]) -> Vec<Opening> {
    state
        .openings
        .iter()
        .zip(coins)
        .map(|(pair, &coin)| pair[coin as usize].clone())
        .collect()
}

pub fn verify_transcript<S: Sigma>(stmt: &S::Statement, tr: &InteractiveTranscript) -> bool {
    if !validate_round1(&tr.round1) {
        return false;
    }
    let n = tr.round1.alphas.len();
    if tr.coins.len() != n || tr.openings.len() != n {
        return false;
    }
    for i in 0..n {
        let pick = tr.coins[i] as usize;
        if !verify_opening(&tr.round1.commitments[i][pick], &tr.openings[i]) {
            return false;
        }
        let challenge = if tr.coins[i] {
            &tr.round1.beta1[i]
        } else {
            &tr.round1.beta0[i]
        };
        if !S::verify(
            stmt,
            &tr.round1.alphas[i],
            challenge,
            &tr.openings[i].value,
        ) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::Element;
    use crate::zkp::dl::DlSigma;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn flip_coins(n: usize, rng: &mut ChaCha20Rng) -> Vec<bool> {
        (0..n).map(|_| rng.next_u32() & 1 == 1).collect()
    }

    #[test]
    fn honest_prover_accepted() {
        let mut rng = ChaCha20Rng::seed_from_u64(50);
        let x = Scalar::random(&mut rng);
        let y = Element::base_exp(&x);
        let (state, round1) = prove_round1::<DlSigma>(&y, &x, INTERACTIVE_REPETITIONS, &mut rng);
        assert!(validate_round1(&round1));
        let coins = flip_coins(INTERACTIVE_REPETITIONS, &mut rng);
        let openings = open_chosen(&state, &coins);
        let tr = InteractiveTranscript {
            round1,
            coins,
            openings,
        };
        assert!(verify_transcript::<DlSigma>(&y, &tr));
        // Same transcript against another statement fails.
        let other = Element::base_exp(&Scalar::random(&mut rng));
        assert!(!verify_transcript::<DlSigma>(&other, &tr));
    }

    #[test]
    fn malformed_round1_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(51);
        let x = Scalar::random(&mut rng);
        let y = Element::base_exp(&x);
        let (_, round1) = prove_round1::<DlSigma>(&y, &x, 8, &mut rng);

        let mut bad = round1.clone();
        bad.beta1[3] = bad.beta0[3];
        assert!(!validate_round1(&bad));

        let mut bad = round1.clone();
        bad.alphas[5] = bad.alphas[2].clone();
        assert!(!validate_round1(&bad));

        let mut bad = round1.clone();
        bad.commitments.pop();
        assert!(!validate_round1(&bad));
    }

    #[test]
    fn wrong_opening_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(52);
        let x = Scalar::random(&mut rng);
        let y = Element::base_exp(&x);
        let n = 8;
        let (state, round1) = prove_round1::<DlSigma>(&y, &x, n, &mut rng);
        let coins = flip_coins(n, &mut rng);
        let mut openings = open_chosen(&state, &coins);
        // Swap in the opening for the coin's sibling on one instance.
        openings[2] = state.openings[2][(!coins[2]) as usize].clone();
        let tr = InteractiveTranscript {
            round1,
            coins,
            openings,
        };
        assert!(!verify_transcript::<DlSigma>(&y, &tr));
    }

    /// A prover without the witness prepares each instance for exactly one
    /// of its two candidate challenges (simulating that transcript) and
    /// bluffs the other; random coins catch it except with probability
    /// 2^-n.
    #[test]
    fn cheating_prover_caught_by_coins() {
        let mut rng = ChaCha20Rng::seed_from_u64(53);
        let y = Element::base_exp(&Scalar::random(&mut rng));
        let n = 16;
        let mut alphas = Vec::new();
        let mut beta0 = Vec::new();
        let mut beta1 = Vec::new();
        let mut commitments = Vec::new();
        let mut prepared = Vec::new();
        for _ in 0..n {
            // Simulate the beta0 branch: pick z, set T = g^z · Y^{-b0}.
            let b0 = Scalar::random(&mut rng);
            let b1 = Scalar::random(&mut rng);
            let z = Scalar::random(&mut rng);
            let t = Element::vartime_exp_with_base(&-b0, &y, &z);
            let junk = Scalar::random(&mut rng);
            let (c0, o0) = crate::zkp::commit(&z.encode(), &mut rng);
            let (c1, o1) = crate::zkp::commit(&junk.encode(), &mut rng);
            alphas.push(t.encode().to_vec());
            beta0.push(b0);
            beta1.push(b1);
            commitments.push([c0, c1]);
            prepared.push([o0, o1]);
        }
        let round1 = Round1 {
            alphas,
            beta0,
            beta1,
            commitments,
        };
        assert!(validate_round1(&round1));
        let coins = flip_coins(n, &mut rng);
        let state = ProverState { openings: prepared };
        let openings = open_chosen(&state, &coins);
        let tr = InteractiveTranscript {
            round1,
            coins: coins.clone(),
            openings,
        };
        // The cheater survives only if every coin chose the simulated
        // branch; with 16 honest coins that is a 2^-16 fluke, and this seed
        // is not it.
        assert!(coins.iter().any(|&c| c));
        assert!(!verify_transcript::<DlSigma>(&y, &tr));
    }
}
