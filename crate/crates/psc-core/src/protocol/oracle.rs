//! Ideal-functionality reference: computes the measurement straight from
//! the observation sets, with noise re-derived from the same named
//! substreams the computation parties draw from. Differential tests compare
//! a full protocol run against this oracle under a shared session seed and
//! expect exact integer equality.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{Mode, ProtocolParams};
use super::rng::{substream, swap_bits, LABEL_NOISE_SWAP};
use crate::wire::PartyId;

/// Final noise bit per slot: the XOR of every CP's swap bit, since each
/// swap flips which element of the (0, 1) pair ends up first.
pub fn noise_bits(session_seed: &[u8; 32], cp_ids: &[PartyId], n: usize) -> Vec<bool> {
    let mut bits = vec![false; n];
    for &cp in cp_ids {
        let per_cp = swap_bits(&mut substream(session_seed, LABEL_NOISE_SWAP, cp), n);
        for (bit, swap) in bits.iter_mut().zip(per_cp) {
            *bit ^= swap;
        }
    }
    bits
}

/// The ideal functionality's output for the given observation sets
/// (indexed by DP roster order; each set holds bin indices).
///
/// Union mode counts bins observed by at least one provider; intersection
/// mode counts bins observed by all of them. The centered noise is
/// N − n/2 in union mode and (n − N) − n/2 in intersection mode, where N
/// counts noise slots whose pair ended up with the 1-encryption first.
pub fn reference_oracle(
    observations: &[BTreeSet<usize>],
    params: &ProtocolParams,
    session_seed: &[u8; 32],
) -> i64 {
    debug_assert_eq!(observations.len(), params.d);
    debug_assert!(observations
        .iter()
        .all(|set| set.iter().all(|&bin| bin < params.b)));
    let cardinality = (0..params.b)
        .filter(|bin| match params.mode {
            Mode::Union => observations.iter().any(|set| set.contains(bin)),
            Mode::Intersection => {
                !observations.is_empty() && observations.iter().all(|set| set.contains(bin))
            }
        })
        .count() as i64;
    let n = params.n as i64;
    let raised = noise_bits(session_seed, &params.rosters.cp_ids(), params.n)
        .iter()
        .filter(|&&bit| bit)
        .count() as i64;
    let noise = match params.mode {
        Mode::Union => raised,
        Mode::Intersection => n - raised,
    };
    cardinality + noise - n / 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broadcast::SigningKey;
    use crate::protocol::params::Rosters;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn params(mode: Mode, d: usize, n: usize) -> ProtocolParams {
        let mut rng = ChaCha20Rng::seed_from_u64(70);
        let cps = (0..3u16)
            .map(|j| (PartyId::cp(j), SigningKey::generate(&mut rng).public))
            .collect();
        let dps = (0..d as u16)
            .map(|i| (PartyId::dp(i), SigningKey::generate(&mut rng).public))
            .collect();
        ProtocolParams {
            b: 8,
            m: 3,
            d,
            epsilon: 8.0,
            delta: 0.5,
            n,
            mode,
            session: [1; 16],
            rosters: Rosters { cps, dps },
        }
    }

    fn sets(raw: &[&[usize]]) -> Vec<BTreeSet<usize>> {
        raw.iter().map(|s| s.iter().copied().collect()).collect()
    }

    #[test]
    fn union_and_intersection_cardinalities() {
        // Zero noise counters make the oracle purely combinatorial.
        let p = params(Mode::Union, 2, 0);
        assert_eq!(reference_oracle(&sets(&[&[1, 3], &[3, 5]]), &p, &[0; 32]), 3);
        assert_eq!(reference_oracle(&sets(&[&[1, 3], &[]]), &p, &[0; 32]), 2);

        let p = params(Mode::Intersection, 2, 0);
        assert_eq!(reference_oracle(&sets(&[&[1, 3], &[3, 5]]), &p, &[0; 32]), 1);
        assert_eq!(reference_oracle(&sets(&[&[1, 3], &[]]), &p, &[0; 32]), 0);
    }

    #[test]
    fn single_provider_counts_observations() {
        let p = params(Mode::Union, 1, 0);
        for k in 0..8 {
            let set: BTreeSet<usize> = (0..k).collect();
            assert_eq!(reference_oracle(&[set], &p, &[0; 32]), k as i64);
        }
    }

    #[test]
    fn noise_is_centered_binomial() {
        // Mean over many seeds ≈ true count; spread matches Bin(n, ½).
        let p = params(Mode::Union, 2, 64);
        let obs = sets(&[&[0, 1], &[2]]);
        let mut sum = 0i64;
        let runs = 400;
        for s in 0..runs {
            let mut seed = [0u8; 32];
            seed[..8].copy_from_slice(&(s as u64).to_le_bytes());
            sum += reference_oracle(&obs, &p, &seed);
        }
        let mean = sum as f64 / runs as f64;
        // std of the mean is (√n/2)/√runs = 0.2; allow 6σ.
        assert!((mean - 3.0).abs() < 1.2, "mean {mean}");
    }

    #[test]
    fn modes_share_the_noise_draw() {
        // With every slot's bit fixed by the seed, union noise N − n/2 and
        // intersection noise (n − N) − n/2 are negatives of each other.
        let pu = params(Mode::Union, 2, 64);
        let pi = params(Mode::Intersection, 2, 64);
        let obs = sets(&[&[], &[]]);
        let u = reference_oracle(&obs, &pu, &[9; 32]);
        let i = reference_oracle(&obs, &pi, &[9; 32]);
        assert_eq!(u + i, 0);
    }
}
