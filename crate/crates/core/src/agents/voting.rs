//! Plurality voting with a canonical tie-break, and the exact winner
//! accuracy of a noisy voter.

use alloc::vec::Vec;

use crate::domain::DistortionKind;

/// Plurality winner and whether the top count was shared. Ties go to the
/// kind earliest in canonical order. `None` for an empty slice.
pub fn tally(votes: &[DistortionKind]) -> Option<(DistortionKind, bool)> {
    let mut counts = [0usize; DistortionKind::ALL.len()];
    for v in votes {
        counts[v.rank()] += 1;
    }
    let max = *counts.iter().max()?;
    if max == 0 {
        return None;
    }
    let winner = DistortionKind::ALL[counts.iter().position(|&c| c == max)?];
    let shared = counts.iter().filter(|&&c| c == max).count() > 1;
    Some((winner, shared))
}

/// Labels the identification stub can emit for a given truth: the truth plus
/// its confusions (the nine other single kinds, or all ten singles when the
/// truth is hybrid).
pub fn stub_alphabet(truth: DistortionKind) -> (Vec<DistortionKind>, Vec<DistortionKind>) {
    let confusions: Vec<DistortionKind> = DistortionKind::SINGLE.iter().copied().filter(|&k| k != truth).collect();
    let mut all = confusions.clone();
    all.push(truth);
    all.sort_unstable();
    (all, confusions)
}

/// Exact probability that `k` independent votes, each the truth with
/// probability `p` and otherwise uniform over the confusions, elect the
/// truth under [`tally`]. Enumerates count vectors with multinomial weights.
pub fn predicted_accuracy(p: f64, k: usize, truth: DistortionKind) -> f64 {
    let (alphabet, confusions) = stub_alphabet(truth);
    let q = if confusions.is_empty() { 0.0 } else { (1.0 - p) / confusions.len() as f64 };
    let probs: Vec<f64> = alphabet.iter().map(|&a| if a == truth { p } else { q }).collect();
    let truth_pos = alphabet.iter().position(|&a| a == truth).expect("truth in alphabet");

    // log-free multinomial: k! / prod(c_i!) * prod(p_i^c_i)
    let mut fact = alloc::vec![1.0f64; k + 1];
    for i in 1..=k {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut counts = alloc::vec![0usize; alphabet.len()];
    let mut total = 0.0;
    enumerate(&mut counts, 0, k, &mut |c| {
        let max = *c.iter().max().expect("non-empty");
        // alphabet is in canonical order, so the first maximum wins
        if c.iter().position(|&x| x == max) != Some(truth_pos) {
            return;
        }
        let mut w = fact[k];
        for (i, &ci) in c.iter().enumerate() {
            w /= fact[ci];
            w *= libm::pow(probs[i], ci as f64);
        }
        total += w;
    });
    total
}

fn enumerate(counts: &mut [usize], at: usize, left: usize, f: &mut impl FnMut(&[usize])) {
    if at == counts.len() - 1 {
        counts[at] = left;
        f(counts);
        return;
    }
    for c in 0..=left {
        counts[at] = c;
        enumerate(counts, at + 1, left - c, f);
    }
}

/// Σ_{j > k/2} C(k, j) p^j (1-p)^(k-j): the strict-majority lower bound.
pub fn majority_lower_bound(p: f64, k: usize) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0;
    for j in 0..=k {
        if j > 0 {
            binom = binom * (k - j + 1) as f64 / j as f64;
        }
        if 2 * j > k {
            total += binom * libm::pow(p, j as f64) * libm::pow(1.0 - p, (k - j) as f64);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use DistortionKind::*;

    #[test]
    fn strict_majority_is_not_a_tie() {
        assert_eq!(tally(&[Noise, Noise, Blur]), Some((Noise, false)));
        assert_eq!(tally(&[Haze, Haze, Haze]), Some((Haze, false)));
        assert_eq!(tally(&[]), None);
    }

    #[test]
    fn ties_go_to_canonical_order() {
        assert_eq!(tally(&[Haze, Blur, Haze, Blur, LowLight]), Some((Blur, true)));
        assert_eq!(tally(&[Vvc, Jpeg, Hybrid]), Some((Jpeg, true)));
    }

    #[test]
    fn lower_bound_matches_hand_sum() {
        // C(5,3) .6^3 .4^2 + C(5,4) .6^4 .4 + .6^5
        let hand = 10.0 * 0.216 * 0.16 + 5.0 * 0.1296 * 0.4 + 0.07776;
        assert!((majority_lower_bound(0.6, 5) - hand).abs() < 1e-12);
        assert!((hand - 0.68256).abs() < 1e-12);
    }

    #[test]
    fn prediction_matches_brute_force_enumeration() {
        // every ordered k-tuple, scored with tally()
        for truth in [Noise, LowLight, Hybrid] {
            let (alphabet, confusions) = stub_alphabet(truth);
            let q = 0.4 / confusions.len() as f64;
            let mut brute = 0.0;
            let n = alphabet.len();
            for code in 0..n.pow(3) {
                let votes: Vec<_> = (0..3).map(|i| alphabet[(code / n.pow(i)) % n]).collect();
                let prob: f64 = votes.iter().map(|&v| if v == truth { 0.6 } else { q }).product();
                if tally(&votes).unwrap().0 == truth {
                    brute += prob;
                }
            }
            assert!((predicted_accuracy(0.6, 3, truth) - brute).abs() < 1e-12, "{truth}");
        }
    }

    #[test]
    fn certain_voter_always_wins_and_k1_is_p() {
        assert!((predicted_accuracy(1.0, 5, Haze) - 1.0).abs() < 1e-12);
        assert!((predicted_accuracy(0.6, 1, Vvc) - 0.6).abs() < 1e-12);
        for truth in DistortionKind::SINGLE {
            assert!(predicted_accuracy(0.6, 5, truth) >= majority_lower_bound(0.6, 5));
        }
    }
}
