use crate::{Arr, F};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::f64::consts::PI;

/// Sequence-labeling dataset: N randomly phase-shifted sine waves of 100
/// points, x[t] = sin(4 pi t / 100 + u) with u ~ Unif[-pi/2, pi/2], labeled
/// 1 at strict discrete local maxima (endpoints are never maxima).
pub fn make_sine_dataset(n: usize, t: usize, seed: u64) -> (Arr, Arr) {
    assert_eq!(t, 100, "sequence length is fixed at 100 points");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut xs = Arr::zeros(&[n, t]);
    let mut ys = Arr::zeros(&[n, t]);
    for i in 0..n {
        let u: F = rng.gen_range(-PI / 2.0..=PI / 2.0);
        for tt in 0..t {
            xs.data_mut()[i * t + tt] = (4.0 * PI * tt as F / 100.0 + u).sin();
        }
        for tt in 1..t - 1 {
            let (a, b, c) =
                (xs.data()[i * t + tt - 1], xs.data()[i * t + tt], xs.data()[i * t + tt + 1]);
            if b > a && b > c {
                ys.data_mut()[i * t + tt] = 1.0;
            }
        }
    }
    (xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_maxima(x: &[F]) -> Vec<usize> {
        (1..x.len() - 1).filter(|&t| x[t] > x[t - 1] && x[t] > x[t + 1]).collect()
    }

    #[test]
    fn near_zero_offset_maxima_land_near_12_and_62() {
        // At u = 0 exactly the peak falls midway between samples and the two
        // neighbors tie, so no strict maximum exists; scan small offsets of
        // either sign instead.
        for u in [-0.01, 0.01] {
            let x: Vec<F> = (0..100).map(|t| (4.0 * PI * t as F / 100.0 + u).sin()).collect();
            let maxima = brute_force_maxima(&x);
            assert_eq!(maxima.len(), 2, "u={u}: {maxima:?}");
            assert!(maxima[0] == 12 || maxima[0] == 13, "{maxima:?}");
            assert!(maxima[1] == 62 || maxima[1] == 63, "{maxima:?}");
        }
    }

    #[test]
    fn every_sequence_has_one_or_two_maxima_second_hump_always_interior() {
        // The second peak lands in [50, 75], always interior, so at least one
        // maximum exists. The first peak drifts to the excluded t = 0
        // endpoint when u approaches +pi/2, leaving a single maximum for
        // roughly 2% of draws.
        let mut singles = 0usize;
        for seed in 0..1000 {
            let (xs, ys) = make_sine_dataset(1, 100, seed);
            let labeled: Vec<usize> = (0..100).filter(|&t| ys.data()[t] == 1.0).collect();
            assert_eq!(labeled, brute_force_maxima(xs.data()), "seed {seed}");
            assert!(
                labeled.len() == 1 || labeled.len() == 2,
                "seed {seed}: {labeled:?}"
            );
            assert!(labeled.last().is_some_and(|&t| (50..=75).contains(&t)), "seed {seed}: {labeled:?}");
            if labeled.len() == 1 {
                singles += 1;
            }
        }
        assert!(singles < 60, "boundary cases should be rare, got {singles}");
    }

    #[test]
    fn labels_imply_strict_local_maximum() {
        let (xs, ys) = make_sine_dataset(50, 100, 9);
        for i in 0..50 {
            for t in 0..100 {
                if ys.data()[i * 100 + t] == 1.0 {
                    assert!(t > 0 && t < 99);
                    assert!(xs.data()[i * 100 + t] > xs.data()[i * 100 + t - 1]);
                    assert!(xs.data()[i * 100 + t] > xs.data()[i * 100 + t + 1]);
                }
            }
        }
    }
}
