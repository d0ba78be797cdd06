//! Evaluation metrics: scale-invariant SDR and edit-distance error rates.

use serde::Serialize;

use crate::error::{Error, Result};

/// Cap applied when the residual vanishes (perfect reconstruction) and,
/// symmetrically, when the projected target vanishes.
pub const SI_SDR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SiSdr {
    pub db: f64,
    /// True when the residual was zero (or small enough to exceed the cap),
    /// i.e. the estimate reconstructs the reference perfectly up to scale.
    pub capped: bool,
}

/// Scale-invariant signal-to-distortion ratio in dB.
///
/// Both signals are zero-meaned, the estimate is projected onto the
/// reference (`alpha = <est, ref> / <ref, ref>`), and the ratio of projected
/// energy to residual energy is reported. Invariant to scaling the estimate.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<SiSdr> {
    if estimate.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::InvalidInput("empty signals".into()));
    }

    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let (me, mr) = (mean(estimate), mean(reference));

    let mut dot = 0.0;
    let mut ref_energy = 0.0;
    for (&e, &r) in estimate.iter().zip(reference) {
        let (e, r) = (e - me, r - mr);
        dot += e * r;
        ref_energy += r * r;
    }
    if ref_energy == 0.0 {
        return Err(Error::InvalidInput("reference signal is zero".into()));
    }

    let alpha = dot / ref_energy;
    let mut target_energy = 0.0;
    let mut residual_energy = 0.0;
    for (&e, &r) in estimate.iter().zip(reference) {
        let (e, r) = (e - me, r - mr);
        let t = alpha * r;
        let d = e - t;
        target_energy += t * t;
        residual_energy += d * d;
    }

    if residual_energy == 0.0 {
        return Ok(SiSdr {
            db: SI_SDR_CAP_DB,
            capped: true,
        });
    }
    let db = 10.0 * (target_energy / residual_energy).log10();
    if db >= SI_SDR_CAP_DB {
        Ok(SiSdr {
            db: SI_SDR_CAP_DB,
            capped: true,
        })
    } else {
        Ok(SiSdr {
            db: db.max(-SI_SDR_CAP_DB),
            capped: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ErrorRateReport {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_length: usize,
}

impl ErrorRateReport {
    pub fn total_errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// `(S + I + D) / reference_length`; may exceed 1.
    pub fn rate(&self) -> f64 {
        if self.reference_length == 0 {
            if self.total_errors() == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.total_errors() as f64 / self.reference_length as f64
        }
    }
}

/// Levenshtein distance with an S/I/D backtrace. Unit costs; ties prefer
/// substitution over insertion over deletion.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> ErrorRateReport {
    let n = reference.len();
    let m = hyp.len();
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, slot) in dp[0].iter_mut().enumerate() {
        *slot = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(reference[i - 1] != hyp[j - 1]);
            dp[i][j] = (dp[i - 1][j - 1] + cost)
                .min(dp[i][j - 1] + 1)
                .min(dp[i - 1][j] + 1);
        }
    }

    let (mut i, mut j) = (n, m);
    let (mut subs, mut ins, mut dels) = (0, 0, 0);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let cost = usize::from(reference[i - 1] != hyp[j - 1]);
            if dp[i][j] == dp[i - 1][j - 1] + cost {
                subs += cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && dp[i][j] == dp[i][j - 1] + 1 {
            ins += 1;
            j -= 1;
            continue;
        }
        dels += 1;
        i -= 1;
    }

    ErrorRateReport {
        substitutions: subs,
        insertions: ins,
        deletions: dels,
        reference_length: n,
    }
}

/// Character error rate; whitespace is excluded from the token stream.
pub fn cer(hyp: &str, reference: &str) -> ErrorRateReport {
    let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    edit_distance(&h, &r)
}

/// Word error rate over whitespace-split tokens.
pub fn wer(hyp: &str, reference: &str) -> ErrorRateReport {
    let h: Vec<&str> = hyp.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    edit_distance(&h, &r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn perfect_estimate_is_capped() {
        let r = noise(256, 1);
        let out = si_sdr(&r, &r).unwrap();
        assert!(out.capped);
        assert_eq!(out.db, SI_SDR_CAP_DB);
    }

    #[test]
    fn scaled_estimate_matches_unscaled() {
        let r = noise(256, 2);
        let scaled: Vec<f64> = r.iter().map(|&x| 3.0 * x).collect();
        let a = si_sdr(&scaled, &r).unwrap();
        let b = si_sdr(&r, &r).unwrap();
        assert_eq!(a.db, b.db);
        assert!(a.capped);
    }

    #[test]
    fn power_of_two_scaling_is_bit_exact() {
        let r = noise(300, 3);
        let e: Vec<f64> = r
            .iter()
            .zip(noise(300, 4))
            .map(|(&x, n)| x + 0.3 * n)
            .collect();
        let base = si_sdr(&e, &r).unwrap().db;
        let scaled: Vec<f64> = e.iter().map(|&x| 4.0 * x).collect();
        assert_eq!(si_sdr(&scaled, &r).unwrap().db, base);
    }

    #[test]
    fn orthogonal_equal_energy_noise_gives_zero_db() {
        // both sequences zero-mean, orthogonal, equal energy
        let n = 64;
        let mut reference = Vec::with_capacity(n);
        let mut noise_sig = Vec::with_capacity(n);
        for i in 0..n {
            reference.push(if i % 2 == 0 { 1.0 } else { -1.0 });
            noise_sig.push(if i % 4 < 2 { 1.0 } else { -1.0 });
        }
        let dot: f64 = reference.iter().zip(&noise_sig).map(|(a, b)| a * b).sum();
        assert_eq!(dot, 0.0);
        let est: Vec<f64> = reference
            .iter()
            .zip(&noise_sig)
            .map(|(a, b)| a + b)
            .collect();
        let out = si_sdr(&est, &reference).unwrap();
        assert!(out.db.abs() < 1e-9, "got {} dB", out.db);
    }

    #[test]
    fn sign_flip_of_both_signals_is_invariant() {
        let r = noise(200, 5);
        let e: Vec<f64> = r
            .iter()
            .zip(noise(200, 6))
            .map(|(&x, n)| x + 0.5 * n)
            .collect();
        let base = si_sdr(&e, &r).unwrap().db;
        let nr: Vec<f64> = r.iter().map(|&x| -x).collect();
        let ne: Vec<f64> = e.iter().map(|&x| -x).collect();
        assert_eq!(si_sdr(&ne, &nr).unwrap().db, base);
    }

    #[test]
    fn zero_reference_and_length_mismatch_error() {
        assert!(si_sdr(&[1.0, 2.0], &[0.0, 0.0]).is_err());
        assert!(si_sdr(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn identical_sequences_have_zero_rate() {
        let report = wer("a b c", "a b c");
        assert_eq!(report.total_errors(), 0);
        assert_eq!(report.rate(), 0.0);
    }

    #[test]
    fn single_substitution() {
        let report = wer("a b d", "a b c");
        assert_eq!(report.substitutions, 1);
        assert_eq!(report.insertions, 0);
        assert_eq!(report.deletions, 0);
        assert!((report.rate() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cer_ignores_whitespace() {
        let report = cer("ab c", "abc");
        assert_eq!(report.total_errors(), 0);
        assert_eq!(report.reference_length, 3);
    }

    /// Independent oracle: plain recursive Levenshtein with memoization,
    /// computing only the distance.
    fn oracle_distance(
        a: &[u8],
        b: &[u8],
        i: usize,
        j: usize,
        memo: &mut Vec<Vec<Option<usize>>>,
    ) -> usize {
        if i == 0 {
            return j;
        }
        if j == 0 {
            return i;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let cost = usize::from(a[i - 1] != b[j - 1]);
        let v = (oracle_distance(a, b, i - 1, j - 1, memo) + cost)
            .min(oracle_distance(a, b, i - 1, j, memo) + 1)
            .min(oracle_distance(a, b, i, j - 1, memo) + 1);
        memo[i][j] = Some(v);
        v
    }

    #[test]
    fn distance_matches_recursive_oracle_on_random_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..500 {
            let n = rng.random_range(0..12);
            let m = rng.random_range(0..12);
            let a: Vec<u8> = (0..n).map(|_| rng.random_range(0u8..4)).collect();
            let b: Vec<u8> = (0..m).map(|_| rng.random_range(0u8..4)).collect();
            let report = edit_distance(&b, &a);
            let mut memo = vec![vec![None; m + 1]; n + 1];
            let expect = oracle_distance(&a, &b, n, m, &mut memo);
            assert_eq!(report.total_errors(), expect, "a={a:?} b={b:?}");
        }
    }

    #[test]
    fn distance_is_a_metric_on_sampled_triples() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..200 {
            let sample = |rng: &mut ChaCha12Rng| -> Vec<u8> {
                let n = rng.random_range(0..8);
                (0..n).map(|_| rng.random_range(0u8..3)).collect()
            };
            let (x, y, z) = (sample(&mut rng), sample(&mut rng), sample(&mut rng));
            let d = |a: &[u8], b: &[u8]| edit_distance(b, a).total_errors();
            assert_eq!(d(&x, &x), 0);
            assert_eq!(d(&x, &y), d(&y, &x));
            assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn si_sdr_is_scale_invariant(
                scale in 0.01f64..100.0,
                noise_gain in 0.01f64..2.0,
                seed in 0u64..10_000,
            ) {
                let r = noise(200, seed);
                let e: Vec<f64> = r
                    .iter()
                    .zip(noise(200, seed.wrapping_add(1)))
                    .map(|(&x, n)| x + noise_gain * n)
                    .collect();
                let base = si_sdr(&e, &r).unwrap();
                let scaled: Vec<f64> = e.iter().map(|&x| scale * x).collect();
                let got = si_sdr(&scaled, &r).unwrap();
                prop_assert!((got.db - base.db).abs() < 1e-9);
            }

            #[test]
            fn edit_distance_is_bounded_by_lengths(
                a in proptest::collection::vec(0u8..5, 0..12),
                b in proptest::collection::vec(0u8..5, 0..12),
            ) {
                let report = edit_distance(&b, &a);
                let d = report.total_errors();
                prop_assert!(d <= a.len().max(b.len()));
                prop_assert!(d >= a.len().abs_diff(b.len()));
                prop_assert_eq!(report.reference_length, a.len());
            }
        }
    }
}
