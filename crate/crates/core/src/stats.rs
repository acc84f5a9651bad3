//! Small statistics helpers shared by the diagnostics and the event study.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Pearson correlation, `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "pearson: length mismatch");
    if a.len() < 2 {
        return None;
    }
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation of raw second moments (no centering). This is the notion
/// under which OLS predictions and residuals are exactly orthogonal when
/// the regression carries no intercept.
pub fn raw_correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "raw_correlation: length mismatch");
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|x| x * x).sum();
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Ranks starting at 1, ties receive their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&ranks(a), &ranks(b))
}

/// Student-t dispersion of a per-run sample: the 90% quantile of the t
/// distribution with `n` degrees of freedom times the sample standard
/// deviation. Zero for fewer than two runs.
pub fn student_dispersion(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let sd = sample_variance(values).sqrt();
    let t = StudentsT::new(0.0, 1.0, n as f64)
        .expect("valid degrees of freedom")
        .inverse_cdf(0.90);
    t * sd
}

/// Two-sided p-value of the Fisher z test that two independent Pearson
/// correlations (sample sizes `n1`, `n2`) are equal. `None` when a sample
/// is too small for the test.
pub fn fisher_z_compare(r1: f64, n1: usize, r2: f64, n2: usize) -> Option<f64> {
    if n1 <= 3 || n2 <= 3 {
        return None;
    }
    let clamp = |r: f64| r.clamp(-0.999_999_999, 0.999_999_999);
    let z1 = clamp(r1).atanh();
    let z2 = clamp(r2).atanh();
    let se = (1.0 / (n1 - 3) as f64 + 1.0 / (n2 - 3) as f64).sqrt();
    let z = (z1 - z2) / se;
    Some(two_sided_normal_p(z))
}

pub fn two_sided_normal_p(z: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0)
}

/// Permutation p-value for the deviation of an observed Spearman
/// correlation from a reference value. The null spread is the
/// distribution of the rank correlation under random re-pairing of `b`.
pub fn spearman_permutation_p(
    a: &[f64],
    b: &[f64],
    reference: f64,
    draws: usize,
    seed: u64,
) -> Option<f64> {
    let ra = ranks(a);
    let rb = ranks(b);
    let observed = pearson(&ra, &rb)?;
    let deviation = (observed - reference).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = rb.clone();
    let mut exceed = 0usize;
    for _ in 0..draws {
        shuffled.shuffle(&mut rng);
        let rho = pearson(&ra, &shuffled).unwrap_or(0.0);
        if rho.abs() >= deviation {
            exceed += 1;
        }
    }
    Some((exceed as f64 + 1.0) / (draws as f64 + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn pearson_zero_variance_is_none() {
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_none());
        let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.5]).unwrap();
        assert!(r > 0.99);
    }

    #[test]
    fn student_dispersion_matches_table_values() {
        // Per-run correlations and dispersions as published for three CNN
        // backcast cells.
        let cases: [(&[f64], f64); 3] = [
            (&[0.9756, 0.9527, 0.9545, 0.9684, 0.9727, 0.9697], 0.0139),
            (&[0.9382, 0.9643, 0.9007, 0.9518, 0.9364, 0.9371], 0.0307),
            (&[0.4169, 0.5363, 0.1017, 0.0537, 0.3947, 0.4310], 0.2826),
        ];
        for (runs, expected) in cases {
            let d = student_dispersion(runs);
            assert!((d - expected).abs() < 5e-4, "{d} vs {expected}");
        }
    }

    #[test]
    fn fisher_equal_correlations_give_p_one() {
        let p = fisher_z_compare(0.3, 50, 0.3, 80).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        assert!(fisher_z_compare(0.3, 3, 0.3, 80).is_none());
    }

    #[test]
    fn permutation_p_is_deterministic_and_bounded() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| ((i * 7) % 30) as f64).collect();
        let p1 = spearman_permutation_p(&a, &b, 0.0, 999, 3).unwrap();
        let p2 = spearman_permutation_p(&a, &b, 0.0, 999, 3).unwrap();
        assert_eq!(p1, p2);
        assert!(p1 > 0.0 && p1 <= 1.0);
        let strong = spearman_permutation_p(&a, &a, 0.0, 999, 3).unwrap();
        assert!(strong < 0.01);
    }
}
