//! Statistical tests for the verification harnesses. Inputs arrive as
//! exact counts or rationals; p-values are the one floating-point zone.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use thickening_core::error::{Error, Result};
use thickening_core::rational::{to_f64, Rational};

pub const MIN_EXPECTED_PER_CELL: f64 = 5.0;

/// Pearson goodness-of-fit against a fully specified law.
/// Degrees of freedom: cells - 1.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> Result<f64> {
    if counts.len() != probs.len() || counts.len() < 2 {
        return Err(Error::InvalidConfig("counts/probs shape mismatch".into()));
    }
    let n: u64 = counts.iter().sum();
    let mut stat = 0.0f64;
    for (c, p) in counts.iter().zip(probs) {
        let expected = n as f64 * p;
        if expected < MIN_EXPECTED_PER_CELL {
            return Err(Error::SparseCell(format!(
                "expected count {expected:.2} below {MIN_EXPECTED_PER_CELL}"
            )));
        }
        let diff = *c as f64 - expected;
        stat += diff * diff / expected;
    }
    chi_square_p_value(stat, (counts.len() - 1) as f64)
}

/// Pearson test of joint samples against a product law: samples are tuples
/// of category indices, the target is per-coordinate marginals.
pub fn chi_square_iid(samples: &[Vec<usize>], marginals: &[Vec<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("no samples".into()));
    }
    let dims: Vec<usize> = marginals.iter().map(|m| m.len()).collect();
    let cells: usize = dims.iter().product();
    if cells > 1 << 20 {
        return Err(Error::StateSpaceGuard(format!("{cells} cells")));
    }
    let mut counts = vec![0u64; cells];
    for s in samples {
        if s.len() != dims.len() {
            return Err(Error::InvalidConfig("sample arity mismatch".into()));
        }
        let mut idx = 0usize;
        for (k, cat) in s.iter().enumerate() {
            if *cat >= dims[k] {
                return Err(Error::InvalidConfig("category out of range".into()));
            }
            idx = idx * dims[k] + cat;
        }
        counts[idx] += 1;
    }
    let mut probs = vec![1.0f64; cells];
    for (idx, p) in probs.iter_mut().enumerate() {
        let mut rem = idx;
        for k in (0..dims.len()).rev() {
            let cat = rem % dims[k];
            rem /= dims[k];
            *p *= marginals[k][cat];
        }
    }
    chi_square_gof(&counts, &probs)
}

/// 2x2 independence test with estimated margins (one degree of freedom).
pub fn chi_square_independence_2x2(counts: [[u64; 2]; 2]) -> Result<f64> {
    let n: u64 = counts.iter().flatten().sum();
    let row: [u64; 2] = [counts[0][0] + counts[0][1], counts[1][0] + counts[1][1]];
    let col: [u64; 2] = [counts[0][0] + counts[1][0], counts[0][1] + counts[1][1]];
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let expected = row[i] as f64 * col[j] as f64 / n as f64;
            if expected < MIN_EXPECTED_PER_CELL {
                return Err(Error::SparseCell(format!("expected {expected:.2}")));
            }
            let diff = counts[i][j] as f64 - expected;
            stat += diff * diff / expected;
        }
    }
    chi_square_p_value(stat, 1.0)
}

fn chi_square_p_value(stat: f64, df: f64) -> Result<f64> {
    let dist = ChiSquared::new(df)
        .map_err(|e| Error::InvalidConfig(format!("chi-square df: {e}")))?;
    Ok(1.0 - dist.cdf(stat))
}

/// One-sample Kolmogorov-Smirnov against Exponential(rate).
pub fn ks_exponential(gaps: &[Rational], rate: &Rational) -> Result<f64> {
    if gaps.len() < 100 {
        return Err(Error::InsufficientSamples {
            need: 100,
            got: gaps.len() as u64,
        });
    }
    let rate_f = to_f64(rate);
    let mut xs: Vec<f64> = gaps.iter().map(to_f64).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let cdf = 1.0 - (-rate_f * x).exp();
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    Ok(kolmogorov_p(d, xs.len()))
}

/// Asymptotic Kolmogorov distribution tail with the small-sample
/// correction, adequate for n >= 100.
pub fn kolmogorov_p(d: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = d * (sqrt_n + 0.12 + 0.11 / sqrt_n);
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0f64;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Bins for a Poisson goodness-of-fit: categories 0..=k_max with the upper
/// tail merged into the last bin, chosen so every expected count clears the
/// sparse-cell threshold at the given sample size.
pub fn poisson_bins(mu: f64, n_samples: u64) -> (usize, Vec<f64>) {
    let mut probs = Vec::new();
    let mut pmf = (-mu).exp();
    let mut cum = 0.0;
    let mut k = 0usize;
    loop {
        let tail = 1.0 - cum;
        if tail * (n_samples as f64) < 2.0 * MIN_EXPECTED_PER_CELL || k > 200 {
            probs.push(tail);
            break;
        }
        probs.push(pmf);
        cum += pmf;
        k += 1;
        pmf *= mu / k as f64;
    }
    (probs.len() - 1, probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use thickening_core::rational::rat_i64;

    #[test]
    fn gof_exact_match_gives_p_one() {
        // counts exactly proportional to probs: statistic 0
        let p = chi_square_gof(&[250, 250, 250, 250], &[0.25; 4]).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gof_extreme_deviation_rejected() {
        let p = chi_square_gof(&[1000, 0], &[0.5, 0.5]).unwrap();
        assert!(p < 1e-6);
    }

    #[test]
    fn sparse_cell_guard() {
        assert!(matches!(
            chi_square_gof(&[3, 997], &[0.001, 0.999]),
            Err(Error::SparseCell(_))
        ));
    }

    #[test]
    fn independence_2x2() {
        // perfectly balanced: no association
        let p = chi_square_independence_2x2([[250, 250], [250, 250]]).unwrap();
        assert!(p > 0.99);
        // strong association
        let p = chi_square_independence_2x2([[400, 100], [100, 400]]).unwrap();
        assert!(p < 1e-6);
    }

    #[test]
    fn ks_all_equal_rejected() {
        let gaps: Vec<_> = (0..1000).map(|_| rat_i64(1, 2)).collect();
        let p = ks_exponential(&gaps, &rat_i64(1, 1)).unwrap();
        assert!(p < 1e-6);
    }

    #[test]
    fn ks_needs_samples() {
        let gaps: Vec<_> = (0..10).map(|_| rat_i64(1, 2)).collect();
        assert!(ks_exponential(&gaps, &rat_i64(1, 1)).is_err());
    }

    #[test]
    fn poisson_bins_cover() {
        let (k_max, probs) = poisson_bins(3.0, 100_000);
        assert!(k_max >= 8);
        let total: f64 = probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
