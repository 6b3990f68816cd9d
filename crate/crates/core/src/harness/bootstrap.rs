use rand::Rng;

use crate::{Error, Result};

/// Percentile of sorted data by linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == den {
        1.0
    } else {
        num / den
    }
}

/// Percentile bootstrap intervals for `mean(sq[base]) / mean(sq[j])`.
///
/// `sq[j][r]` is the squared error of method `j` in replication `r`.
/// Replication indices are resampled jointly across methods so the matched
/// structure of the comparison is kept.
pub fn bootstrap_ci<R: Rng + ?Sized>(
    sq: &[Vec<f64>],
    base: usize,
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    if resamples < 100 {
        return Err(Error::Config("bootstrap needs at least 100 resamples".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config("level must lie in (0, 1)".into()));
    }
    let r = sq.get(base).map_or(0, |v| v.len());
    if r == 0 || sq.iter().any(|v| v.len() != r) {
        return Err(Error::Config("squared errors must be non-empty and of equal length".into()));
    }
    let mut draws = vec![Vec::with_capacity(resamples); sq.len()];
    let mut sums = vec![0.0; sq.len()];
    for _ in 0..resamples {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for _ in 0..r {
            let i = rng.random_range(0..r);
            for (s, v) in sums.iter_mut().zip(sq) {
                *s += v[i];
            }
        }
        for (d, s) in draws.iter_mut().zip(&sums) {
            d.push(ratio(sums[base], *s));
        }
    }
    let alpha = (1.0 - level) / 2.0;
    Ok(draws
        .into_iter()
        .map(|mut d| {
            d.sort_by(f64::total_cmp);
            (percentile(&d, alpha), percentile(&d, 1.0 - alpha))
        })
        .collect())
}
