use statrs::distribution::{ContinuousCDF, Normal};

use super::StatsError;

/// Wilson score interval for `successes` out of `trials`.
///
/// ```
/// use medeval::stats::binomial_ci;
///
/// let (lo, hi) = binomial_ci(50, 100, 0.95).unwrap();
/// assert!((lo - 0.404).abs() < 5e-4 && (hi - 0.596).abs() < 5e-4);
/// assert_eq!(binomial_ci(0, 10, 0.95).unwrap().0, 0.0);
/// assert_eq!(binomial_ci(10, 10, 0.95).unwrap().1, 1.0);
/// ```
pub fn binomial_ci(successes: u64, trials: u64, level: f64) -> Result<(f64, f64), StatsError> {
    if trials == 0 {
        return Err(StatsError::InvalidArgument("binomial interval needs at least one trial".into()));
    }
    if successes > trials {
        return Err(StatsError::InvalidArgument(format!("{successes} successes exceed {trials} trials")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    Ok((lo, hi))
}
