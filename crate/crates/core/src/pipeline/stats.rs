use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Two-sided paired t-test on `a[i] - b[i]`.
///
/// When the differences have zero variance the statistic is undefined: a zero
/// mean gives p = 1 and any other mean gives p = 0. Variance at the level of
/// floating-point rounding of the inputs counts as zero.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Validation("paired samples must be finite".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    let noise = 16.0 * f64::EPSILON * scale;
    if var <= noise * noise {
        return Ok(if mean.abs() <= noise { 1.0 } else { 0.0 });
    }
    let t = mean / (var / nf).sqrt();
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| Error::Validation(format!("t distribution: {e}")))?;
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_cases() {
        let a = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(paired_t_test(&a, &a).unwrap(), 1.0);
        let b: Vec<f64> = a.iter().map(|x| x + 0.25).collect();
        assert_eq!(paired_t_test(&a, &b).unwrap(), 0.0);
        assert!(paired_t_test(&a, &a[..4]).is_err());
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn known_value() {
        // d = [1, 2, 3]: mean 2, sd 1, t = 2 * sqrt(3), df = 2.
        let p = paired_t_test(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        let t: f64 = 2.0 * 3f64.sqrt();
        // Closed form for df = 2: p = 1 - t / sqrt(2 + t^2).
        assert!((p - (1.0 - t / (2.0 + t * t).sqrt())).abs() < 1e-12, "{p}");
    }
}
