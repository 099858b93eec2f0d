//! Calibration diagnostics for pooled p-values.

use crate::error::{Error, Result};

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v
}

/// Right-continuous ECDF at each distinct value: `(x, #{p <= x} / m)`.
pub fn ecdf(p_values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if p_values.is_empty() {
        return Err(Error::Empty("p-values"));
    }
    if let Some(p) = p_values.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::InvalidData(format!("p-value {p} outside (0, 1]")));
    }
    let sorted = sorted_copy(p_values);
    let m = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        let f = (i + 1) as f64 / m;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = f,
            _ => out.push((x, f)),
        }
    }
    Ok(out)
}

/// `#{v <= x} / m`.
pub fn ecdf_at(values: &[f64], x: f64) -> f64 {
    values.iter().filter(|&&v| v <= x).count() as f64 / values.len() as f64
}

/// Sorted p-values against uniform plotting positions `i / (m + 1)`.
///
/// Pairs are `(theoretical, empirical)`.
pub fn qq_uniform(p_values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if p_values.is_empty() {
        return Err(Error::Empty("p-values"));
    }
    let sorted = sorted_copy(p_values);
    let m1 = (sorted.len() + 1) as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, p)| ((i + 1) as f64 / m1, p))
        .collect())
}

/// Linear-interpolation sample quantile (type 7) at level `q`.
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    let sorted = sorted_copy(values);
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// One-sample Kolmogorov-Smirnov statistic `sup |F_m(x) - F(x)|`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let sorted = sorted_copy(samples);
    let m = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i];
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == x {
            j += 1;
        }
        let f = cdf(x);
        d = d.max((f - i as f64 / m).abs()).max(((j + 1) as f64 / m - f).abs());
        i = j + 1;
    }
    Ok(d)
}

/// KS statistic against Uniform(0, 1).
pub fn ks_uniform(samples: &[f64]) -> Result<f64> {
    ks_statistic(samples, |x| x.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;

    #[test]
    fn ecdf_single_and_ties() {
        assert_eq!(ecdf(&[0.5]).unwrap(), vec![(0.5, 1.0)]);
        let e = ecdf(&[0.2, 0.8, 0.2]).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].0, 0.2);
        assert!((e[0].1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(e[1], (0.8, 1.0));
    }

    #[test]
    fn ecdf_rejects_bad_input() {
        assert!(ecdf(&[]).is_err());
        assert!(ecdf(&[0.0]).is_err());
        assert!(ecdf(&[1.5]).is_err());
    }

    #[test]
    fn ecdf_of_uniforms_is_close_to_identity() {
        let mut rng = rng_from_seed(21);
        let u: Vec<f64> = (0..10_000).map(|_| 1.0 - rng.random::<f64>()).collect();
        let e = ecdf(&u).unwrap();
        let dev = e.iter().map(|(x, f)| (f - x).abs()).fold(0.0, f64::max);
        assert!(dev < 0.025, "{dev}");
        assert!(e.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(e.last().unwrap().1, 1.0);
    }

    #[test]
    fn qq_positions() {
        assert_eq!(qq_uniform(&[0.5]).unwrap(), vec![(0.5, 0.5)]);
        let q = qq_uniform(&[0.75, 0.25]).unwrap();
        assert!((q[0].0 - 1.0 / 3.0).abs() < 1e-15 && q[0].1 == 0.25);
        assert!((q[1].0 - 2.0 / 3.0).abs() < 1e-15 && q[1].1 == 0.75);
        let diag: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
        assert!(qq_uniform(&diag).unwrap().iter().all(|(t, e)| (t - e).abs() < 1e-12));
        assert!(qq_uniform(&[]).is_err());
    }

    #[test]
    fn ks_known_values() {
        // One point at 0.5: sup is 0.5 on either side.
        assert!((ks_uniform(&[0.5]).unwrap() - 0.5).abs() < 1e-15);
        let grid: Vec<f64> = (1..=100).map(|k| k as f64 / 100.0).collect();
        assert!((ks_uniform(&grid).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(empirical_quantile(&[1.0, 3.0], 0.5).unwrap(), 2.0);
        assert_eq!(empirical_quantile(&[4.0], 0.9).unwrap(), 4.0);
    }
}
