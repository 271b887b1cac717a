//! Agreement measures between polarization series.

/// Uhlmann fidelity between the qubit states with Bloch vectors `a` and `b`.
pub fn bloch_fidelity(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let na = 1.0 - (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    let nb = 1.0 - (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
    (0.5 * (1.0 + dot + (na.max(0.0) * nb.max(0.0)).sqrt())).clamp(0.0, 1.0)
}

/// Sum of squared component differences.
pub fn rss(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    assert_eq!(a.len(), b.len(), "series lengths differ");
    a.iter()
        .zip(b)
        .map(|(x, y)| (0..3).map(|c| (x[c] - y[c]).powi(2)).sum::<f64>())
        .sum()
}

/// Root mean square over all samples and components.
pub fn rms(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    (rss(a, b) / (3 * a.len()) as f64).sqrt()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fidelity_of_identical_pure_states_is_one() {
        assert!((bloch_fidelity(&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0]) - 1.0).abs() < 1e-15);
        assert!(bloch_fidelity(&[0.0, 0.0, 1.0], &[0.0, 0.0, -1.0]).abs() < 1e-15);
    }

    #[test]
    fn fidelity_of_identical_mixed_states_is_one() {
        let a = [0.3, -0.2, 0.1];
        assert!((bloch_fidelity(&a, &a) - 1.0).abs() < 1e-15);
        assert!((bloch_fidelity(&[0.0; 3], &[0.0; 3]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [10.0, 30.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y) + 0.5).abs() < 1e-12);
    }
}
