//! Least-squares line fits and rational snapping for exponent estimates.

use num_rational::Ratio;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
    pub rms_residual: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`; needs two distinct abscissae.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let res: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| y - (slope * x + intercept)).collect();
    let max_residual = res.iter().map(|r| r.abs()).fold(0.0, f64::max);
    let rms_residual = (res.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
    Some(LinearFit { slope, intercept, max_residual, rms_residual })
}

/// Nearest rational `p/q` with `1 ≤ q ≤ max_den`, accepted if within `tol`.
pub fn snap_rational(x: f64, max_den: i64, tol: f64) -> Option<Ratio<i64>> {
    let mut best: Option<(f64, Ratio<i64>)> = None;
    for q in 1..=max_den.max(1) {
        let p = (x * q as f64).round() as i64;
        let r = Ratio::new(p, q);
        let err = (x - p as f64 / q as f64).abs();
        if best.map(|b| err < b.0 - 1e-15).unwrap_or(true) {
            best = Some((err, r));
        }
    }
    best.filter(|b| b.0 <= tol).map(|b| b.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!(f.max_residual < 1e-14);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn snapping() {
        assert_eq!(snap_rational(1.498, 2, 0.02), Some(Ratio::new(3, 2)));
        assert_eq!(snap_rational(1.33, 3, 0.02), Some(Ratio::new(4, 3)));
        assert_eq!(snap_rational(1.25, 2, 0.02), None);
        assert_eq!(snap_rational(2.004, 1, 0.02), Some(Ratio::new(2, 1)));
    }
}
