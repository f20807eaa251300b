//! One-dimensional Gaussian expectations by composite Simpson quadrature.

/// `E[f(X)]` for `X ~ N(mean, var)`, integrating over `mean +- 12 sd`.
pub fn gaussian_expectation(f: impl Fn(f64) -> f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return f(mean);
    }
    let sd = var.sqrt();
    let n = 8000;
    let (a, b) = (-12.0, 12.0);
    let h = (b - a) / n as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let w = |x: f64| norm * (-0.5 * x * x).exp() * f(mean + sd * x);
    let mut acc = w(a) + w(b);
    for k in 1..n {
        let x = a + k as f64 * h;
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * w(x);
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        assert!((gaussian_expectation(|_| 1.0, 0.3, 2.0) - 1.0).abs() < 1e-12);
        assert!((gaussian_expectation(|x| x, 0.3, 2.0) - 0.3).abs() < 1e-12);
        assert!((gaussian_expectation(|x| x * x, 0.3, 2.0) - 2.09).abs() < 1e-11);
        // E exp(X) = exp(mu + var / 2)
        assert!((gaussian_expectation(f64::exp, 0.1, 0.5) - (0.35f64).exp()).abs() < 1e-11);
    }
}
