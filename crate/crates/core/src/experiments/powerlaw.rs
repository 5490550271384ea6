use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `value ≈ amplitude · m^(−exponent)`; a positive exponent means decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub amplitude: f64,
    pub exponent: f64,
    /// RMSE of the fit in natural-log space.
    pub residual: f64,
    pub points: usize,
}

impl PowerLawFit {
    pub fn predict(&self, m: f64) -> f64 {
        self.amplitude * m.powf(-self.exponent)
    }
}

/// Ordinary least squares of `ln value` on `ln m`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "power-law fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(&(m, v)) = points
        .iter()
        .find(|&&(m, v)| !(m > 0.0 && v > 0.0 && m.is_finite() && v.is_finite()))
    {
        return Err(Error::domain(format!(
            "power-law fit needs positive finite points, got ({m}, {v})"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("power-law fit needs at least two distinct m"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    Ok(PowerLawFit {
        amplitude: intercept.exp(),
        exponent: -slope,
        residual: (sse / k).sqrt(),
        points: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        [64.0, 128.0, 256.0, 512.0, 1024.0].iter().map(|&m| (m, f(m))).collect()
    }

    #[test]
    fn recovers_decay() {
        let fit = fit_power_law(&grid(|m| 2.0 * m.powf(-0.5))).unwrap();
        assert_relative_eq!(fit.amplitude, 2.0, max_relative = 1e-12);
        assert_relative_eq!(fit.exponent, 0.5, epsilon = 1e-12);
        assert!(fit.residual <= 1e-10);
        assert_eq!(fit.points, 5);
        assert_relative_eq!(fit.predict(100.0), 0.2, max_relative = 1e-12);
    }

    #[test]
    fn constant_and_growth() {
        let fit = fit_power_law(&grid(|_| 0.3)).unwrap();
        assert!(fit.exponent.abs() < 1e-12);
        let fit = fit_power_law(&grid(|m| 3.0 * m.powf(0.25))).unwrap();
        assert_relative_eq!(fit.exponent, -0.25, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            fit_power_law(&[(1.0, 1.0), (2.0, 0.5)]),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            fit_power_law(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]),
            Err(Error::Domain(_))
        ));
        assert!(fit_power_law(&[(2.0, 1.0), (2.0, 0.5), (2.0, 0.3)]).is_err());
    }

    proptest! {
        #[test]
        fn exact_on_noiseless_power_laws(a in 0.01f64..100.0, alpha in -2.0f64..2.0) {
            let fit = fit_power_law(&grid(|m| a * m.powf(-alpha))).unwrap();
            prop_assert!(fit.residual <= 1e-10);
            prop_assert!((fit.exponent - alpha).abs() <= 1e-10);
            prop_assert!((fit.amplitude / a - 1.0).abs() <= 1e-9);
        }
    }
}
