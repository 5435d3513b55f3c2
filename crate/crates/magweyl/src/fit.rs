//! Log-log regression for convergence-order measurements.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Result of a log-log least-squares fit `log y ≈ slope · log x + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// Fitted slope.
    pub slope: f64,
    /// Fitted intercept (natural logarithms).
    pub intercept: f64,
    /// Abscissae that entered the fit.
    pub xs: Vec<f64>,
    /// Ordinates that entered the fit.
    pub ys: Vec<f64>,
    /// Points discarded because they sat on the discretisation floor.
    pub discarded: usize,
}

/// Least-squares slope of `log y` against `log x`; all values must be
/// positive and finite.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return domain("a slope fit needs at least two paired points");
    }
    if xs.iter().chain(ys).any(|v| !(v.is_finite() && *v > 0.0)) {
        return domain("slope fit values must be positive and finite");
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return domain("slope fit abscissae must not all coincide");
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Fits a convergence order, discarding points at or below `floor` (the
/// discretisation floor) and requiring at least `min_points` survivors.
pub fn fit_order(xs: &[f64], ys: &[f64], floor: f64, min_points: usize) -> Result<SlopeFit> {
    let mut fx = Vec::new();
    let mut fy = Vec::new();
    for (&x, &y) in xs.iter().zip(ys) {
        if y > floor {
            fx.push(x);
            fy.push(y);
        }
    }
    let discarded = xs.len() - fx.len();
    if fx.len() < min_points.max(2) {
        return domain(format!(
            "only {} of {} points lie above the floor {floor:e}; need {min_points}",
            fx.len(),
            xs.len()
        ));
    }
    let (slope, intercept) = loglog_slope(&fx, &fy)?;
    Ok(SlopeFit {
        slope,
        intercept,
        xs: fx,
        ys: fy,
        discarded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_power_law() {
        let xs = [0.5, 0.25, 0.125, 0.0625];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(2.5)).collect();
        let f = fit_order(&xs, &ys, 0.0, 4).unwrap();
        assert!((f.slope - 2.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn floor_points_are_discarded() {
        let xs = [0.5, 0.25, 0.125, 0.0625, 0.03125];
        let ys = [0.25, 0.0625, 0.015625, 1e-13, 1e-13];
        let f = fit_order(&xs, &ys, 1e-12, 3).unwrap();
        assert_eq!(f.discarded, 2);
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!(fit_order(&xs, &ys, 1e-12, 4).is_err());
    }
}
