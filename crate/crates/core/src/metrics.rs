//! Error functionals and rate fitting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Ensemble;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("state dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("the smaller system has {small} particles but the proxy only {proxy}")]
    ProxyTooSmall { small: usize, proxy: usize },
    #[error("sample sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("value {value} at abscissa {abscissa} is not strictly positive")]
    NonPositive { abscissa: f64, value: f64 },
    #[error("need at least two distinct abscissae to fit a rate")]
    Underdetermined,
}

fn check_order(p: f64, min: f64) -> Result<(), MetricsError> {
    if p.is_finite() && p >= min {
        Ok(())
    } else {
        Err(MetricsError::InvalidInput(format!("order p must be finite and at least {min}, got {p}")))
    }
}

/// `((1/N̄) Σ_{i<N̄} |x_small^i − x_proxy^i|^p)^{1/p}`, pairing particles by index.
pub fn lp_coupled_error(small: &Ensemble, proxy: &Ensemble, p: f64) -> Result<f64, MetricsError> {
    check_order(p, 1.0)?;
    if small.dim() != proxy.dim() {
        return Err(MetricsError::DimensionMismatch(small.dim(), proxy.dim()));
    }
    let n = small.particle_count();
    if n > proxy.particle_count() {
        return Err(MetricsError::ProxyTooSmall { small: n, proxy: proxy.particle_count() });
    }
    let total: f64 = small
        .iter()
        .zip(proxy.iter())
        .map(|(a, b)| {
            let sq: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
            sq.sqrt().powf(p)
        })
        .sum();
    Ok((total / n as f64).powf(1.0 / p))
}

/// Exact `W_p` between two equal-size empirical measures on the line.
pub fn wasserstein_1d(a: &[f64], b: &[f64], p: f64) -> Result<f64, MetricsError> {
    check_order(p, 1.0)?;
    if a.len() != b.len() {
        return Err(MetricsError::SizeMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::InvalidInput("empty sample".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MetricsError::InvalidInput("non-finite sample".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let cost: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs().powf(p)).sum();
    Ok((cost / a.len() as f64).powf(1.0 / p))
}

/// `(1/N) Σ_i |x^i|^p`.
pub fn empirical_moment(ens: &Ensemble, p: f64) -> Result<f64, MetricsError> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(MetricsError::InvalidInput(format!("moment order must be positive, got {p}")));
    }
    let total: f64 = ens
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
        .sum();
    Ok(total / ens.particle_count() as f64)
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit, MetricsError> {
    for &(x, y) in points {
        if !(x > 0.0 && x.is_finite()) || !(y > 0.0 && y.is_finite()) {
            return Err(MetricsError::NonPositive { abscissa: x, value: y });
        }
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|l| l.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|l| l.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|l| (l.0 - mean_x).powi(2)).sum();
    if logs.len() < 2 || sxx == 0.0 {
        return Err(MetricsError::Underdetermined);
    }
    let sxy: f64 = logs.iter().map(|l| (l.0 - mean_x) * (l.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_tot: f64 = logs.iter().map(|l| (l.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = logs
        .iter()
        .map(|l| (l.1 - (intercept + slope * l.0)).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(RateFit { slope, intercept, r_squared })
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && v[order[end + 1]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &k in &order[start..=end] {
            out[k] = rank;
        }
        start = end + 1;
    }
    out
}
