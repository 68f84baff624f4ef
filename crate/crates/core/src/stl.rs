//! Robust seasonal-trend decomposition (STL) built on loess regression.
//!
//! The decomposition follows the classic two-loop scheme: an inner loop that
//! alternates seasonal extraction (cycle-subseries loess, low-pass filtering)
//! with trend smoothing, and an outer loop that downweights outliers through
//! bisquare robustness weights computed from the remainder.
//!
//! All series are dense, uniformly sampled f64 slices; missing values are not
//! supported.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// STL tuning knobs.
///
/// `seasonal_span`/`trend_span` are loess windows (odd, >= 3, <= series
/// length); `period` is the number of samples per seasonal cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StlConfig {
    pub period: usize,
    pub seasonal_span: usize,
    pub trend_span: usize,
    pub inner_iters: usize,
    pub outer_iters: usize,
    /// Local polynomial degree for the seasonal and trend fits: 0 or 1.
    pub loess_degree: usize,
}

fn next_odd_at_least(n: usize) -> usize {
    if n % 2 == 1 {
        n
    } else {
        n + 1
    }
}

impl StlConfig {
    /// Canonical defaults for a given seasonal period: two inner passes, one
    /// robustness round, degree-1 loess, seasonal span 7, trend span the
    /// smallest odd integer >= 1.5 * period.
    pub fn for_period(period: usize) -> Result<Self> {
        let cfg = StlConfig {
            period,
            seasonal_span: 7,
            trend_span: next_odd_at_least(((period as f64) * 1.5).ceil() as usize).max(3),
            inner_iters: 2,
            outer_iters: 1,
            loess_degree: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.period < 2 {
            return Err(Error::InvalidParameter(format!(
                "STL period must be >= 2, got {}",
                self.period
            )));
        }
        for (name, span) in [("seasonal_span", self.seasonal_span), ("trend_span", self.trend_span)] {
            if span < 3 || span % 2 == 0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be odd and >= 3, got {span}"
                )));
            }
        }
        if self.inner_iters < 1 {
            return Err(Error::InvalidParameter("inner_iters must be >= 1".into()));
        }
        if self.loess_degree > 1 {
            return Err(Error::InvalidParameter(format!(
                "loess_degree must be 0 or 1, got {}",
                self.loess_degree
            )));
        }
        Ok(())
    }

    /// Validation against a concrete series length.
    pub fn validate_for_len(&self, len: usize) -> Result<()> {
        self.validate()?;
        if len < 2 * self.period {
            return Err(Error::InvalidParameter(format!(
                "series of length {len} is shorter than two periods ({})",
                2 * self.period
            )));
        }
        if self.seasonal_span > len || self.trend_span > len {
            return Err(Error::InvalidParameter(format!(
                "loess spans ({}, {}) exceed series length {len}",
                self.seasonal_span, self.trend_span
            )));
        }
        Ok(())
    }
}

/// Additive decomposition aligned with the input series.
#[derive(Debug, Clone, PartialEq)]
pub struct StlComponents {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub remainder: Vec<f64>,
}

impl StlComponents {
    pub fn len(&self) -> usize {
        self.trend.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trend.is_empty()
    }

    pub fn reconstruct(&self) -> Vec<f64> {
        self.trend
            .iter()
            .zip(&self.seasonal)
            .zip(&self.remainder)
            .map(|((t, s), r)| t + s + r)
            .collect()
    }
}

/// Tricube neighborhood weight (1-|u|^3)^3 for |u| < 1, else 0.
pub fn tricube(u: f64) -> f64 {
    let a = u.abs();
    if a >= 1.0 {
        return 0.0;
    }
    let b = 1.0 - a * a * a;
    b * b * b
}

/// Bisquare robustness weight (1-u^2)^2 on [0,1), 0 for u >= 1.
/// The argument is a non-negative residual ratio.
pub fn bisquare(u: f64) -> Result<f64> {
    if u < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "bisquare argument must be non-negative, got {u}"
        )));
    }
    if u >= 1.0 {
        return Ok(0.0);
    }
    let b = 1.0 - u * u;
    Ok(b * b)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Outer-loop robustness weights: rho[t] = B(|R_t| / (6 * median|R|)).
/// A zero median (no spread to measure outliers against) yields all ones.
pub fn robustness_weights(remainder: &[f64]) -> Result<Vec<f64>> {
    if remainder.is_empty() {
        return Err(Error::InvalidParameter(
            "robustness weights of an empty remainder".into(),
        ));
    }
    let mut abs: Vec<f64> = remainder.iter().map(|r| r.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).expect("finite remainder"));
    let h = 6.0 * median(&abs);
    if h == 0.0 {
        return Ok(vec![1.0; remainder.len()]);
    }
    remainder.iter().map(|r| bisquare(r.abs() / h)).collect()
}

/// Plain moving average; output is shorter by window-1.
pub fn moving_average(v: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window > v.len() {
        return Err(Error::InvalidParameter(format!(
            "moving average window {window} out of range for length {}",
            v.len()
        )));
    }
    let inv = 1.0 / window as f64;
    let mut sum: f64 = v[..window].iter().sum();
    let mut out = Vec::with_capacity(v.len() - window + 1);
    out.push(sum * inv);
    for i in window..v.len() {
        sum += v[i] - v[i - window];
        out.push(sum * inv);
    }
    Ok(out)
}

/// One weighted local fit evaluated at `x0`.
///
/// Window = the `span` nearest neighbors (clamped to the series length, ties
/// broken toward the left); weights = tricube(distance / max distance) times
/// the optional per-point robustness weights. Degenerate fits (zero total
/// weight or collapsed design) fall back to the window mean.
fn loess_eval(xs: &[f64], ys: &[f64], rho: Option<&[f64]>, span: usize, degree: usize, x0: f64) -> f64 {
    let n = xs.len();
    let q = span.min(n);
    let mut hi = xs.partition_point(|&v| v < x0);
    let mut lo = hi;
    while hi - lo < q {
        if lo == 0 {
            hi += 1;
        } else if hi == n {
            lo -= 1;
        } else if x0 - xs[lo - 1] <= xs[hi] - x0 {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    let d_max = (x0 - xs[lo]).abs().max((xs[hi - 1] - x0).abs());

    let (mut sw, mut swu, mut swuu, mut swy, mut swuy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for j in lo..hi {
        let u = xs[j] - x0;
        let mut w = if d_max > 0.0 { tricube(u.abs() / d_max) } else { 1.0 };
        if let Some(r) = rho {
            w *= r[j];
        }
        sw += w;
        swu += w * u;
        swuu += w * u * u;
        swy += w * ys[j];
        swuy += w * u * ys[j];
    }
    if sw <= 0.0 {
        return ys[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
    }
    if degree == 0 {
        return swy / sw;
    }
    // weighted least squares for y ~ a + b*(x - x0); the fitted value at x0 is a
    let det = sw * swuu - swu * swu;
    if det <= 1e-12 * sw * swuu {
        return swy / sw;
    }
    (swuu * swy - swu * swuy) / det
}

/// Loess-smooth `y` observed at strictly increasing `x`, returning the fitted
/// value at every observation point.
pub fn loess_fit(
    x: &[f64],
    y: &[f64],
    span: usize,
    degree: usize,
    point_weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::shape(
            "loess_fit",
            format!("y of length {}", x.len()),
            format!("length {}", y.len()),
        ));
    }
    if let Some(w) = point_weights {
        if w.len() != x.len() {
            return Err(Error::shape(
                "loess_fit",
                format!("weights of length {}", x.len()),
                format!("length {}", w.len()),
            ));
        }
    }
    if span < 3 || span % 2 == 0 || span > x.len() {
        return Err(Error::InvalidParameter(format!(
            "loess span must be odd, >= 3 and <= {}, got {span}",
            x.len()
        )));
    }
    if degree > 1 {
        return Err(Error::InvalidParameter(format!(
            "loess degree must be 0 or 1, got {degree}"
        )));
    }
    if x.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "loess x coordinates must be strictly increasing".into(),
        ));
    }
    Ok(x.iter()
        .map(|&x0| loess_eval(x, y, point_weights, span, degree, x0))
        .collect())
}

/// Loess over an integer grid 0..n-1, used by the STL passes.
fn loess_grid(y: &[f64], rho: Option<&[f64]>, span: usize, degree: usize) -> Vec<f64> {
    let xs: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
    xs.iter()
        .map(|&x0| loess_eval(&xs, y, rho, span, degree, x0))
        .collect()
}

/// One inner-loop pass.
///
/// Step 1 detrends with the previous trend estimate; Step 2 loess-smooths each
/// cycle-subseries (extended one fitted position at both ends) and interleaves
/// them into C, covering one extra period on each side; Step 3 low-passes C
/// with moving averages of length period, period, 3 and a degree-1 loess;
/// Step 4 subtracts the low-pass from C to get the seasonal; Step 5
/// deseasonalizes the input; Step 6 loess-smooths the result into the trend.
pub fn inner_loop_pass(
    y: &[f64],
    trend_prev: &[f64],
    cfg: &StlConfig,
    rho: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = y.len();
    cfg.validate_for_len(n)?;
    if trend_prev.len() != n || rho.len() != n {
        return Err(Error::shape(
            "inner_loop_pass",
            format!("trend/rho of length {n}"),
            format!("lengths {}/{}", trend_prev.len(), rho.len()),
        ));
    }
    let p = cfg.period;

    // Step 1
    let detrended: Vec<f64> = y.iter().zip(trend_prev).map(|(a, b)| a - b).collect();

    // Step 2: smoothed cycle-subseries, interleaved over t in [-p, n+p).
    let mut c = vec![0.0; n + 2 * p];
    let mut sub_y = Vec::new();
    let mut sub_rho = Vec::new();
    let mut sub_x = Vec::new();
    for phase in 0..p {
        sub_y.clear();
        sub_rho.clear();
        sub_x.clear();
        let mut t = phase;
        while t < n {
            sub_x.push(sub_y.len() as f64);
            sub_y.push(detrended[t]);
            sub_rho.push(rho[t]);
            t += p;
        }
        let m = sub_y.len();
        // subseries can be shorter than the configured span; clamp inside loess_eval
        for k in -1..=(m as isize) {
            let val = loess_eval(
                &sub_x,
                &sub_y,
                Some(&sub_rho),
                cfg.seasonal_span,
                cfg.loess_degree,
                k as f64,
            );
            let t_signed = phase as isize + k * p as isize;
            c[(t_signed + p as isize) as usize] = val;
        }
    }

    // Step 3
    let ma = moving_average(&moving_average(&moving_average(&c, p)?, p)?, 3)?;
    debug_assert_eq!(ma.len(), n);
    let low_pass = loess_grid(&ma, None, cfg.trend_span, 1);

    // Step 4
    let seasonal: Vec<f64> = (0..n).map(|t| c[t + p] - low_pass[t]).collect();

    // Step 5
    let deseasonalized: Vec<f64> = y.iter().zip(&seasonal).map(|(a, s)| a - s).collect();

    // Step 6
    let trend = loess_grid(&deseasonalized, Some(rho), cfg.trend_span, cfg.loess_degree);

    Ok((seasonal, trend))
}

/// Full STL decomposition: outer_iters+1 rounds of inner_iters inner passes,
/// with bisquare robustness weights recomputed from the remainder between
/// rounds. The remainder is defined as y - trend - seasonal, which forces the
/// reconstruction identity.
pub fn stl_decompose(y: &[f64], cfg: &StlConfig) -> Result<StlComponents> {
    cfg.validate_for_len(y.len())?;
    if let Some(bad) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("stl input at position {bad}")));
    }

    let n = y.len();
    let mut rho = vec![1.0; n];
    let mut trend = vec![0.0; n];
    let mut seasonal = vec![0.0; n];
    for round in 0..=cfg.outer_iters {
        for _ in 0..cfg.inner_iters {
            let (s, t) = inner_loop_pass(y, &trend, cfg, &rho)?;
            seasonal = s;
            trend = t;
        }
        if round < cfg.outer_iters {
            let remainder: Vec<f64> = (0..n).map(|t| y[t] - trend[t] - seasonal[t]).collect();
            rho = robustness_weights(&remainder)?;
        }
    }
    let remainder: Vec<f64> = (0..n).map(|t| y[t] - trend[t] - seasonal[t]).collect();
    Ok(StlComponents {
        trend,
        seasonal,
        remainder,
    })
}
