//! Interference contrasts, their growth and decay laws, diffusion constants
//! and the scaling function of the dimensionless conductance.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::brent::BrentOpt;
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EnsembleResult;
use crate::modulation::{PeakTimes, SymmetryTag};

/// Upper clamp on the fitted initial contrast.
pub const MAX_CONTRAST_AMPLITUDE: f64 = 1.05;

/// Minimum number of background samples on each side of a peak.
pub const BACKGROUND_SUPPORT: usize = 2;

/// Ratio of the geometric time grid used before differentiating ln g.
pub const GEOMETRIC_RATIO: f64 = 1.2;

/// Early kicks excluded from the scaling analysis, in units of the period.
pub const TRANSIENT_PERIODS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservablesError {
    #[error("series too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("kick {time}: fewer than {BACKGROUND_SUPPORT} background samples on each side (left {left}, right {right})")]
    InsufficientBackground { time: usize, left: usize, right: usize },
    #[error("kick {time}: non-positive background {value} (data corruption)")]
    DataCorruption { time: usize, value: f64 },
    #[error("kick {time}: contrast {value} is not positive")]
    NonPositiveContrast { time: usize, value: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("fit did not converge: {0}")]
    NonConvergence(String),
    #[error("invalid window: {0}")]
    BadWindow(String),
    #[error("series must be strictly positive (index {index}: {value})")]
    NonPositiveSeries { index: usize, value: f64 },
}

type Result<T> = std::result::Result<T, ObservablesError>;

/// Contrast of one interference peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastPoint {
    pub time: usize,
    /// (Π₀ − background) / background.
    pub contrast: f64,
    /// Interpolated incoherent Π₀ at `time`.
    pub background: f64,
    /// Standard error across ensemble batches, when batches are available.
    pub stderr: Option<f64>,
}

/// CBS and CFS contrasts at their predicted kicks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContrastSeries {
    pub cbs: Vec<ContrastPoint>,
    pub cfs: Vec<ContrastPoint>,
    /// Predicted peaks that were left out for lack of background support at
    /// the ends of the series.
    pub skipped: Vec<usize>,
}

impl ContrastSeries {
    pub fn cbs_at(&self, t: usize) -> Option<&ContrastPoint> {
        self.cbs.iter().find(|p| p.time == t)
    }

    pub fn cfs_at(&self, t: usize) -> Option<&ContrastPoint> {
        self.cfs.iter().find(|p| p.time == t)
    }

    /// `t,kind,contrast,background,stderr` rows sorted by kick.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(&str, &ContrastPoint)> =
            self.cbs.iter().map(|p| ("cbs", p)).chain(self.cfs.iter().map(|p| ("cfs", p))).collect();
        rows.sort_by_key(|(kind, p)| (p.time, *kind));
        let mut out = String::from("# t: kick; kind: cbs|cfs; contrast: (pi0-background)/background; background: interpolated incoherent pi0 (density); stderr: batch standard error\nt,kind,contrast,background,stderr\n");
        for (kind, p) in rows {
            let se = p.stderr.map(|s| format!("{s:.10e}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:.10e},{:.10e},{}", p.time, kind, p.contrast, p.background, se);
        }
        out
    }
}

/// Monotone piecewise-cubic (Fritsch–Carlson) interpolant through strictly
/// increasing abscissae.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    /// Panics unless `x` is strictly increasing with at least two points.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        assert!(x.len() >= 2 && x.len() == y.len(), "need at least two matching samples");
        assert!(x.windows(2).all(|w| w[1] > w[0]), "abscissae must increase");
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes[0] = delta[0];
            slopes[1] = delta[0];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    slopes[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            slopes[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            slopes[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Self { x, y, slopes }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|&xi| xi <= t) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.slopes[i] + h01 * self.y[i + 1] + h11 * h * self.slopes[i + 1]
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Background Π₀ at kick `t`, interpolated over kicks of the same parity that
/// are neither `t` nor a predicted peak.
pub fn background_at(pi0: &[f64], t: usize, peaks: &PeakTimes) -> Result<f64> {
    let horizon = pi0.len().saturating_sub(1);
    let nodes: Vec<usize> =
        (1..=horizon).filter(|&s| s % 2 == t % 2 && s != t && !peaks.contains(s)).collect();
    let left = nodes.iter().filter(|&&s| s < t).count();
    let right = nodes.len() - left;
    if left < BACKGROUND_SUPPORT || right < BACKGROUND_SUPPORT {
        return Err(ObservablesError::InsufficientBackground { time: t, left, right });
    }
    for &s in &nodes {
        if !(pi0[s] > 0.0) {
            return Err(ObservablesError::DataCorruption { time: s, value: pi0[s] });
        }
    }
    let interp = MonotoneCubic::new(
        nodes.iter().map(|&s| s as f64).collect(),
        nodes.iter().map(|&s| pi0[s]).collect(),
    );
    let value = interp.eval(t as f64);
    if !(value > 0.0) {
        return Err(ObservablesError::DataCorruption { time: t, value });
    }
    Ok(value)
}

/// Contrast of `pi0` at kick `t` against the interpolated background.
pub fn contrast_at(pi0: &[f64], t: usize, peaks: &PeakTimes) -> Result<f64> {
    let background = background_at(pi0, t, peaks)?;
    Ok((pi0[t] - background) / background)
}

fn point(pi0: &[f64], batches: &[Vec<f64>], t: usize, peaks: &PeakTimes) -> Result<ContrastPoint> {
    let background = background_at(pi0, t, peaks)?;
    let contrast = (pi0[t] - background) / background;
    let stderr = if batches.len() >= 2 {
        let per_batch = batches.iter().map(|b| contrast_at(b, t, peaks)).collect::<Result<Vec<_>>>();
        per_batch.ok().map(|c| standard_error(&c))
    } else {
        None
    };
    Ok(ContrastPoint { time: t, contrast, background, stderr })
}

/// Standard error of the mean of `samples`.
pub fn standard_error(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Contrasts of a bare Π₀ series (index = kick) with optional batch series
/// for error bars.
///
/// Peaks too close to either end of the series to have background support
/// are listed in `skipped`; if that leaves nothing, the support error of the
/// first peak is returned.
pub fn contrasts_from_series(pi0: &[f64], batches: &[Vec<f64>], peaks: &PeakTimes) -> Result<ContrastSeries> {
    let horizon = pi0.len().saturating_sub(1);
    let mut series = ContrastSeries::default();
    let mut first_err = None;
    for (times, out) in [(&peaks.cbs, &mut series.cbs), (&peaks.cfs, &mut series.cfs)] {
        for &t in times.iter().filter(|&&t| t <= horizon) {
            match point(pi0, batches, t, peaks) {
                Ok(p) => out.push(p),
                Err(e @ ObservablesError::InsufficientBackground { .. }) => {
                    series.skipped.push(t);
                    first_err.get_or_insert(e);
                }
                Err(e) => return Err(e),
            }
        }
    }
    series.skipped.sort_unstable();
    if series.cbs.is_empty() && series.cfs.is_empty() {
        return Err(first_err.unwrap_or(ObservablesError::TooShort { needed: 1, got: 0 }));
    }
    Ok(series)
}

/// CBS and CFS contrasts of an ensemble at the predicted peak kicks.
pub fn extract_contrasts(result: &EnsembleResult, peaks: &PeakTimes) -> Result<ContrastSeries> {
    contrasts_from_series(&result.pi0, &result.pi0_batches, peaks)
}

/// `I₀(x)·e^{−x}` for `x ≥ 0`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    let x = x.abs();
    if x <= 15.0 {
        let q = x * x / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        while term > 1e-17 * sum {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum * (-x).exp()
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..30 {
            let next = term * (2.0 * k as f64 - 1.0).powi(2) / (8.0 * k as f64 * x);
            if next < 1e-17 * sum || next > term {
                break;
            }
            term = next;
            sum += term;
        }
        sum / (2.0 * PI * x).sqrt()
    }
}

/// Growth law of the forward-scattering contrast.
pub fn cfs_model(t: f64, c0: f64, t_loc: f64, t_dec: f64) -> f64 {
    let decay = if t_dec.is_finite() { (-t / t_dec).exp() } else { 1.0 };
    c0 * bessel_i0_scaled(2.0 * t_loc / t) * decay
}

/// Which CFS parameters are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CfsFitMode {
    /// Fit `C₀`, `t_loc` and `t_dec`.
    Free,
    /// Take `C₀` and `t_dec` from the CBS decay; fit `t_loc` only.
    Shared { c0: f64, t_dec: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfsFit {
    pub c0: f64,
    pub t_loc: f64,
    /// `f64::INFINITY` when no decay is resolved.
    pub t_dec: f64,
    pub r_squared: f64,
    pub rms_residual: f64,
    pub mode: CfsFitMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbsFit {
    pub c0: f64,
    /// `f64::INFINITY` when the fitted slope is not negative.
    pub t_dec: f64,
    pub slope: f64,
    pub slope_stderr: f64,
}

struct LineFit {
    intercept: f64,
    slope: f64,
    slope_stderr: f64,
}

fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_stderr = if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    LineFit { intercept, slope, slope_stderr }
}

/// Log-linear fit of `C_B(t) = C₀ e^{−t/t_dec}`.
pub fn fit_cbs_decay(series: &ContrastSeries) -> Result<CbsFit> {
    if series.cbs.len() < 4 {
        return Err(ObservablesError::TooShort { needed: 4, got: series.cbs.len() });
    }
    if let Some(p) = series.cbs.iter().find(|p| !(p.contrast > 0.0)) {
        return Err(ObservablesError::NonPositiveContrast { time: p.time, value: p.contrast });
    }
    let x: Vec<f64> = series.cbs.iter().map(|p| p.time as f64).collect();
    let y: Vec<f64> = series.cbs.iter().map(|p| p.contrast.ln()).collect();
    let line = fit_line(&x, &y);
    let t_dec = if line.slope < 0.0 { -1.0 / line.slope } else { f64::INFINITY };
    Ok(CbsFit { c0: line.intercept.exp(), t_dec, slope: line.slope, slope_stderr: line.slope_stderr })
}

struct CfsProblem<'a> {
    t: &'a [f64],
    y: &'a [f64],
}

impl CfsProblem<'_> {
    /// Best clamped `C₀` and the residual sum of squares.
    fn profile(&self, t_loc: f64, t_dec: f64) -> (f64, f64) {
        let shape: Vec<f64> = self.t.iter().map(|&t| cfs_model(t, 1.0, t_loc, t_dec)).collect();
        let sff: f64 = shape.iter().map(|f| f * f).sum();
        let sfy: f64 = shape.iter().zip(self.y).map(|(f, y)| f * y).sum();
        let c0 = (sfy / sff).clamp(1e-12, MAX_CONTRAST_AMPLITUDE);
        (c0, self.rss(c0, t_loc, t_dec))
    }

    fn rss(&self, c0: f64, t_loc: f64, t_dec: f64) -> f64 {
        self.t.iter().zip(self.y).map(|(&t, y)| (y - cfs_model(t, c0, t_loc, t_dec)).powi(2)).sum()
    }
}

/// Free fit in `(ln t_loc, s)` with `1/t_dec = s²` and `C₀` profiled out.
struct FreeCost<'a>(&'a CfsProblem<'a>);

impl CostFunction for FreeCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.0.profile(p[0].exp(), rate_to_t_dec(p[1] * p[1])).1)
    }
}

struct SharedCost<'a> {
    problem: &'a CfsProblem<'a>,
    c0: f64,
    t_dec: f64,
}

impl CostFunction for SharedCost<'_> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, ln_t_loc: &f64) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.problem.rss(self.c0, ln_t_loc.exp(), self.t_dec))
    }
}

fn rate_to_t_dec(rate: f64) -> f64 {
    if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    }
}

/// Least-squares fit of the CFS growth law to `series.cfs`.
///
/// A log-spaced grid search seeds a local simplex refinement. An optimum on
/// the edge of the `t_loc` grid is reported as non-convergence.
pub fn fit_cfs_contrast(series: &ContrastSeries, mode: CfsFitMode) -> Result<CfsFit> {
    let n = series.cfs.len();
    if n < 5 {
        return Err(ObservablesError::TooShort { needed: 5, got: n });
    }
    let t: Vec<f64> = series.cfs.iter().map(|p| p.time as f64).collect();
    let y: Vec<f64> = series.cfs.iter().map(|p| p.contrast).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst <= 1e-24 * (1.0 + mean * mean) {
        return Err(ObservablesError::Degenerate("flat CFS series".into()));
    }
    let problem = CfsProblem { t: &t, y: &y };
    let t_max = t.iter().cloned().fold(0.0, f64::max);

    const GRID: usize = 80;
    let ln_lo = (0.05_f64).ln();
    let ln_hi = (20.0 * t_max).ln();
    let ln_grid: Vec<f64> = (0..GRID).map(|i| ln_lo + (ln_hi - ln_lo) * i as f64 / (GRID - 1) as f64).collect();
    let step = (ln_hi - ln_lo) / (GRID - 1) as f64;

    let (c0, t_loc, t_dec, grid_index) = match mode {
        CfsFitMode::Free => {
            let rates: Vec<f64> =
                std::iter::once(0.0).chain((0..24).map(|j| (0.01 / t_max) * 1.4_f64.powi(j))).collect();
            let mut best = (f64::INFINITY, 0, 0.0);
            for (i, &lt) in ln_grid.iter().enumerate() {
                for &r in &rates {
                    let (_, rss) = problem.profile(lt.exp(), rate_to_t_dec(r));
                    if rss < best.0 {
                        best = (rss, i, r);
                    }
                }
            }
            let (_, i0, r0) = best;
            let s0 = r0.sqrt();
            let ds = (r0.max(0.1 / t_max)).sqrt() * 0.5;
            let simplex = vec![vec![ln_grid[i0], s0], vec![ln_grid[i0] + step, s0], vec![ln_grid[i0], s0 + ds]];
            let solver = NelderMead::new(simplex)
                .with_sd_tolerance(1e-12)
                .map_err(|e| ObservablesError::NonConvergence(e.to_string()))?;
            let res = Executor::new(FreeCost(&problem), solver)
                .configure(|s| s.max_iters(2000))
                .run()
                .map_err(|e| ObservablesError::NonConvergence(e.to_string()))?;
            let p = res.state().get_best_param().cloned().unwrap_or_else(|| vec![ln_grid[i0], s0]);
            let t_loc = p[0].exp();
            let t_dec = rate_to_t_dec(p[1] * p[1]);
            let (c0, _) = problem.profile(t_loc, t_dec);
            (c0, t_loc, t_dec, i0)
        }
        CfsFitMode::Shared { c0, t_dec } => {
            if !(c0 > 0.0 && t_dec > 0.0) {
                return Err(ObservablesError::Degenerate(format!("shared parameters C0={c0}, t_dec={t_dec}")));
            }
            let (i0, _) = ln_grid
                .iter()
                .map(|&lt| problem.rss(c0, lt.exp(), t_dec))
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, r)| if r < acc.1 { (i, r) } else { acc });
            let lo = ln_grid[i0.saturating_sub(1)];
            let hi = ln_grid[(i0 + 1).min(GRID - 1)];
            let ln_t_loc = if hi > lo {
                let solver = BrentOpt::new(lo, hi).set_tolerance(1e-12, 1e-12);
                let res = Executor::new(SharedCost { problem: &problem, c0, t_dec }, solver)
                    .configure(|s| s.max_iters(500))
                    .run()
                    .map_err(|e| ObservablesError::NonConvergence(e.to_string()))?;
                res.state().get_best_param().copied().unwrap_or(ln_grid[i0])
            } else {
                ln_grid[i0]
            };
            (c0, ln_t_loc.exp(), t_dec, i0)
        }
    };
    if grid_index == 0 || grid_index == GRID - 1 {
        return Err(ObservablesError::NonConvergence(format!(
            "t_loc optimum {t_loc:.3e} sits on the search boundary [{:.3e}, {:.3e}]",
            ln_lo.exp(),
            ln_hi.exp()
        )));
    }
    let rss = problem.rss(c0, t_loc, t_dec);
    Ok(CfsFit {
        c0,
        t_loc,
        t_dec,
        r_squared: 1.0 - rss / sst,
        rms_residual: (rss / n as f64).sqrt(),
        mode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEstimate {
    pub d0: f64,
    /// Relative change of the local slope across the window.
    pub curvature: f64,
}

/// Maximum relative curvature tolerated before warning about non-diffusive data.
pub const CURVATURE_WARNING: f64 = 0.1;

/// `D₀` as half the slope of ⟨p²⟩ against t over `window`.
pub fn estimate_d0(p2: &[f64], window: RangeInclusive<usize>) -> Result<DiffusionEstimate> {
    let (a, b) = (*window.start(), *window.end());
    if b >= p2.len() || b < a + 2 {
        return Err(ObservablesError::BadWindow(format!("{a}..={b} over {} samples", p2.len())));
    }
    let x: Vec<f64> = (a..=b).map(|t| t as f64).collect();
    let y = &p2[a..=b];
    let line = fit_line(&x, y);
    // quadratic coefficient via regression on centred x²
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let resid: Vec<f64> = x.iter().zip(y).map(|(t, v)| v - line.intercept - line.slope * t).collect();
    let q: Vec<f64> = x.iter().map(|t| (t - mx).powi(2)).collect();
    let mq = q.iter().sum::<f64>() / q.len() as f64;
    let sqq: f64 = q.iter().map(|v| (v - mq).powi(2)).sum();
    let sqr: f64 = q.iter().zip(&resid).map(|(v, r)| (v - mq) * r).sum();
    let c = sqr / sqq;
    let width = (b - a) as f64;
    let curvature = (2.0 * c * width / line.slope).abs();
    if curvature > CURVATURE_WARNING {
        log::warn!("⟨p²⟩ curvature {curvature:.3} over kicks {a}..={b}: window is not diffusive");
    }
    Ok(DiffusionEstimate { d0: line.slope / 2.0, curvature })
}

/// Large-conductance scaling function of the given class.
pub fn beta_theory(g: f64, class: SymmetryTag) -> f64 {
    match class {
        SymmetryTag::Orthogonal => -1.0 - 4.0 * 2f64.sqrt() / (3.0 * PI.sqrt() * g),
        SymmetryTag::Unitary => -1.0 - 1.0 / (2.0 * g * g),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub t: usize,
    pub ln_l: f64,
    pub ln_g: f64,
    pub beta: f64,
}

impl ScalingPoint {
    pub fn inverse_g(&self) -> f64 {
        (-self.ln_g).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub points: Vec<ScalingPoint>,
    pub class: Option<SymmetryTag>,
    pub strength: Option<f64>,
    pub channels: usize,
    pub kbar: f64,
}

impl ScalingCurve {
    /// β at `inverse_g` by linear interpolation, inside the sampled range only.
    pub fn beta_at_inverse_g(&self, inverse_g: f64) -> Option<f64> {
        let mut pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.inverse_g(), p.beta)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let i = pts.partition_point(|p| p.0 < inverse_g);
        if i == 0 {
            return (pts.first()?.0 == inverse_g).then(|| pts[0].1);
        }
        let (x1, y1) = *pts.get(i)?;
        let (x0, y0) = pts[i - 1];
        Some(y0 + (y1 - y0) * (inverse_g - x0) / (x1 - x0))
    }

    /// Range of 1/g covered by the points.
    pub fn inverse_g_range(&self) -> Option<(f64, f64)> {
        let it = self.points.iter().map(|p| p.inverse_g());
        let lo = it.clone().fold(f64::INFINITY, f64::min);
        let hi = it.fold(f64::NEG_INFINITY, f64::max);
        (lo <= hi).then_some((lo, hi))
    }

    /// `inverse_g,beta,ln_l,ln_g,t,class,beta_orthogonal,beta_unitary` rows.
    pub fn to_csv(&self, label: &str) -> String {
        let mut out = String::from(
            "# inverse_g: 1/g; beta: d ln g / d ln L; ln_l, ln_g: logs of L and g; t: kick; beta_orthogonal, beta_unitary: large-g theory at this g\n",
        );
        out.push_str("label,class,inverse_g,beta,ln_l,ln_g,t,beta_orthogonal,beta_unitary\n");
        let class = self.class.map(|c| c.as_str()).unwrap_or("");
        for p in &self.points {
            let g = p.ln_g.exp();
            let _ = writeln!(
                out,
                "{label},{class},{:.10e},{:.10e},{:.10e},{:.10e},{},{:.10e},{:.10e}",
                1.0 / g,
                p.beta,
                p.ln_l,
                p.ln_g,
                p.t,
                beta_theory(g, SymmetryTag::Orthogonal),
                beta_theory(g, SymmetryTag::Unitary)
            );
        }
        out
    }
}

/// RMS difference in β between two curves over their shared 1/g range,
/// sampled on `samples` evenly spaced points.
pub fn rms_separation(a: &ScalingCurve, b: &ScalingCurve, samples: usize) -> Option<f64> {
    let (a_lo, a_hi) = a.inverse_g_range()?;
    let (b_lo, b_hi) = b.inverse_g_range()?;
    let (lo, hi) = (a_lo.max(b_lo), a_hi.min(b_hi));
    if !(hi > lo) || samples < 2 {
        return None;
    }
    let mut acc = 0.0;
    for i in 0..samples {
        let x = lo + (hi - lo) * i as f64 / (samples - 1) as f64;
        acc += (a.beta_at_inverse_g(x)? - b.beta_at_inverse_g(x)?).powi(2);
    }
    Some((acc / samples as f64).sqrt())
}

/// Kicks on a geometric grid of ratio [`GEOMETRIC_RATIO`] from `start` to `end`.
pub fn geometric_times(start: usize, end: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut x = start.max(1) as f64;
    while x.round() as usize <= end {
        let t = x.round() as usize;
        if out.last() != Some(&t) {
            out.push(t);
        }
        x *= GEOMETRIC_RATIO;
    }
    out
}

/// Scaling function β(g) from a ⟨p²(t)⟩ series (index = kick).
///
/// Kicks before `5·channels` are dropped, the rest are subsampled
/// geometrically and β is the slope of ln g against ln L over a sliding
/// window of `window` subsamples. Once L stops growing the remaining points
/// are dropped with a warning.
pub fn estimate_beta_of_g(p2: &[f64], channels: usize, kbar: f64, window: usize) -> Result<ScalingCurve> {
    if window < 5 || window.is_multiple_of(2) {
        return Err(ObservablesError::BadWindow(format!("window {window} must be odd and at least 5")));
    }
    if channels == 0 || !(kbar > 0.0) {
        return Err(ObservablesError::Degenerate(format!("channels={channels}, kbar={kbar}")));
    }
    if let Some((index, &value)) = p2.iter().enumerate().skip(1).find(|(_, v)| !(**v > 0.0)) {
        return Err(ObservablesError::NonPositiveSeries { index, value });
    }
    let horizon = p2.len().saturating_sub(1);
    let times = geometric_times(TRANSIENT_PERIODS * channels, horizon);
    let mut samples: Vec<(usize, f64, f64)> = Vec::with_capacity(times.len());
    for t in times {
        let l = p2[t].sqrt() / kbar;
        let ln_l = l.ln();
        if let Some(&(_, prev, _)) = samples.last() {
            if ln_l <= prev {
                log::warn!("L stops growing at kick {t}: dropping the localized tail");
                break;
            }
        }
        let ln_g = (channels as f64 * l / t as f64).ln();
        samples.push((t, ln_l, ln_g));
    }
    if samples.len() < window {
        return Err(ObservablesError::TooShort { needed: window, got: samples.len() });
    }
    let half = window / 2;
    let points = (half..samples.len() - half)
        .map(|i| {
            let w = &samples[i - half..=i + half];
            let x: Vec<f64> = w.iter().map(|s| s.1).collect();
            let y: Vec<f64> = w.iter().map(|s| s.2).collect();
            let (t, ln_l, ln_g) = samples[i];
            ScalingPoint { t, ln_l, ln_g, beta: fit_line(&x, &y).slope }
        })
        .collect();
    Ok(ScalingCurve { points, class: None, strength: None, channels, kbar })
}
