//! Trajectories and post-processing: tail residuals, decay-rate fits and
//! Monte Carlo success rates.

use nalgebra::DMatrix;
use rayon::prelude::*;
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{EscError, Result};
use crate::quadmap::StaticQuadraticMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// The run reached its horizon.
    Completed,
    /// The run reached its horizon and met a convergence criterion.
    Converged,
    /// The run was stopped early because the output blew up.
    Diverged,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Converged => "converged",
            RunStatus::Diverged => "diverged",
        }
    }
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One decimated sample of the closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub theta: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub y: f64,
    pub u: Vec<f64>,
    pub g_hat: Vec<f64>,
    /// Row-major `n × n`.
    pub h_hat: Vec<f64>,
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub n: usize,
    /// Spacing between records, `dt · decimation`.
    pub spacing: f64,
    pub records: Vec<Record>,
    pub status: RunStatus,
    /// Simulation time at which divergence was detected.
    pub diverged_at: Option<f64>,
}

impl Trajectory {
    pub fn is_diverged(&self) -> bool {
        self.status == RunStatus::Diverged
    }

    /// Records in the final `fraction` of the recorded horizon.
    pub fn tail(&self, fraction: f64) -> Result<&[Record]> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(EscError::InvalidInput(format!(
                "window fraction must lie in (0, 1], got {fraction}"
            )));
        }
        let len = self.records.len();
        let keep = ((len as f64) * fraction).floor() as usize;
        if keep == 0 {
            return Err(EscError::InvalidInput("residual window is empty".into()));
        }
        Ok(&self.records[len - keep..])
    }

    /// Peak Euclidean norm of `U` over the whole run.
    pub fn peak_u_norm(&self) -> f64 {
        self.records.iter().map(|r| norm(&r.u)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub window_fraction: f64,
    /// Tail mean of `|θ(t) − θ*|`.
    pub theta_residual: f64,
    /// Tail mean of `|y(t) − y*|`.
    pub y_residual: f64,
    /// Tail mean of `‖U(t)‖`.
    pub u_residual: f64,
    pub u_peak: f64,
    pub h_hat_tail_average: DMatrix<f64>,
    /// Least-squares slope of `log |θ̂(t) − θ*|` over the second half of the run.
    pub fitted_decay_rate: f64,
    pub status: RunStatus,
}

impl ConvergenceReport {
    /// Promotes a completed run to `Converged` when the tail `|y − y*|` is within `y_bound`.
    pub fn classify(&self, y_bound: f64) -> RunStatus {
        match self.status {
            RunStatus::Completed if self.y_residual <= y_bound => RunStatus::Converged,
            other => other,
        }
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Tail statistics of a trajectory against the true optimum.
pub fn residuals(
    traj: &Trajectory,
    map: &StaticQuadraticMap,
    window_fraction: f64,
) -> Result<ConvergenceReport> {
    let tail = traj.tail(window_fraction)?;
    let n = traj.n;
    let star = map.theta_star().as_slice();
    let count = tail.len() as f64;
    let mut theta_res = 0.0;
    let mut y_res = 0.0;
    let mut u_res = 0.0;
    let mut h_avg = DMatrix::zeros(n, n);
    for r in tail {
        let dist: Vec<f64> = r.theta.iter().zip(star).map(|(a, b)| a - b).collect();
        theta_res += norm(&dist);
        y_res += (r.y - map.y_star()).abs();
        u_res += norm(&r.u);
        for i in 0..n {
            for j in 0..n {
                h_avg[(i, j)] += r.h_hat[i * n + j];
            }
        }
    }
    h_avg /= count;

    let half = traj.records.len() / 2;
    let (times, logs): (Vec<f64>, Vec<f64>) = traj.records[half..]
        .iter()
        .map(|r| {
            let err: Vec<f64> = r.theta_hat.iter().zip(star).map(|(a, b)| a - b).collect();
            (r.t, norm(&err).max(f64::MIN_POSITIVE).ln())
        })
        .unzip();
    let fitted_decay_rate = least_squares_slope(&times, &logs)
        .map(|s| -s)
        .unwrap_or(f64::NAN);

    Ok(ConvergenceReport {
        window_fraction,
        theta_residual: theta_res / count,
        y_residual: y_res / count,
        u_residual: u_res / count,
        u_peak: traj.peak_u_norm(),
        h_hat_tail_average: h_avg,
        fitted_decay_rate,
        status: traj.status,
    })
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

/// Median absolute deviation (unscaled).
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// Threshold `median + 3 · MAD`.
pub fn calibrated_bound(values: &[f64]) -> f64 {
    median(values) + 3.0 * mad(values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessEstimate {
    pub successes: usize,
    pub trials: usize,
    pub fraction: f64,
    /// Exact (Clopper–Pearson) 95% interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Clopper–Pearson interval at confidence `1 − alpha`.
pub fn clopper_pearson(successes: usize, trials: usize, alpha: f64) -> (f64, f64) {
    assert!(trials > 0 && successes <= trials);
    let k = successes as f64;
    let n = trials as f64;
    let low = if successes == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0).unwrap().inverse_cdf(alpha / 2.0)
    };
    let high = if successes == trials {
        1.0
    } else {
        Beta::new(k + 1.0, n - k)
            .unwrap()
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (low, high)
}

impl SuccessEstimate {
    pub fn from_outcomes(outcomes: &[bool]) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(EscError::InvalidInput(
                "at least one seed is required".into(),
            ));
        }
        let successes = outcomes.iter().filter(|&&b| b).count();
        let trials = outcomes.len();
        let (ci_low, ci_high) = clopper_pearson(successes, trials, 0.05);
        Ok(Self {
            successes,
            trials,
            fraction: successes as f64 / trials as f64,
            ci_low,
            ci_high,
        })
    }
}

/// Runs `simulate` for every seed in parallel and counts how many outcomes
/// satisfy `criterion`. The result does not depend on scheduling order.
pub fn success_probability<T, S, C>(
    seeds: &[u64],
    simulate: S,
    criterion: C,
) -> Result<SuccessEstimate>
where
    T: Send,
    S: Fn(u64) -> Result<T> + Sync,
    C: Fn(&T) -> bool + Sync,
{
    let outcomes = seeds
        .par_iter()
        .map(|&seed| simulate(seed).map(|r| criterion(&r)))
        .collect::<Result<Vec<bool>>>()?;
    SuccessEstimate::from_outcomes(&outcomes)
}
