//! The deterministic averaged closed loop on a discretized transport grid,
//! together with its stability certificate.
//!
//! State: `θ̃_av`, `U_av` and, per channel, samples of `u_av,i(x, t)` on
//! `x_j = j / m`. The transport `u_t = D⁻¹ u_x` carries the boundary inflow
//! `u(1, t) = U_av(t)` toward `x = 0`, where it drives `θ̃̇_av = u(0, t)`.
//! The filter obeys `U̇_av = −c U_av + c K H (θ̃_av + ∫₀¹ D u_av dx)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::delayline::trapezoid;
use crate::error::{check_dim, EscError, Result};
use crate::metrics::least_squares_slope;

/// Residual accepted for eigenpairs returned by the symmetric eigensolver.
const EIGEN_RESIDUAL_TOL: f64 = 1e-10;

fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let residual = (m * v - v * lambda).amax();
        if residual > EIGEN_RESIDUAL_TOL * (1.0 + m.amax()) {
            return Err(EscError::InvalidInput(format!(
                "eigen-decomposition residual {residual:e} too large"
            )));
        }
    }
    Ok(eig.eigenvalues)
}

/// Smallest eigenvalue of `−H`; errors unless `H` is symmetric negative definite.
pub fn lambda_min_neg(h: &DMatrix<f64>) -> Result<f64> {
    if !h.is_square() {
        return Err(EscError::InvalidInput("hessian must be square".into()));
    }
    let asym = (h - h.transpose()).amax();
    if asym > 1e-12 {
        return Err(EscError::NotSymmetric(asym));
    }
    let lmin = symmetric_eigenvalues(&(-h))?.min();
    if lmin <= 0.0 {
        return Err(EscError::NotNegativeDefinite);
    }
    Ok(lmin)
}

/// Sufficient filter gain `c* = 1 + λ_max(−HKHKH) / λ_min(−H)`.
pub fn c_star(h: &DMatrix<f64>, gains: &[f64]) -> Result<f64> {
    check_dim(h.nrows(), gains.len())?;
    if gains.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
        return Err(EscError::InvalidInput("gains must be positive".into()));
    }
    let lmin = lambda_min_neg(h)?;
    let k = DMatrix::from_diagonal(&DVector::from_column_slice(gains));
    let mut m = -(h * &k * h * &k * h);
    // Symmetrize away rounding before the symmetric solver.
    m = (&m + m.transpose()) * 0.5;
    let lmax = symmetric_eigenvalues(&m)?.max();
    Ok(1.0 + lmax / lmin)
}

/// Parameters of the averaged system and its discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedParams {
    pub hessian: DMatrix<f64>,
    pub gains: Vec<f64>,
    pub c: f64,
    pub delays: Vec<f64>,
    /// Grid intervals per channel.
    pub m: usize,
    pub dt: f64,
}

impl AveragedParams {
    pub fn validate(&self) -> Result<()> {
        let n = self.hessian.nrows();
        check_dim(n, self.gains.len())?;
        check_dim(n, self.delays.len())?;
        lambda_min_neg(&self.hessian)?;
        if self.gains.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(EscError::InvalidInput("gains must be positive".into()));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(EscError::InvalidInput("c must be positive".into()));
        }
        if self.delays.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(EscError::InvalidInput("delays must be nonnegative".into()));
        }
        if self.m < 1 {
            return Err(EscError::InvalidInput(
                "grid needs at least one interval".into(),
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(EscError::InvalidInput("dt must be positive".into()));
        }
        let limit = self.cfl_limit();
        if self.dt > limit {
            return Err(EscError::InvalidInput(format!(
                "CFL violated: dt = {} exceeds min(D_i)/m = {limit}",
                self.dt
            )));
        }
        Ok(())
    }

    /// Largest stable step for the upwind transport, `min_i D_i / m` over nonzero delays.
    pub fn cfl_limit(&self) -> f64 {
        self.delays
            .iter()
            .filter(|&&d| d > 0.0)
            .map(|d| d / self.m as f64)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn dim(&self) -> usize {
        self.gains.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedState {
    pub theta_tilde: Vec<f64>,
    pub u_av: Vec<f64>,
    /// `grid[i][j] = u_av,i(j / m, t)`; `grid[i][m] == u_av[i]`.
    pub grid: Vec<Vec<f64>>,
}

impl AveragedState {
    /// State with zero control history and the given initial error.
    pub fn at_rest(theta_tilde: Vec<f64>, m: usize) -> Self {
        let n = theta_tilde.len();
        Self {
            theta_tilde,
            u_av: vec![0.0; n],
            grid: vec![vec![0.0; m + 1]; n],
        }
    }

    pub fn origin(n: usize, m: usize) -> Self {
        Self::at_rest(vec![0.0; n], m)
    }
}

/// `∫₀¹ D_i u_i(x) dx` per channel by the trapezoid rule.
pub fn grid_integrals(grid: &[Vec<f64>], delays: &[f64]) -> Vec<f64> {
    grid.iter()
        .zip(delays)
        .map(|(row, &d)| {
            let m = row.len() - 1;
            if m == 0 || d == 0.0 {
                0.0
            } else {
                d * trapezoid(row.iter().copied(), 1.0 / m as f64)
            }
        })
        .collect()
}

/// One explicit step: Euler for the ODE parts, first-order upwind for transport.
pub fn step_averaged(state: &mut AveragedState, params: &AveragedParams) -> Result<()> {
    params.validate()?;
    step_unchecked(state, params);
    Ok(())
}

fn step_unchecked(state: &mut AveragedState, params: &AveragedParams) {
    let n = params.dim();
    let m = params.m;
    let dt = params.dt;
    let vartheta = reduction_transform_unchecked(
        &state.theta_tilde,
        &state.grid,
        &params.hessian,
        &params.delays,
    );
    for i in 0..n {
        let outflow = if params.delays[i] > 0.0 {
            state.grid[i][0]
        } else {
            state.u_av[i]
        };
        state.theta_tilde[i] += dt * outflow;
    }
    let mut new_u = state.u_av.clone();
    for i in 0..n {
        new_u[i] += dt * params.c * (params.gains[i] * vartheta[i] - state.u_av[i]);
    }
    for i in 0..n {
        let row = &mut state.grid[i];
        if params.delays[i] > 0.0 {
            let nu = dt * m as f64 / params.delays[i];
            for j in 0..m {
                row[j] += nu * (row[j + 1] - row[j]);
            }
        } else {
            row.iter_mut().for_each(|v| *v = new_u[i]);
        }
        row[m] = new_u[i];
    }
    state.u_av = new_u;
}

/// `ϑ = H (θ̃_av + ∫₀¹ D u_av dx)`.
pub fn reduction_transform(
    theta_tilde: &[f64],
    grid: &[Vec<f64>],
    hessian: &DMatrix<f64>,
    delays: &[f64],
) -> Result<Vec<f64>> {
    let n = theta_tilde.len();
    check_dim(n, grid.len())?;
    check_dim(n, delays.len())?;
    check_dim(n, hessian.nrows())?;
    Ok(reduction_transform_unchecked(
        theta_tilde,
        grid,
        hessian,
        delays,
    ))
}

fn reduction_transform_unchecked(
    theta_tilde: &[f64],
    grid: &[Vec<f64>],
    hessian: &DMatrix<f64>,
    delays: &[f64],
) -> Vec<f64> {
    let ints = grid_integrals(grid, delays);
    let z: Vec<f64> = theta_tilde.iter().zip(&ints).map(|(a, b)| a + b).collect();
    let n = z.len();
    (0..n)
        .map(|i| (0..n).map(|j| hessian[(i, j)] * z[j]).sum())
        .collect()
}

/// `Ũ = U_av − K ϑ`.
pub fn auxiliary_u(u_av: &[f64], vartheta: &[f64], gains: &[f64]) -> Result<Vec<f64>> {
    check_dim(u_av.len(), vartheta.len())?;
    check_dim(u_av.len(), gains.len())?;
    Ok(u_av
        .iter()
        .zip(vartheta)
        .zip(gains)
        .map(|((u, v), k)| u - k * v)
        .collect())
}

fn quad_form(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += v[i] * m[(i, j)] * v[j];
        }
    }
    acc
}

/// Lyapunov functional
/// `V = ϑᵀKϑ + ¼ λ_min(−H) ∫₀¹ (1 + x) uᵀ D u dx + ½ Ũᵀ (−H) Ũ`.
pub fn lyapunov_v(
    state: &AveragedState,
    hessian: &DMatrix<f64>,
    gains: &[f64],
    delays: &[f64],
) -> Result<f64> {
    let lmin = lambda_min_neg(hessian)?;
    let vartheta = reduction_transform(&state.theta_tilde, &state.grid, hessian, delays)?;
    let aux = auxiliary_u(&state.u_av, &vartheta, gains)?;
    let first: f64 = vartheta.iter().zip(gains).map(|(v, k)| k * v * v).sum();
    let mut weighted = 0.0;
    for (row, &d) in state.grid.iter().zip(delays) {
        let m = row.len() - 1;
        if m == 0 || d == 0.0 {
            continue;
        }
        let h = 1.0 / m as f64;
        let vals = row
            .iter()
            .enumerate()
            .map(|(j, u)| (1.0 + j as f64 * h) * d * u * u);
        weighted += trapezoid(vals, h);
    }
    let third = 0.5 * quad_form(&(-hessian), &aux);
    Ok(first + 0.25 * lmin * weighted + third)
}

/// `|θ̃_av|² + ∫₀¹ |u_av|² dx + |Ũ|²`, the quantity `V` is sandwiched against.
pub fn norm_expression(
    state: &AveragedState,
    hessian: &DMatrix<f64>,
    gains: &[f64],
    delays: &[f64],
) -> Result<f64> {
    let vartheta = reduction_transform(&state.theta_tilde, &state.grid, hessian, delays)?;
    let aux = auxiliary_u(&state.u_av, &vartheta, gains)?;
    let theta: f64 = state.theta_tilde.iter().map(|x| x * x).sum();
    let spatial: f64 = state
        .grid
        .iter()
        .map(|row| {
            let m = row.len() - 1;
            if m == 0 {
                row[0] * row[0]
            } else {
                trapezoid(row.iter().map(|u| u * u), 1.0 / m as f64)
            }
        })
        .sum();
    let aux_sq: f64 = aux.iter().map(|x| x * x).sum();
    Ok(theta + spatial + aux_sq)
}

/// `Ψ = |θ̃_av|² + Σᵢ ∫_{t−Dᵢ}^{t} Uᵢ² dτ + |U_av|²`, with the window
/// integrals read off the transport grid.
pub fn psi(state: &AveragedState, delays: &[f64]) -> f64 {
    let theta: f64 = state.theta_tilde.iter().map(|x| x * x).sum();
    let hist: f64 = state
        .grid
        .iter()
        .zip(delays)
        .map(|(row, &d)| {
            let m = row.len() - 1;
            if m == 0 || d == 0.0 {
                0.0
            } else {
                d * trapezoid(row.iter().map(|u| u * u), 1.0 / m as f64)
            }
        })
        .sum();
    let u: f64 = state.u_av.iter().map(|x| x * x).sum();
    theta + hist + u
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedSample {
    pub t: f64,
    pub theta_tilde: Vec<f64>,
    pub u_av: Vec<f64>,
    pub vartheta: Vec<f64>,
    pub aux_u: Vec<f64>,
    pub v: f64,
    pub psi: f64,
}

#[derive(Debug, Clone)]
pub struct AveragedRun {
    pub c_star: f64,
    pub samples: Vec<AveragedSample>,
    /// Negated least-squares slope of `log V` over the second half.
    pub v_decay_rate: f64,
    /// Negated least-squares slope of `log Ψ` over the second half.
    pub psi_decay_rate: f64,
}

impl AveragedRun {
    /// Largest increase `V(t_{k+1}) − V(t_k)` between consecutive samples.
    pub fn max_v_increase(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| w[1].v - w[0].v)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn second_half_decay(samples: &[AveragedSample], value: impl Fn(&AveragedSample) -> f64) -> f64 {
    let half = &samples[samples.len() / 2..];
    let (ts, ls): (Vec<f64>, Vec<f64>) = half
        .iter()
        .map(|s| (s.t, value(s).max(f64::MIN_POSITIVE).ln()))
        .unzip();
    least_squares_slope(&ts, &ls)
        .map(|s| -s)
        .unwrap_or(f64::NAN)
}

/// Integrates the averaged system, sampling every `record_every` steps.
pub fn simulate(
    params: &AveragedParams,
    initial: AveragedState,
    t_final: f64,
    record_every: usize,
) -> Result<AveragedRun> {
    params.validate()?;
    let n = params.dim();
    check_dim(n, initial.theta_tilde.len())?;
    check_dim(n, initial.u_av.len())?;
    check_dim(n, initial.grid.len())?;
    if initial.grid.iter().any(|row| row.len() != params.m + 1) {
        return Err(EscError::InvalidInput(
            "grid rows must have m + 1 nodes".into(),
        ));
    }
    if record_every == 0 {
        return Err(EscError::InvalidInput(
            "record_every must be at least 1".into(),
        ));
    }
    let cs = c_star(&params.hessian, &params.gains)?;
    let steps = (t_final / params.dt).round() as usize;
    let mut state = initial;
    let sample = |k: usize, s: &AveragedState| -> Result<AveragedSample> {
        let vartheta =
            reduction_transform(&s.theta_tilde, &s.grid, &params.hessian, &params.delays)?;
        let aux_u = auxiliary_u(&s.u_av, &vartheta, &params.gains)?;
        Ok(AveragedSample {
            t: k as f64 * params.dt,
            theta_tilde: s.theta_tilde.clone(),
            u_av: s.u_av.clone(),
            v: lyapunov_v(s, &params.hessian, &params.gains, &params.delays)?,
            psi: psi(s, &params.delays),
            vartheta,
            aux_u,
        })
    };
    let mut samples = vec![sample(0, &state)?];
    for k in 1..=steps {
        step_unchecked(&mut state, params);
        if k % record_every == 0 {
            samples.push(sample(k, &state)?);
        }
    }
    let v_decay_rate = second_half_decay(&samples, |s| s.v);
    let psi_decay_rate = second_half_decay(&samples, |s| s.psi);
    Ok(AveragedRun {
        c_star: cs,
        samples,
        v_decay_rate,
        psi_decay_rate,
    })
}
