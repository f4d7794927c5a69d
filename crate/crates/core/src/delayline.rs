//! Sampled history buffers for per-channel input delays.
//!
//! A [`DelayLine`] stores one scalar signal on a uniform time grid. Delays are
//! whole numbers of steps, so delayed reads are exact and need no
//! interpolation. The same samples also serve as the discrete state of the
//! transport equation `u_t = D⁻¹ u_x` with inflow `u(1, t) = U(t)`: the node at
//! `x_j = j / m` holds `U(t − D (1 − x_j))`.

use crate::error::{EscError, Result};

/// Relative tolerance used when checking that a delay sits on the time grid.
const GRID_TOL: f64 = 1e-9;

/// Converts a delay to a whole number of steps, rejecting off-grid values.
pub fn delay_steps(delay: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(EscError::InvalidInput(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if !(delay.is_finite() && delay >= 0.0) {
        return Err(EscError::InvalidInput(format!(
            "delay must be nonnegative, got {delay}"
        )));
    }
    let steps = (delay / dt).round();
    if (steps * dt - delay).abs() > GRID_TOL * delay.max(1.0) {
        return Err(EscError::InvalidInput(format!(
            "delay {delay} is not an integer multiple of dt = {dt}"
        )));
    }
    Ok(steps as usize)
}

/// Ordered per-channel delays `0 ≤ D_1 ≤ … ≤ D_n`, each a multiple of `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayVector {
    delays: Vec<f64>,
    steps: Vec<usize>,
    dt: f64,
}

impl DelayVector {
    pub fn new(delays: Vec<f64>, dt: f64) -> Result<Self> {
        let steps = delays
            .iter()
            .map(|&d| delay_steps(d, dt))
            .collect::<Result<Vec<_>>>()?;
        if delays.windows(2).any(|w| w[0] > w[1]) {
            return Err(EscError::InvalidInput(
                "delays must be sorted in ascending order".into(),
            ));
        }
        Ok(Self { delays, steps, dt })
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn max_delay(&self) -> f64 {
        self.delays.iter().copied().fold(0.0, f64::max)
    }
}

/// Ring buffer of the most recent samples, newest last.
///
/// The buffer starts full of the fill value, which stands for the signal's
/// history before the first push.
#[derive(Debug, Clone)]
pub struct DelayLine {
    dt: f64,
    buf: Vec<f64>,
    newest: usize,
    pushes: u64,
}

impl DelayLine {
    /// A line able to serve any delay up to `max_delay`.
    pub fn new(dt: f64, max_delay: f64, fill: f64) -> Result<Self> {
        let max_steps = delay_steps(max_delay, dt)?;
        Ok(Self::with_steps(dt, max_steps, fill))
    }

    pub(crate) fn with_steps(dt: f64, max_steps: usize, fill: f64) -> Self {
        Self {
            dt,
            buf: vec![fill; max_steps + 1],
            newest: 0,
            pushes: 0,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of stored samples.
    pub fn capacity(&self) -> usize {
        self.buf.len()
    }

    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    pub fn push(&mut self, sample: f64) {
        self.newest = (self.newest + 1) % self.buf.len();
        self.buf[self.newest] = sample;
        self.pushes += 1;
    }

    /// Sample from `steps` pushes ago; `0` is the newest.
    ///
    /// Panics if `steps >= capacity()`.
    pub fn sample(&self, steps: usize) -> f64 {
        assert!(steps < self.buf.len(), "delay exceeds line capacity");
        let cap = self.buf.len();
        self.buf[(self.newest + cap - steps) % cap]
    }

    fn checked_steps(&self, delay: f64) -> Result<usize> {
        let steps = delay_steps(delay, self.dt)?;
        if steps >= self.buf.len() {
            return Err(EscError::InvalidInput(format!(
                "delay {delay} exceeds line capacity of {} steps",
                self.buf.len() - 1
            )));
        }
        Ok(steps)
    }

    pub fn value_at_delay(&self, delay: f64) -> Result<f64> {
        Ok(self.sample(self.checked_steps(delay)?))
    }

    /// Trapezoidal `∫_{t−D}^{t} U(τ) dτ` over the most recent `D/dt + 1` samples.
    pub fn window_integral(&self, delay: f64) -> Result<f64> {
        let steps = self.checked_steps(delay)?;
        if steps == 0 {
            return Ok(0.0);
        }
        let h = delay / steps as f64;
        Ok(trapezoid((0..steps + 1).rev().map(|k| self.sample(k)), h))
    }

    /// Transport-equation profile `u(x_j, t)` on `x_j = j / m`, `m = D / dt`,
    /// read off the history by `u(x, t) = U(t − D (1 − x))`.
    pub fn transport_profile(&self, delay: f64) -> Result<Vec<f64>> {
        let steps = self.checked_steps(delay)?;
        Ok((0..=steps).map(|j| self.sample(steps - j)).collect())
    }
}

/// `∫₀¹ D u(x) dx` for a profile sampled on a uniform grid over `[0, 1]`.
pub fn transport_integral(profile: &[f64], delay: f64) -> f64 {
    if profile.len() < 2 {
        return 0.0;
    }
    let m = profile.len() - 1;
    trapezoid(profile.iter().copied(), delay / m as f64)
}

/// Composite trapezoid rule over equally spaced values.
pub(crate) fn trapezoid(values: impl ExactSizeIterator<Item = f64>, h: f64) -> f64 {
    let last = values.len().saturating_sub(1);
    let mut acc = 0.0;
    for (k, v) in values.enumerate() {
        acc += if k == 0 || k == last { 0.5 * v } else { v };
    }
    h * acc
}

/// A delay line bound to one delay, with an O(1) running window integral.
///
/// The running sum is rebuilt from the buffer once per window length so that
/// rounding drift stays bounded over long runs.
#[derive(Debug, Clone)]
pub struct WindowedLine {
    line: DelayLine,
    steps: usize,
    sum: f64,
    since_resync: usize,
}

impl WindowedLine {
    pub fn new(dt: f64, delay: f64, fill: f64) -> Result<Self> {
        let steps = delay_steps(delay, dt)?;
        let line = DelayLine::with_steps(dt, steps, fill);
        let mut out = Self {
            line,
            steps,
            sum: 0.0,
            since_resync: 0,
        };
        out.resync();
        Ok(out)
    }

    fn resync(&mut self) {
        self.sum = (0..=self.steps).map(|k| self.line.sample(k)).sum();
        self.since_resync = 0;
    }

    pub fn push(&mut self, sample: f64) {
        // The oldest in-window sample is overwritten by this push.
        let evicted = self.line.sample(self.steps);
        self.line.push(sample);
        self.since_resync += 1;
        if self.since_resync > self.steps {
            self.resync();
        } else {
            self.sum += sample - evicted;
        }
    }

    /// Delayed value `U(t − D)`.
    pub fn delayed(&self) -> f64 {
        self.line.sample(self.steps)
    }

    pub fn newest(&self) -> f64 {
        self.line.sample(0)
    }

    /// Trapezoidal window integral over the bound delay.
    pub fn integral(&self) -> f64 {
        if self.steps == 0 {
            return 0.0;
        }
        let ends = 0.5 * (self.line.sample(0) + self.line.sample(self.steps));
        self.line.dt() * (self.sum - ends)
    }

    pub fn line(&self) -> &DelayLine {
        &self.line
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_snapping() {
        assert_eq!(delay_steps(50.0, 1e-3).unwrap(), 50_000);
        assert_eq!(delay_steps(0.0, 1e-3).unwrap(), 0);
        assert!(delay_steps(100.0005, 1e-3).is_err());
        assert_eq!(delay_steps(100.0005, 5e-4).unwrap(), 200_001);
        assert!(delay_steps(0.0015, 1e-3).is_err());
        assert!(delay_steps(-1.0, 1e-3).is_err());
        assert!(delay_steps(1.0, 0.0).is_err());
    }

    #[test]
    fn delay_vector_ordering() {
        assert!(DelayVector::new(vec![50.0, 100.0], 1e-3).is_ok());
        assert!(DelayVector::new(vec![100.0, 50.0], 1e-3).is_err());
        assert!(DelayVector::new(vec![50.0, 100.0005], 1e-3).is_err());
        let d = DelayVector::new(vec![0.0, 2.0], 0.5).unwrap();
        assert_eq!(d.steps(), &[0, 4]);
        assert_eq!(d.max_delay(), 2.0);
    }

    #[test]
    fn fill_value_before_push() {
        let line = DelayLine::new(0.1, 1.0, 3.5).unwrap();
        assert_eq!(line.value_at_delay(0.0).unwrap(), 3.5);
        assert_eq!(line.value_at_delay(1.0).unwrap(), 3.5);
        assert_eq!(line.capacity(), 11);
    }

    #[test]
    fn constant_signal() {
        let mut line = DelayLine::new(0.01, 2.0, 0.0).unwrap();
        for _ in 0..250 {
            line.push(1.0);
        }
        assert_eq!(line.value_at_delay(2.0).unwrap(), 1.0);
        assert!((line.window_integral(2.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ramp_shift() {
        let delta = 0.25;
        let mut line = DelayLine::new(0.5, 3.0, 0.0).unwrap();
        for k in 1..=40 {
            line.push(k as f64 * delta);
            if k >= 6 {
                assert_eq!(line.value_at_delay(3.0).unwrap(), (k - 6) as f64 * delta);
            }
        }
    }

    #[test]
    fn out_of_range_queries() {
        let line = DelayLine::new(0.1, 1.0, 0.0).unwrap();
        assert!(line.value_at_delay(1.1).is_err());
        assert!(line.value_at_delay(-0.1).is_err());
        assert!(line.value_at_delay(0.05).is_err());
        assert!(line.window_integral(0.05).is_err());
    }

    #[test]
    fn linear_integral_is_exact() {
        // U(τ) = τ sampled on τ = 1.0, 1.5, ..., 3.0; ∫₁³ τ dτ = 4.
        let dt = 0.5;
        let mut line = DelayLine::new(dt, 2.0, 0.0).unwrap();
        for k in 0..=6 {
            line.push(k as f64 * dt);
        }
        assert_eq!(line.window_integral(2.0).unwrap(), 4.0);
    }

    #[test]
    fn sinusoid_shift_on_grid() {
        let dt = 1e-3;
        let mut line = DelayLine::new(dt, 2.0, 0.0).unwrap();
        for k in 0..5000 {
            line.push((k as f64 * dt).sin());
        }
        let t = 4999.0 * dt;
        let expected = ((4999 - 2000) as f64 * dt).sin();
        assert_eq!(line.value_at_delay(2.0).unwrap(), expected);
        assert!((expected - (t - 2.0).sin()).abs() < 1e-12);
    }

    #[test]
    fn windowed_line_tracks_direct_integral() {
        let dt = 0.01;
        let mut w = WindowedLine::new(dt, 0.37, 0.0).unwrap();
        let mut reference = DelayLine::new(dt, 0.37, 0.0).unwrap();
        for k in 0..2000 {
            let x = (k as f64 * 0.013).sin() * 3.0 + 1.0;
            w.push(x);
            reference.push(x);
            let direct = reference.window_integral(0.37).unwrap();
            assert!((w.integral() - direct).abs() < 1e-12, "step {k}");
            assert_eq!(w.delayed(), reference.value_at_delay(0.37).unwrap());
        }
    }

    #[test]
    fn zero_delay_window() {
        let mut w = WindowedLine::new(0.1, 0.0, 2.0).unwrap();
        assert_eq!(w.integral(), 0.0);
        w.push(5.0);
        assert_eq!(w.delayed(), 5.0);
        assert_eq!(w.integral(), 0.0);
    }

    proptest! {
        #[test]
        fn transport_view_matches_window(samples in prop::collection::vec(-100.0..100.0f64, 1..300),
                                         steps in 1usize..64) {
            let dt = 1e-3;
            let delay = steps as f64 * dt;
            let mut line = DelayLine::new(dt, delay, 0.0).unwrap();
            for s in &samples {
                line.push(*s);
            }
            let profile = line.transport_profile(delay).unwrap();
            prop_assert_eq!(profile.len(), steps + 1);
            prop_assert_eq!(profile[steps], line.value_at_delay(0.0).unwrap());
            prop_assert_eq!(profile[0], line.value_at_delay(delay).unwrap());
            prop_assert_eq!(transport_integral(&profile, delay), line.window_integral(delay).unwrap());
        }

        #[test]
        fn reads_match_push_history(samples in prop::collection::vec(-1e3..1e3f64, 1..200),
                                    steps in 0usize..50) {
            let dt = 0.25;
            let mut line = DelayLine::new(dt, steps as f64 * dt, f64::NAN).unwrap();
            for (k, s) in samples.iter().enumerate() {
                line.push(*s);
                if k >= steps {
                    prop_assert_eq!(line.value_at_delay(steps as f64 * dt).unwrap(), samples[k - steps]);
                }
                prop_assert!(line.capacity() == steps + 1);
            }
        }
    }
}
