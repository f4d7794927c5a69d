//! Stochastic dither built on a sinusoid of a Wiener process on the circle.
//!
//! Each channel carries its own Wiener path `W^i` evaluated at the scaled time
//! `ωt`; the phase is `η_i = ωπ (1 + sin W^i)`. The perturbation `S`, the
//! gradient demodulator `M` and the Hessian demodulator `N` are functions of
//! the phase vector only.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`). All channels share
//! one master seed; channel `i` uses ChaCha stream `i`, so the per-channel
//! increments are independent and reproducible bit-for-bit given `(seed, dt)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, EscError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DitherParams {
    amplitudes: Vec<f64>,
    omega: f64,
}

impl DitherParams {
    pub fn new(amplitudes: Vec<f64>, omega: f64) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(EscError::InvalidInput(
                "at least one dither channel required".into(),
            ));
        }
        if let Some(a) = amplitudes.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(EscError::InvalidInput(format!(
                "dither amplitudes must be positive, got {a}"
            )));
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(EscError::InvalidInput(format!(
                "dither frequency must be positive, got {omega}"
            )));
        }
        Ok(Self { amplitudes, omega })
    }

    pub fn channels(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Phase associated with a Wiener value.
    pub fn phase(&self, wiener: f64) -> f64 {
        self.omega * PI * (1.0 + wiener.sin())
    }

    /// `S(η) = [a_i sin η_i]`.
    pub fn signal_s(&self, eta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.channels(), eta.len())?;
        let mut out = vec![0.0; eta.len()];
        self.signal_s_into(eta, &mut out);
        Ok(out)
    }

    /// `M(η) = [(2 / a_i) sin η_i]`.
    pub fn signal_m(&self, eta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.channels(), eta.len())?;
        let mut out = vec![0.0; eta.len()];
        self.signal_m_into(eta, &mut out);
        Ok(out)
    }

    /// Hessian demodulator: `N_ii = 16/a_i² (sin² η_i − ½)`,
    /// `N_ij = 4/(a_i a_j) sin η_i sin η_j`.
    pub fn signal_n(&self, eta: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.channels(), eta.len())?;
        let n = eta.len();
        let mut out = vec![0.0; n * n];
        self.signal_n_into(eta, &mut out);
        Ok(DMatrix::from_row_slice(n, n, &out))
    }

    pub(crate) fn signal_s_into(&self, eta: &[f64], out: &mut [f64]) {
        for ((o, a), e) in out.iter_mut().zip(&self.amplitudes).zip(eta) {
            *o = a * e.sin();
        }
    }

    pub(crate) fn signal_m_into(&self, eta: &[f64], out: &mut [f64]) {
        for ((o, a), e) in out.iter_mut().zip(&self.amplitudes).zip(eta) {
            *o = 2.0 / a * e.sin();
        }
    }

    /// Row-major `n × n` output.
    pub(crate) fn signal_n_into(&self, eta: &[f64], out: &mut [f64]) {
        let n = eta.len();
        let a = &self.amplitudes;
        for i in 0..n {
            let si = eta[i].sin();
            out[i * n + i] = 16.0 / (a[i] * a[i]) * (si * si - 0.5);
            for j in (i + 1)..n {
                let v = 4.0 / (a[i] * a[j]) * si * eta[j].sin();
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
    }
}

/// Wiener paths and phases for all channels, plus the generators driving them.
#[derive(Debug, Clone)]
pub struct DitherState {
    wiener: Vec<f64>,
    eta: Vec<f64>,
    rngs: Vec<ChaCha8Rng>,
    t: f64,
}

impl DitherState {
    /// Starts every Wiener path at zero, so `η_i(0) = ωπ`.
    pub fn new(params: &DitherParams, seed: u64) -> Self {
        let n = params.channels();
        let rngs = (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                rng
            })
            .collect();
        let wiener = vec![0.0; n];
        let eta = wiener.iter().map(|&w| params.phase(w)).collect();
        Self {
            wiener,
            eta,
            rngs,
            t: 0.0,
        }
    }

    /// One Euler–Maruyama step: `W^i += sqrt(ω dt) ξ_i`, `ξ_i ~ N(0, 1)`.
    pub fn advance(&mut self, params: &DitherParams, dt: f64) -> Result<()> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(EscError::InvalidInput(format!(
                "time step must be positive, got {dt}"
            )));
        }
        check_dim(params.channels(), self.wiener.len())?;
        let scale = (params.omega() * dt).sqrt();
        for ((w, eta), rng) in self
            .wiener
            .iter_mut()
            .zip(&mut self.eta)
            .zip(&mut self.rngs)
        {
            let xi: f64 = StandardNormal.sample(rng);
            *w += scale * xi;
            *eta = params.phase(*w);
        }
        self.t += dt;
        Ok(())
    }

    pub fn wiener(&self) -> &[f64] {
        &self.wiener
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn time(&self) -> f64 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(DitherParams::new(vec![0.22, -0.1], 5.0).is_err());
        assert!(DitherParams::new(vec![0.22, 0.0], 5.0).is_err());
        assert!(DitherParams::new(vec![0.22], 0.0).is_err());
        assert!(DitherParams::new(vec![], 5.0).is_err());
    }

    #[test]
    fn initial_phase_is_omega_pi() {
        let p = DitherParams::new(vec![0.22, 0.22], 5.0).unwrap();
        let s = DitherState::new(&p, 7);
        assert_eq!(s.eta(), &[5.0 * PI, 5.0 * PI]);
    }

    #[test]
    fn advance_rejects_nonpositive_dt() {
        let p = DitherParams::new(vec![0.22], 5.0).unwrap();
        let mut s = DitherState::new(&p, 0);
        assert!(s.advance(&p, 0.0).is_err());
        assert!(s.advance(&p, -1e-3).is_err());
        assert!(s.advance(&p, 1e-3).is_ok());
        assert!(close(s.time(), 1e-3, 0.0));
    }

    #[test]
    fn same_seed_same_path() {
        let p = DitherParams::new(vec![0.22, 0.22], 5.0).unwrap();
        let mut a = DitherState::new(&p, 42);
        let mut b = DitherState::new(&p, 42);
        for _ in 0..1000 {
            a.advance(&p, 1e-3).unwrap();
            b.advance(&p, 1e-3).unwrap();
            assert_eq!(a.eta(), b.eta());
        }
        let mut c = DitherState::new(&p, 43);
        c.advance(&p, 1e-3).unwrap();
        a = DitherState::new(&p, 42);
        a.advance(&p, 1e-3).unwrap();
        assert_ne!(a.wiener(), c.wiener());
    }

    #[test]
    fn channels_draw_distinct_increments() {
        let p = DitherParams::new(vec![1.0, 1.0], 1.0).unwrap();
        let mut s = DitherState::new(&p, 3);
        s.advance(&p, 1.0).unwrap();
        assert_ne!(s.wiener()[0], s.wiener()[1]);
    }

    #[test]
    fn signal_values() {
        let p = DitherParams::new(vec![0.22, 0.22], 5.0).unwrap();
        let s = p.signal_s(&[5.0 * PI, 5.0 * PI]).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-14));
        let s = p.signal_s(&[PI / 2.0, PI / 2.0]).unwrap();
        assert_eq!(s, vec![0.22, 0.22]);
        let q = DitherParams::new(vec![1.0, 2.0], 5.0).unwrap();
        let s = q.signal_s(&[PI / 6.0, PI / 2.0]).unwrap();
        assert!(close(s[0], 0.5, 1e-15) && close(s[1], 2.0, 1e-15));

        let m = p.signal_m(&[5.0 * PI, 5.0 * PI]).unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-12));
        let m = p.signal_m(&[PI / 2.0, PI / 2.0]).unwrap();
        assert!(close(m[0], 2.0 / 0.22, 1e-12) && close(m[1], 9.090_909_090_909, 1e-9));
        assert!(p.signal_m(&[1.0]).is_err());
    }

    #[test]
    fn hessian_demodulator_values() {
        let p = DitherParams::new(vec![0.22, 0.22], 5.0).unwrap();
        let n = p.signal_n(&[PI / 2.0, PI / 2.0]).unwrap();
        assert!(close(n[(0, 0)], 8.0 / 0.0484, 1e-9));
        assert!(close(n[(1, 1)], 165.289_256_198_347, 1e-9));
        assert!(close(n[(0, 1)], 4.0 / 0.0484, 1e-9));
        assert!(close(n[(1, 0)], 82.644_628_099_173, 1e-9));
        let n = p.signal_n(&[PI / 4.0, 0.3]).unwrap();
        assert!(n[(0, 0)].abs() < 1e-12);
        let n = p.signal_n(&[0.0, 1.1]).unwrap();
        assert_eq!(n[(0, 1)], 0.0);
        assert_eq!(n[(1, 0)], 0.0);
    }

    proptest! {
        #[test]
        fn s_times_m_is_amplitude_free(e0 in -50.0..50.0f64, e1 in -50.0..50.0f64,
                                        a0 in 0.01..5.0f64, a1 in 0.01..5.0f64) {
            let p = DitherParams::new(vec![a0, a1], 5.0).unwrap();
            let s = p.signal_s(&[e0, e1]).unwrap();
            let m = p.signal_m(&[e0, e1]).unwrap();
            for (i, e) in [e0, e1].iter().enumerate() {
                let expected = 2.0 * e.sin().powi(2);
                prop_assert!((s[i] * m[i] - expected).abs() < 1e-12);
            }
        }

        #[test]
        fn n_symmetric_and_double_angle(e in prop::collection::vec(-50.0..50.0f64, 3),
                                         a in prop::collection::vec(0.05..3.0f64, 3)) {
            let p = DitherParams::new(a.clone(), 5.0).unwrap();
            let n = p.signal_n(&e).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert_eq!(n[(i, j)], n[(j, i)]);
                }
                let alt = -8.0 / (a[i] * a[i]) * (2.0 * e[i]).cos();
                prop_assert!((n[(i, i)] - alt).abs() <= 1e-9 * (1.0 + alt.abs()));
            }
        }

        #[test]
        fn phase_stays_in_band(w in -1e3..1e3f64, omega in 0.1..50.0f64) {
            let p = DitherParams::new(vec![1.0], omega).unwrap();
            let eta = p.phase(w);
            prop_assert!(eta >= 0.0 && eta <= 2.0 * omega * PI * (1.0 + 1e-15));
        }
    }
}
