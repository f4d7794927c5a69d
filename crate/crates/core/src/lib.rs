//! Multivariable stochastic extremum seeking with distinct per-channel input
//! delays and reduction-based predictor feedback.
//!
//! The crate is organised bottom-up:
//!
//! * [`quadmap`]: the static quadratic map being optimised.
//! * [`dither`]: circle-Wiener phases and the `S`, `M`, `N` signals.
//! * [`delayline`]: sampled delay buffers and their transport-PDE view.
//! * [`controller`]: the classic and predictor closed loops.
//! * [`averaged`]: the deterministic averaged system and its Lyapunov certificate.
//! * [`metrics`]: residuals, decay fits and Monte Carlo aggregation.
//! * [`config`] and [`report`]: scenario files, presets and output artifacts.

pub mod averaged;
pub mod config;
pub mod controller;
pub mod delayline;
pub mod dither;
pub mod error;
pub mod metrics;
pub mod quadmap;
pub mod report;

pub use error::{EscError, Result};
