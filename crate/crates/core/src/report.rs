//! Output artifacts: trajectory CSV, `key = value` summaries, SVG line plots,
//! and the single-run, batch and averaged drivers that write them.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::averaged::{simulate, AveragedRun, AveragedState};
use crate::config::{ConfigError, ScenarioConfig};
use crate::controller::run;
use crate::metrics::{residuals, ConvergenceReport, SuccessEstimate, Trajectory};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numeric(#[from] crate::EscError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid seed list: {0}")]
    Seeds(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// CSV header: `t, theta_*, theta_hat_*, y, U_*, Ghat_*, Hhat_ij (row-major), eta_*`.
pub fn csv_header(n: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("theta_{i}")));
    cols.extend((1..=n).map(|i| format!("theta_hat_{i}")));
    cols.push("y".into());
    cols.extend((1..=n).map(|i| format!("U_{i}")));
    cols.extend((1..=n).map(|i| format!("Ghat_{i}")));
    for i in 1..=n {
        cols.extend((1..=n).map(|j| format!("Hhat_{i}{j}")));
    }
    cols.extend((1..=n).map(|i| format!("eta_{i}")));
    cols.join(",")
}

/// Writes the trajectory as CSV. Floats use the shortest round-trip form, so
/// identical runs produce identical bytes.
pub fn write_csv<W: Write>(traj: &Trajectory, mut out: W) -> io::Result<()> {
    writeln!(out, "{}", csv_header(traj.n))?;
    let mut line = String::new();
    for r in &traj.records {
        line.clear();
        write!(line, "{}", r.t).unwrap();
        for v in r
            .theta
            .iter()
            .chain(&r.theta_hat)
            .chain(std::iter::once(&r.y))
            .chain(&r.u)
            .chain(&r.g_hat)
            .chain(&r.h_hat)
            .chain(&r.eta)
        {
            write!(line, ",{v}").unwrap();
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Ordered `key = value` lines.
#[derive(Debug, Default, Clone)]
pub struct Summary(Vec<(String, String)>);

impl Summary {
    pub fn put(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .filter_map(|l| l.split_once(" = "))
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .collect(),
        )
    }
}

pub fn summarize(
    cfg: &ScenarioConfig,
    traj: &Trajectory,
    report: Option<&ConvergenceReport>,
) -> Summary {
    let mut s = Summary::default();
    s.put("mode", cfg.controller.mode.as_str());
    s.put("seed", cfg.dither.seed);
    s.put("status", traj.status);
    s.put("records", traj.records.len());
    s.put("t_end", traj.records.last().map_or(0.0, |r| r.t));
    if let Some(t) = traj.diverged_at {
        s.put("diverged_at", t);
    }
    if let Some(rep) = report {
        s.put("window_fraction", rep.window_fraction);
        s.put("theta_residual", rep.theta_residual);
        s.put("y_residual", rep.y_residual);
        s.put("u_residual", rep.u_residual);
        s.put("u_peak", rep.u_peak);
        s.put("fitted_decay_rate", rep.fitted_decay_rate);
        let n = rep.h_hat_tail_average.nrows();
        for i in 0..n {
            for j in 0..n {
                s.put(
                    format!("h_hat_avg_{}{}", i + 1, j + 1),
                    rep.h_hat_tail_average[(i, j)],
                );
            }
        }
    }
    s
}

/// A single time-series panel as a standalone SVG document.
pub fn svg_plot(title: &str, t: &[f64], series: &[(String, Vec<f64>)]) -> String {
    const W: f64 = 800.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 6] = [
        "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
    ];
    let finite = |v: &&f64| v.is_finite();
    let (t0, t1) = (
        t.first().copied().unwrap_or(0.0),
        t.last().copied().unwrap_or(1.0),
    );
    let mut lo = series
        .iter()
        .flat_map(|(_, v)| v.iter())
        .filter(finite)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let mut hi = series
        .iter()
        .flat_map(|(_, v)| v.iter())
        .filter(finite)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        lo = -1.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let tspan = if t1 > t0 { t1 - t0 } else { 1.0 };
    let x = |tv: f64| PAD + (tv - t0) / tspan * (W - 2.0 * PAD);
    let y = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(svg, r#"<text x="{}" y="25" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>"#, W / 2.0).unwrap();
    writeln!(
        svg,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    )
    .unwrap();
    for (label, value, yy) in [("max", hi, PAD), ("min", lo, H - PAD)] {
        writeln!(svg, r#"<text x="5" y="{yy}" font-family="sans-serif" font-size="10">{label} {value:.3}</text>"#).unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="10">t = {t0}</text>"#,
        H - PAD + 15.0
    )
    .unwrap();
    writeln!(svg, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">t = {t1}</text>"#, W - PAD, H - PAD + 15.0).unwrap();
    for (k, (label, values)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = t
            .iter()
            .zip(values)
            .filter(|(_, v)| v.is_finite())
            .map(|(tv, v)| format!("{:.2},{:.2}", x(*tv), y(*v)))
            .collect();
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{label}</text>"#,
            W - PAD - 80.0,
            PAD + 15.0 * (k as f64 + 1.0)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn trajectory_plots(traj: &Trajectory) -> Vec<(&'static str, String)> {
    let n = traj.n;
    let t: Vec<f64> = traj.records.iter().map(|r| r.t).collect();
    let pick = |f: &dyn Fn(&crate::metrics::Record) -> f64| {
        traj.records.iter().map(f).collect::<Vec<f64>>()
    };
    let theta = (0..n)
        .map(|i| (format!("theta_{}", i + 1), pick(&|r| r.theta[i])))
        .collect::<Vec<_>>();
    let u = (0..n)
        .map(|i| (format!("U_{}", i + 1), pick(&|r| r.u[i])))
        .collect::<Vec<_>>();
    let mut h = Vec::new();
    for i in 0..n {
        for j in i..n {
            h.push((
                format!("Hhat_{}{}", i + 1, j + 1),
                pick(&|r| r.h_hat[i * n + j]),
            ));
        }
    }
    vec![
        ("theta.svg", svg_plot("system input theta(t)", &t, &theta)),
        (
            "y.svg",
            svg_plot("system output y(t)", &t, &[("y".into(), pick(&|r| r.y))]),
        ),
        ("U.svg", svg_plot("control signal U(t)", &t, &u)),
        ("Hhat.svg", svg_plot("Hessian estimate", &t, &h)),
    ]
}

#[derive(Debug)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub report: Option<ConvergenceReport>,
    pub summary: Summary,
}

/// Runs one scenario and writes `trajectory.csv`, `summary.txt` and plots into `out_dir`.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunOutcome, ReportError> {
    let scenario = cfg.to_scenario()?;
    let trajectory = run(&scenario)?;
    let report = residuals(&trajectory, &scenario.map, cfg.sim.window_fraction).ok();
    let summary = summarize(cfg, &trajectory, report.as_ref());

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let csv_path = out_dir.join("trajectory.csv");
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    let mut writer = io::BufWriter::new(file);
    write_csv(&trajectory, &mut writer)
        .and_then(|_| writer.flush())
        .map_err(io_err(&csv_path))?;
    write_file(&out_dir.join("summary.txt"), &summary.render())?;
    for (name, svg) in trajectory_plots(&trajectory) {
        write_file(&out_dir.join(name), &svg)?;
    }
    Ok(RunOutcome {
        trajectory,
        report,
        summary,
    })
}

/// Parses `a,b,c` into distinct seeds.
pub fn parse_seeds(list: &str) -> Result<Vec<u64>, ReportError> {
    let seeds = list
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|e| ReportError::Seeds(format!("`{s}`: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    validate_seeds(&seeds)?;
    Ok(seeds)
}

pub fn validate_seeds(seeds: &[u64]) -> Result<(), ReportError> {
    if seeds.is_empty() {
        return Err(ReportError::Seeds("at least one seed is required".into()));
    }
    let mut seen = BTreeSet::new();
    for s in seeds {
        if !seen.insert(s) {
            return Err(ReportError::Seeds(format!("duplicate seed {s}")));
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct BatchOutcome {
    pub runs: Vec<(u64, RunOutcome)>,
    pub converged: SuccessEstimate,
    pub diverged: SuccessEstimate,
    pub summary: Summary,
}

/// Default success criterion for batches: completed and final-window
/// `|y − y*|` within `y_bound`.
pub fn batch_success(outcome: &RunOutcome, y_bound: f64) -> bool {
    !outcome.trajectory.is_diverged()
        && outcome
            .report
            .as_ref()
            .is_some_and(|r| r.y_residual <= y_bound)
}

/// Runs every seed (concurrently) into `out_dir/seed_<s>` and writes `aggregate.txt`.
pub fn run_batch(
    cfg: &ScenarioConfig,
    seeds: &[u64],
    out_dir: &Path,
    y_bound: f64,
) -> Result<BatchOutcome, ReportError> {
    validate_seeds(seeds)?;
    cfg.validate()?;
    let mut runs = seeds
        .par_iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.dither.seed = seed;
            run_scenario(&c, &out_dir.join(format!("seed_{seed}"))).map(|o| (seed, o))
        })
        .collect::<Result<Vec<_>, _>>()?;
    runs.sort_by_key(|(s, _)| *s);

    let ok: Vec<bool> = runs
        .iter()
        .map(|(_, o)| batch_success(o, y_bound))
        .collect();
    let div: Vec<bool> = runs
        .iter()
        .map(|(_, o)| o.trajectory.is_diverged())
        .collect();
    let converged = SuccessEstimate::from_outcomes(&ok)?;
    let diverged = SuccessEstimate::from_outcomes(&div)?;

    let mut summary = Summary::default();
    summary.put("mode", cfg.controller.mode.as_str());
    summary.put("seeds", seeds.len());
    summary.put("y_bound", y_bound);
    summary.put("success_count", converged.successes);
    summary.put("success_fraction", converged.fraction);
    summary.put("success_ci_low", converged.ci_low);
    summary.put("success_ci_high", converged.ci_high);
    summary.put("diverged_count", diverged.successes);
    summary.put("diverged_fraction", diverged.fraction);
    summary.put("diverged_ci_low", diverged.ci_low);
    summary.put("diverged_ci_high", diverged.ci_high);
    let ys: Vec<f64> = runs
        .iter()
        .filter_map(|(_, o)| o.report.as_ref().map(|r| r.y_residual))
        .collect();
    if !ys.is_empty() {
        summary.put("median_y_residual", crate::metrics::median(&ys));
    }
    for (seed, o) in &runs {
        let status = match &o.report {
            Some(r) => r.classify(y_bound),
            None => o.trajectory.status,
        };
        summary.put(format!("seed_{seed}_status"), status);
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_file(&out_dir.join("aggregate.txt"), &summary.render())?;
    Ok(BatchOutcome {
        runs,
        converged,
        diverged,
        summary,
    })
}

#[derive(Debug)]
pub struct AveragedOutcome {
    pub c: f64,
    pub run: AveragedRun,
    pub summary: Summary,
}

/// Simulates the averaged system for one filter gain.
pub fn run_averaged(cfg: &ScenarioConfig, c: Option<f64>) -> Result<AveragedOutcome, ReportError> {
    cfg.validate()?;
    let params = cfg.averaged_params(c);
    let avg = cfg.averaged.clone().unwrap_or_default();
    let init = AveragedState::at_rest(cfg.initial_error(), params.m);
    let run = simulate(&params, init, avg.t_final, avg.record_every)?;
    let mut s = Summary::default();
    s.put("c", params.c);
    s.put("c_star", run.c_star);
    s.put("c_above_c_star", params.c > run.c_star);
    s.put("m", params.m);
    s.put("dt", params.dt);
    s.put("t_final", avg.t_final);
    s.put("v_initial", run.samples[0].v);
    s.put("v_final", run.samples.last().map_or(f64::NAN, |x| x.v));
    s.put("v_decay_rate", run.v_decay_rate);
    s.put("psi_decay_rate", run.psi_decay_rate);
    s.put("max_v_increase", run.max_v_increase());
    Ok(AveragedOutcome {
        c: params.c,
        run,
        summary: s,
    })
}

/// Writes `averaged.csv` (t, theta_tilde_*, U_av_*, vartheta_*, Utilde_*, V, Psi) and `summary.txt`.
pub fn write_averaged(outcome: &AveragedOutcome, out_dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let n = outcome
        .run
        .samples
        .first()
        .map_or(0, |s| s.theta_tilde.len());
    let mut cols = vec!["t".to_string()];
    for prefix in ["theta_tilde", "U_av", "vartheta", "Utilde"] {
        cols.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    cols.push("V".into());
    cols.push("Psi".into());
    let mut text = cols.join(",") + "\n";
    for s in &outcome.run.samples {
        let mut line = s.t.to_string();
        for v in s
            .theta_tilde
            .iter()
            .chain(&s.u_av)
            .chain(&s.vartheta)
            .chain(&s.aux_u)
        {
            write!(line, ",{v}").unwrap();
        }
        writeln!(text, "{line},{},{}", s.v, s.psi).unwrap();
    }
    write_file(&out_dir.join("averaged.csv"), &text)?;
    write_file(&out_dir.join("summary.txt"), &outcome.summary.render())?;
    let t: Vec<f64> = outcome.run.samples.iter().map(|s| s.t).collect();
    let logv: Vec<f64> = outcome
        .run
        .samples
        .iter()
        .map(|s| s.v.max(f64::MIN_POSITIVE).log10())
        .collect();
    write_file(
        &out_dir.join("V.svg"),
        &svg_plot(
            "log10 V(t), averaged system",
            &t,
            &[("log10 V".into(), logv)],
        ),
    )?;
    Ok(())
}

/// Parses `lo:hi:step` into an inclusive grid of filter gains.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let [lo, hi, step] = parts[..] else {
        return Err("expected lo:hi:step".into());
    };
    if !(step > 0.0 && lo > 0.0 && hi >= lo) {
        return Err("need 0 < lo <= hi and step > 0".into());
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| lo + k as f64 * step).collect())
}
