use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use distalloc::analysis::{consensus_error, error_series, estimate_rate_series, lyapunov_v1, lyapunov_v2, mismatch, theoretical_rate};
use distalloc::linalg::norm;
use distalloc::{kkt_check, Algorithm, NetworkState, RateEstimate, Trajectory};

use crate::scenario::{Loaded, Segment};

/// 17 significant digits, enough to read back the same `f64`.
pub fn exact(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn num(v: f64) -> String {
    format!("{v:.6e}")
}

pub fn row(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| num(*x)).collect();
    format!("[{}]", parts.join(", "))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| anyhow!("writing {}: {}", path.display(), e.error))?;
    Ok(())
}

fn header(out: &mut String, fixed: &[&str], groups: &[&str], n: usize) {
    let mut cols: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    for g in groups {
        cols.extend((1..=n).map(|k| format!("{g}_{k}")));
    }
    out.push_str(&cols.join(","));
    out.push('\n');
}

fn push_values(out: &mut String, values: &[f64]) {
    for v in values {
        out.push(',');
        out.push_str(&exact(*v));
    }
}

pub fn trajectory_csv(traj: &Trajectory<f64>) -> String {
    let n = traj.states.first().map_or(0, |s| s.x.cols());
    let mut out = String::new();
    header(&mut out, &["t", "agent"], &["x", "mu", "eta"], n);
    for s in &traj.states {
        for i in 0..s.x.rows() {
            let _ = write!(out, "{},{}", exact(s.t), i + 1);
            push_values(&mut out, s.x.row(i));
            push_values(&mut out, s.mu.row(i));
            push_values(&mut out, s.eta.row(i));
            out.push('\n');
        }
    }
    out
}

fn segment_of<'a>(segments: &'a [Segment], d: &distalloc::Matrix<f64>) -> Option<&'a Segment> {
    segments.iter().rev().find(|s| &s.resources == d)
}

fn lyapunov(loaded: &Loaded, seg: &Segment, state: &NetworkState<f64>) -> Option<f64> {
    let eq = seg.equilibrium.as_ref()?;
    let sc = &loaded.scenario;
    let spec = sc.graph.spectral_data().ok()?;
    match sc.algorithm {
        Algorithm::Nonsmooth => lyapunov_v1(state, eq, &spec, &sc.gains).ok(),
        Algorithm::Smooth => lyapunov_v2(state, eq, &spec, &sc.gains, seg.problem.omega()).ok(),
    }
}

pub fn series_csv(loaded: &Loaded, traj: &Trajectory<f64>, segments: &[Segment]) -> Result<String> {
    let n = loaded.scenario.problem.dim();
    let mut out = String::new();
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|k| format!("mismatch_{k}")));
    cols.extend(["consensus_error", "cost", "kkt_residual", "lyapunov"].map(String::from));
    out.push_str(&cols.join(","));
    out.push('\n');
    for (k, s) in traj.states.iter().enumerate() {
        let seg = segment_of(segments, &traj.resources[k]).context("sample outside every resource segment")?;
        let kkt = kkt_check(&seg.problem, &s.x, &s.mu, loaded.tolerance)?;
        out.push_str(&exact(s.t));
        push_values(&mut out, &traj.mismatch[k]);
        push_values(&mut out, &[traj.consensus_error[k], traj.cost[k], kkt.worst()]);
        out.push(',');
        if let Some(v) = lyapunov(loaded, seg, s) {
            out.push_str(&exact(v));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Rate fitted over the samples of the last resource segment.
pub fn final_segment_rate(traj: &Trajectory<f64>, segments: &[Segment]) -> Result<RateEstimate<f64>> {
    let d = traj.resources.last().context("empty trajectory")?;
    let seg = segment_of(segments, d).context("no segment for the final resources")?;
    let eq = seg.equilibrium.as_ref().context("no reference equilibrium")?;
    let states: Vec<NetworkState<f64>> =
        traj.states.iter().zip(&traj.resources).filter(|(_, r)| *r == d).map(|(s, _)| s.clone()).collect();
    Ok(estimate_rate_series(&error_series(&states, eq))?)
}

pub struct Summary {
    pub text: String,
    pub certified: bool,
}

pub fn summary(loaded: &Loaded, traj: &Trajectory<f64>, segments: &[Segment]) -> Result<Summary> {
    let sc = &loaded.scenario;
    let last = traj.last().context("empty trajectory")?;
    let d = traj.resources.last().context("empty trajectory")?;
    let seg = segment_of(segments, d).context("no segment for the final resources")?;
    let report = kkt_check(&seg.problem, &last.x, &last.mu, loaded.tolerance)?;
    let mut s = String::new();
    let name = loaded.config.name.as_deref().unwrap_or("unnamed");
    let _ = writeln!(s, "scenario: {name}");
    let _ = writeln!(s, "algorithm: {}", sc.algorithm);
    let _ = writeln!(s, "agents: {}, dimension: {}", sc.problem.agent_count(), sc.problem.dim());
    let _ = writeln!(s, "step: {}, horizon: {}, samples: {}", sc.integrator.step, sc.integrator.horizon, traj.len());
    let g = sc.gains;
    let _ = writeln!(s, "gains: k1 = {}, k2 = {}, k3 = {}", g.k1, g.k2, g.k3);
    if let Some(b) = sc.gain_bounds() {
        let _ = writeln!(s, "gain bounds: k1 > {}, k2 > {} (at the chosen k1)", num(b.k1_min), num(b.k2_min(g.k1)));
    }
    let _ = writeln!(s, "final state at t = {}:", last.t);
    let _ = writeln!(s, "  stationarity: {}", num(report.max_stationarity()));
    let _ = writeln!(s, "  mismatch norm: {}", num(norm(&mismatch(&last.x, d))));
    let _ = writeln!(s, "  consensus error: {}", num(consensus_error(&last.mu)));
    let _ = writeln!(s, "  mean multiplier: {}", row(&report.mean_mu));
    let _ = writeln!(s, "  tolerance: {}", num(report.tolerance));
    let _ = writeln!(s, "  certified: {}", report.certified);
    match final_segment_rate(traj, segments) {
        Ok(r) => {
            let _ = writeln!(
                s,
                "rate estimate: slope {} over t in [{}, {}], r^2 {}, {} points",
                num(r.slope),
                r.window.0,
                r.window.1,
                num(r.r_squared),
                r.points
            );
        }
        Err(e) => {
            let _ = writeln!(s, "rate estimate: unavailable ({e})");
        }
    }
    if sc.algorithm == Algorithm::Smooth {
        let guaranteed = sc.problem.theta().zip(sc.graph.spectral_data().ok()).and_then(|(theta, spec)| {
            theoretical_rate(&spec, &sc.gains, sc.problem.omega(), theta)
        });
        if let Some(r) = guaranteed {
            let _ = writeln!(s, "guaranteed rate: {}", num(r));
        }
    }
    Ok(Summary { text: s, certified: report.certified })
}
