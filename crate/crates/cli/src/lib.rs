//! Command implementations behind the `daclab` binary: experiment runs,
//! verification harnesses, trace comparison, and spectrum printing.

use daclab_core::config::ExperimentConfig;
use daclab_core::engine::{self, RunOutput};
use daclab_core::graph::{laplacian_spectrum, period_average, TopologySchedule};
use daclab_core::problems::Problem;
use daclab_core::trace::{checksum, compare_traces, modes_to_csv, trace_to_csv};
use daclab_core::verify;
use daclab_core::{Error, Result};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Exit code for a run that diverged (partial outputs are kept).
pub const EXIT_DIVERGED: i32 = 2;

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let cfg = ExperimentConfig::parse(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Honors `DACLAB_THREADS` as a cap on the rayon pool. Thread count never
/// changes results: every parallel unit owns its seed and outputs are
/// collected in deterministic order.
pub fn init_thread_pool() {
    if let Ok(v) = std::env::var("DACLAB_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn timestamp() -> String {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default();
    format!("{}.{:09}", now.as_secs(), now.subsec_nanos())
}

fn summary_text(out: &RunOutput) -> String {
    let mut s = String::new();
    let last = out.trace.last();
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "nan".into());
    let _ = writeln!(
        s,
        "final_center_loss = {}",
        fmt(last.map(|r| r.center_loss))
    );
    let _ = writeln!(s, "final_radius_sq = {}", fmt(last.map(|r| r.radius_sq)));
    let _ = writeln!(s, "final_top_eig = {}", fmt(out.final_top_eig));
    let _ = writeln!(
        s,
        "deployed_checksum = {}",
        checksum(out.deployed.as_slice())
    );
    let _ = writeln!(s, "diverged = {}", out.diverged);
    s
}

/// One directory per seed under a fresh timestamped run directory
/// (`--overwrite` reuses `<output_dir>/latest` instead). Returns the run
/// directory and whether any seed diverged.
pub fn run_command(cfg: &ExperimentConfig, overwrite: bool) -> Result<(PathBuf, bool)> {
    let base = Path::new(&cfg.output_dir);
    let dir = if overwrite {
        let d = base.join("latest");
        if d.exists() {
            fs::remove_dir_all(&d)?;
        }
        d
    } else {
        let d = base.join(format!("run-{}", timestamp()));
        if d.exists() {
            return Err(Error::InvalidArgument(format!(
                "run directory {} already exists",
                d.display()
            )));
        }
        d
    };
    let resolved = cfg.serialize();
    let problem = engine::build_problem(cfg)?;

    let outputs: Vec<(u64, RunOutput)> = (0..cfg.repeat as u64)
        .into_par_iter()
        .map(|s| {
            let seed = cfg.seed + s;
            Ok((seed, engine::run_with_problem(cfg, seed, &problem)?))
        })
        .collect::<Result<_>>()?;

    let mut any_diverged = false;
    for (seed, out) in &outputs {
        let seed_dir = dir.join(format!("seed{seed}"));
        fs::create_dir_all(&seed_dir)?;
        fs::write(seed_dir.join("resolved.cfg"), &resolved)?;
        fs::write(seed_dir.join("trace.csv"), trace_to_csv(&out.trace))?;
        if cfg.metrics_modes {
            fs::write(seed_dir.join("modes.csv"), modes_to_csv(&out.modes))?;
        }
        fs::write(seed_dir.join("summary.txt"), summary_text(out))?;
        any_diverged |= out.diverged;
    }
    Ok((dir, any_diverged))
}

/// Runs one harness, writes `report.csv` next to the runs, and returns
/// (verdict lines, pass).
pub fn verify_command(harness: &str, cfg: &ExperimentConfig) -> Result<(Vec<String>, bool)> {
    let seed = cfg.seed;
    let (verdicts, csv, pass) = match harness {
        "radius" => {
            let r = verify::radius_report(seed)?;
            (vec![r.verdict()], r.csv(), r.pass)
        }
        "stability" => {
            let reports = verify::stability_report(seed)?;
            let pass = reports.iter().all(|(_, r)| r.pass);
            let mut csv = String::new();
            let mut verdicts = Vec::new();
            for (name, r) in &reports {
                verdicts.push(format!("{name} {}", r.verdict()));
                let _ = write!(csv, "# {name}\n{}", r.csv());
            }
            (verdicts, csv, pass)
        }
        "alignment" => {
            let r = verify::alignment_report(seed)?;
            (vec![r.verdict()], r.csv(), r.pass)
        }
        "envelope" => {
            let r = verify::envelope_report(seed)?;
            (vec![r.verdict()], r.csv(), r.pass)
        }
        "tilt" => {
            let r = verify::tilt_report(seed)?;
            (vec![r.verdict()], r.csv(), r.pass)
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown harness `{other}` (radius|stability|alignment|envelope|tilt)"
            )))
        }
    };
    let dir = Path::new(&cfg.output_dir).join(format!("verify-{harness}-{}", timestamp()));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("report.csv"), csv)?;
    Ok((verdicts, pass))
}

/// Per-column max absolute difference plus the first differing row.
pub fn compare_command(a: &Path, b: &Path) -> Result<Vec<String>> {
    let ta = fs::read_to_string(a)?;
    let tb = fs::read_to_string(b)?;
    let diff = compare_traces(&ta, &tb)?;
    let mut lines = Vec::new();
    if diff.identical() {
        lines.push("traces identical".to_string());
    } else {
        if let Some(iter) = diff.first_diff_iter {
            lines.push(format!("first differing row: iter {iter}"));
        }
        if diff.row_count_delta != 0 {
            lines.push(format!("row count delta: {}", diff.row_count_delta));
        }
    }
    for (col, d) in &diff.max_abs {
        lines.push(format!("max|Δ| {col} = {d}"));
    }
    Ok(lines)
}

/// Prints the Laplacian spectrum of the (period-averaged) gossip matrix and,
/// for quadratic problems, the Hessian spectrum.
pub fn spectrum_command(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let sched = TopologySchedule::new(cfg.topology, cfg.workers)?;
    let spec = laplacian_spectrum(&period_average(&sched)?)?;
    let mut lines = Vec::new();
    let lam: Vec<String> = spec.lambda.iter().map(|v| v.to_string()).collect();
    lines.push(format!("laplacian: {}", lam.join(" ")));
    if let Problem::Quadratic(q) = engine::build_problem(cfg)? {
        let lh: Vec<String> = q.lambda_h.iter().map(|v| v.to_string()).collect();
        lines.push(format!("hessian: {}", lh.join(" ")));
    }
    Ok(lines)
}
