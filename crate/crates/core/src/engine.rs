//! Synchronous-round decentralized training loop: SGD, DSGD, DSGD-AC, and
//! DAdam-AC with deterministic seeding and metric emission.

use crate::analysis::{self, envelope_terms, lanczos_top_eigenvalue};
use crate::config::{ExperimentConfig, ProblemKind};
use crate::error::Error;
use crate::graph::{self, MixingOperator, TopologySchedule};
use crate::problems::{
    reshuffle_partition, MlpProblem, NoiseModel, Problem, QuadraticProblem, SyntheticTask,
};
use crate::rng::{stream, tag};
use crate::schedules::{ConsensusConfig, LrSchedule};
use crate::trace::{Basis, MetricRow, ModeRow};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::str::FromStr;

/// Lanczos budget for top-eigenvalue tracking.
pub const LANCZOS_ITERS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    SyncSgd,
    Dsgd,
    DsgdAc,
    DadamAc,
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sync_sgd" => Ok(Self::SyncSgd),
            "dsgd" => Ok(Self::Dsgd),
            "dsgd_ac" => Ok(Self::DsgdAc),
            "dadam_ac" => Ok(Self::DadamAc),
            other => Err(Error::InvalidArgument(format!("unknown algorithm `{other}`"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SyncSgd => "sync_sgd",
            Self::Dsgd => "dsgd",
            Self::DsgdAc => "dsgd_ac",
            Self::DadamAc => "dadam_ac",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Reproduce the literal bias correction of the source algorithm listing
    /// (v̂ divided by 1 − β₁ᵗ and no 1−β factors on the moment updates)
    /// instead of standard Adam.
    pub paper_bias_correction: bool,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            paper_bias_correction: false,
        }
    }
}

/// The d×n iterate matrix plus per-worker optimizer state.
#[derive(Debug, Clone)]
pub struct WorkerEnsemble {
    pub x: DMatrix<f64>,
    pub momentum: DMatrix<f64>,
    pub adam_m: Option<DMatrix<f64>>,
    pub adam_v: Option<DMatrix<f64>>,
    /// Completed steps (Adam bias correction uses t+1 inside the step).
    pub t: usize,
}

/// All columns start equal, drawn once from the problem initializer.
pub fn init_ensemble(
    problem: &Problem,
    n: usize,
    seed: u64,
    quad_init_scale: f64,
    adam: bool,
) -> WorkerEnsemble {
    let x0 = problem.init(seed, quad_init_scale);
    let d = x0.len();
    let x = DMatrix::from_fn(d, n, |r, _| x0[r]);
    let zeros = DMatrix::zeros(d, n);
    WorkerEnsemble {
        x,
        momentum: zeros.clone(),
        adam_m: adam.then(|| zeros.clone()),
        adam_v: adam.then(|| zeros),
        t: 0,
    }
}

pub fn deployed_model(x: &DMatrix<f64>) -> DVector<f64> {
    analysis::column_mean(x)
}

/// X ← X(I − γL) − αG, evaluated as X − γ(XL) − αG so every term reads the
/// previous state.
pub fn dsgd_ac_step(
    x: &mut DMatrix<f64>,
    w: &MixingOperator,
    alpha: f64,
    gamma: f64,
    grads: &DMatrix<f64>,
) {
    let mix = if gamma == 0.0 {
        None // pure local step; skipping the product keeps it bitwise exact
    } else {
        Some(&*x * &w.l)
    };
    for c in 0..x.ncols() {
        for r in 0..x.nrows() {
            let mut v = x[(r, c)];
            if let Some(xl) = &mix {
                v -= gamma * xl[(r, c)];
            }
            x[(r, c)] = v - alpha * grads[(r, c)];
        }
    }
}

/// DSGD is DSGD-AC with γ pinned to 1.
pub fn dsgd_step(x: &mut DMatrix<f64>, w: &MixingOperator, alpha: f64, grads: &DMatrix<f64>) {
    dsgd_ac_step(x, w, alpha, 1.0, grads);
}

/// Centralized baseline: x ← x − α·g with g the momentum-filtered average
/// worker gradient.
pub fn sync_sgd_step(x: &mut DVector<f64>, alpha: f64, grad: &DVector<f64>) {
    for r in 0..x.len() {
        x[r] -= alpha * grad[r];
    }
}

/// Per-worker Adam with bias correction plus the γ-scaled gossip term; all
/// terms read the t−1 state. `t` is the 1-based Adam step counter.
#[allow(clippy::too_many_arguments)]
pub fn dadam_ac_step(
    x: &mut DMatrix<f64>,
    m: &mut DMatrix<f64>,
    v: &mut DMatrix<f64>,
    t: usize,
    w: &MixingOperator,
    alpha: f64,
    gamma: f64,
    grads: &DMatrix<f64>,
    adam: &AdamParams,
) {
    let (b1, b2) = (adam.beta1, adam.beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = if adam.paper_bias_correction {
        bc1
    } else {
        1.0 - b2.powi(t as i32)
    };
    let mix = if gamma == 0.0 { None } else { Some(&*x * &w.l) };
    for c in 0..x.ncols() {
        for r in 0..x.nrows() {
            let g = grads[(r, c)];
            let (mm, vv) = if adam.paper_bias_correction {
                (b1 * m[(r, c)] + g, b2 * v[(r, c)] + g * g)
            } else {
                (b1 * m[(r, c)] + (1.0 - b1) * g, b2 * v[(r, c)] + (1.0 - b2) * g * g)
            };
            m[(r, c)] = mm;
            v[(r, c)] = vv;
            let m_hat = mm / bc1;
            let v_hat = vv / bc2;
            let step = m_hat / (v_hat.sqrt() + adam.eps);
            let mut val = x[(r, c)];
            if let Some(xl) = &mix {
                val -= gamma * xl[(r, c)];
            }
            x[(r, c)] = val - alpha * step;
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<MetricRow>,
    pub modes: Vec<ModeRow>,
    /// Deployed model x̄ (column mean of the final ensemble).
    pub deployed: DVector<f64>,
    pub final_top_eig: Option<f64>,
    pub diverged: bool,
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    match cfg.problem {
        ProblemKind::Quadratic => {
            let noise = match cfg.noise_kind {
                crate::problems::NoiseKind::Isotropic => NoiseModel::isotropic(cfg.noise_sigma2),
                crate::problems::NoiseKind::HessianAligned => {
                    NoiseModel::hessian_aligned(cfg.noise_c)
                }
            };
            Ok(Problem::Quadratic(QuadraticProblem::from_condition(
                cfg.quadratic_dim,
                cfg.quadratic_cond,
                cfg.task_seed,
                noise,
            )?))
        }
        ProblemKind::SyntheticMlp => {
            let task = SyntheticTask {
                samples: cfg.task_samples,
                test_samples: cfg.task_test_samples,
                input_dim: cfg.task_input_dim,
                classes: cfg.task_classes,
                seed: cfg.task_seed,
                label_noise: cfg.task_label_noise,
                widths: cfg.mlp_widths.clone(),
                activation: cfg.mlp_activation,
            };
            Ok(Problem::Mlp(MlpProblem::new(task)?))
        }
    }
}

/// Execute E·T synchronous rounds for one seed.
///
/// Per round: every worker draws its private batch/noise stream and computes
/// its gradient at X⁽ᵗ⁻¹⁾, then the matrix update runs, then metrics are
/// emitted at the configured cadence (plus the final round). A non-finite
/// iterate aborts with a flagged partial trace.
pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    run_with_problem(cfg, seed, &problem)
}

/// `run` with a caller-supplied problem oracle (shared across repeats).
pub fn run_with_problem(cfg: &ExperimentConfig, seed: u64, problem: &Problem) -> Result<RunOutput> {
    let n = cfg.workers;
    let epochs = cfg.epochs;
    let batches = cfg.batches_per_epoch;
    let total = epochs * batches;
    let d = problem.dim();

    let sched = LrSchedule::new(
        cfg.lr_kind,
        cfg.lr_peak,
        cfg.lr_warmup_epochs * batches,
        total.max(1),
        cfg.lr_alpha_min,
    )?;
    let mut ac = ConsensusConfig::new(cfg.ac_p, cfg.resolved_e_start(), cfg.ac_g0)?;
    let topo = TopologySchedule::new(cfg.topology, n)?;
    let round_ops: Vec<MixingOperator> = (0..topo.period)
        .map(|t| graph::mixing_at(&topo, t))
        .collect::<Result<_>>()?;
    // static (or period-averaged) Laplacian basis for mode energies
    let avg_spectrum = if cfg.metrics_modes {
        Some(graph::laplacian_spectrum(&graph::period_average(&topo)?)?)
    } else {
        None
    };

    let n_cols = if cfg.algorithm == Algorithm::SyncSgd { 1 } else { n };
    let mut ens = init_ensemble(
        problem,
        n_cols,
        seed,
        cfg.quadratic_init_scale,
        cfg.algorithm == Algorithm::DadamAc,
    );
    let adam = AdamParams {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
        paper_bias_correction: cfg.adam_paper_bias_correction,
    };

    let mut trace = Vec::new();
    let mut modes = Vec::new();
    let mut grads = DMatrix::zeros(d, n_cols);
    let mut final_top_eig = None;
    let mut diverged = false;
    let local_batch = if n > 0 { cfg.global_batch / n } else { 0 };

    'outer: for epoch in 0..epochs {
        let plan = match problem {
            Problem::Mlp(m) => Some(reshuffle_partition(m.task.seed, m.train.len(), epoch, n)?),
            Problem::Quadratic(_) => None,
        };
        for b in 0..batches {
            let t = epoch * batches + b;
            let alpha = sched.lr_at(t)?;
            if epoch == ac.e_start && b == 0 {
                ac.activate(alpha);
            }
            let gamma = match cfg.algorithm {
                Algorithm::DsgdAc | Algorithm::DadamAc => ac.gamma_at(alpha, epoch),
                _ => 1.0,
            };

            // gradient phase: worker i draws stream (seed, i, t); sync-SGD
            // evaluates every worker batch at the shared column
            for col in 0..n_cols {
                grads.column_mut(col).fill(0.0);
            }
            for i in 0..n {
                let col = if cfg.algorithm == Algorithm::SyncSgd { 0 } else { i };
                let xi = ens.x.column(col).into_owned();
                let gi = match problem {
                    Problem::Quadratic(q) => {
                        let mut rng = stream(seed, &[tag::GRAD, i as u64, t as u64]);
                        q.stochastic_grad(&xi, &mut rng)?
                    }
                    Problem::Mlp(m) => {
                        let shard = plan.as_ref().unwrap().shard(i);
                        let batch = &shard[b * local_batch..(b + 1) * local_batch];
                        m.loss_grad(&xi, &m.train, batch)?.1
                    }
                };
                let mut gcol = grads.column_mut(col);
                for r in 0..d {
                    gcol[r] += gi[r];
                }
            }
            if cfg.algorithm == Algorithm::SyncSgd {
                grads /= n as f64;
            }
            if cfg.weight_decay != 0.0 {
                for c in 0..n_cols {
                    for r in 0..d {
                        grads[(r, c)] += cfg.weight_decay * ens.x[(r, c)];
                    }
                }
            }

            // update phase
            let op = &round_ops[t % topo.period];
            ens.t += 1;
            match cfg.algorithm {
                Algorithm::SyncSgd => {
                    let mut g = grads.column(0).into_owned();
                    if cfg.momentum != 0.0 || true {
                        for r in 0..d {
                            ens.momentum[(r, 0)] = cfg.momentum * ens.momentum[(r, 0)] + g[r];
                            g[r] = ens.momentum[(r, 0)];
                        }
                    }
                    let mut x0 = ens.x.column(0).into_owned();
                    sync_sgd_step(&mut x0, alpha, &g);
                    ens.x.set_column(0, &x0);
                }
                Algorithm::Dsgd | Algorithm::DsgdAc => {
                    for c in 0..n_cols {
                        for r in 0..d {
                            ens.momentum[(r, c)] =
                                cfg.momentum * ens.momentum[(r, c)] + grads[(r, c)];
                        }
                    }
                    dsgd_ac_step(&mut ens.x, op, alpha, gamma, &ens.momentum);
                }
                Algorithm::DadamAc => {
                    dadam_ac_step(
                        &mut ens.x,
                        ens.adam_m.as_mut().unwrap(),
                        ens.adam_v.as_mut().unwrap(),
                        ens.t,
                        op,
                        alpha,
                        gamma,
                        &grads,
                        &adam,
                    );
                }
            }

            let iter = (t + 1) as u64;
            if ens.x.iter().any(|v| !v.is_finite()) {
                diverged = true;
                trace.push(MetricRow {
                    iter,
                    epoch: epoch as u64,
                    alpha,
                    gamma,
                    radius_sq: f64::NAN,
                    center_loss: f64::NAN,
                    mean_worker_loss: f64::NAN,
                    envelope_quad: None,
                    envelope_residual: None,
                    top_eig: None,
                    diverged: true,
                });
                break 'outer;
            }

            let emit = iter % cfg.metrics_every as u64 == 0 || t + 1 == total;
            if emit {
                let epoch_boundary = (t + 1) % batches == 0;
                let top_eig = if cfg.metrics_top_eig && epoch_boundary {
                    let xbar = deployed_model(&ens.x);
                    let est = lanczos_top_eigenvalue(
                        |v| problem.hvp(&xbar, v),
                        d,
                        LANCZOS_ITERS,
                        seed,
                    )?;
                    final_top_eig = Some(est.value);
                    Some(est.value)
                } else {
                    None
                };
                trace.push(metric_row(
                    iter,
                    epoch as u64,
                    alpha,
                    gamma,
                    &ens.x,
                    problem,
                    top_eig,
                )?);
                if let Some(spec) = &avg_spectrum {
                    let delta = analysis::consensus_error(&ens.x);
                    let (_, lap) = analysis::laplacian_modes(&delta, &spec.u);
                    for (j, energy) in lap.iter().enumerate() {
                        modes.push(ModeRow {
                            iter,
                            basis: Basis::Laplacian,
                            mode_index: j + 1,
                            eigenvalue: spec.lambda[j],
                            energy: *energy,
                        });
                    }
                    if let Problem::Quadratic(q) = problem {
                        let hess = analysis::hessian_projection(&delta, &q.u_h);
                        for (k, energy) in hess.iter().enumerate() {
                            modes.push(ModeRow {
                                iter,
                                basis: Basis::Hessian,
                                mode_index: k + 1,
                                eigenvalue: q.lambda_h[k],
                                energy: *energy,
                            });
                        }
                    }
                }
            }
        }
    }

    Ok(RunOutput {
        deployed: deployed_model(&ens.x),
        trace,
        modes,
        final_top_eig,
        diverged,
    })
}

fn metric_row(
    iter: u64,
    epoch: u64,
    alpha: f64,
    gamma: f64,
    x: &DMatrix<f64>,
    problem: &Problem,
    top_eig: Option<f64>,
) -> Result<MetricRow> {
    let delta = analysis::consensus_error(x);
    let radius = analysis::radius_sq(&delta);
    let (center_loss, mean_worker_loss, quad, residual) = match problem {
        Problem::Quadratic(q) => {
            let e = envelope_terms(x, q)?;
            (
                e.center_loss,
                e.mean_worker_loss,
                Some(e.quad_term),
                Some(e.residual),
            )
        }
        Problem::Mlp(m) => {
            let xbar = deployed_model(x);
            let center = m.full_loss(&xbar, &m.train)?;
            let mut mean = 0.0;
            for c in 0..x.ncols() {
                mean += m.full_loss(&x.column(c).into_owned(), &m.train)?;
            }
            mean /= x.ncols() as f64;
            (center, mean, None, None)
        }
    };
    Ok(MetricRow {
        iter,
        epoch,
        alpha,
        gamma,
        radius_sq: radius,
        center_loss,
        mean_worker_loss,
        envelope_quad: quad,
        envelope_residual: residual,
        top_eig,
        diverged: false,
    })
}
