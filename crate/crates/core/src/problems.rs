//! Objective oracles: quadratics with exact curvature, a tiny MLP on a
//! synthetic classification task, and the per-epoch reshuffle sampler.

use crate::error::Error;
use crate::rng::{stream, tag};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Isotropic,
    HessianAligned,
}

impl FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isotropic" => Ok(Self::Isotropic),
            "hessian_aligned" => Ok(Self::HessianAligned),
            other => Err(Error::InvalidArgument(format!("unknown noise kind `{other}`"))),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Isotropic => "isotropic",
            Self::HessianAligned => "hessian_aligned",
        })
    }
}

/// Gradient-noise model for quadratic oracles: isotropic covariance σ²I or
/// loss-scaled Hessian-aligned covariance c·L(x)·H.
#[derive(Debug, Clone, Copy)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub sigma2: f64,
    pub c: f64,
}

impl NoiseModel {
    pub fn isotropic(sigma2: f64) -> Self {
        Self {
            kind: NoiseKind::Isotropic,
            sigma2,
            c: 0.0,
        }
    }

    pub fn hessian_aligned(c: f64) -> Self {
        Self {
            kind: NoiseKind::HessianAligned,
            sigma2: 0.0,
            c,
        }
    }
}

/// ½(x−x*)ᵀH(x−x*) with H = U_H Λ_H U_Hᵀ, plus an optional coordinate-cubic
/// perturbation used by the envelope harness to expose the third-order
/// remainder.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub d: usize,
    pub u_h: DMatrix<f64>,
    pub lambda_h: DVector<f64>,
    pub x_star: DVector<f64>,
    pub noise: NoiseModel,
    /// Coefficient of Σ_k (x−x*)_k³ added to the loss (0 = exact quadratic).
    pub cubic: f64,
    hessian: DMatrix<f64>,
}

impl QuadraticProblem {
    pub fn new(
        u_h: DMatrix<f64>,
        lambda_h: DVector<f64>,
        x_star: DVector<f64>,
        noise: NoiseModel,
    ) -> Result<Self> {
        let d = lambda_h.len();
        if u_h.nrows() != d || u_h.ncols() != d || x_star.len() != d {
            return Err(Error::InvalidArgument(
                "quadratic problem dimension mismatch".into(),
            ));
        }
        for i in 0..d {
            if lambda_h[i] <= 0.0 {
                return Err(Error::InvalidArgument(
                    "Hessian eigenvalues must be positive".into(),
                ));
            }
            if i > 0 && lambda_h[i] < lambda_h[i - 1] {
                return Err(Error::InvalidArgument(
                    "Hessian eigenvalues must be ascending".into(),
                ));
            }
        }
        let hessian = &u_h * DMatrix::from_diagonal(&lambda_h) * u_h.transpose();
        Ok(Self {
            d,
            u_h,
            lambda_h,
            x_star,
            noise,
            cubic: 0.0,
            hessian,
        })
    }

    /// Reproducible anisotropy: eigenvalues log-spaced in [1, κ], eigenvectors
    /// from a seeded random orthogonal matrix, minimizer at the origin.
    pub fn from_condition(d: usize, kappa: f64, seed: u64, noise: NoiseModel) -> Result<Self> {
        if d == 0 || kappa < 1.0 {
            return Err(Error::InvalidArgument(
                "quadratic.dim ≥ 1 and quadratic.cond ≥ 1 required".into(),
            ));
        }
        let lambda = DVector::from_fn(d, |k, _| {
            if d == 1 {
                1.0
            } else {
                kappa.powf(k as f64 / (d - 1) as f64)
            }
        });
        let u_h = random_orthogonal(d, seed);
        Self::new(u_h, lambda, DVector::zeros(d), noise)
    }

    pub fn with_diag(lambda: Vec<f64>, noise: NoiseModel) -> Result<Self> {
        let d = lambda.len();
        Self::new(
            DMatrix::identity(d, d),
            DVector::from_vec(lambda),
            DVector::zeros(d),
            noise,
        )
    }

    pub fn with_cubic(mut self, c: f64) -> Self {
        self.cubic = c;
        self
    }

    /// Quadratic-part Hessian (the curvature at x*, unaffected by `cubic`).
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn loss(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::InvalidArgument(format!(
                "point dim {} vs problem dim {}",
                x.len(),
                self.d
            )));
        }
        let w = x - &self.x_star;
        let mut v = 0.5 * (&self.hessian * &w).dot(&w);
        if self.cubic != 0.0 {
            v += self.cubic * w.iter().map(|a| a * a * a).sum::<f64>();
        }
        Ok(v)
    }

    pub fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.d {
            return Err(Error::InvalidArgument("gradient dim mismatch".into()));
        }
        let w = x - &self.x_star;
        let mut g = &self.hessian * &w;
        if self.cubic != 0.0 {
            for i in 0..self.d {
                g[i] += 3.0 * self.cubic * w[i] * w[i];
            }
        }
        Ok(g)
    }

    /// Exact gradient plus a zero-mean draw from the noise model.
    pub fn stochastic_grad(&self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
        let mut g = self.grad(x)?;
        match self.noise.kind {
            NoiseKind::Isotropic => {
                let sd = self.noise.sigma2.sqrt();
                for i in 0..self.d {
                    let z: f64 = rng.sample(StandardNormal);
                    g[i] += sd * z;
                }
            }
            NoiseKind::HessianAligned => {
                // ξ = U_H diag(√(c·L(x)·λ_k)) z — covariance c·L(x)·H
                let scale = self.noise.c * self.loss(x)?;
                let mut z = DVector::zeros(self.d);
                for k in 0..self.d {
                    let zk: f64 = rng.sample(StandardNormal);
                    z[k] = (scale * self.lambda_h[k]).max(0.0).sqrt() * zk;
                }
                g += &self.u_h * z;
            }
        }
        Ok(g)
    }

    pub fn hvp(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let mut hv = &self.hessian * v;
        if self.cubic != 0.0 {
            let w = x - &self.x_star;
            for i in 0..self.d {
                hv[i] += 6.0 * self.cubic * w[i] * v[i];
            }
        }
        Ok(hv)
    }

    /// Shared initial point: x* + scale·z with z standard normal.
    pub fn init(&self, seed: u64, scale: f64) -> DVector<f64> {
        let mut rng = stream(seed, &[tag::INIT, 0]);
        let mut x = self.x_star.clone();
        for i in 0..self.d {
            let z: f64 = rng.sample(StandardNormal);
            x[i] += scale * z;
        }
        x
    }
}

/// Seeded Haar-ish orthogonal matrix: QR of a Gaussian matrix with the R
/// diagonal sign fixed for determinism.
pub fn random_orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, &[tag::INIT, 1]);
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "linear" => Ok(Self::Linear),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tanh => "tanh",
            Self::Linear => "linear",
        })
    }
}

/// Synthetic classification task; the dataset regenerates bit-exactly from
/// the seed, with class labels balanced within ±1 sample before label noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub samples: usize,
    pub test_samples: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub seed: u64,
    /// Fraction of training labels flipped (train split only).
    pub label_noise: f64,
    pub widths: Vec<usize>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// One sample per row.
    pub x: DMatrix<f64>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Per-epoch reshuffle-and-partition plan: a permutation of sample indices
/// split into n contiguous shards whose sizes differ by at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardPlan {
    pub epoch: usize,
    pub perm: Vec<usize>,
    bounds: Vec<usize>,
}

impl ShardPlan {
    pub fn shard(&self, worker: usize) -> &[usize] {
        &self.perm[self.bounds[worker]..self.bounds[worker + 1]]
    }

    pub fn num_shards(&self) -> usize {
        self.bounds.len() - 1
    }
}

pub fn reshuffle_partition(
    task_seed: u64,
    samples: usize,
    epoch: usize,
    n: usize,
) -> Result<ShardPlan> {
    if n == 0 || n > samples {
        return Err(Error::InvalidArgument(format!(
            "cannot split {samples} samples across {n} workers"
        )));
    }
    let mut perm: Vec<usize> = (0..samples).collect();
    let mut rng = stream(task_seed, &[tag::SHUFFLE, epoch as u64]);
    perm.shuffle(&mut rng);
    let base = samples / n;
    let extra = samples % n;
    let mut bounds = Vec::with_capacity(n + 1);
    let mut at = 0;
    bounds.push(0);
    for i in 0..n {
        at += base + usize::from(i < extra);
        bounds.push(at);
    }
    Ok(ShardPlan { epoch, perm, bounds })
}

/// Tanh MLP with softmax cross-entropy on a generated synthetic task.
#[derive(Debug, Clone)]
pub struct MlpProblem {
    pub task: SyntheticTask,
    pub train: Dataset,
    pub test: Dataset,
}

impl MlpProblem {
    pub fn new(task: SyntheticTask) -> Result<Self> {
        if task.widths.len() < 2 {
            return Err(Error::InvalidArgument("mlp.widths needs ≥ 2 entries".into()));
        }
        if task.widths[0] != task.input_dim
            || *task.widths.last().unwrap() != task.classes
        {
            return Err(Error::InvalidArgument(
                "mlp.widths must start at task.input_dim and end at task.classes".into(),
            ));
        }
        if task.classes < 2 {
            return Err(Error::InvalidArgument("task.classes must be ≥ 2".into()));
        }
        let mut rng = stream(task.seed, &[tag::DATA, 0]);
        let train = generate_split(&task, task.samples, task.label_noise, &mut rng);
        let test = generate_split(&task, task.test_samples, 0.0, &mut rng);
        Ok(Self { task, train, test })
    }

    pub fn param_dim(&self) -> usize {
        let w = &self.task.widths;
        (0..w.len() - 1).map(|i| w[i] * w[i + 1] + w[i + 1]).sum()
    }

    /// Shared initial parameters: weights ~ N(0, 1/fan_in), zero biases.
    pub fn init_params(&self, seed: u64) -> DVector<f64> {
        let mut rng = stream(seed, &[tag::INIT, 0]);
        let w = &self.task.widths;
        let mut p = DVector::zeros(self.param_dim());
        let mut at = 0;
        for layer in 0..w.len() - 1 {
            let sd = 1.0 / (w[layer] as f64).sqrt();
            for _ in 0..w[layer] * w[layer + 1] {
                let z: f64 = rng.sample(StandardNormal);
                p[at] = sd * z;
                at += 1;
            }
            at += w[layer + 1]; // biases stay zero
        }
        p
    }

    /// Mean cross-entropy and exact backprop gradient over the given batch.
    pub fn loss_grad(
        &self,
        params: &DVector<f64>,
        data: &Dataset,
        batch: &[usize],
    ) -> Result<(f64, DVector<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if params.len() != self.param_dim() {
            return Err(Error::InvalidArgument("parameter dim mismatch".into()));
        }
        let widths = &self.task.widths;
        let layers = widths.len() - 1;
        let b = batch.len();

        // forward
        let mut act = DMatrix::from_fn(b, widths[0], |r, c| data.x[(batch[r], c)]);
        let mut acts = vec![act.clone()];
        let mut at = 0;
        for layer in 0..layers {
            let (fan_in, fan_out) = (widths[layer], widths[layer + 1]);
            let w = weight_view(params, at, fan_in, fan_out);
            let bias = params.rows(at + fan_in * fan_out, fan_out);
            at += fan_in * fan_out + fan_out;
            let mut z = &act * &w;
            for r in 0..b {
                for c in 0..fan_out {
                    z[(r, c)] += bias[c];
                }
            }
            if layer + 1 < layers && self.task.activation == Activation::Tanh {
                z.apply(|v| *v = v.tanh());
            }
            act = z;
            acts.push(act.clone());
        }

        // softmax cross-entropy
        let classes = widths[layers];
        let mut delta = DMatrix::zeros(b, classes);
        let mut loss = 0.0;
        for r in 0..b {
            let label = data.y[batch[r]];
            let row = act.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for c in 0..classes {
                denom += (row[c] - max).exp();
            }
            loss -= row[label] - max - denom.ln();
            for c in 0..classes {
                let p = (row[c] - max).exp() / denom;
                delta[(r, c)] = (p - f64::from(u8::from(c == label))) / b as f64;
            }
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::NumericalError("non-finite MLP loss".into()));
        }

        // backward
        let mut grad = DVector::zeros(params.len());
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for layer in 0..layers {
            offsets.push(off);
            off += widths[layer] * widths[layer + 1] + widths[layer + 1];
        }
        for layer in (0..layers).rev() {
            let (fan_in, fan_out) = (widths[layer], widths[layer + 1]);
            let gw = acts[layer].transpose() * &delta;
            let at = offsets[layer];
            for i in 0..fan_in {
                for j in 0..fan_out {
                    grad[at + i * fan_out + j] = gw[(i, j)];
                }
            }
            for j in 0..fan_out {
                let mut s = 0.0;
                for r in 0..b {
                    s += delta[(r, j)];
                }
                grad[at + fan_in * fan_out + j] = s;
            }
            if layer > 0 {
                let w = weight_view(params, at, fan_in, fan_out);
                let mut dprev = delta * w.transpose();
                if self.task.activation == Activation::Tanh {
                    for r in 0..b {
                        for c in 0..fan_in {
                            let a = acts[layer][(r, c)];
                            dprev[(r, c)] *= 1.0 - a * a;
                        }
                    }
                }
                delta = dprev;
            }
        }
        Ok((loss, grad))
    }

    pub fn full_loss(&self, params: &DVector<f64>, data: &Dataset) -> Result<f64> {
        let all: Vec<usize> = (0..data.len()).collect();
        Ok(self.loss_grad(params, data, &all)?.0)
    }

    pub fn full_grad(&self, params: &DVector<f64>) -> Result<DVector<f64>> {
        let all: Vec<usize> = (0..self.train.len()).collect();
        Ok(self.loss_grad(params, &self.train, &all)?.1)
    }

    /// Central finite-difference HVP of the full-train gradient with
    /// ε = 1e−4/|v|.
    pub fn hvp(&self, params: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let norm = v.norm();
        if norm == 0.0 {
            return Err(Error::InvalidArgument("hvp direction must be nonzero".into()));
        }
        let eps = 1e-4 / norm;
        let gp = self.full_grad(&(params + v * eps))?;
        let gm = self.full_grad(&(params - v * eps))?;
        let hv = (gp - gm) / (2.0 * eps);
        if hv.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalError("non-finite HVP".into()));
        }
        Ok(hv)
    }
}

fn weight_view(params: &DVector<f64>, at: usize, fan_in: usize, fan_out: usize) -> DMatrix<f64> {
    // parameters store each weight matrix row-major
    DMatrix::from_fn(fan_in, fan_out, |i, j| params[at + i * fan_out + j])
}

/// Draw one split. Two classes in two dimensions use the Gaussian-XOR layout
/// (four blobs at (±1.2, ±1.2), XOR labels); other shapes use one seeded
/// Gaussian blob per class. Class counts are balanced within ±1 before the
/// label flips.
fn generate_split(
    task: &SyntheticTask,
    count: usize,
    label_noise: f64,
    rng: &mut ChaCha8Rng,
) -> Dataset {
    let xor = task.classes == 2 && task.input_dim == 2;
    let centers: Vec<(DVector<f64>, usize)> = if xor {
        let c = 1.2;
        vec![
            (DVector::from_vec(vec![c, c]), 0),
            (DVector::from_vec(vec![-c, -c]), 0),
            (DVector::from_vec(vec![c, -c]), 1),
            (DVector::from_vec(vec![-c, c]), 1),
        ]
    } else {
        let mut centers_rng = stream(task.seed, &[tag::DATA, 1]);
        (0..task.classes)
            .map(|class| {
                let c = DVector::from_fn(task.input_dim, |_, _| {
                    1.2 * centers_rng.sample::<f64, _>(StandardNormal)
                });
                (c, class)
            })
            .collect()
    };

    // balanced assignment: round-robin over classes, alternating blobs
    // within each class, then shuffled
    let mut blob_of: Vec<usize> = (0..count)
        .map(|i| {
            if xor {
                let class = i % 2;
                let within = (i / 2) % 2;
                2 * class + within
            } else {
                i % task.classes
            }
        })
        .collect();
    blob_of.shuffle(rng);

    let noise_sd = 0.55;
    let mut x = DMatrix::zeros(count, task.input_dim);
    let mut y = Vec::with_capacity(count);
    for (i, &blob) in blob_of.iter().enumerate() {
        let (center, class) = &centers[blob];
        for j in 0..task.input_dim {
            let z: f64 = rng.sample(StandardNormal);
            x[(i, j)] = center[j] + noise_sd * z;
        }
        y.push(*class);
    }
    for label in y.iter_mut() {
        if label_noise > 0.0 && rng.gen::<f64>() < label_noise {
            if task.classes == 2 {
                *label = 1 - *label;
            } else {
                let shift = 1 + rng.gen_range(0..task.classes - 1);
                *label = (*label + shift) % task.classes;
            }
        }
    }
    Dataset { x, y }
}

/// Unified oracle used by the engine.
#[derive(Debug, Clone)]
pub enum Problem {
    Quadratic(QuadraticProblem),
    Mlp(MlpProblem),
}

impl Problem {
    pub fn dim(&self) -> usize {
        match self {
            Problem::Quadratic(q) => q.d,
            Problem::Mlp(m) => m.param_dim(),
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, Problem::Quadratic(_))
    }

    /// Full-batch (or exact) loss.
    pub fn loss(&self, x: &DVector<f64>) -> Result<f64> {
        match self {
            Problem::Quadratic(q) => q.loss(x),
            Problem::Mlp(m) => m.full_loss(x, &m.train),
        }
    }

    pub fn hvp(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Problem::Quadratic(q) => q.hvp(x, v),
            Problem::Mlp(m) => m.hvp(x, v),
        }
    }

    pub fn init(&self, seed: u64, quad_scale: f64) -> DVector<f64> {
        match self {
            Problem::Quadratic(q) => q.init(seed, quad_scale),
            Problem::Mlp(m) => m.init_params(seed),
        }
    }
}
