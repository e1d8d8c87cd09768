//! Line-oriented `section.key = value` experiment configuration.

use crate::engine::Algorithm;
use crate::error::Error;
use crate::graph::TopologyKind;
use crate::problems::{Activation, NoiseKind};
use crate::schedules::LrKind;
use crate::Result;
use std::fmt::Write as _;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Quadratic,
    SyntheticMlp,
}

impl FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(Self::Quadratic),
            "synthetic_mlp" => Ok(Self::SyntheticMlp),
            other => Err(Error::InvalidArgument(format!("unknown problem `{other}`"))),
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Quadratic => "quadratic",
            Self::SyntheticMlp => "synthetic_mlp",
        })
    }
}

/// Fully resolved experiment configuration. `parse` fills defaults for any
/// key not present; `serialize` emits every key so a resolved config file
/// round-trips to an identical value.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub workers: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub global_batch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub repeat: usize,
    pub output_dir: String,
    pub metrics_every: usize,
    pub metrics_modes: bool,
    pub metrics_top_eig: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub adam_paper_bias_correction: bool,
    pub topology: TopologyKind,
    pub lr_kind: LrKind,
    pub lr_peak: f64,
    pub lr_warmup_epochs: usize,
    pub lr_alpha_min: f64,
    pub ac_p: f64,
    /// Defaults to the first post-warmup epoch when absent.
    pub ac_e_start: Option<usize>,
    /// Explicit γ = g0·α^p analysis mode when present.
    pub ac_g0: Option<f64>,
    pub problem: ProblemKind,
    pub quadratic_dim: usize,
    pub quadratic_cond: f64,
    pub quadratic_init_scale: f64,
    pub noise_kind: NoiseKind,
    pub noise_sigma2: f64,
    pub noise_c: f64,
    pub task_samples: usize,
    pub task_test_samples: usize,
    pub task_input_dim: usize,
    pub task_classes: usize,
    pub task_seed: u64,
    pub task_label_noise: f64,
    pub mlp_widths: Vec<usize>,
    pub mlp_activation: Activation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::DsgdAc,
            workers: 4,
            epochs: 10,
            batches_per_epoch: 50,
            global_batch: 64,
            momentum: 0.0,
            weight_decay: 0.0,
            seed: 0,
            repeat: 1,
            output_dir: "runs".into(),
            metrics_every: 1,
            metrics_modes: false,
            metrics_top_eig: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            adam_paper_bias_correction: false,
            topology: TopologyKind::Complete,
            lr_kind: LrKind::CosineWarmup,
            lr_peak: 0.1,
            lr_warmup_epochs: 1,
            lr_alpha_min: 0.0,
            ac_p: 3.0,
            ac_e_start: None,
            ac_g0: None,
            problem: ProblemKind::Quadratic,
            quadratic_dim: 10,
            quadratic_cond: 10.0,
            quadratic_init_scale: 1.0,
            noise_kind: NoiseKind::Isotropic,
            noise_sigma2: 1.0,
            noise_c: 0.1,
            task_samples: 256,
            task_test_samples: 2048,
            task_input_dim: 2,
            task_classes: 2,
            task_seed: 1234,
            task_label_noise: 0.15,
            mlp_widths: vec![2, 32, 32, 2],
            mlp_activation: Activation::Tanh,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Parse {
        line,
        msg: format!("key `{key}`: {e}"),
    })
}

fn parse_widths(value: &str, line: usize) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| {
            s.trim().parse::<usize>().map_err(|_| Error::Parse {
                line,
                msg: format!("key `mlp.widths`: bad entry `{s}`"),
            })
        })
        .collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected `key = value`, found `{content}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "algorithm" => cfg.algorithm = parse_value(key, value, line)?,
                "workers" => cfg.workers = parse_value(key, value, line)?,
                "epochs" => cfg.epochs = parse_value(key, value, line)?,
                "batches_per_epoch" => cfg.batches_per_epoch = parse_value(key, value, line)?,
                "global_batch" => cfg.global_batch = parse_value(key, value, line)?,
                "momentum" => cfg.momentum = parse_value(key, value, line)?,
                "weight_decay" => cfg.weight_decay = parse_value(key, value, line)?,
                "seed" => cfg.seed = parse_value(key, value, line)?,
                "repeat" => cfg.repeat = parse_value(key, value, line)?,
                "output_dir" => cfg.output_dir = value.to_string(),
                "metrics.every" => cfg.metrics_every = parse_value(key, value, line)?,
                "metrics.modes" => cfg.metrics_modes = parse_value(key, value, line)?,
                "metrics.top_eig" => cfg.metrics_top_eig = parse_value(key, value, line)?,
                "adam.beta1" => cfg.adam_beta1 = parse_value(key, value, line)?,
                "adam.beta2" => cfg.adam_beta2 = parse_value(key, value, line)?,
                "adam.eps" => cfg.adam_eps = parse_value(key, value, line)?,
                "adam.paper_bias_correction" => {
                    cfg.adam_paper_bias_correction = parse_value(key, value, line)?
                }
                "topology" => cfg.topology = parse_value(key, value, line)?,
                "lr.kind" => cfg.lr_kind = parse_value(key, value, line)?,
                "lr.peak" => cfg.lr_peak = parse_value(key, value, line)?,
                "lr.warmup_epochs" => cfg.lr_warmup_epochs = parse_value(key, value, line)?,
                "lr.alpha_min" => cfg.lr_alpha_min = parse_value(key, value, line)?,
                "ac.p" => cfg.ac_p = parse_value(key, value, line)?,
                "ac.e_start" => cfg.ac_e_start = Some(parse_value(key, value, line)?),
                "ac.g0" => cfg.ac_g0 = Some(parse_value(key, value, line)?),
                "problem" => cfg.problem = parse_value(key, value, line)?,
                "quadratic.dim" => cfg.quadratic_dim = parse_value(key, value, line)?,
                "quadratic.cond" => cfg.quadratic_cond = parse_value(key, value, line)?,
                "quadratic.init_scale" => {
                    cfg.quadratic_init_scale = parse_value(key, value, line)?
                }
                "noise.kind" => cfg.noise_kind = parse_value(key, value, line)?,
                "noise.sigma2" => cfg.noise_sigma2 = parse_value(key, value, line)?,
                "noise.c" => cfg.noise_c = parse_value(key, value, line)?,
                "task.samples" => cfg.task_samples = parse_value(key, value, line)?,
                "task.test_samples" => cfg.task_test_samples = parse_value(key, value, line)?,
                "task.input_dim" => cfg.task_input_dim = parse_value(key, value, line)?,
                "task.classes" => cfg.task_classes = parse_value(key, value, line)?,
                "task.seed" => cfg.task_seed = parse_value(key, value, line)?,
                "task.label_noise" => cfg.task_label_noise = parse_value(key, value, line)?,
                "mlp.widths" => cfg.mlp_widths = parse_widths(value, line)?,
                "mlp.activation" => cfg.mlp_activation = parse_value(key, value, line)?,
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.workers == 0 {
            return fail("workers must be ≥ 1");
        }
        if self.metrics_every == 0 {
            return fail("metrics.every must be ≥ 1");
        }
        if self.repeat == 0 {
            return fail("repeat must be ≥ 1");
        }
        if !(self.ac_p >= 0.0) {
            return fail("ac.p must be ≥ 0");
        }
        if let Some(g0) = self.ac_g0 {
            if !(g0 >= 0.0) {
                return fail("ac.g0 must be ≥ 0");
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be ≥ 0");
        }
        if self.lr_peak <= 0.0 {
            return fail("lr.peak must be > 0");
        }
        if self.lr_alpha_min < 0.0 || self.lr_alpha_min > self.lr_peak {
            return fail("lr.alpha_min must lie in [0, lr.peak]");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam.beta1/beta2 must lie in [0, 1)");
        }
        if self.problem == ProblemKind::SyntheticMlp {
            if self.global_batch % self.workers != 0 {
                return fail("global_batch must be divisible by workers");
            }
            let per_epoch = self.batches_per_epoch * self.global_batch;
            if per_epoch > self.task_samples {
                return fail("batches_per_epoch × global_batch exceeds task.samples");
            }
            if !(0.0..=1.0).contains(&self.task_label_noise) {
                return fail("task.label_noise must lie in [0, 1]");
            }
        } else {
            if self.quadratic_dim == 0 {
                return fail("quadratic.dim must be ≥ 1");
            }
            if self.quadratic_cond < 1.0 {
                return fail("quadratic.cond must be ≥ 1");
            }
            if self.noise_sigma2 < 0.0 || self.noise_c < 0.0 {
                return fail("noise scales must be ≥ 0");
            }
        }
        Ok(())
    }

    /// Total iteration count E·T.
    pub fn total_iters(&self) -> usize {
        self.epochs * self.batches_per_epoch
    }

    /// Activation epoch; defaults to the first post-warmup epoch.
    pub fn resolved_e_start(&self) -> usize {
        self.ac_e_start.unwrap_or(self.lr_warmup_epochs)
    }

    /// Canonical `key = value` serialization of every field; parses back to
    /// an identical config.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("algorithm", self.algorithm.to_string());
        kv("workers", self.workers.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batches_per_epoch", self.batches_per_epoch.to_string());
        kv("global_batch", self.global_batch.to_string());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("seed", self.seed.to_string());
        kv("repeat", self.repeat.to_string());
        kv("output_dir", self.output_dir.clone());
        kv("metrics.every", self.metrics_every.to_string());
        kv("metrics.modes", self.metrics_modes.to_string());
        kv("metrics.top_eig", self.metrics_top_eig.to_string());
        kv("adam.beta1", self.adam_beta1.to_string());
        kv("adam.beta2", self.adam_beta2.to_string());
        kv("adam.eps", self.adam_eps.to_string());
        kv(
            "adam.paper_bias_correction",
            self.adam_paper_bias_correction.to_string(),
        );
        kv("topology", self.topology.to_string());
        kv("lr.kind", self.lr_kind.to_string());
        kv("lr.peak", self.lr_peak.to_string());
        kv("lr.warmup_epochs", self.lr_warmup_epochs.to_string());
        kv("lr.alpha_min", self.lr_alpha_min.to_string());
        kv("ac.p", self.ac_p.to_string());
        if let Some(e) = self.ac_e_start {
            kv("ac.e_start", e.to_string());
        }
        if let Some(g0) = self.ac_g0 {
            kv("ac.g0", g0.to_string());
        }
        kv("problem", self.problem.to_string());
        kv("quadratic.dim", self.quadratic_dim.to_string());
        kv("quadratic.cond", self.quadratic_cond.to_string());
        kv("quadratic.init_scale", self.quadratic_init_scale.to_string());
        kv("noise.kind", self.noise_kind.to_string());
        kv("noise.sigma2", self.noise_sigma2.to_string());
        kv("noise.c", self.noise_c.to_string());
        kv("task.samples", self.task_samples.to_string());
        kv("task.test_samples", self.task_test_samples.to_string());
        kv("task.input_dim", self.task_input_dim.to_string());
        kv("task.classes", self.task_classes.to_string());
        kv("task.seed", self.task_seed.to_string());
        kv("task.label_noise", self.task_label_noise.to_string());
        kv(
            "mlp.widths",
            self.mlp_widths
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("mlp.activation", self.mlp_activation.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_defaults() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = ExperimentConfig::parse(
            "# a comment\n\nworkers = 8  # trailing comment\n\nlr.peak = 0.25\n",
        )
        .unwrap();
        assert_eq!(cfg.workers, 8);
        assert_eq!(cfg.lr_peak, 0.25);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = ExperimentConfig::parse("workers = 4\nbogus.key = 1\n").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("bogus.key"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_p_rejected() {
        assert!(ExperimentConfig::parse("ac.p = -1\n").is_err());
    }

    #[test]
    fn type_mismatch_names_key() {
        let err = ExperimentConfig::parse("workers = four\n").unwrap_err();
        assert!(err.to_string().contains("workers"));
    }

    #[test]
    fn round_trip_identity() {
        let text = "algorithm = dadam_ac\nworkers = 8\ntopology = one_peer_ring\n\
                    ac.e_start = 5\nac.g0 = 0.125\nmlp.widths = 2,16,2\n\
                    problem = synthetic_mlp\nglobal_batch = 64\ntask.samples = 6400\n\
                    batches_per_epoch = 100\nlr.peak = 1e-2\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let cfg2 = ExperimentConfig::parse(&cfg.serialize()).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(cfg.serialize(), cfg2.serialize());
    }

    #[test]
    fn mlp_batch_constraints() {
        let err = ExperimentConfig::parse(
            "problem = synthetic_mlp\nworkers = 3\nglobal_batch = 64\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("divisible"));
        let err = ExperimentConfig::parse(
            "problem = synthetic_mlp\nglobal_batch = 64\nbatches_per_epoch = 50\ntask.samples = 256\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("exceeds"));
    }

    #[test]
    fn e_start_defaults_to_post_warmup() {
        let cfg = ExperimentConfig::parse("lr.warmup_epochs = 7\n").unwrap();
        assert_eq!(cfg.resolved_e_start(), 7);
        let cfg = ExperimentConfig::parse("lr.warmup_epochs = 7\nac.e_start = 3\n").unwrap();
        assert_eq!(cfg.resolved_e_start(), 3);
    }
}
