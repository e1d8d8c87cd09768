//! Learning-rate schedules and the adaptive consensus factor γ(t).

use crate::error::Error;
use crate::Result;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrKind {
    Constant,
    CosineWarmup,
    InvSqrtWarmup,
}

impl FromStr for LrKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "cosine_warmup" => Ok(Self::CosineWarmup),
            "inv_sqrt_warmup" => Ok(Self::InvSqrtWarmup),
            other => Err(Error::InvalidArgument(format!("unknown lr kind `{other}`"))),
        }
    }
}

impl fmt::Display for LrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Constant => "constant",
            Self::CosineWarmup => "cosine_warmup",
            Self::InvSqrtWarmup => "inv_sqrt_warmup",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub kind: LrKind,
    pub alpha_peak: f64,
    pub warmup_span: usize,
    pub total_span: usize,
    /// Floor for the cosine phase (the pure cosine anneals to 0, which the
    /// γ power law maps to 0; a positive floor keeps late-phase steps alive).
    pub alpha_min: f64,
}

impl LrSchedule {
    pub fn new(
        kind: LrKind,
        alpha_peak: f64,
        warmup_span: usize,
        total_span: usize,
        alpha_min: f64,
    ) -> Result<Self> {
        if alpha_peak <= 0.0 {
            return Err(Error::InvalidArgument("lr.peak must be > 0".into()));
        }
        if alpha_min < 0.0 || alpha_min > alpha_peak {
            return Err(Error::InvalidArgument(
                "lr.alpha_min must lie in [0, lr.peak]".into(),
            ));
        }
        if kind == LrKind::InvSqrtWarmup && warmup_span == 0 {
            return Err(Error::InvalidArgument(
                "inv_sqrt_warmup requires warmup_span ≥ 1".into(),
            ));
        }
        Ok(Self {
            kind,
            alpha_peak,
            warmup_span,
            total_span,
            alpha_min,
        })
    }

    /// Step size at iteration t ∈ [0, total_span).
    ///
    /// Warmup ramps linearly to the peak with α(0) > 0 (strictly positive
    /// steps throughout); the cosine phase then decays toward `alpha_min`.
    pub fn lr_at(&self, t: usize) -> Result<f64> {
        if t >= self.total_span {
            return Err(Error::InvalidArgument(format!(
                "iteration {t} outside schedule span {}",
                self.total_span
            )));
        }
        let w = self.warmup_span;
        if self.kind != LrKind::Constant && t < w {
            return Ok(self.alpha_peak * (t + 1) as f64 / (w + 1) as f64);
        }
        match self.kind {
            LrKind::Constant => Ok(self.alpha_peak),
            LrKind::CosineWarmup => {
                let span = (self.total_span - w).max(1) as f64;
                let progress = (t - w) as f64 / span;
                let cos = 0.5 * (1.0 + (PI * progress).cos());
                Ok(self.alpha_min + (self.alpha_peak - self.alpha_min) * cos)
            }
            LrKind::InvSqrtWarmup => Ok(self.alpha_peak * (w as f64 / t as f64).sqrt()),
        }
    }
}

/// Adaptive-consensus configuration.
///
/// Two parameterizations are supported: the training-loop form
/// γ = (α/α_max_ref)^p with α_max_ref frozen at the first iteration of the
/// activation epoch, and the analysis form γ = g0·α^p with an explicit
/// coefficient (the former corresponds to g0 = α_max_ref^−p).
#[derive(Debug, Clone, Copy)]
pub struct ConsensusConfig {
    pub p: f64,
    /// γ = 1 before this epoch.
    pub e_start: usize,
    /// Explicit coefficient for the γ = g0·α^p analysis mode.
    pub g0: Option<f64>,
    /// Frozen at activation by `activate`; unused in g0 mode.
    pub alpha_max_ref: Option<f64>,
}

impl ConsensusConfig {
    pub fn new(p: f64, e_start: usize, g0: Option<f64>) -> Result<Self> {
        if !(p >= 0.0) {
            return Err(Error::InvalidArgument("ac.p must be ≥ 0".into()));
        }
        if let Some(g) = g0 {
            if !(g >= 0.0) {
                return Err(Error::InvalidArgument("ac.g0 must be ≥ 0".into()));
            }
        }
        Ok(Self {
            p,
            e_start,
            g0,
            alpha_max_ref: None,
        })
    }

    /// Freeze the reference step size; called by the engine at the first
    /// iteration of epoch `e_start` (no-op in g0 mode or if already frozen).
    pub fn activate(&mut self, alpha: f64) {
        if self.g0.is_none() && self.alpha_max_ref.is_none() {
            self.alpha_max_ref = Some(alpha);
        }
    }

    /// Consensus factor at the given step size and epoch.
    pub fn gamma_at(&self, alpha: f64, epoch: usize) -> f64 {
        if epoch < self.e_start {
            return 1.0;
        }
        if let Some(g0) = self.g0 {
            return (g0 * alpha.powf(self.p)).clamp(0.0, 1.0);
        }
        // p = 0 reduces to DSGD exactly (bitwise γ = 1)
        if self.p == 0.0 {
            return 1.0;
        }
        let reference = match self.alpha_max_ref {
            Some(r) => r,
            // not yet activated ⇒ treated as pre-activation
            None => return 1.0,
        };
        // α > reference can occur if e_start falls inside warmup; clamp to 1
        (alpha / reference).powf(self.p).clamp(0.0, 1.0)
    }
}
