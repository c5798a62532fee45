//! Variance schedule and the deterministic DDIM reverse update.

use serde::{Deserialize, Serialize};

use crate::error::{CutError, Result};
use crate::latent::Latent;

/// Which noise coefficient the reverse update uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DdimVariant {
    /// `sqrt(a_prev) * (sqrt(1/a_prev - 1) - sqrt(1/a_t - 1))`, which lands on
    /// the predicted clean latent at `t = 1`.
    #[default]
    Standard,
    /// `sqrt(1/a_prev - 1) - sqrt(1/a_t - 1)` without the leading factor.
    Verbatim,
}

/// Cumulative products `alpha_bar[t]` for `t = 0..=steps`, with `alpha_bar[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    alphas_cumprod: Vec<f64>,
}

impl VarianceSchedule {
    /// Linear betas over `[beta_start, beta_end]`, accumulated as `prod(1 - beta)`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(CutError::config("steps", "must be at least 1"));
        }
        if !(beta_start > 0.0 && beta_start < 1.0) {
            return Err(CutError::config("beta_start", format!("{beta_start} not in (0, 1)")));
        }
        if !(beta_end >= beta_start && beta_end < 1.0) {
            return Err(CutError::config(
                "beta_end",
                format!("{beta_end} not in [beta_start, 1)"),
            ));
        }
        let mut alphas_cumprod = Vec::with_capacity(steps + 1);
        alphas_cumprod.push(1.0);
        let mut acc = 1.0;
        for i in 0..steps {
            let beta = if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            };
            acc *= 1.0 - beta;
            alphas_cumprod.push(acc);
        }
        Self::from_alphas_cumprod(alphas_cumprod)
    }

    /// Wraps an explicit table. Index 0 must be exactly 1 and the rest strictly
    /// decreasing inside (0, 1].
    pub fn from_alphas_cumprod(alphas_cumprod: Vec<f64>) -> Result<Self> {
        if alphas_cumprod.len() < 2 {
            return Err(CutError::config("alphas_cumprod", "need at least one step"));
        }
        if alphas_cumprod[0] != 1.0 {
            return Err(CutError::config("alphas_cumprod", "entry 0 must equal 1"));
        }
        for (t, pair) in alphas_cumprod.windows(2).enumerate().skip(1) {
            if pair[1].partial_cmp(&pair[0]) != Some(std::cmp::Ordering::Less) {
                return Err(CutError::config(
                    "alphas_cumprod",
                    format!("not strictly decreasing at t={}", t + 1),
                ));
            }
        }
        for (t, &a) in alphas_cumprod.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return Err(CutError::config(
                    "alphas_cumprod",
                    format!("entry {t} = {a} not in (0, 1]"),
                ));
            }
        }
        Ok(VarianceSchedule { alphas_cumprod })
    }

    pub fn steps(&self) -> usize {
        self.alphas_cumprod.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_cumprod[t]
    }

    pub fn alphas_cumprod(&self) -> &[f64] {
        &self.alphas_cumprod
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(CutError::StepIndex { t, steps: self.steps() });
        }
        Ok(())
    }

    /// `(latent, noise)` coefficients of the reverse update from `t` to `t - 1`.
    pub fn ddim_coefficients(&self, t: usize, variant: DdimVariant) -> Result<(f64, f64)> {
        self.check_step(t)?;
        Ok(ddim_coefficients(self.alpha_bar(t), self.alpha_bar(t - 1), variant))
    }
}

/// Scalar coefficients for one reverse step given `alpha_bar` at `t` and `t - 1`.
pub fn ddim_coefficients(a_t: f64, a_prev: f64, variant: DdimVariant) -> (f64, f64) {
    let coef_z = (a_prev / a_t).sqrt();
    let diff = (1.0 / a_prev - 1.0).sqrt() - (1.0 / a_t - 1.0).sqrt();
    let coef_eps = match variant {
        DdimVariant::Standard => a_prev.sqrt() * diff,
        DdimVariant::Verbatim => diff,
    };
    (coef_z, coef_eps)
}

pub fn ddim_step(z_t: &Latent, eps: &Latent, t: usize, sched: &VarianceSchedule) -> Result<Latent> {
    ddim_step_with(z_t, eps, t, sched, DdimVariant::Standard)
}

pub fn ddim_step_with(
    z_t: &Latent,
    eps: &Latent,
    t: usize,
    sched: &VarianceSchedule,
    variant: DdimVariant,
) -> Result<Latent> {
    z_t.ensure_same_shape(eps, "ddim_step")?;
    let (cz, ce) = sched.ddim_coefficients(t, variant)?;
    let data = z_t
        .as_slice()
        .iter()
        .zip(eps.as_slice())
        .map(|(&z, &e)| cz * z + ce * e)
        .collect();
    Latent::from_vec(z_t.shape(), data)
}

/// `(z_t - sqrt(1 - a_t) * eps) / sqrt(a_t)`.
pub fn predicted_x0(z_t: &Latent, eps: &Latent, t: usize, sched: &VarianceSchedule) -> Result<Latent> {
    z_t.ensure_same_shape(eps, "predicted_x0")?;
    sched.check_step(t)?;
    let a = sched.alpha_bar(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let data = z_t
        .as_slice()
        .iter()
        .zip(eps.as_slice())
        .map(|(&z, &e)| (z - sn * e) / sa)
        .collect();
    Latent::from_vec(z_t.shape(), data)
}
