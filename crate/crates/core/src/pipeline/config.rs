use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoise::remote::{Endpoint, RemoteDenoiser};
use crate::denoise::{CorrelatedGaussianDenoiser, Denoiser, GaussianDataModel, IidGaussianDenoiser, NullDenoiser};
use crate::error::{CutError, Result};
use crate::latent::Shape;
use crate::schedule::{DdimVariant, VarianceSchedule};
use crate::tile::{shifted_window_tiles, TileSpec};

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_BASE: [usize; 3] = [128, 128, 4];
pub const DEFAULT_BETA_START: f64 = 0.00085;
pub const DEFAULT_BETA_END: f64 = 0.012;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DenoiserConfig {
    Zero,
    GaussIid {
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        variance: f64,
    },
    GaussCorr {
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        variance: f64,
        #[serde(default = "two")]
        length: f64,
    },
    /// Address falls back to the `CUTDIFFUSION_REMOTE` environment variable.
    Remote {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        address: Option<String>,
    },
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig::GaussIid {
            mean: 0.0,
            variance: 1.0,
        }
    }
}

impl DenoiserConfig {
    pub fn label(&self) -> &'static str {
        match self {
            DenoiserConfig::Zero => "zero",
            DenoiserConfig::GaussIid { .. } => "gauss-iid",
            DenoiserConfig::GaussCorr { .. } => "gauss-corr",
            DenoiserConfig::Remote { .. } => "remote",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    /// Rounds the state to single precision after every step.
    F32,
}

/// Config document as written by users; every field but `target` is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub base: Option<[usize; 3]>,
    pub target: Option<[usize; 2]>,
    pub steps: Option<usize>,
    pub t_prime: Option<usize>,
    pub stride: Option<[usize; 2]>,
    pub seed: Option<u64>,
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
    pub condition: Option<String>,
    pub denoiser: Option<DenoiserConfig>,
    pub no_interaction: Option<bool>,
    pub copy_mode: Option<bool>,
    pub eq1_verbatim: Option<bool>,
    pub interaction_interval: Option<usize>,
    pub precision: Option<Precision>,
}

/// Fully resolved, validated run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Patch shape `[h, w, c]` the denoiser natively handles.
    pub base: [usize; 3],
    /// Canvas `[h, w]` in latent cells.
    pub target: [usize; 2],
    pub steps: usize,
    /// Last step of the structure phase boundary; steps `t_prime..=1` refine.
    pub t_prime: usize,
    pub stride: [usize; 2],
    pub seed: u64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub condition: String,
    pub denoiser: DenoiserConfig,
    pub no_interaction: bool,
    pub copy_mode: bool,
    pub eq1_verbatim: bool,
    pub interaction_interval: usize,
    pub precision: Precision,
}

impl RawConfig {
    pub fn resolve(self) -> Result<RunConfig> {
        let target = self
            .target
            .ok_or_else(|| CutError::config("target", "required key is missing"))?;
        let base = self.base.unwrap_or(DEFAULT_BASE);
        let steps = self.steps.unwrap_or(DEFAULT_STEPS);
        let cfg = RunConfig {
            base,
            target,
            steps,
            t_prime: self.t_prime.unwrap_or(steps / 2),
            stride: self.stride.unwrap_or([(base[0] / 2).max(1), (base[1] / 2).max(1)]),
            seed: self.seed.unwrap_or(0),
            beta_start: self.beta_start.unwrap_or(DEFAULT_BETA_START),
            beta_end: self.beta_end.unwrap_or(DEFAULT_BETA_END),
            condition: self.condition.unwrap_or_default(),
            denoiser: self.denoiser.unwrap_or_default(),
            no_interaction: self.no_interaction.unwrap_or(false),
            copy_mode: self.copy_mode.unwrap_or(false),
            eq1_verbatim: self.eq1_verbatim.unwrap_or(false),
            interaction_interval: self.interaction_interval.unwrap_or(1),
            precision: self.precision.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    /// Defaults around the given geometry.
    pub fn new(base: Shape, target_h: usize, target_w: usize) -> Result<Self> {
        RawConfig {
            base: Some([base.h, base.w, base.c]),
            target: Some([target_h, target_w]),
            ..RawConfig::default()
        }
        .resolve()
    }

    pub fn validate(&self) -> Result<()> {
        if self.base.contains(&0) {
            return Err(CutError::config("base", "dimensions must be positive"));
        }
        if self.t_prime == 0 || self.t_prime > self.steps {
            return Err(CutError::config(
                "t_prime",
                format!("{} not in 1..={}", self.t_prime, self.steps),
            ));
        }
        if self.interaction_interval == 0 {
            return Err(CutError::config("interaction_interval", "must be at least 1"));
        }
        self.schedule()?;
        self.scales()?;
        self.tiling()?;
        match self.denoiser {
            DenoiserConfig::GaussIid { variance, .. } | DenoiserConfig::GaussCorr { variance, .. }
                if !(variance > 0.0 && variance.is_finite()) =>
            {
                Err(CutError::config("variance", format!("{variance} must be positive")))
            }
            DenoiserConfig::GaussCorr { length, .. } if !(length > 0.0 && length.is_finite()) => {
                Err(CutError::config("length", format!("{length} must be positive")))
            }
            _ => Ok(()),
        }
    }

    pub fn patch_shape(&self) -> Shape {
        Shape::new(self.base[0], self.base[1], self.base[2])
    }

    pub fn canvas_shape(&self) -> Shape {
        Shape::new(self.target[0], self.target[1], self.base[2])
    }

    pub fn scales(&self) -> Result<(usize, usize)> {
        let [h, w, _] = self.base;
        let [th, tw] = self.target;
        for (field, big, small) in [("target_h", th, h), ("target_w", tw, w)] {
            if big == 0 || big % small != 0 {
                let lo = (big / small * small).max(small);
                return Err(CutError::config(
                    field,
                    format!(
                        "{big} is not a multiple of the base {small}; try {lo} or {}",
                        lo + small
                    ),
                ));
            }
        }
        Ok((th / h, tw / w))
    }

    pub fn tiling(&self) -> Result<TileSpec> {
        shifted_window_tiles(
            self.target[0],
            self.target[1],
            self.base[0],
            self.base[1],
            self.stride[0],
            self.stride[1],
        )
    }

    pub fn schedule(&self) -> Result<VarianceSchedule> {
        VarianceSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }

    pub fn ddim_variant(&self) -> DdimVariant {
        if self.eq1_verbatim {
            DdimVariant::Verbatim
        } else {
            DdimVariant::Standard
        }
    }

    /// Pixel interaction runs in the structure phase unless disabled or copying.
    pub fn interaction_enabled(&self) -> bool {
        !self.no_interaction && !self.copy_mode
    }

    /// Canonical TOML rendering; feeds straight back into the loader.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("run config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Instantiates the configured backend.
    pub fn build_denoiser(&self) -> Result<Box<dyn Denoiser>> {
        Ok(match &self.denoiser {
            DenoiserConfig::Zero => Box::new(NullDenoiser),
            DenoiserConfig::GaussIid { mean, variance } => {
                Box::new(IidGaussianDenoiser::new(GaussianDataModel::iid(*mean, *variance)?)?)
            }
            DenoiserConfig::GaussCorr { mean, variance, length } => {
                Box::new(CorrelatedGaussianDenoiser::new(*mean, *variance, *length)?)
            }
            DenoiserConfig::Remote { address } => match address {
                Some(a) => Box::new(RemoteDenoiser::connect(
                    a.parse::<Endpoint>()?,
                    self.patch_shape(),
                    self.steps,
                )?),
                None => Box::new(RemoteDenoiser::from_env(self.patch_shape(), self.steps)?),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CutError::config("document", e.to_string()))?;
        raw.resolve()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse("target = [256, 256]").unwrap();
        assert_eq!(cfg.steps, 50);
        assert_eq!(cfg.t_prime, 25);
        assert_eq!(cfg.base, [128, 128, 4]);
        assert_eq!(cfg.stride, [64, 64]);
        assert_eq!(cfg.scales().unwrap(), (2, 2));
        assert_eq!(cfg.tiling().unwrap().len(), 9);
    }

    #[test]
    fn constraint_violations_name_the_field() {
        let field = |text: &str| match parse(text) {
            Err(CutError::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field("target = [256, 256]\nt_prime = 51"), "t_prime");
        assert_eq!(field("target = [256, 256]\nt_prime = 0"), "t_prime");
        assert_eq!(field("steps = 10"), "target");
        assert_eq!(field("target = [300, 256]"), "target_h");
        assert_eq!(field("target = [256, 256]\nstride = [48, 64]"), "stride_h");
        assert_eq!(
            field("target = [256, 256]\ninteraction_interval = 0"),
            "interaction_interval"
        );
        assert_eq!(field("target = [256, 256]\nbeta_end = 1.5"), "beta_end");
        assert!(matches!(
            parse("target = [256, 256]\nbogus = 1"),
            Err(CutError::Config { .. })
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse("target = [256, 256]").unwrap();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }
}
