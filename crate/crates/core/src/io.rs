//! Config documents, latent files, and the toy PPM decoder.
//!
//! A latent file is a JSON sidecar plus a raw payload next to it:
//!
//! ```json
//! {"magic": "cutdiffusion-latent/1", "shape": [h, w, c], "dtype": "f64",
//!  "seed": 0, "config_hash": "…", "payload": "latent.bin"}
//! ```
//!
//! The payload is `h * w * c` little-endian floats of `dtype`, row-major with
//! channels innermost.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CutError, Result};
use crate::latent::{Latent, Shape};
use crate::pipeline::{RawConfig, RunConfig};

pub const LATENT_MAGIC: &str = "cutdiffusion-latent/1";

/// Parses a config document without filling defaults or validating.
pub fn parse_raw_config(text: &str) -> Result<RawConfig> {
    toml::from_str(text).map_err(|e| {
        let msg = e.message().to_owned();
        let field = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.contains("unknown field") || msg.contains("missing field"))
            .unwrap_or("document")
            .to_owned();
        CutError::config(field, msg)
    })
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_raw_config(text)?.resolve()
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

pub fn save_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    fs::write(path, cfg.to_toml())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSidecar {
    pub magic: String,
    pub shape: [usize; 3],
    pub dtype: Dtype,
    pub seed: u64,
    pub config_hash: String,
    /// Payload file name, relative to the sidecar.
    pub payload: String,
}

fn payload_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("bin")
}

/// Writes `<path>` (sidecar) and `<path>` with a `.bin` extension (payload).
pub fn save_latent(path: &Path, z: &Latent, dtype: Dtype, seed: u64, config_hash: &str) -> Result<()> {
    let bin = payload_path(path);
    let s = z.shape();
    let sidecar = LatentSidecar {
        magic: LATENT_MAGIC.into(),
        shape: [s.h, s.w, s.c],
        dtype,
        seed,
        config_hash: config_hash.into(),
        payload: bin
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| CutError::Format(format!("bad latent path {}", path.display())))?
            .into(),
    };
    let mut bytes = Vec::with_capacity(s.len() * dtype.size());
    for &v in z.as_slice() {
        match dtype {
            Dtype::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    fs::write(&bin, bytes)?;
    fs::write(
        path,
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n",
    )?;
    Ok(())
}

pub fn load_latent(path: &Path) -> Result<(Latent, LatentSidecar)> {
    let text = fs::read_to_string(path)?;
    let sidecar: LatentSidecar =
        serde_json::from_str(&text).map_err(|e| CutError::Format(format!("{}: {e}", path.display())))?;
    if sidecar.magic != LATENT_MAGIC {
        return Err(CutError::Format(format!("bad magic `{}`", sidecar.magic)));
    }
    let shape = Shape::new(sidecar.shape[0], sidecar.shape[1], sidecar.shape[2]);
    let bin = path.with_file_name(&sidecar.payload);
    let bytes = fs::read(&bin)?;
    let want = shape.len() * sidecar.dtype.size();
    if bytes.len() != want {
        return Err(CutError::Format(format!(
            "{}: payload is {} bytes, {shape} {:?} needs {want}",
            bin.display(),
            bytes.len(),
            sidecar.dtype
        )));
    }
    let data = match sidecar.dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect(),
    };
    Ok((Latent::from_vec(shape, data)?, sidecar))
}

/// Binary PPM (P6). Each channel is mapped affinely from its own `[min, max]`
/// onto `[0, 255]` and rounded; a constant channel becomes 128. Single-channel
/// latents are written as gray.
pub fn encode_ppm(z: &Latent) -> Result<Vec<u8>> {
    let s = z.shape();
    if s.c != 1 && s.c != 3 {
        return Err(CutError::config(
            "channels",
            format!("PPM needs 1 or 3 channels, latent has {}", s.c),
        ));
    }
    let ranges: Vec<(f64, f64)> = (0..s.c)
        .map(|k| {
            z.as_slice()
                .iter()
                .skip(k)
                .step_by(s.c)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
        })
        .collect();
    let to_byte = |v: f64, (lo, hi): (f64, f64)| -> u8 {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            128
        }
    };
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    for r in 0..s.h {
        for col in 0..s.w {
            let px = z.pixel(r, col);
            if s.c == 1 {
                let b = to_byte(px[0], ranges[0]);
                out.extend_from_slice(&[b, b, b]);
            } else {
                out.extend((0..3).map(|k| to_byte(px[k], ranges[k])));
            }
        }
    }
    Ok(out)
}

pub fn save_image_ppm(z: &Latent, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(z)?)?;
    Ok(())
}

/// First `min(c, 3)` channels, padded to 3 when `c == 2`, so any latent can be
/// previewed through [`encode_ppm`].
pub fn preview_channels(z: &Latent) -> Latent {
    let s = z.shape();
    match s.c {
        1 | 3 => z.clone(),
        _ => Latent::from_fn(
            Shape::new(s.h, s.w, 3),
            |r, c, k| if k < s.c { z[(r, c, k)] } else { 0.0 },
        ),
    }
}
