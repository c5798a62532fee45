//! Moments, normality, duplication and coupling measures, and CSV reports.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CutError, Result};
use crate::latent::Latent;
use crate::pipeline::CostReport;
use crate::tile::PatchSet;

/// Sample mean and unbiased variance (0 for a single value).
pub fn moments(x: &[f64]) -> Result<(f64, f64)> {
    if x.is_empty() {
        return Err(CutError::Stats("moments of an empty sample".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, ss / (n - 1.0)))
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `x` and `N(mu, sigma^2)`.
pub fn ks_normal(x: &[f64], mu: f64, sigma: f64) -> Result<f64> {
    if x.is_empty() {
        return Err(CutError::Stats("KS of an empty sample".into()));
    }
    let dist = Normal::new(mu, sigma).map_err(|e| CutError::Stats(format!("reference normal: {e}")))?;
    let mut sorted = x.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = dist.cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    Ok(d)
}

/// Asymptotic one-sample KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

/// Fraction of `h_scale x w_scale` blocks in which every channel holds one
/// bit-identical value across the block.
pub fn duplicated_block_fraction(z: &Latent, h_scale: usize, w_scale: usize) -> Result<f64> {
    let s = z.shape();
    if h_scale == 0 || w_scale == 0 || !s.h.is_multiple_of(h_scale) || !s.w.is_multiple_of(w_scale) {
        return Err(CutError::config(
            "scale",
            format!("{s} canvas does not split into {h_scale}x{w_scale} blocks"),
        ));
    }
    let (bh, bw) = (s.h / h_scale, s.w / w_scale);
    if bh * bw == 0 {
        return Err(CutError::Stats("no blocks to inspect".into()));
    }
    let mut dup = 0usize;
    for br in 0..bh {
        for bc in 0..bw {
            let anchor = z.pixel(br * h_scale, bc * w_scale);
            let same = (0..h_scale).all(|dr| {
                (0..w_scale).all(|dc| {
                    z.pixel(br * h_scale + dr, bc * w_scale + dc)
                        .iter()
                        .zip(anchor)
                        .all(|(a, b)| a.to_bits() == b.to_bits())
                })
            });
            dup += usize::from(same);
        }
    }
    Ok(dup as f64 / (bh * bw) as f64)
}

/// Pearson correlation of two equally sized samples.
pub fn correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(CutError::Stats(format!(
            "cannot correlate {} and {} values",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = moments(a)?;
    let (mb, vb) = moments(b)?;
    if va == 0.0 || vb == 0.0 {
        return Err(CutError::Stats("correlation of a constant sample".into()));
    }
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0);
    Ok(cov / (va * vb).sqrt())
}

/// Correlations of every patch pair, in `(i, j)` order with `i < j`.
pub fn cross_patch_correlations(ps: &PatchSet) -> Result<Vec<f64>> {
    let p = ps.patches();
    let mut out = Vec::with_capacity(p.len() * p.len().saturating_sub(1) / 2);
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            out.push(correlation(p[i].as_slice(), p[j].as_slice())?);
        }
    }
    Ok(out)
}

/// Largest pairwise patch correlation, 0 for a single patch.
pub fn max_cross_patch_correlation(ps: &PatchSet) -> Result<f64> {
    Ok(cross_patch_correlations(ps)?.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatRow {
    pub label: String,
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    /// Against the reference normal the row was built with.
    pub ks: f64,
    pub duplicated_block_fraction: f64,
    pub max_cross_patch_correlation: f64,
}

impl StatRow {
    /// Summarizes `z`. Without an explicit reference, KS is taken against a
    /// normal with the sample's own mean and standard deviation.
    pub fn build(
        label: impl Into<String>,
        z: &Latent,
        scales: (usize, usize),
        patches: Option<&PatchSet>,
        reference: Option<(f64, f64)>,
    ) -> Result<StatRow> {
        let x = z.as_slice();
        let (mean, variance) = moments(x)?;
        let (mu, sigma) = reference.unwrap_or((mean, variance.sqrt()));
        let ks = if sigma > 0.0 { ks_normal(x, mu, sigma)? } else { 1.0 };
        let dup = duplicated_block_fraction(z, scales.0, scales.1)?;
        let corr = match patches {
            Some(ps) if ps.len() > 1 => max_cross_patch_correlation(ps).unwrap_or(f64::NAN),
            _ => 0.0,
        };
        Ok(StatRow {
            label: label.into(),
            count: x.len(),
            mean,
            variance,
            ks,
            duplicated_block_fraction: dup,
            max_cross_patch_correlation: corr,
        })
    }
}

fn to_csv<T: Serialize>(header: &[&str], rows: &[T]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

pub const COST_COLUMNS: [&str; 8] = [
    "label",
    "method",
    "phase1_patches",
    "phase2_patches",
    "phase1_calls",
    "phase2_calls",
    "total_calls",
    "peak_resident_latents",
];

pub const STAT_COLUMNS: [&str; 7] = [
    "label",
    "count",
    "mean",
    "variance",
    "ks",
    "duplicated_block_fraction",
    "max_cross_patch_correlation",
];

/// One CSV row per report, columns as in [`COST_COLUMNS`].
pub fn emit_cost_table(reports: &[CostReport]) -> String {
    to_csv(&COST_COLUMNS, reports)
}

pub fn emit_stat_table(rows: &[StatRow]) -> String {
    to_csv(&STAT_COLUMNS, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::Shape;
    use crate::rng::{Purpose, StreamRng};
    use proptest::prelude::*;

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut r = StreamRng::new(seed, Purpose::PatchNoise, 0);
        (0..n).map(|_| r.standard_normal()).collect()
    }

    #[test]
    fn hand_moments() {
        assert_eq!(moments(&[0.0; 8]).unwrap(), (0.0, 0.0));
        assert_eq!(moments(&[0.0, 2.0]).unwrap(), (1.0, 2.0));
        assert!(moments(&[]).is_err());
    }

    #[test]
    fn seeded_normal_moments() {
        let x = normals(99, 10_000);
        let (m, v) = moments(&x).unwrap();
        // naive two-pass route
        let m2 = x.iter().copied().sum::<f64>() / 1e4;
        let v2 = x.iter().map(|a| a * a).sum::<f64>() / 9999.0 - m2 * m2 * 1e4 / 9999.0;
        assert!((m - m2).abs() < 1e-14);
        assert!((v - v2).abs() < 1e-10);
        assert!(m.abs() < 4.0 / 100.0);
        assert!((v - 1.0).abs() < 0.06);
    }

    #[test]
    fn ks_of_matching_sample_is_below_critical() {
        let x: Vec<f64> = normals(5, 10_000).iter().map(|v| 0.5 + 2.0 * v).collect();
        let d = ks_normal(&x, 0.5, 2.0).unwrap();
        assert!(d < ks_critical_1pct(x.len()), "{d}");
        assert!(ks_normal(&x, 0.0, 0.0).is_err());
    }

    #[test]
    fn ks_critical_value_holds_by_monte_carlo() {
        // 200 independent samples of 500: rejections at the 1% level stay rare
        let n = 500;
        let rejections = (0..200)
            .filter(|&s| ks_normal(&normals(1000 + s, n), 0.0, 1.0).unwrap() > ks_critical_1pct(n))
            .count();
        assert!(rejections <= 8, "{rejections}");
    }

    #[test]
    fn ks_of_point_mass() {
        assert!(ks_normal(&[0.0; 100], 0.0, 1.0).unwrap() >= 0.5);
        assert!(ks_normal(&[3.0; 100], 0.0, 1.0).unwrap() >= 0.5);
    }

    #[test]
    fn duplicated_blocks() {
        let iid = Latent::from_vec(Shape::new(8, 8, 2), normals(3, 128)).unwrap();
        assert_eq!(duplicated_block_fraction(&iid, 2, 2).unwrap(), 0.0);
        let copy = Latent::from_fn(Shape::new(8, 8, 2), |r, c, k| {
            (r / 2 * 10 + c / 2) as f64 + k as f64 * 0.5
        });
        assert_eq!(duplicated_block_fraction(&copy, 2, 2).unwrap(), 1.0);
        // top half replicated, bottom half distinct
        let half = Latent::from_fn(Shape::new(4, 4, 1), |r, c, _| {
            if r < 2 {
                (c / 2) as f64
            } else {
                (r * 4 + c) as f64
            }
        });
        assert_eq!(duplicated_block_fraction(&half, 2, 2).unwrap(), 0.5);
        assert!(duplicated_block_fraction(&half, 3, 2).is_err());
    }

    #[test]
    fn correlation_basics() {
        let a = normals(1, 1000);
        let b: Vec<f64> = a.iter().map(|v| 3.0 * v - 1.0).collect();
        assert!((correlation(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = normals(2, 1000);
        assert!(correlation(&a, &c).unwrap().abs() < 0.12);
        assert!(correlation(&a, &a[..10]).is_err());
    }

    #[test]
    fn cost_table_header_only_when_empty() {
        assert_eq!(
            emit_cost_table(&[]),
            "label,method,phase1_patches,phase2_patches,phase1_calls,phase2_calls,total_calls,peak_resident_latents\n"
        );
    }

    proptest! {
        #[test]
        fn moments_and_ks_are_permutation_invariant(
            mut x in proptest::collection::vec(-5.0f64..5.0, 2..64),
            rot in 0usize..64,
        ) {
            let (m0, v0) = moments(&x).unwrap();
            let k0 = ks_normal(&x, 0.1, 1.3).unwrap();
            let r = rot % x.len();
            x.rotate_left(r);
            x.reverse();
            let (m1, v1) = moments(&x).unwrap();
            prop_assert!((m0 - m1).abs() <= 1e-12 && (v0 - v1).abs() <= 1e-10);
            prop_assert_eq!(k0, ks_normal(&x, 0.1, 1.3).unwrap());
            prop_assert!((0.0..=1.0).contains(&k0));
        }
    }
}
