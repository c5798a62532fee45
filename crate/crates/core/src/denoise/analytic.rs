//! Closed-form Bayes-optimal noise predictors for Gaussian data.
//!
//! With `x0 ~ N(mu, Sigma)` and `z_t = sqrt(a) x0 + sqrt(1 - a) e`, the
//! posterior mean is
//! `E[x0 | z] = mu + sqrt(a) Sigma (a Sigma + (1 - a) I)^-1 (z - sqrt(a) mu)`
//! and the matching noise estimate is `(z - sqrt(a) E[x0 | z]) / sqrt(1 - a)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{DenoiseRequest, Denoiser};
use crate::error::{CutError, Result};
use crate::latent::{Latent, Shape};
use crate::schedule::VarianceSchedule;

/// Largest flattened latent the dense solver accepts.
pub const MAX_DENSE_DIM: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum DataMean {
    Constant(f64),
    /// Per-cell mean; requests must match its shape.
    Field(Latent),
}

impl DataMean {
    fn value_at(&self, i: usize) -> f64 {
        match self {
            DataMean::Constant(m) => *m,
            DataMean::Field(f) => f.as_slice()[i],
        }
    }

    fn check(&self, shape: Shape) -> Result<()> {
        match self {
            DataMean::Field(f) if f.shape() != shape => Err(CutError::Capacity(format!(
                "mean field is {}, request is {shape}",
                f.shape()
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataVariance {
    Scalar(f64),
    /// Covariance over the row-major flattening of the latent.
    Full(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDataModel {
    pub mean: DataMean,
    pub variance: DataVariance,
}

impl GaussianDataModel {
    pub fn iid(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(CutError::config("variance", format!("{variance} must be positive")));
        }
        Ok(GaussianDataModel {
            mean: DataMean::Constant(mean),
            variance: DataVariance::Scalar(variance),
        })
    }

    pub fn full(mean: DataMean, cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(CutError::config("covariance", "matrix is not square"));
        }
        if cov.nrows() > MAX_DENSE_DIM {
            return Err(CutError::Capacity(format!(
                "covariance dimension {} exceeds {MAX_DENSE_DIM}",
                cov.nrows()
            )));
        }
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(CutError::config("covariance", "matrix is not symmetric"));
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(CutError::config("covariance", "matrix is not positive definite"));
        }
        Ok(GaussianDataModel {
            mean,
            variance: DataVariance::Full(cov),
        })
    }
}

/// `sigma^2 exp(-d / length)` over spatial distance, independent across channels.
pub fn exp_decay_covariance(shape: Shape, variance: f64, length: f64) -> DMatrix<f64> {
    let n = shape.len();
    let coord = |i: usize| {
        let pix = i / shape.c;
        ((pix / shape.w) as f64, (pix % shape.w) as f64, i % shape.c)
    };
    DMatrix::from_fn(n, n, |i, j| {
        let (r0, c0, k0) = coord(i);
        let (r1, c1, k1) = coord(j);
        if k0 != k1 {
            return 0.0;
        }
        let d = ((r0 - r1).powi(2) + (c0 - c1).powi(2)).sqrt();
        variance * (-d / length).exp()
    })
}

fn noise_level(t: usize, sched: &VarianceSchedule) -> Result<(f64, f64)> {
    sched.check_step(t)?;
    let a = sched.alpha_bar(t);
    if a >= 1.0 {
        return Err(CutError::Invariant(format!(
            "alpha_bar({t}) = 1 leaves no noise to predict"
        )));
    }
    Ok((a, (1.0 - a).sqrt()))
}

pub fn analytic_iid_eps(z: &Latent, t: usize, model: &GaussianDataModel, sched: &VarianceSchedule) -> Result<Latent> {
    let DataVariance::Scalar(var) = model.variance else {
        return Err(CutError::config("variance", "i.i.d. backend needs a scalar variance"));
    };
    model.mean.check(z.shape())?;
    let (a, sn) = noise_level(t, sched)?;
    let sa = a.sqrt();
    let denom = a * var + 1.0 - a;
    let data = z
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &zi)| {
            let mu = model.mean.value_at(i);
            let post = (sa * var * zi + (1.0 - a) * mu) / denom;
            (zi - sa * post) / sn
        })
        .collect();
    Latent::from_vec(z.shape(), data)
}

fn correlated_eps_factored(
    z: &Latent,
    mean: &DataMean,
    cov: &DMatrix<f64>,
    system: &Cholesky<f64, Dyn>,
    a: f64,
    sn: f64,
) -> Result<Latent> {
    let sa = a.sqrt();
    let n = z.shape().len();
    let resid = DVector::from_fn(n, |i, _| z.as_slice()[i] - sa * mean.value_at(i));
    let post = cov * system.solve(&resid);
    let data = (0..n)
        .map(|i| {
            let x0 = mean.value_at(i) + sa * post[i];
            (z.as_slice()[i] - sa * x0) / sn
        })
        .collect();
    Latent::from_vec(z.shape(), data)
}

fn system_matrix(cov: &DMatrix<f64>, a: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = cov.nrows();
    let m = cov * a + DMatrix::<f64>::identity(n, n) * (1.0 - a);
    Cholesky::new(m).ok_or_else(|| CutError::config("covariance", "system matrix is not positive definite"))
}

pub fn analytic_correlated_eps(
    z: &Latent,
    t: usize,
    model: &GaussianDataModel,
    sched: &VarianceSchedule,
) -> Result<Latent> {
    let DataVariance::Full(cov) = &model.variance else {
        return Err(CutError::config(
            "variance",
            "correlated backend needs a full covariance",
        ));
    };
    let n = z.shape().len();
    if n > MAX_DENSE_DIM {
        return Err(CutError::Capacity(format!(
            "latent of {n} values exceeds dense cap {MAX_DENSE_DIM}"
        )));
    }
    if cov.nrows() != n {
        return Err(CutError::Capacity(format!(
            "covariance is {0}x{0}, latent has {n} values",
            cov.nrows()
        )));
    }
    model.mean.check(z.shape())?;
    let (a, sn) = noise_level(t, sched)?;
    let system = system_matrix(cov, a)?;
    correlated_eps_factored(z, &model.mean, cov, &system, a, sn)
}

pub struct IidGaussianDenoiser {
    model: GaussianDataModel,
}

impl IidGaussianDenoiser {
    pub fn new(model: GaussianDataModel) -> Result<Self> {
        match model.variance {
            DataVariance::Scalar(v) if v > 0.0 => Ok(IidGaussianDenoiser { model }),
            _ => Err(CutError::config(
                "variance",
                "i.i.d. backend needs a positive scalar variance",
            )),
        }
    }

    pub fn model(&self) -> &GaussianDataModel {
        &self.model
    }
}

impl Denoiser for IidGaussianDenoiser {
    fn name(&self) -> &str {
        "gauss-iid"
    }

    fn patch_shape(&self) -> Option<Shape> {
        match &self.model.mean {
            DataMean::Field(f) => Some(f.shape()),
            DataMean::Constant(_) => None,
        }
    }

    fn predict_noise(&self, req: &DenoiseRequest<'_>, sched: &VarianceSchedule) -> Result<Latent> {
        analytic_iid_eps(req.latent, req.t, &self.model, sched)
    }
}

struct Prepared {
    cov: DMatrix<f64>,
    systems: Mutex<HashMap<usize, Arc<Cholesky<f64, Dyn>>>>,
}

/// Exponential-decay spatial covariance built for whatever shape arrives,
/// with factorizations cached per shape and step.
pub struct CorrelatedGaussianDenoiser {
    mean: f64,
    variance: f64,
    length: f64,
    cache: Mutex<HashMap<Shape, Arc<Prepared>>>,
}

impl CorrelatedGaussianDenoiser {
    pub fn new(mean: f64, variance: f64, length: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(CutError::config("variance", format!("{variance} must be positive")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(CutError::config("corr_length", format!("{length} must be positive")));
        }
        Ok(CorrelatedGaussianDenoiser {
            mean,
            variance,
            length,
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn prepared(&self, shape: Shape) -> Result<Arc<Prepared>> {
        if shape.len() > MAX_DENSE_DIM {
            return Err(CutError::Capacity(format!(
                "{shape} latent ({} values) exceeds dense cap {MAX_DENSE_DIM}",
                shape.len()
            )));
        }
        let mut cache = self.cache.lock().expect("covariance cache poisoned");
        let entry = cache.entry(shape).or_insert_with(|| {
            Arc::new(Prepared {
                cov: exp_decay_covariance(shape, self.variance, self.length),
                systems: Mutex::new(HashMap::new()),
            })
        });
        Ok(Arc::clone(entry))
    }
}

impl Denoiser for CorrelatedGaussianDenoiser {
    fn name(&self) -> &str {
        "gauss-corr"
    }

    fn predict_noise(&self, req: &DenoiseRequest<'_>, sched: &VarianceSchedule) -> Result<Latent> {
        let prep = self.prepared(req.latent.shape())?;
        let (a, sn) = noise_level(req.t, sched)?;
        let system = {
            let mut systems = prep.systems.lock().expect("factorization cache poisoned");
            match systems.get(&req.t) {
                Some(s) => Arc::clone(s),
                None => {
                    let s = Arc::new(system_matrix(&prep.cov, a)?);
                    systems.insert(req.t, Arc::clone(&s));
                    s
                }
            }
        };
        correlated_eps_factored(req.latent, &DataMean::Constant(self.mean), &prep.cov, &system, a, sn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamRng};

    fn sched() -> VarianceSchedule {
        VarianceSchedule::linear(50, 0.00085, 0.012).unwrap()
    }

    fn random(shape: Shape, seed: u64) -> Latent {
        let mut r = StreamRng::new(seed, Purpose::PatchNoise, 0);
        Latent::from_fn(shape, |_, _, _| r.standard_normal())
    }

    #[test]
    fn on_mean_input_has_zero_noise() {
        let s = sched();
        let t = 20;
        let model = GaussianDataModel::iid(0.3, 0.25).unwrap();
        let z = Latent::filled(Shape::new(3, 3, 2), s.alpha_bar(t).sqrt() * 0.3);
        let eps = analytic_iid_eps(&z, t, &model, &s).unwrap();
        assert!(eps.as_slice().iter().all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn degenerate_prior_pins_posterior_to_mean() {
        let s = sched();
        let t = 35;
        let model = GaussianDataModel::iid(0.7, 1e-12).unwrap();
        let z = random(Shape::new(4, 4, 1), 3);
        let eps = analytic_iid_eps(&z, t, &model, &s).unwrap();
        let a = s.alpha_bar(t);
        for (e, zi) in eps.as_slice().iter().zip(z.as_slice()) {
            let x0 = (zi - (1.0 - a).sqrt() * e) / a.sqrt();
            assert!((x0 - 0.7).abs() < 1e-9);
        }
    }

    #[test]
    fn iid_is_affine_in_z() {
        let s = sched();
        let model = GaussianDataModel::iid(-0.4, 0.8).unwrap();
        let sh = Shape::new(2, 3, 1);
        let z0 = Latent::zeros(sh);
        let z1 = random(sh, 5);
        let z2 = random(sh, 6);
        let e = |z: &Latent| analytic_iid_eps(z, 12, &model, &s).unwrap();
        let mid = Latent::from_vec(
            sh,
            z1.as_slice()
                .iter()
                .zip(z2.as_slice())
                .map(|(a, b)| 0.3 * a + 0.7 * b)
                .collect(),
        )
        .unwrap();
        let (e0, e1, e2, em) = (e(&z0), e(&z1), e(&z2), e(&mid));
        for i in 0..sh.len() {
            // affine: f(0.3 a + 0.7 b) = 0.3 f(a) + 0.7 f(b); also check f(0) is finite offset
            let lhs = em.as_slice()[i];
            let rhs = 0.3 * e1.as_slice()[i] + 0.7 * e2.as_slice()[i];
            assert!((lhs - rhs).abs() < 1e-10);
            assert!(e0.as_slice()[i].is_finite());
        }
    }

    #[test]
    fn scalar_variance_required() {
        let s = sched();
        let z = Latent::zeros(Shape::new(1, 2, 1));
        let full = GaussianDataModel::full(DataMean::Constant(0.0), DMatrix::identity(2, 2)).unwrap();
        assert!(analytic_iid_eps(&z, 3, &full, &s).is_err());
        let iid = GaussianDataModel::iid(0.0, 1.0).unwrap();
        assert!(analytic_correlated_eps(&z, 3, &iid, &s).is_err());
        assert!(analytic_iid_eps(&z, 0, &iid, &s).is_err());
    }

    #[test]
    fn correlated_reduces_to_iid() {
        let s = sched();
        let sh = Shape::new(4, 4, 2);
        let z = random(sh, 9);
        let iid = GaussianDataModel::iid(0.2, 0.6).unwrap();
        let full = GaussianDataModel::full(DataMean::Constant(0.2), DMatrix::identity(32, 32) * 0.6).unwrap();
        for t in [1, 10, 50] {
            let a = analytic_iid_eps(&z, t, &iid, &s).unwrap();
            let b = analytic_correlated_eps(&z, t, &full, &s).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn diagonal_covariance_matches_per_pixel_formula() {
        let s = sched();
        let sh = Shape::new(2, 3, 1);
        let vars = [0.1, 0.4, 0.9, 1.5, 2.0, 0.05];
        let cov = DMatrix::from_diagonal(&DVector::from_row_slice(&vars));
        let model = GaussianDataModel::full(DataMean::Constant(-0.3), cov).unwrap();
        let z = random(sh, 12);
        let t = 27;
        let out = analytic_correlated_eps(&z, t, &model, &s).unwrap();
        let a = s.alpha_bar(t);
        for ((&zi, &v), &got) in z.as_slice().iter().zip(&vars).zip(out.as_slice()) {
            let post = (a.sqrt() * v * zi + (1.0 - a) * -0.3) / (a * v + 1.0 - a);
            let want = (zi - a.sqrt() * post) / (1.0 - a).sqrt();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_spd_and_oversized() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GaussianDataModel::full(DataMean::Constant(0.0), bad),
            Err(CutError::Config { .. })
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(GaussianDataModel::full(DataMean::Constant(0.0), asym).is_err());
        let d = CorrelatedGaussianDenoiser::new(0.0, 1.0, 2.0).unwrap();
        let z = Latent::zeros(Shape::new(65, 64, 1));
        let req = DenoiseRequest {
            latent: &z,
            t: 1,
            condition: "",
            request_id: 0,
        };
        assert!(matches!(d.predict_noise(&req, &sched()), Err(CutError::Capacity(_))));
    }

    #[test]
    fn cached_denoiser_matches_free_function() {
        let s = sched();
        let sh = Shape::new(4, 5, 1);
        let d = CorrelatedGaussianDenoiser::new(0.1, 0.5, 1.5).unwrap();
        let model = GaussianDataModel::full(DataMean::Constant(0.1), exp_decay_covariance(sh, 0.5, 1.5)).unwrap();
        let z = random(sh, 4);
        for t in [3, 3, 40] {
            let req = DenoiseRequest {
                latent: &z,
                t,
                condition: "",
                request_id: 1,
            };
            let a = d.predict_noise(&req, &s).unwrap();
            let b = analytic_correlated_eps(&z, t, &model, &s).unwrap();
            assert_eq!(a, b);
        }
    }
}
