//! Checks against values produced by `fixtures/gen_golden.py`, which evaluates
//! every formula independently in 50-digit arithmetic.

use cutdiffusion::denoise::{
    analytic_correlated_eps, analytic_iid_eps, exp_decay_covariance, DataMean, GaussianDataModel,
};
use cutdiffusion::{ddim_step, predicted_x0, Latent, Shape, VarianceSchedule};
use serde_json::Value;

fn golden() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/golden.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(f).collect()
}

fn shape(v: &Value) -> Shape {
    let s: Vec<usize> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap() as usize)
        .collect();
    Shape::new(s[0], s[1], s[2])
}

fn scalar(x: f64) -> Latent {
    Latent::filled(Shape::new(1, 1, 1), x)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// One-step schedule placing `a_t` at t = 1.
fn at(a_t: f64) -> VarianceSchedule {
    VarianceSchedule::from_alphas_cumprod(vec![1.0, a_t]).unwrap()
}

#[test]
fn linear_schedule_table() {
    let g = &golden()["schedule_t50"];
    let steps = g["steps"].as_u64().unwrap() as usize;
    let sched = VarianceSchedule::linear(steps, f(&g["beta_start"]), f(&g["beta_end"])).unwrap();
    let want = floats(&g["alphas_cumprod"]);
    assert_eq!(sched.alphas_cumprod().len(), 51);
    assert_eq!(sched.alpha_bar(0), 1.0);
    for (t, (&got, &w)) in sched.alphas_cumprod().iter().zip(&want).enumerate() {
        assert!(rel(got, w) < 1e-14, "t={t}: {got} vs {w}");
    }
}

#[test]
fn single_term_schedule() {
    let sched = VarianceSchedule::linear(1, 0.1, 0.1).unwrap();
    assert!(rel(sched.alpha_bar(1), 0.9) < 1e-15);
}

#[test]
fn ddim_scalar_case() {
    let g = &golden()["ddim_scalar"];
    let sched = VarianceSchedule::from_alphas_cumprod(vec![1.0, f(&g["a_prev"]), f(&g["a_t"])]).unwrap();
    let got = ddim_step(&scalar(f(&g["z"])), &scalar(f(&g["eps"])), 2, &sched)
        .unwrap()
        .as_slice()[0];
    assert!(rel(got, f(&g["expected"])) < 1e-12, "{got}");
}

#[test]
fn ddim_random_tuples() {
    let g = golden();
    let tuples = g["ddim_tuples"].as_array().unwrap();
    assert_eq!(tuples.len(), 100);
    for (i, tup) in tuples.iter().enumerate() {
        let sched = VarianceSchedule::from_alphas_cumprod(vec![1.0, f(&tup["a_prev"]), f(&tup["a_t"])]).unwrap();
        let got = ddim_step(&scalar(f(&tup["z"])), &scalar(f(&tup["eps"])), 2, &sched)
            .unwrap()
            .as_slice()[0];
        assert!(
            rel(got, f(&tup["expected"])) < 1e-12,
            "tuple {i}: {got} vs {}",
            tup["expected"]
        );
    }
}

#[test]
fn predicted_x0_scalar_case() {
    let g = &golden()["predicted_x0_scalar"];
    let got = predicted_x0(&scalar(f(&g["z"])), &scalar(f(&g["eps"])), 1, &at(f(&g["a_t"])))
        .unwrap()
        .as_slice()[0];
    assert!(rel(got, f(&g["expected"])) < 1e-13, "{got}");
}

#[test]
fn iid_eps_scalar_case() {
    let g = &golden()["iid_eps_scalar"];
    let model = GaussianDataModel::iid(f(&g["mean"]), f(&g["variance"])).unwrap();
    let got = analytic_iid_eps(&scalar(f(&g["z"])), 1, &model, &at(f(&g["a_t"])))
        .unwrap()
        .as_slice()[0];
    assert!(rel(got, f(&g["expected"])) < 1e-13, "{got}");
}

#[test]
fn iid_eps_batch() {
    let g = &golden()["iid_eps_batch"];
    let s = shape(&g["shape"]);
    let z = Latent::from_vec(s, floats(&g["z"])).unwrap();
    let model = GaussianDataModel::iid(f(&g["mean"]), f(&g["variance"])).unwrap();
    let got = analytic_iid_eps(&z, 1, &model, &at(f(&g["a_t"]))).unwrap();
    for (i, (&a, &b)) in got.as_slice().iter().zip(&floats(&g["expected"])).enumerate() {
        assert!((a - b).abs() <= 1e-13 * b.abs().max(1.0), "element {i}: {a} vs {b}");
    }
}

#[test]
fn correlated_eps_8x8() {
    let g = &golden()["corr_eps_8x8"];
    let s = shape(&g["shape"]);
    let z = Latent::from_vec(s, floats(&g["z"])).unwrap();
    let cov = exp_decay_covariance(s, f(&g["variance"]), f(&g["length"]));
    let model = GaussianDataModel::full(DataMean::Constant(f(&g["mean"])), cov).unwrap();
    let got = analytic_correlated_eps(&z, 1, &model, &at(f(&g["a_t"]))).unwrap();
    for (i, (&a, &b)) in got.as_slice().iter().zip(&floats(&g["expected"])).enumerate() {
        assert!((a - b).abs() <= 1e-11 * b.abs().max(1.0), "element {i}: {a} vs {b}");
    }
}
