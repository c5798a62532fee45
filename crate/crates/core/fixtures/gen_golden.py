"""Regenerates golden.json with arbitrary-precision reference arithmetic.

Run from this directory: python3 gen_golden.py > golden.json
Nothing here imports or calls the Rust engine.
"""
import json

import mpmath
import numpy as np

mpmath.mp.dps = 50


def schedule(steps, beta_start, beta_end):
    betas = np.linspace(beta_start, beta_end, steps)
    out = [1.0]
    acc = 1.0
    for b in betas:
        acc *= 1.0 - float(b)
        out.append(acc)
    return out


def ddim(a_t, a_prev, z, eps):
    a_t, a_prev, z, eps = map(mpmath.mpf, (a_t, a_prev, z, eps))
    coef_z = mpmath.sqrt(a_prev / a_t)
    coef_e = mpmath.sqrt(a_prev) * (mpmath.sqrt(1 / a_prev - 1) - mpmath.sqrt(1 / a_t - 1))
    return float(coef_z * z + coef_e * eps)


def x0(a_t, z, eps):
    a_t, z, eps = map(mpmath.mpf, (a_t, z, eps))
    return float((z - mpmath.sqrt(1 - a_t) * eps) / mpmath.sqrt(a_t))


def iid_eps(a_t, mu, var, z):
    a_t, mu, var, z = map(mpmath.mpf, (a_t, mu, var, z))
    sa = mpmath.sqrt(a_t)
    mean = (sa * var * z + (1 - a_t) * mu) / (a_t * var + 1 - a_t)
    return float((z - sa * mean) / mpmath.sqrt(1 - a_t))


def exp_cov(h, w, var, length):
    n = h * w
    cov = mpmath.matrix(n, n)
    for i in range(n):
        for j in range(n):
            r0, c0 = divmod(i, w)
            r1, c1 = divmod(j, w)
            d = mpmath.sqrt((r0 - r1) ** 2 + (c0 - c1) ** 2)
            cov[i, j] = var * mpmath.exp(-d / length)
    return cov


def corr_eps(a_t, mu, cov, z):
    n = len(z)
    a_t = mpmath.mpf(a_t)
    sa = mpmath.sqrt(a_t)
    m = a_t * cov + (1 - a_t) * mpmath.eye(n)
    r = mpmath.matrix([mpmath.mpf(v) - sa * mu for v in z])
    sol = mpmath.lu_solve(m, r)
    post = cov * sol
    out = []
    for i in range(n):
        mean = mpmath.mpf(mu) + sa * post[i]
        out.append(float((mpmath.mpf(z[i]) - sa * mean) / mpmath.sqrt(1 - a_t)))
    return out


rng = np.random.default_rng(20240415)
golden = {}

golden["schedule_t50"] = {
    "steps": 50,
    "beta_start": 0.00085,
    "beta_end": 0.012,
    "alphas_cumprod": schedule(50, 0.00085, 0.012),
}

golden["ddim_scalar"] = {"a_t": 0.5, "a_prev": 0.8, "z": 1.0, "eps": 0.2,
                         "expected": ddim(0.5, 0.8, 1.0, 0.2)}

tuples = []
for _ in range(100):
    a_t = float(rng.uniform(0.01, 0.99))
    a_prev = float(rng.uniform(a_t, 1.0))
    z = float(rng.normal())
    eps = float(rng.normal())
    tuples.append({"a_t": a_t, "a_prev": a_prev, "z": z, "eps": eps,
                   "expected": ddim(a_t, a_prev, z, eps)})
golden["ddim_tuples"] = tuples

a_t = float(rng.uniform(0.05, 0.95)); z = float(rng.normal()); e = float(rng.normal())
golden["predicted_x0_scalar"] = {"a_t": a_t, "z": z, "eps": e, "expected": x0(a_t, z, e)}

golden["iid_eps_scalar"] = {"a_t": 0.64, "mean": 0.3, "variance": 0.25, "z": 1.0,
                            "expected": iid_eps(0.64, 0.3, 0.25, 1.0)}

zs = [float(v) for v in rng.normal(size=4 * 4 * 2)]
golden["iid_eps_batch"] = {"shape": [4, 4, 2], "a_t": 0.37, "mean": -0.2, "variance": 0.6,
                           "z": zs, "expected": [iid_eps(0.37, -0.2, 0.6, v) for v in zs]}

cov = exp_cov(8, 8, 0.5, 2.0)
zs = [float(v) for v in rng.normal(size=64)]
golden["corr_eps_8x8"] = {"shape": [8, 8, 1], "a_t": 0.42, "mean": 0.1, "variance": 0.5,
                          "length": 2.0, "z": zs, "expected": corr_eps(0.42, 0.1, cov, zs)}

print(json.dumps(golden, indent=1))
