"""Independent reference values for the C++ tests.

Everything here is written from the model definitions with numpy, scipy and
jax; nothing calls into the C++ library. Run once and commit the output:

    python3 tests/oracles/derive_values.py > tests/oracles/values.json
"""

import json
import math

import jax
import jax.numpy as jnp
import numpy as np
from scipy import integrate, optimize

jax.config.update("jax_enable_x64", True)

RNG = np.random.default_rng(20240611)
JITTER = 1e-10  # relative diagonal jitter the library always adds to k(z, z)


def se(a, b, variance, lengthscale):
    d = np.subtract.outer(np.asarray(a, float), np.asarray(b, float))
    return variance * np.exp(-0.5 * d**2 / lengthscale**2)


def kernel_values():
    return {"se_0_1": float(se([0.0], [1.0], 1.0, 1.0)[0, 0])}


def kl_values():
    # KL(q || p) for scalar Gaussians by Monte Carlo and by quadrature.
    out = {}
    for name, (mq, vq) in {"shift": (1.0, 1.0), "wide": (0.0, 2.0)}.items():
        def integrand(t):
            lq = -0.5 * math.log(2 * math.pi * vq) - 0.5 * (t - mq) ** 2 / vq
            lp = -0.5 * math.log(2 * math.pi) - 0.5 * t**2
            return math.exp(lq) * (lq - lp)
        val, _ = integrate.quad(integrand, -40, 40, limit=200)
        draws = RNG.normal(mq, math.sqrt(vq), 1_000_000)
        terms = (-0.5 * np.log(vq) - 0.5 * (draws - mq) ** 2 / vq) + 0.5 * draws**2
        out[name] = {"mean": mq, "variance": vq, "quadrature": val, "mc": float(terms.mean()),
                     "mc_se": float(terms.std(ddof=1) / math.sqrt(terms.size))}
    return out


def conditional_values():
    # Brute-force joint Gaussian conditioning of (f(x), u) with u = 1 at z = 0.
    z, x = 0.0, 1.0
    joint = se([x, z], [x, z], 1.0, 1.0)
    mean = joint[0, 1] / joint[1, 1] * 1.0
    var = joint[0, 0] - joint[0, 1] ** 2 / joint[1, 1]
    # Integrating u ~ N(1, 0.25) out by Monte Carlo (law of total variance).
    u = RNG.normal(1.0, 0.5, 2_000_000)
    f = joint[0, 1] / joint[1, 1] * u + math.sqrt(var) * RNG.standard_normal(u.size)
    return {"given_u": {"mean": mean, "variance": var},
            "marginal": {"mean_closed": joint[0, 1], "variance_closed": var + joint[0, 1] ** 2 * 0.25,
                         "mc_mean": float(f.mean()), "mc_variance": float(f.var(ddof=1)),
                         "mc_samples": int(u.size)}}


def chain_hand(k1, k2, z1, z2, b1, c1, a2, b2, c2, x, f1, identity_first):
    # L = 2, M = 1, N = 1. Layer 2 has a zero mean; layer 1 optionally the identity.
    mean_u = np.array([b1, a2 * b1 + b2])
    cov_u = np.array([[c1**2, a2 * c1**2], [a2 * c1**2, a2**2 * c1**2 + c2**2]])
    chol = np.linalg.cholesky(cov_u)

    kzz1 = se([z1], [z1], *k1)[0, 0] * (1 + JITTER)
    kxz1 = se([x], [z1], *k1)[0, 0]
    w1 = kxz1 / kzz1
    v1 = se([x], [x], *k1)[0, 0] - kxz1**2 / kzz1

    kzz2 = se([z2], [z2], *k2)[0, 0] * (1 + JITTER)
    kfz2 = se([f1], [z2], *k2)[0, 0]
    w2 = kfz2 / kzz2
    v2 = se([f1], [f1], *k2)[0, 0] - kfz2**2 / kzz2

    t, w = np.polynomial.hermite.hermgauss(80)
    t1, t2 = np.meshgrid(t, t, indexing="ij")
    ww = np.outer(w, w) / math.pi
    e = np.stack([t1.ravel(), t2.ravel()]) * math.sqrt(2)
    u = mean_u[:, None] + chol @ e
    ww = ww.ravel()

    # Layer 1 moments: f1 | u1 ~ N(x + w1 (u1 - z1), v1).
    m1 = (x + w1 * (u[0] - z1)) if identity_first else w1 * u[0]
    layer1_mean = float(np.sum(ww * m1))
    layer1_var = float(np.sum(ww * (v1 + m1**2)) - layer1_mean**2)

    # Posterior weights on (u1, u2) after observing f1.
    lik = np.exp(-0.5 * (f1 - m1) ** 2 / v1) / math.sqrt(2 * math.pi * v1)
    post = ww * lik
    post /= post.sum()
    m2 = w2 * u[1]
    layer2_mean = float(np.sum(post * m2))
    layer2_var = float(np.sum(post * (v2 + m2**2)) - layer2_mean**2)
    return {"kernel1": {"variance": k1[0], "lengthscale": k1[1]},
            "kernel2": {"variance": k2[0], "lengthscale": k2[1]},
            "z1": z1, "z2": z2, "b1": b1, "c1": c1, "a2": a2, "b2": b2, "c2": c2, "x": x, "f1": f1,
            "identity_first": identity_first,
            "layer1": {"mean": layer1_mean, "variance": layer1_var},
            "layer2": {"mean": layer2_mean, "variance": layer2_var},
            "nodes_per_dim": int(t.size)}


def counterexample():
    # Var[f(x*)] with f | u = 0 at location u, unit SE kernel, x* ~ N(mu, s2):
    # E[1 - k(x*, u)^2] by quadrature, derivative in s2 by differencing the quadrature.
    def variance(gamma, u, mu, s2):
        if s2 == 0:
            return 1 - math.exp(-((mu - u) ** 2) / gamma**2)
        sd = math.sqrt(s2)
        f = lambda t: math.exp(-((mu + sd * t - u) ** 2) / gamma**2) * math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
        q, _ = integrate.quad(f, -12, 12, epsabs=1e-14, epsrel=1e-13, limit=400)
        return 1 - q

    cases = []
    for gamma, u, mu in [(1.0, 0.0, 1.0), (2.0, 0.0, 1.0), (math.sqrt(2.0), 0.0, 1.0), (0.7, 0.3, -0.4)]:
        h = 1e-5
        deriv = (-variance(gamma, u, mu, 2 * h) + 4 * variance(gamma, u, mu, h) - 3 * variance(gamma, u, mu, 0)) / (2 * h)
        cases.append({"gamma": gamma, "u": u, "mu_star": mu, "variance_at_0": variance(gamma, u, mu, 0),
                      "variance_at_0p1": variance(gamma, u, mu, 0.1), "derivative_at_0": deriv})
    return cases


def meanfield_l1_bound(theta, x, y, z):
    """Single-layer variational bound in the library's raw parameterisation.

    Block order: m (M), chol diag (softplus + 1e-10), chol strict lower
    (column-major), log kernel variance, log lengthscale, log(noise - 1e-6).
    Zero mean function.
    """
    M = z.shape[0]
    nl = M * (M - 1) // 2
    m = theta[:M]
    diag = 1e-10 + jax.nn.softplus(theta[M:2 * M])
    lower = theta[2 * M:2 * M + nl]
    variance = jnp.exp(theta[2 * M + nl])
    lengthscale = jnp.exp(theta[2 * M + nl + 1])
    noise = 1e-6 + jnp.exp(theta[2 * M + nl + 2])

    rows, cols = [], []
    for j in range(M):
        for i in range(j + 1, M):
            rows.append(i)
            cols.append(j)
    L = jnp.diag(diag).at[jnp.array(rows, dtype=int), jnp.array(cols, dtype=int)].set(lower)
    S = L @ L.T

    def k(a, b):
        return variance * jnp.exp(-0.5 * (a[:, None] - b[None, :]) ** 2 / lengthscale**2)

    kzz = k(z, z)
    kzz = kzz + JITTER * jnp.trace(kzz) / M * jnp.eye(M)
    kxz = k(x, z)
    A = jnp.linalg.solve(kzz, kxz.T).T  # N x M
    mu = A @ m
    var = variance - jnp.sum(A * kxz, axis=1) + jnp.sum((A @ S) * A, axis=1)
    ell = jnp.sum(-0.5 * jnp.log(2 * jnp.pi * noise) - 0.5 * (y - mu) ** 2 / noise - 0.5 * var / noise)
    kinv_s = jnp.linalg.solve(kzz, S)
    kl = 0.5 * (jnp.trace(kinv_s) + m @ jnp.linalg.solve(kzz, m) - M
                + jnp.linalg.slogdet(kzz)[1] - 2 * jnp.sum(jnp.log(diag)))
    return ell - kl


def gradient_points(N, M, count):
    x = np.linspace(-1.0, 1.0, N)
    y = np.sin(2 * math.pi * 0.5 * x) + 0.1 * RNG.standard_normal(N)
    z = np.linspace(-0.9, 0.9, M)
    nl = M * (M - 1) // 2
    grad = jax.jit(jax.grad(lambda t: meanfield_l1_bound(t, jnp.asarray(x), jnp.asarray(y), jnp.asarray(z))))
    value = jax.jit(lambda t: meanfield_l1_bound(t, jnp.asarray(x), jnp.asarray(y), jnp.asarray(z)))
    points = []
    for _ in range(count):
        theta = np.concatenate([
            RNG.normal(0, 1, M),
            RNG.uniform(-3.0, 0.0, M),
            RNG.normal(0, 0.1, nl),
            [RNG.uniform(-0.5, 0.5)],
            [math.log(RNG.uniform(0.4, 1.0))],
            [math.log(RNG.uniform(0.01, 0.1))],
        ])
        points.append({"theta": theta.tolist(), "elbo": float(value(theta)),
                       "gradient": np.asarray(grad(theta)).tolist()})
    return {"x": x.tolist(), "y": y.tolist(), "z": z.tolist(), "points": points}


def exact_evidence():
    # Noiseless sine, N = 20 on [-0.5, 0.5]; noise variance frozen at 1e-6.
    n, noise = 20, 1e-6
    x = np.linspace(-0.5, 0.5, n)
    y = np.sin(2 * math.pi * x)

    def log_evidence(log_var, log_ls):
        K = se(x, x, math.exp(log_var), math.exp(log_ls)) + noise * np.eye(n)
        L = np.linalg.cholesky(K)
        a = np.linalg.solve(L.T, np.linalg.solve(L, y))
        return float(-0.5 * y @ a - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi))

    best = None
    for lv in np.linspace(-3, 4, 71):
        for ll in np.linspace(-3, 1, 81):
            try:
                v = log_evidence(lv, ll)
            except np.linalg.LinAlgError:
                continue
            if best is None or v > best[0]:
                best = (v, lv, ll)
    res = optimize.minimize(lambda p: -log_evidence(*p), x0=[best[1], best[2]], method="Nelder-Mead",
                            options={"xatol": 1e-8, "fatol": 1e-10})
    return {"n": n, "noise_variance": noise, "log_evidence": float(-res.fun),
            "variance": math.exp(res.x[0]), "lengthscale": math.exp(res.x[1]),
            "grid_log_evidence": best[0]}


def main():
    out = {
        "kernel": kernel_values(),
        "kl": kl_values(),
        "conditional": conditional_values(),
        # z = 0, unit kernels, zero means, S11 = 0.5, S21 = 0.2, S22 = 0.5, m = 0.
        "chain_hand": chain_hand((1.0, 1.0), (1.0, 1.0), 0.0, 0.0, 0.0, math.sqrt(0.5), 0.4, 0.0,
                                 math.sqrt(0.42), 0.7, 0.4, False),
        "chain_general": chain_hand((1.3, 0.8), (0.9, 1.1), 0.2, -0.1, 0.3, 0.7, 0.5, -0.2, 0.6,
                                         0.5, 0.9, True),
        "counterexample": counterexample(),
        "gradient_l1": gradient_points(15, 5, 20),
        "exact_evidence": exact_evidence(),
        "gradient_l1_small": gradient_points(4, 3, 3),
    }
    print(json.dumps(out, indent=1))


if __name__ == "__main__":
    main()
