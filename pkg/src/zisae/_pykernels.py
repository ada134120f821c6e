"""Vectorized numpy versions of the compiled kernels.

Used when the Cython extension is unavailable or ``ZISAE_PURE_PYTHON=1``.
Signatures and return values mirror ``_ckernels`` exactly.
"""

import numpy as np
from scipy.special import expit


def group_stats(X, y, codes, n_areas):
    """Per-area n, sum x, sum y, sum x x', sum x y, sum y^2."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    J = int(n_areas)
    p = X.shape[1]
    n = np.bincount(codes, minlength=J).astype(np.int64)
    sy = np.bincount(codes, weights=y, minlength=J)
    syy = np.bincount(codes, weights=y * y, minlength=J)
    sx = np.zeros((J, p))
    sxy = np.zeros((J, p))
    sxx = np.zeros((J, p, p))
    for k in range(p):
        sx[:, k] = np.bincount(codes, weights=X[:, k], minlength=J)
        sxy[:, k] = np.bincount(codes, weights=X[:, k] * y, minlength=J)
        for l in range(k + 1):
            v = np.bincount(codes, weights=X[:, k] * X[:, l], minlength=J)
            sxx[:, k, l] = v
            sxx[:, l, k] = v
    return n, sx, sy, sxx, sxy, syy


def _log1pexp(eta):
    return np.logaddexp(0.0, eta)


def laplace_logit(X, z, codes, n_areas, delta, tau, w_init, tol, max_inner):
    """Laplace log-likelihood of the random-intercept logit model and its gradient.

    Returns ``(loglik, grad, w, hess, iterations, converged)`` where ``grad`` is
    with respect to ``(delta, tau)``, ``tau = log(sigma2_w)``, ``w`` holds the
    per-area posterior modes and ``hess`` the negative second derivative of the
    per-area log integrand at the mode.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    J = int(n_areas)
    s2 = np.exp(tau)
    eta0 = X @ delta
    w = np.array(w_init, dtype=np.float64, copy=True)
    converged = False
    it = 0
    for it in range(1, max_inner + 1):
        pr = expit(eta0 + w[codes])
        g = np.bincount(codes, weights=z - pr, minlength=J) - w / s2
        h = np.bincount(codes, weights=pr * (1.0 - pr), minlength=J) + 1.0 / s2
        step = np.clip(g / h, -10.0, 10.0)
        w += step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    eta = eta0 + w[codes]
    pr = expit(eta)
    v = pr * (1.0 - pr)
    t = v * (1.0 - 2.0 * pr)
    H = np.bincount(codes, weights=v, minlength=J) + 1.0 / s2
    dH = np.bincount(codes, weights=t, minlength=J)
    ll = np.sum(z * eta - _log1pexp(eta)) + np.sum(-w * w / (2.0 * s2) - 0.5 * np.log(s2 * H))
    a = 1.0 / H
    b = 0.5 * dH / (H * H)
    unit = (z - pr) - 0.5 * t * a[codes] + b[codes] * v
    grad = np.empty(X.shape[1] + 1)
    grad[:-1] = X.T @ unit
    grad[-1] = np.sum(w * w / (2.0 * s2) - 0.5 + 1.0 / (2.0 * s2 * H) - b * w / s2)
    return float(ll), grad, w, H, it, converged


def zi_area_means(X, gamma, u, delta, w, codes, n_areas):
    """Fused per-unit product of linear and logistic predictions, averaged by area.

    ``X`` carries the intercept column. Returns ``(means, n_negative, max_linear)``.
    """
    J = int(n_areas)
    lin = X @ gamma + u[codes]
    pr = expit(X @ delta + w[codes])
    pred = lin * pr
    n = np.bincount(codes, minlength=J)
    means = np.bincount(codes, weights=pred, minlength=J) / np.maximum(n, 1)
    neg = np.bincount(codes, weights=(pred < 0).astype(np.float64), minlength=J).astype(np.int64)
    mx = np.full(J, -np.inf)
    np.maximum.at(mx, codes, lin)
    return means, neg, mx
