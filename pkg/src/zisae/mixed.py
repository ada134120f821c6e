"""Random-intercept mixed models.

* ``fit_lmm_reml`` -- nested-error linear model y = X b + v_area + e fitted by
  REML, profiled over the variance ratio rho = s2_re / s2_eps.
* ``fit_glmm_logit`` -- logistic model with an area random intercept, fitted by
  maximizing the Laplace approximation of the marginal likelihood.
* ``fit_fh_reml`` -- area-level (Fay-Herriot) model with known sampling
  variances, between-area variance by REML.

All fits take area labels for the units and, optionally, the full ordered list
of areas so that predicted effects line up with a population frame (areas with
no fitting data get an effect of exactly 0).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.special import expit

from . import kernels
from .errors import (ConvergenceError, InsufficientDataError, SchemaError,
                     SeparationError, SingularDesignError)

LOG_RHO_BOUNDS = (-12.0, 12.0)
LOG_S2W_BOUNDS = (-12.0, 8.0)
EPS_FLOOR_REL = 1e-10
FH_FLOOR_REL = 1e-8
_LOG2PI = math.log(2.0 * math.pi)
_P_MAX = np.nextafter(1.0, 0.0)
_P_MIN = np.finfo(float).tiny


@dataclass(frozen=True)
class FitLog:
    method: str
    iterations: int
    converged: bool
    objective: float
    notes: tuple = ()

    def to_dict(self):
        d = asdict(self)
        d["notes"] = list(self.notes)
        return d


def _codes_for(groups, areas):
    groups = [str(g) for g in groups]
    if areas is None:
        areas = tuple(sorted(set(groups)))
    else:
        areas = tuple(str(a) for a in areas)
    index = {a: j for j, a in enumerate(areas)}
    try:
        codes = np.fromiter((index[g] for g in groups), dtype=np.int64, count=len(groups))
    except KeyError as exc:
        raise SchemaError(f"group {exc.args[0]!r} not among the declared areas") from None
    return codes, areas


def _check_design(X, n):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != n:
        raise SchemaError(f"design has shape {X.shape}, expected ({n}, p)")
    if not np.all(np.isfinite(X)):
        raise SchemaError("design matrix has non-finite entries")
    scale = np.max(np.abs(X), axis=0)
    scale[scale == 0] = 1.0
    if np.linalg.matrix_rank(X / scale) < X.shape[1]:
        raise SingularDesignError("design matrix is rank deficient")
    return X


# ---------------------------------------------------------------------------
# Linear mixed model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LmmFit:
    beta: np.ndarray
    sigma2_re: float
    sigma2_eps: float
    area_ids: tuple
    area_effects: np.ndarray
    beta_cov: np.ndarray
    fit_log: FitLog
    n_area: np.ndarray  # fitting sample size per area (0 if absent)
    xbar: np.ndarray  # per-area sample covariate means (J, p); zeros if absent
    ybar: np.ndarray

    @property
    def shrinkage(self) -> np.ndarray:
        """gamma_j = s2_re / (s2_re + s2_eps / n_j); 0 for areas without data."""
        n = self.n_area.astype(float)
        out = np.zeros_like(n)
        m = n > 0
        if self.sigma2_re > 0:
            out[m] = self.sigma2_re / (self.sigma2_re + self.sigma2_eps / n[m])
        return out

    def effect(self, area: str) -> float:
        try:
            return float(self.area_effects[self.area_ids.index(str(area))])
        except ValueError:
            return 0.0

    def predict(self, X, groups) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        u = np.array([self.effect(g) for g in groups])
        return X @ self.beta + u

    def residuals(self, y, X, groups) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) - self.predict(X, groups)


class _RemlProfile:
    """Sufficient statistics and the REML criterion profiled over rho."""

    def __init__(self, y, X, codes, J):
        self.n_obs, self.p = X.shape
        self.dof = self.n_obs - self.p
        n, sx, sy, sxx, sxy, syy = kernels.group_stats(X, y, codes, J)
        self.n, self.sx, self.sy = n.astype(np.float64), sx, sy
        self.XtX, self.Xty, self.yty = sxx.sum(0), sxy.sum(0), float(syy.sum())
        var = float(np.var(y))
        self.floor = EPS_FLOOR_REL * var if var > 0 else EPS_FLOOR_REL
        self.sampled = n > 0

    def terms(self, rho):
        """A = X'H^-1 X, b = X'H^-1 y, Q (residual form), log|H| for H = I + rho Z Z'."""
        c = rho / (1.0 + rho * self.n)
        sxc = self.sx * c[:, None]
        A = self.XtX - sxc.T @ self.sx
        b = self.Xty - sxc.T @ self.sy
        yHy = self.yty - float(np.dot(c, self.sy * self.sy))
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            raise SingularDesignError("X'V^-1 X is not positive definite") from None
        beta = np.linalg.solve(A, b)
        Q = max(yHy - float(b @ beta), 0.0)
        logdetA = 2.0 * float(np.sum(np.log(np.diag(L))))
        logdetH = float(np.sum(np.log1p(rho * self.n)))
        return A, beta, Q, logdetA, logdetH

    def loglik(self, rho, sigma2_eps):
        _, _, Q, logdetA, logdetH = self.terms(rho)
        return -0.5 * (self.dof * (_LOG2PI + math.log(sigma2_eps)) + logdetH + logdetA
                       + Q / sigma2_eps)

    def sigma2_eps(self, rho):
        _, _, Q, _, _ = self.terms(rho)
        return max(Q / self.dof, self.floor)

    def dprofiled(self, rho):
        """d/drho of the profiled criterion (ignores the sigma2_eps floor)."""
        A, beta, Q, _, _ = self.terms(rho)
        d = 1.0 + rho * self.n
        sr = self.sy - self.sx @ beta
        dQ = -float(np.sum(sr * sr / (d * d)))
        sxd = self.sx / d[:, None]
        dlogA = -float(np.trace(np.linalg.solve(A, sxd.T @ sxd)))
        dlogH = float(np.sum(self.n / d))
        if Q <= 0:
            return -0.5 * (dlogH + dlogA)
        return -0.5 * (self.dof * dQ / Q + dlogH + dlogA)

    def profiled(self, rho):
        _, _, Q, logdetA, logdetH = self.terms(rho)
        s2 = max(Q / self.dof, self.floor)
        return -0.5 * (self.dof * (_LOG2PI + math.log(s2)) + logdetH + logdetA + Q / s2)


def reml_objective(sigma2_re, sigma2_eps, y, X, groups) -> float:
    """Restricted log-likelihood of the random-intercept model at given variances."""
    vals = (sigma2_re, sigma2_eps)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("variance components must be finite")
    if sigma2_re < 0 or sigma2_eps <= 0:
        raise ValueError("need sigma2_re >= 0 and sigma2_eps > 0")
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("response has non-finite values")
    X = _check_design(X, y.shape[0])
    codes, areas = _codes_for(groups, None)
    prof = _RemlProfile(y, X, codes, len(areas))
    return prof.loglik(sigma2_re / sigma2_eps, sigma2_eps)


def _argmax_smallest(values, tol):
    best = np.max(values)
    return int(np.flatnonzero(values >= best - tol * (1.0 + abs(best)))[0])


def fit_lmm_reml(y, X, groups, areas=None) -> LmmFit:
    """REML fit of the nested-error regression model.

    The variance ratio is searched over log rho in [-12, 12] on a grid, refined
    with bounded Brent, and compared against the boundary rho = 0, which is
    returned exactly when it is at least as good (ties go to the smaller rho).
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or not np.all(np.isfinite(y)):
        raise SchemaError("response must be a finite vector")
    n = y.shape[0]
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != n or len(groups) != n:
        raise SchemaError("y, X and groups must have the same number of rows")
    p = X.shape[1]
    if n < p + 2:
        raise InsufficientDataError(f"need at least p + 2 = {p + 2} observations, got {n}")
    X = _check_design(X, n)
    codes, areas = _codes_for(groups, areas)
    J = len(areas)
    prof = _RemlProfile(y, X, codes, J)

    grid = np.linspace(*LOG_RHO_BOUNDS, 97)
    vals = np.array([prof.profiled(math.exp(t)) for t in grid])
    at_zero = prof.profiled(0.0)
    nfev = grid.size + 1
    notes = []
    i = _argmax_smallest(vals, 1e-12)
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(lambda t: -prof.profiled(math.exp(t)), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-10, "maxiter": 200})
    nfev += res.nfev
    t_best, v_best = (res.x, -res.fun) if -res.fun >= vals[i] else (grid[i], vals[i])
    converged = bool(res.success)
    # polish: root of the analytic derivative inside the Brent bracket
    step = 1e-4
    a, b = max(t_best - step, lo), min(t_best + step, hi)
    da, db = prof.dprofiled(math.exp(a)), prof.dprofiled(math.exp(b))
    if da > 0 > db:
        t_root = optimize.brentq(lambda t: prof.dprofiled(math.exp(t)), a, b, xtol=1e-15)
        v_root = prof.profiled(math.exp(t_root))
        if v_root >= v_best - 1e-12 * (1.0 + abs(v_best)):
            t_best, v_best = t_root, v_root
        nfev += 2
    rho = math.exp(t_best)
    if at_zero >= v_best - 1e-12 * (1.0 + abs(v_best)):
        rho, v_best = 0.0, at_zero
        notes.append("sigma2_re on boundary (0)")
    elif i == grid.size - 1:
        notes.append("variance ratio at upper search bound")
    A, beta, Q, _, _ = prof.terms(rho)
    s2e = max(Q / prof.dof, prof.floor)
    if Q / prof.dof < prof.floor:
        notes.append("sigma2_eps floored")
    log = FitLog("REML (profiled, grid + Brent)", nfev, converged, float(v_best), tuple(notes))
    if not converged:
        raise ConvergenceError("REML search did not converge", log)
    s2re = rho * s2e
    nj = prof.n
    xbar = np.zeros((J, p))
    ybar = np.zeros(J)
    m = nj > 0
    xbar[m] = prof.sx[m] / nj[m, None]
    ybar[m] = prof.sy[m] / nj[m]
    gamma = np.where(m, rho * nj / (1.0 + rho * nj), 0.0)
    effects = gamma * (ybar - xbar @ beta)
    effects[~m] = 0.0
    cov = s2e * np.linalg.inv(A)
    cov = 0.5 * (cov + cov.T)
    return LmmFit(beta=beta, sigma2_re=float(s2re), sigma2_eps=float(s2e), area_ids=areas,
                  area_effects=effects, beta_cov=cov, fit_log=log,
                  n_area=prof.n.astype(np.int64), xbar=xbar, ybar=ybar)


# ---------------------------------------------------------------------------
# Logistic mixed model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GlmmFit:
    delta: np.ndarray
    sigma2_w: float
    area_ids: tuple
    area_effects: np.ndarray
    fit_log: FitLog
    random_intercept: bool = True

    def effect(self, area: str) -> float:
        try:
            return float(self.area_effects[self.area_ids.index(str(area))])
        except ValueError:
            return 0.0


def logistic(eta):
    """Logistic function clipped to the open interval (0, 1)."""
    return np.clip(expit(eta), _P_MIN, _P_MAX)


def glmm_predict_prob(fit: GlmmFit, x, area) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == fit.delta.shape[0] - 1:
        x = np.r_[1.0, x]
    return float(logistic(float(x @ fit.delta) + fit.effect(area)))


def _standardizer(X):
    """Affine map making non-intercept columns mean 0 / sd 1 (identity if no intercept)."""
    p = X.shape[1]
    T = np.eye(p)
    if p > 1 and np.allclose(X[:, 0], 1.0):
        m = X[:, 1:].mean(0)
        s = X[:, 1:].std(0)
        s[s == 0] = 1.0
        T[0, 1:] = -m / s
        T[1:, 1:] = np.diag(1.0 / s)
    # X_std = X @ T; coefficients transform back as delta = T @ delta_std
    return T


def glmm_laplace_objective(params, z, X, codes, n_areas, w_init=None, tol=1e-12):
    """Laplace log-likelihood and gradient in (delta, log sigma2_w).

    Returns ``(loglik, grad, modes)``.
    """
    params = np.asarray(params, dtype=np.float64)
    p = X.shape[1]
    w0 = np.zeros(n_areas) if w_init is None else w_init
    ll, grad, w, _, _, ok = kernels.laplace_logit(X, z, codes, n_areas, params[:p],
                                                  float(params[p]), w0, tol, 50)
    if not ok:
        raise ConvergenceError("inner Newton for random-effect modes did not converge")
    return ll, grad, w


def _fit_logit_fixed(z, Xs, bound=25.0):
    """Fixed-effects logistic MLE on a standardized design; box-bounded coefficients."""
    p = Xs.shape[1]

    def f(d):
        eta = Xs @ d
        pr = expit(eta)
        return -float(np.sum(z * eta - np.logaddexp(0.0, eta))), -(Xs.T @ (z - pr))

    res = optimize.minimize(f, np.zeros(p), jac=True, method="L-BFGS-B",
                            bounds=[(-bound, bound)] * p,
                            options={"maxiter": 200, "ftol": 1e-14, "gtol": 1e-9})
    at_bound = bool(np.any(np.abs(res.x) >= bound * (1 - 1e-9)))
    return res.x, res, at_bound


def fit_logit_fixed(z, X, groups, areas=None) -> GlmmFit:
    """Logistic regression without random intercept (fallback under separation)."""
    z = np.asarray(z, dtype=np.float64)
    X = _check_design(X, z.shape[0])
    codes, areas = _codes_for(groups, areas)
    T = _standardizer(X)
    ds, res, at_bound = _fit_logit_fixed(z, X @ T)
    notes = ("coefficients at separation bound",) if at_bound else ()
    log = FitLog("fixed-effects logit (L-BFGS-B)", int(res.nit), bool(res.success),
                 float(-res.fun), notes)
    return GlmmFit(delta=T @ ds, sigma2_w=0.0, area_ids=areas, area_effects=np.zeros(len(areas)),
                   fit_log=log, random_intercept=False)


def fit_glmm_logit(z, X, groups, areas=None) -> GlmmFit:
    """Laplace-approximate ML fit of the random-intercept logistic model.

    Inner Newton iterations find each area's posterior mode; the outer problem
    over (delta, log sigma2_w) is solved by L-BFGS-B with the analytic gradient.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or not np.all((z == 0) | (z == 1)):
        raise SchemaError("z must be a 0/1 vector")
    n = z.shape[0]
    if len(groups) != n:
        raise SchemaError("z and groups must have the same length")
    if z.min() == z.max():
        raise SeparationError(f"all indicators equal {int(z[0])}; logistic model not identified")
    X = _check_design(X, n)
    codes, areas = _codes_for(groups, areas)
    J = len(areas)
    p = X.shape[1]
    T = _standardizer(X)
    Xs = X @ T
    d0, _, at_bound = _fit_logit_fixed(z, Xs)
    if at_bound:
        raise SeparationError("fixed-effects logit diverges (complete separation); "
                              "use the fixed-effects fallback")
    state = {"w": np.zeros(J), "inner": 0}

    def negll(theta):
        ll, g, w, _, it, ok = kernels.laplace_logit(Xs, z, codes, J, theta[:p], float(theta[p]),
                                                     state["w"], 1e-10, 50)
        state["inner"] = max(state["inner"], it)
        if not ok:
            return np.inf, np.zeros_like(theta)
        state["w"] = w
        return -ll, -g

    res = optimize.minimize(negll, np.r_[d0, 0.0], jac=True, method="L-BFGS-B",
                            bounds=[(None, None)] * p + [LOG_S2W_BOUNDS],
                            options={"maxiter": 100, "ftol": 1e-14, "gtol": 1e-6})
    theta = res.x
    ll, g, w, _, _, ok = kernels.laplace_logit(Xs, z, codes, J, theta[:p], float(theta[p]),
                                               state["w"], 1e-12, 50)
    notes = []
    pg = g.copy()
    if theta[p] <= LOG_S2W_BOUNDS[0] + 1e-8:
        notes.append("sigma2_w at lower bound")
        pg[p] = min(pg[p], 0.0)
    elif theta[p] >= LOG_S2W_BOUNDS[1] - 1e-8:
        notes.append("sigma2_w at upper bound")
        pg[p] = max(pg[p], 0.0)
    gnorm = float(np.max(np.abs(pg)))
    converged = ok and (bool(res.success) or gnorm < 1e-4)
    log = FitLog("Laplace ML (L-BFGS-B + inner Newton)", int(res.nit), converged, float(ll),
                 tuple(notes) + (f"projected gradient max {gnorm:.2e}",))
    if not converged:
        raise ConvergenceError(f"GLMM fit did not converge: {res.message}", log)
    eta = Xs @ theta[:p] + w[codes]
    if np.max(np.abs(eta)) > 30:
        raise SeparationError("linear predictor diverges; quasi-complete separation")
    return GlmmFit(delta=T @ theta[:p], sigma2_w=float(math.exp(theta[p])), area_ids=areas,
                   area_effects=w, fit_log=log)


# ---------------------------------------------------------------------------
# Fay-Herriot area-level model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FhFit:
    beta: np.ndarray
    sigma2_re: float
    shrinkage: np.ndarray
    D: np.ndarray  # direct variances after flooring
    beta_cov: np.ndarray  # (X'V^-1 X)^-1
    predictions: np.ndarray
    area_ids: tuple
    fit_log: FitLog
    floored: np.ndarray = field(default=None)


def floor_variances(D):
    """Replace non-positive direct variances by 1e-8 * median(positive ones)."""
    D = np.asarray(D, dtype=np.float64)
    pos = D[D > 0]
    eps = FH_FLOOR_REL * (float(np.median(pos)) if pos.size else 1.0)
    floored = D < eps
    return np.where(floored, eps, D), floored


def _fh_terms(s2, direct, D, Xbar):
    v = s2 + D
    Xw = Xbar / v[:, None]
    A = Xbar.T @ Xw
    beta = np.linalg.solve(A, Xw.T @ direct)
    r = direct - Xbar @ beta
    return A, beta, r, v


def fh_reml_objective(sigma2_re, direct, D, Xbar) -> float:
    direct = np.asarray(direct, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    Xbar = np.asarray(Xbar, dtype=np.float64)
    A, _, r, v = _fh_terms(sigma2_re, direct, D, Xbar)
    _, logdetA = np.linalg.slogdet(A)
    J, p = Xbar.shape
    return -0.5 * ((J - p) * _LOG2PI + float(np.sum(np.log(v))) + logdetA + float(np.sum(r * r / v)))


def fit_fh_reml(direct, D, Xbar, area_ids=None) -> FhFit:
    direct = np.asarray(direct, dtype=np.float64)
    Xbar = np.asarray(getattr(Xbar, "means", Xbar), dtype=np.float64)
    J, p = Xbar.shape
    if direct.shape != (J,) or np.shape(D) != (J,):
        raise SchemaError("direct estimates, variances and area means must align")
    if J < p + 2:
        raise InsufficientDataError(f"Fay-Herriot fit needs at least p + 2 = {p + 2} areas, got {J}")
    if np.any(np.asarray(D) < 0) or not np.all(np.isfinite(D)) or not np.all(np.isfinite(direct)):
        raise SchemaError("direct variances must be finite and nonnegative")
    _check_design(Xbar, J)
    D, floored = floor_variances(D)
    notes = [f"{int(floored.sum())} direct variance(s) floored"] if floored.any() else []

    def obj(s2):
        return fh_reml_objective(s2, direct, D, Xbar)

    upper = 10.0 * max(float(np.var(direct)), float(np.max(D)), 1e-12)
    nfev = 0
    for _ in range(6):
        grid = np.linspace(0.0, upper, 401)
        vals = np.array([obj(s) for s in grid])
        nfev += grid.size
        i = _argmax_smallest(vals, 1e-12)
        if i < grid.size - 1:
            break
        upper *= 10.0
    if i == 0:
        lo, hi = 0.0, grid[1]
    else:
        lo, hi = grid[i - 1], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(lambda s: -obj(s), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12 * max(upper, 1.0)})
    nfev += res.nfev
    s2, best = (res.x, -res.fun) if -res.fun >= vals[i] else (grid[i], vals[i])
    if obj(0.0) >= best - 1e-12 * (1.0 + abs(best)):
        s2, best = 0.0, obj(0.0)
        notes.append("sigma2_re on boundary (0)")
    A, beta, _, v = _fh_terms(s2, direct, D, Xbar)
    gamma = s2 / v
    pred = Xbar @ beta + gamma * (direct - Xbar @ beta)
    log = FitLog("FH REML (grid + Brent)", nfev, bool(res.success), float(best), tuple(notes))
    if not res.success:
        raise ConvergenceError("FH REML search did not converge", log)
    areas = tuple(area_ids) if area_ids is not None else tuple(str(j) for j in range(J))
    return FhFit(beta=beta, sigma2_re=float(s2), shrinkage=gamma, D=D,
                 beta_cov=np.linalg.inv(A), predictions=pred, area_ids=areas, fit_log=log,
                 floored=floored)
