"""Log-link count regression with fixed offsets.

Poisson and negative-binomial (mean ``mu``, variance ``mu + mu**2 / r``)
regressions are fitted by iteratively reweighted least squares with step
halving. For the negative binomial the size ``r`` is profiled out by a
one-dimensional search over ``log r``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.interpolate import BSpline
from scipy.special import gammaln


class GlmError(RuntimeError):
    """IRLS failed; ``trace`` holds the deviance at each iteration."""

    def __init__(self, msg, trace=()):
        self.trace = list(trace)
        super().__init__(f"{msg}; deviance trace: {[round(d, 6) for d in self.trace[-8:]]}")


# -- natural splines -----------------------------------------------------------------

class NaturalSplineBasis:
    """Natural cubic spline basis without intercept.

    Interior knots sit at quantiles of the training ``x``; the basis is linear
    beyond the boundary knots. Equivalent in span to R's ``splines::ns``.
    """

    def __init__(self, x, df: int):
        x = np.asarray(x, dtype=float)
        if df < 1:
            raise ValueError("df must be >= 1")
        if np.unique(x).size < df + 1:
            raise ValueError(f"natural spline with df={df} needs >= {df + 1} distinct x values")
        self.df = df
        self.boundary = (float(x.min()), float(x.max()))
        n_interior = df - 1
        probs = np.linspace(0, 1, n_interior + 2)[1:-1]
        self.interior = np.quantile(x, probs) if n_interior else np.array([])
        lo, hi = self.boundary
        self.knots = np.concatenate([[lo] * 4, self.interior, [hi] * 4])
        n_basis = len(self.knots) - 4
        self._spline = BSpline(self.knots, np.eye(n_basis), 3, extrapolate=True)
        d2 = self._spline.derivative(2)(np.array([lo, hi]))[:, 1:]
        # columns 3.. of Q span the null space of the boundary curvature constraints
        q, _ = np.linalg.qr(d2.T, mode="complete")
        self._proj = q[:, 2:]

    def _raw(self, x):
        return self._spline(x)[:, 1:] @ self._proj

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi = self.boundary
        out = np.empty((x.size, self.df))
        inside = (x >= lo) & (x <= hi)
        if inside.any():
            out[inside] = self._raw(x[inside])
        for edge, mask in ((lo, x < lo), (hi, x > hi)):
            if mask.any():
                val = self._raw(np.array([edge]))
                slope = (self._spline.derivative(1)(np.array([edge]))[:, 1:]) @ self._proj
                out[mask] = val + (x[mask] - edge)[:, None] * slope
        return out


def natural_spline_basis(x, df: int) -> np.ndarray:
    """Evaluate a ``df``-column natural spline basis at its own training points."""
    return NaturalSplineBasis(x, df)(x)


# -- design -------------------------------------------------------------------------

@dataclass
class DesignMatrix:
    X: np.ndarray
    columns: list[str]
    offset: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.X.shape[1] != len(self.columns):
            raise ValueError(f"{self.X.shape[1]} design columns but {len(self.columns)} names")
        n = self.X.shape[0]
        self.offset = np.zeros(n) if self.offset is None else np.asarray(self.offset, dtype=float).reshape(n)
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.offset))):
            raise ValueError("design matrix and offset must be finite")

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass
class GlmFit:
    columns: list[str]
    coef: np.ndarray
    family: str
    dispersion: float
    converged: bool
    iterations: int
    deviance: float
    loglik: float
    deviance_trace: list[float] = field(default_factory=list)
    aliased: list[str] = field(default_factory=list)

    @property
    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.columns, self.coef.tolist()))


def _loglik(y, mu, family, r):
    if family == "poisson":
        return float(np.sum(y * np.log(np.where(mu > 0, mu, 1.0)) - mu - gammaln(y + 1)))
    return float(np.sum(gammaln(y + r) - gammaln(r) - gammaln(y + 1)
                        + r * np.log(r / (r + mu)) + y * np.log(mu / (r + mu))))


def _deviance(y, mu, family, r):
    ylogy = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
    if family == "poisson":
        return float(2 * np.sum(ylogy - (y - mu)))
    return float(2 * np.sum(ylogy - (y + r) * np.log((y + r) / (mu + r))))


def _variance_factor(mu, family, r):
    # working weight mu / (1 + mu/r) and score scaling 1 / (1 + mu/r)
    return np.ones_like(mu) if family == "poisson" else 1.0 / (1.0 + mu / r)


def _drop_aliased(X, columns):
    if X.shape[1] == 0:
        return np.arange(0)
    _, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0
    rank = int(np.sum(diag > tol))
    return np.sort(piv[:rank])


def _irls(X, y, offset, family, r, beta0=None, tol=1e-8, max_iter=50, max_coef=30.0):
    n, p = X.shape
    if beta0 is None:
        mu = y + 0.1
        eta = np.log(mu)
        beta = None
    else:
        beta = beta0.copy()
        eta = offset + X @ beta
        mu = np.exp(eta)
    dev = _deviance(y, mu, family, r)
    # the data-based start is not a model fit, so it stays out of the trace
    trace = [] if beta is None else [dev]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        vf = _variance_factor(mu, family, r)
        w = mu * vf
        z = eta - offset + (y - mu) / mu
        sw = np.sqrt(w)
        new_beta, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        eta_new = offset + X @ new_beta
        if np.any(~np.isfinite(eta_new)) or np.any(eta_new > 700):
            raise GlmError("linear predictor overflow", trace)
        mu_new = np.exp(eta_new)
        dev_new = _deviance(y, mu_new, family, r)
        halvings = 0
        while beta is not None and (not np.isfinite(dev_new) or dev_new > dev * (1 + 1e-12) + 1e-12) and halvings < 30:
            new_beta = 0.5 * (new_beta + beta)
            eta_new = offset + X @ new_beta
            mu_new = np.exp(eta_new)
            dev_new = _deviance(y, mu_new, family, r)
            halvings += 1
        if np.any(np.abs(new_beta) > max_coef):
            raise GlmError(f"coefficient diverged (|beta| > {max_coef}); likely separation", trace + [dev_new])
        change = abs(dev_new - dev) / (abs(dev_new) + 0.1)
        beta, eta, mu, dev = new_beta, eta_new, mu_new, dev_new
        trace.append(dev)
        # collapsing fitted means signal separation: keep iterating so the coefficient bound trips
        if change < tol and np.min(mu) > 1e-8:
            score = X.T @ ((y - mu) * _variance_factor(mu, family, r))
            if np.max(np.abs(score), initial=0.0) < 1e-6 or change == 0.0:
                converged = True
                break
    return beta, mu, dev, trace, converged, it


def fit_glm(design: DesignMatrix, y, family: str = "poisson", tol: float = 1e-8,
            max_iter: int = 50, dispersion: float | None = None) -> GlmFit:
    """Maximum-likelihood log-link regression of counts ``y`` on ``design``.

    ``family`` is ``"poisson"`` or ``"negbin"``. For ``"negbin"`` the size is
    estimated unless ``dispersion`` fixes it. Aliased columns are dropped
    and reported with coefficient 0.
    """
    if family not in ("poisson", "negbin"):
        raise ValueError(f"unknown family {family!r}")
    y = np.asarray(y, dtype=float)
    if y.shape != (design.n,):
        raise ValueError("response length does not match design rows")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("response must be finite and non-negative")
    keep = _drop_aliased(design.X, design.columns)
    X = design.X[:, keep]
    aliased = [c for i, c in enumerate(design.columns) if i not in set(keep.tolist())]

    if family == "poisson":
        beta, mu, dev, trace, conv, it = _irls(X, y, design.offset, "poisson", np.inf, tol=tol, max_iter=max_iter)
        r = np.inf
    elif dispersion is not None:
        r = float(dispersion)
        beta, mu, dev, trace, conv, it = _irls(X, y, design.offset, "negbin", r, tol=tol, max_iter=max_iter)
    else:
        beta_p, *_ = _irls(X, y, design.offset, "poisson", np.inf, tol=tol, max_iter=max_iter)
        state = {"beta": beta_p}

        def negll(log_r):
            b, m, *_ = _irls(X, y, design.offset, "negbin", np.exp(log_r), beta0=state["beta"], tol=tol, max_iter=max_iter)
            state["beta"] = b
            return -_loglik(y, m, "negbin", np.exp(log_r))

        res = optimize.minimize_scalar(negll, bounds=(np.log(1e-3), np.log(1e8)), method="bounded",
                                       options={"xatol": 1e-6})
        r = float(np.exp(res.x))
        beta, mu, dev, trace, conv, it = _irls(X, y, design.offset, "negbin", r, beta0=state["beta"], tol=tol, max_iter=max_iter)
    if not conv:
        raise GlmError(f"IRLS did not converge in {max_iter} iterations", trace)
    coef = np.zeros(len(design.columns))
    coef[keep] = beta
    return GlmFit(list(design.columns), coef, family, r, conv, it, dev,
                  _loglik(y, mu, family, r), trace, aliased)


def predict_mean(fit: GlmFit, design: DesignMatrix) -> np.ndarray:
    """``exp(X beta + offset)`` with columns matched by name."""
    lookup = fit.coefficients
    unknown = [c for c in design.columns if c not in lookup]
    if unknown:
        raise KeyError(f"design columns not in fit: {unknown}")
    beta = np.array([lookup[c] for c in design.columns])
    return np.exp(design.X @ beta + design.offset)


def score(fit: GlmFit, design: DesignMatrix, y) -> np.ndarray:
    """Gradient of the log-likelihood in the coefficients at the fitted values."""
    mu = predict_mean(fit, design)
    return design.X.T @ ((np.asarray(y, float) - mu) * _variance_factor(mu, fit.family, fit.dispersion))


def design_from_columns(cols: dict[str, Sequence[float]], offset=None) -> DesignMatrix:
    names = list(cols)
    X = np.column_stack([np.asarray(cols[c], dtype=float) for c in names]) if names else np.zeros((len(offset), 0))
    return DesignMatrix(X, names, offset)
