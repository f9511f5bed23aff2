"""Regression with range-valued responses by iterative surrogate
transformation: replace each observed range with the conditional mean of
the response given the range under the current fit, refit, repeat.

Noise enters through NoiseModel (core); the conditional means below have
closed forms for Logistic and Gaussian errors and log-domain tail guards so
deep-tail segments stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit
from scipy.stats import norm

from .core import NoiseModel, PrivatizedRecord


class DegenerateSegment(ZeroDivisionError):
    """A middle segment carries no noise probability mass."""


class WrongShape(ValueError):
    """Records lack features or are not 2-way/3-way canonical."""


class LearnerFailure(RuntimeError):
    """The base learner raised during fit or predict."""


class NonFinite(RuntimeError):
    """A surrogate response became non-finite."""


# ---------------------------------------------------------------------------
# Conditional means of the noise given a segment

_TINY = 1e-12


def _logistic_left_mean(s: np.ndarray, scale: float) -> np.ndarray:
    """E(eps | eps <= s) for zero-mean Logistic noise; tail limit s - scale."""
    z = np.asarray(s, dtype=float) / scale
    p = expit(z)
    q = expit(-z)  # 1 - p without cancellation
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where((p > _TINY) & (q > 0.0),
                        q / np.where(p > _TINY, p, 1.0) * log_expit(-z), 0.0)
        full = scale * (log_expit(z) + term)
    return np.where(p < _TINY, s - scale, full)


def _gaussian_left_mean(s: np.ndarray, scale: float) -> np.ndarray:
    z = np.asarray(s, dtype=float) / scale
    return -scale * np.exp(norm.logpdf(z) - norm.logcdf(z))


def conditional_mean_case1(u_tilde, delta, noise: NoiseModel):
    """Mean of the noise given which side of u_tilde it fell on.

    delta=1: E(eps | eps <= u_tilde); delta=0: E(eps | eps > u_tilde).
    Vectorized over u_tilde/delta.
    """
    u = np.asarray(u_tilde, dtype=float)
    d = np.asarray(delta)
    if noise.kind == "logistic":
        left = _logistic_left_mean(u, noise.scale)
        right = -_logistic_left_mean(-u, noise.scale)  # symmetry
    else:
        left = _gaussian_left_mean(u, noise.scale)
        right = -_gaussian_left_mean(-u, noise.scale)
    out = np.where(d == 1, left, right)
    return out if u.ndim or np.asarray(delta).ndim else float(out)


def conditional_mean_case2(u_tilde, v_tilde, delta, gamma, noise: NoiseModel):
    """Mean of the noise given its segment among (-inf,u], (u,v], (v,inf).

    (delta,gamma) = (1,0): left tail at u_tilde; (0,1): middle; (0,0): right
    tail at v_tilde.  Scalar or array inputs.
    """
    u = np.asarray(u_tilde, dtype=float)
    v = np.asarray(v_tilde, dtype=float)
    if np.any(u > v):
        raise ValueError("requires u_tilde <= v_tilde")
    d = np.asarray(delta)
    g = np.asarray(gamma)
    left = conditional_mean_case1(u, np.ones_like(u, dtype=int), noise)
    right = conditional_mean_case1(v, np.zeros_like(v, dtype=int), noise)
    fu = np.asarray(noise.cdf(u), dtype=float)
    fv = np.asarray(noise.cdf(v), dtype=float)
    gu = np.asarray(noise.partial_mean(u), dtype=float)
    gv = np.asarray(noise.partial_mean(v), dtype=float)
    denom = fv - fu
    mid_needed = (d == 0) & (g == 1)
    if np.any(mid_needed & (denom < 1e-300)):
        raise DegenerateSegment("middle segment has no probability mass")
    with np.errstate(divide="ignore", invalid="ignore"):
        middle = np.where(denom > 0, (gv - gu) / np.where(denom > 0, denom, 1.0),
                          0.0)
    out = np.where(d == 1, left, np.where(g == 1, middle, right))
    scalar = not (u.ndim or v.ndim or d.ndim or g.ndim)
    return float(out) if scalar else out


def _segment_second_moment(lo: float, hi: float, noise: NoiseModel) -> float:
    """E(eps^2 | lo < eps <= hi), by closed form (Gaussian) or quadrature."""
    from scipy.integrate import quad

    if noise.kind == "gaussian":
        s = noise.scale

        def h(z):  # integral of x^2 dPhi up to z, standardized
            return norm.cdf(z) - z * norm.pdf(z)

        zl = -np.inf if lo == -np.inf else lo / s
        zh = np.inf if hi == np.inf else hi / s
        num = s * s * (h(zh if np.isfinite(zh) else 40.0)
                       - h(zl if np.isfinite(zl) else -40.0))
        den = norm.cdf(zh) - norm.cdf(zl)
    else:
        s = noise.scale
        a = lo if np.isfinite(lo) else -60.0 * s
        b = hi if np.isfinite(hi) else 60.0 * s

        def integrand(x):
            p = expit(x / s)
            return x * x * p * (1.0 - p) / s

        num, _ = quad(integrand, a, b, limit=200)
        den = float(np.asarray(noise.cdf(hi)) - np.asarray(noise.cdf(lo)))
    if den < 1e-300:
        raise DegenerateSegment("segment has no probability mass")
    return float(num / den)


# ---------------------------------------------------------------------------
# Base learners


class OLSLearner:
    """Least squares with intercept; ridge fallback on rank deficiency."""

    def __init__(self, intercept: bool = True):
        self.intercept = intercept

    def _design(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if self.intercept:
            return np.hstack([np.ones((X.shape[0], 1)), X])
        return X

    def fit(self, X, y):
        A = self._design(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        gram = A.T @ A
        try:
            beta = np.linalg.solve(gram, A.T @ y)
        except np.linalg.LinAlgError:
            beta = np.linalg.solve(gram + 1e-8 * np.eye(gram.shape[0]), A.T @ y)
        return beta

    def predict(self, model, X):
        return self._design(np.asarray(X, dtype=float)) @ model


class KNNLearner:
    """k-nearest-neighbor regression, brute-force Euclidean distances."""

    def __init__(self, k: int = 10):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k

    def fit(self, X, y):
        return (np.atleast_2d(np.asarray(X, dtype=float)),
                np.asarray(y, dtype=float))

    def predict(self, model, X):
        Xtr, ytr = model
        Xq = np.atleast_2d(np.asarray(X, dtype=float))
        k = min(self.k, Xtr.shape[0])
        d = np.sum((Xq[:, None, :] - Xtr[None, :, :]) ** 2, axis=2)
        idx = np.argpartition(d, k - 1, axis=1)[:, :k]
        return np.mean(ytr[idx], axis=1)


# ---------------------------------------------------------------------------
# Dataset shape


@dataclass
class IntervalRegressionDataset:
    """Records flattened into arrays for the iterative fit.

    kind per record: 0 = exact value, 1 = two-way (u, delta),
    2 = three-way (u, v, delta, gamma).
    """

    X: np.ndarray
    kind: np.ndarray
    u: np.ndarray
    v: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    exact: np.ndarray
    records: list

    @classmethod
    def from_records(cls, records) -> "IntervalRegressionDataset":
        rows, kinds, us, vs, ds, gs, exs, kept = [], [], [], [], [], [], [], []
        p = None
        for rec in records:
            if rec.is_null:
                continue
            if not isinstance(rec, PrivatizedRecord) or rec.features is None:
                raise WrongShape("records must carry features")
            if p is None:
                p = len(rec.features)
            elif len(rec.features) != p:
                raise WrongShape("inconsistent feature dimensionality")
            rows.append(rec.features)
            kept.append(rec)
            if rec.exact is not None:
                kinds.append(0)
                us.append(0.0), vs.append(0.0), ds.append(0), gs.append(0)
                exs.append(rec.exact)
                continue
            if rec.topology != "canonical":
                raise WrongShape("regression supports canonical records only")
            if len(rec.anchors) == 1:
                kinds.append(1)
                us.append(rec.anchors[0]), vs.append(rec.anchors[0])
                ds.append(1 if rec.choice == 1 else 0), gs.append(0)
            elif len(rec.anchors) == 2:
                kinds.append(2)
                us.append(rec.anchors[0]), vs.append(rec.anchors[1])
                ds.append(1 if rec.choice == 1 else 0)
                gs.append(1 if rec.choice == 2 else 0)
            else:
                raise WrongShape("only 2-way and 3-way records are supported")
            exs.append(np.nan)
        if not rows:
            raise WrongShape("no informative records")
        return cls(X=np.asarray(rows, dtype=float), kind=np.asarray(kinds),
                   u=np.asarray(us), v=np.asarray(vs),
                   delta=np.asarray(ds), gamma=np.asarray(gs),
                   exact=np.asarray(exs), records=kept)

    def __len__(self) -> int:
        return self.X.shape[0]


@dataclass
class FitReport:
    model: object
    learner: object
    iterations: int
    converged: bool
    surrogate_trace: list = field(default_factory=list)
    sigma_hat: float | None = None
    fitted: np.ndarray | None = None


def _surrogates(data: IntervalRegressionDataset, f_hat: np.ndarray,
                noise: NoiseModel) -> np.ndarray:
    y_tilde = np.empty(len(data))
    exact = data.kind == 0
    y_tilde[exact] = data.exact[exact]
    two = data.kind == 1
    if np.any(two):
        ut = data.u[two] - f_hat[two]
        y_tilde[two] = f_hat[two] + conditional_mean_case1(
            ut, data.delta[two], noise)
    three = data.kind == 2
    if np.any(three):
        ut = data.u[three] - f_hat[three]
        vt = data.v[three] - f_hat[three]
        y_tilde[three] = f_hat[three] + conditional_mean_case2(
            ut, vt, data.delta[three], data.gamma[three], noise)
    return y_tilde


def _check_containment(data: IntervalRegressionDataset, y_tilde: np.ndarray):
    for i, rec in enumerate(data.records):
        if rec.exact is not None:
            continue
        if not rec.chosen_range.contains(float(y_tilde[i])):
            raise AssertionError(
                f"surrogate {y_tilde[i]} escaped range {rec.chosen_range} "
                f"at record {i}")


def _update_sigma(data: IntervalRegressionDataset, f_hat: np.ndarray,
                  noise: NoiseModel) -> float:
    total = 0.0
    for i in range(len(data)):
        if data.kind[i] == 0:
            total += (data.exact[i] - f_hat[i]) ** 2
        elif data.kind[i] == 1:
            ut = data.u[i] - f_hat[i]
            lo, hi = ((-np.inf, ut) if data.delta[i] == 1 else (ut, np.inf))
            total += _segment_second_moment(lo, hi, noise)
        else:
            ut, vt = data.u[i] - f_hat[i], data.v[i] - f_hat[i]
            if data.delta[i] == 1:
                lo, hi = -np.inf, ut
            elif data.gamma[i] == 1:
                lo, hi = ut, vt
            else:
                lo, hi = vt, np.inf
            total += _segment_second_moment(lo, hi, noise)
    return math.sqrt(total / len(data))


def fit_interval_regression(data, learner, noise: NoiseModel,
                            tol: float = 1e-6, max_iter: int = 100,
                            estimate_sigma: bool = False,
                            check_containment: bool = True,
                            callback=None) -> FitReport:
    """Iterative surrogate fit: starting from the zero function, alternate
    between imputing each record's conditional-mean response under the
    current fit and refitting the learner on the imputed values.

    Stops when the largest surrogate change drops below
    tol * (1 + max |surrogate|).  estimate_sigma re-reads the noise scale
    each iteration from the conditional second moments.
    """
    if not isinstance(data, IntervalRegressionDataset):
        data = IntervalRegressionDataset.from_records(data)
    f_hat = np.zeros(len(data))
    y_prev = None
    model = None
    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        y_tilde = _surrogates(data, f_hat, noise)
        if not np.all(np.isfinite(y_tilde)):
            bad = int(np.flatnonzero(~np.isfinite(y_tilde))[0])
            raise NonFinite(f"surrogate became non-finite at record {bad}")
        if check_containment:
            _check_containment(data, y_tilde)
        try:
            model = learner.fit(data.X, y_tilde)
            f_hat = np.asarray(learner.predict(model, data.X), dtype=float)
        except Exception as exc:  # noqa: BLE001 - contract: propagate wrapped
            raise LearnerFailure(str(exc)) from exc
        if estimate_sigma:
            noise = NoiseModel(noise.kind, _update_sigma(data, f_hat, noise))
        if callback is not None:
            callback(it, y_tilde, f_hat, model)
        if y_prev is not None:
            delta = float(np.max(np.abs(y_tilde - y_prev)))
            trace.append(delta)
            if delta <= tol * (1.0 + float(np.max(np.abs(y_tilde)))):
                converged = True
                y_prev = y_tilde
                break
        y_prev = y_tilde
    return FitReport(model=model, learner=learner, iterations=it,
                     converged=converged, surrogate_trace=trace,
                     sigma_hat=noise.scale if estimate_sigma else None,
                     fitted=f_hat)


def predict(report: FitReport, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    try:
        return np.asarray(report.learner.predict(report.model, X), dtype=float)
    except ValueError as exc:
        raise WrongShape(str(exc)) from exc
