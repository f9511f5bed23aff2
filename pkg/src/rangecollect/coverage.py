"""Privacy quantification: individual and mechanism-level coverage, the
plug-in two-way estimator, the ensemble leakage bound, and anchor design
that hits a requested coverage level.

A "prior" here is anything exposing cdf(x) (vectorized) and ppf(q): a
StepCDF, a scipy frozen distribution, or a user object.  Sampling always
goes through ppf(uniform) so the same rng stream gives the same draws
regardless of the prior's own sampling machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import NEG_INF, POS_INF, Range, StepCDF
from .mechanisms import (
    MechanismConfig,
    TwoGaussianMixture,
    privatize,
    privatize_selective,
)


class Unachievable(ValueError):
    """The requested coverage target is outside the reachable set."""


@dataclass
class CoverageReport:
    """Mechanism coverage estimate with provenance.

    prior_tag records where the reference distribution came from
    ("known-cdf", "npmle-plug-in", or "empirical"); leakage is 1 - tau.
    """

    tau: float
    stderr: float
    n: int
    prior_tag: str = "known-cdf"
    per_record: np.ndarray | None = None
    emission_rate: float | None = None

    @property
    def leakage(self) -> float:
        return 1.0 - self.tau

    def to_dict(self) -> dict:
        doc = {"tau": self.tau, "leakage": self.leakage, "stderr": self.stderr,
               "n": self.n, "prior": self.prior_tag}
        if self.emission_rate is not None:
            doc["emission_rate"] = self.emission_rate
        return doc


def prior_cdf(prior, x):
    """Evaluate a prior's CDF with the extended-real conventions."""
    x_arr = np.asarray(x, dtype=float)
    out = np.empty_like(x_arr)
    finite = np.isfinite(x_arr)
    out[finite] = np.asarray(prior.cdf(x_arr[finite]), dtype=float)
    out[x_arr == NEG_INF] = 0.0
    out[x_arr == POS_INF] = 1.0
    return out if x_arr.ndim else float(out)


def prior_mass(prior, r: Range) -> float:
    total = sum(prior_cdf(prior, p.hi) - prior_cdf(prior, p.lo) for p in r.parts)
    return min(max(total, 0.0), 1.0)


def prior_sample(prior, rng: np.random.Generator, size: int) -> np.ndarray:
    return np.asarray(prior.ppf(rng.uniform(size=size)), dtype=float)


def individual_coverage(rec, prior) -> float:
    """Prior mass of the record's chosen range; zero once the exact value
    is disclosed (a point carries no ambiguity under a continuous prior).
    """
    if rec.exact is not None:
        return 0.0
    return prior_mass(prior, rec.chosen_range)


def coverage_estimator_case1(anchors, prior) -> float:
    """Plug-in coverage for two-way records: mean of F(u)^2 + (1-F(u))^2.

    Consistent for the true coverage when F is the data CDF; never drops
    below 1/2 by the Cauchy-Schwarz bound.
    """
    u = np.asarray(anchors, dtype=float)
    if u.size == 0:
        raise ValueError("need at least one anchor")
    f = np.asarray(prior_cdf(prior, u), dtype=float)
    return float(np.mean(f ** 2 + (1.0 - f) ** 2))


def _coverages_vectorized(cfg: MechanismConfig, prior, y: np.ndarray,
                          rng: np.random.Generator) -> np.ndarray:
    """Per-draw chosen-range coverages without building record objects."""
    n = y.size
    anchors = cfg.sampler.draw_matrix(rng, n)
    fa = np.asarray(prior_cdf(prior, anchors), dtype=float)
    if cfg.topology == "canonical":
        # choice cell is (q_{c-1}, q_c]; c = number of anchors strictly below y
        c = np.sum(anchors < y[:, None], axis=1)
        padded = np.hstack([np.zeros((n, 1)), fa, np.ones((n, 1))])
        rows = np.arange(n)
        return padded[rows, c + 1] - padded[rows, c]
    # ring: wrap range when y is at-or-below t1 or above tq
    wrap = (y <= anchors[:, 0]) | (y > anchors[:, -1])
    c = np.sum(anchors < y[:, None], axis=1)
    c = np.clip(c, 1, cfg.m - 1)
    rows = np.arange(n)
    interior = fa[rows, c] - fa[rows, c - 1]
    wrap_mass = fa[:, 0] + 1.0 - fa[:, -1]
    return np.where(wrap, wrap_mass, interior)


def mechanism_coverage_mc(cfg: MechanismConfig, prior, n_draws: int,
                          rng: np.random.Generator,
                          prior_tag: str = "known-cdf") -> CoverageReport:
    """Monte Carlo coverage: average individual coverage over fresh draws
    of (Y, anchors).  Selective configs average over emitted records only
    and report the emission rate alongside.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    y = prior_sample(prior, rng, n_draws)
    if cfg.selective is None and cfg.acceptable is None:
        cov = _coverages_vectorized(cfg, prior, y, rng)
        emission = None
    else:
        vals = []
        emitted = 0
        for yi in y:
            if cfg.selective is not None:
                rec = privatize_selective(float(yi), cfg, rng)
                if rec.is_null:
                    continue
            else:
                rec = privatize(float(yi), cfg, rng)
            emitted += 1
            vals.append(individual_coverage(rec, prior))
        emission = emitted / n_draws
        if not vals:
            return CoverageReport(tau=float("nan"), stderr=float("nan"), n=0,
                                  prior_tag=prior_tag, emission_rate=emission)
        cov = np.asarray(vals)
    tau = float(np.mean(cov))
    stderr = float(np.std(cov, ddof=1) / math.sqrt(cov.size)) if cov.size > 1 else 0.0
    return CoverageReport(tau=tau, stderr=stderr, n=int(cov.size),
                          prior_tag=prior_tag, per_record=cov,
                          emission_rate=emission)


def composition_bound_check(configs, prior, n_draws: int,
                            rng: np.random.Generator, correlate=None):
    """Compare ensemble leakage against the sum of member leakages.

    Uses common random numbers: one shared Y sample, per-config anchors.
    correlate(j, anchors_so_far, rng) may supply config j's anchor matrix
    to model adaptively chosen mechanisms; None means independent draws.
    Returns (lhs, rhs, holds) with holds = lhs <= rhs + 3 * stderr of the
    per-draw difference.
    """
    if not configs:
        raise ValueError("need at least one config")
    y = prior_sample(prior, rng, n_draws)
    n = n_draws
    member_cov = []
    anchor_sets = []
    for j, cfg in enumerate(configs):
        a = None
        if correlate is not None:
            a = correlate(j, list(anchor_sets), rng)
        if a is None:
            a = cfg.sampler.draw_matrix(rng, n)
        a = np.asarray(a, dtype=float)
        anchor_sets.append(a)
        member_cov.append(_coverage_given_anchors(cfg, prior, y, a))
    member_cov = np.asarray(member_cov)  # (k, n)

    # ensemble chosen range = intersection of chosen ranges.  When every
    # member is canonical the intersection is just the cell of the pooled
    # canonical partition containing y, which vectorizes; otherwise fall
    # back to per-draw range algebra.
    if all(cfg.topology == "canonical" for cfg in configs):
        pooled = np.sort(np.hstack(anchor_sets), axis=1)
        fa = np.asarray(prior_cdf(prior, pooled), dtype=float)
        c = np.sum(pooled < y[:, None], axis=1)
        padded = np.hstack([np.zeros((n, 1)), fa, np.ones((n, 1))])
        rows = np.arange(n)
        ens_cov = padded[rows, c + 1] - padded[rows, c]
    else:
        ens_cov = np.empty(n)
        for i in range(n):
            joint = None
            for j, cfg in enumerate(configs):
                r = _chosen_range(cfg, anchor_sets[j][i], float(y[i]))
                joint = r if joint is None else joint.intersect(r)
            ens_cov[i] = prior_mass(prior, joint)

    diff = (1.0 - ens_cov) - np.sum(1.0 - member_cov, axis=0)
    lhs = float(np.mean(1.0 - ens_cov))
    rhs = float(np.mean(np.sum(1.0 - member_cov, axis=0)))
    stderr = float(np.std(diff, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return lhs, rhs, lhs <= rhs + 3.0 * stderr


def _chosen_range(cfg: MechanismConfig, anchors: np.ndarray, y: float) -> Range:
    p = cfg.partition_for(anchors)
    return p.ranges[p.locate(y) - 1]


def _coverage_given_anchors(cfg, prior, y, anchors):
    fa = np.asarray(prior_cdf(prior, anchors), dtype=float)
    n = y.size
    if cfg.topology == "canonical":
        c = np.sum(anchors < y[:, None], axis=1)
        padded = np.hstack([np.zeros((n, 1)), fa, np.ones((n, 1))])
        rows = np.arange(n)
        return padded[rows, c + 1] - padded[rows, c]
    wrap = (y <= anchors[:, 0]) | (y > anchors[:, -1])
    c = np.clip(np.sum(anchors < y[:, None], axis=1), 1, cfg.m - 1)
    rows = np.arange(n)
    interior = fa[rows, c] - fa[rows, c - 1]
    return np.where(wrap, fa[:, 0] + 1.0 - fa[:, -1], interior)


# ---------------------------------------------------------------------------
# Anchor design: hit a target coverage with a two-Gaussian anchor mixture


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(201)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(2.0 * math.pi)


def _case1_component_tau(prior, mu: float, sigma: float) -> float:
    """E[F(U)^2 + (1-F(U))^2] for U ~ N(mu, sigma^2)."""
    u = mu + sigma * _GH_NODES
    f = np.asarray(prior_cdf(prior, u), dtype=float)
    return float(np.dot(_GH_WEIGHTS, f ** 2 + (1.0 - f) ** 2))


def _case2_pair_tau(prior, mu_a: float, mu_b: float, sigma: float) -> float:
    """Three-way coverage when the two anchors come from N(mu_a, s), N(mu_b, s)."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(61)
    weights = weights / math.sqrt(2.0 * math.pi)
    ua = mu_a + sigma * nodes
    ub = mu_b + sigma * nodes
    fa = np.asarray(prior_cdf(prior, ua), dtype=float)
    fb = np.asarray(prior_cdf(prior, ub), dtype=float)
    lo = np.minimum(fa[:, None], fb[None, :])
    hi = np.maximum(fa[:, None], fb[None, :])
    h = lo ** 2 + (hi - lo) ** 2 + (1.0 - hi) ** 2
    return float(weights @ h @ weights)


def design_anchor_for_coverage(target_tau: float, prior,
                               family: str = "case1",
                               tol: float = 1e-3) -> TwoGaussianMixture:
    """Two-Gaussian anchor mixture whose coverage matches target_tau.

    One component sits at the prior median (coverage ~1/2 for two-way);
    the other sits deep in the lower tail (coverage ~1).  Coverage is
    continuous in the mixing weight, so bisection on pi1 lands within tol.
    """
    if family not in ("case1", "case2"):
        raise ValueError("family must be 'case1' or 'case2'")
    lo_floor = 0.5 if family == "case1" else 1.0 / 3.0
    if not (lo_floor < target_tau < 1.0):
        raise Unachievable(
            f"target {target_tau} outside the open interval ({lo_floor}, 1)")
    mu1 = float(prior.ppf(0.5))
    mu2 = float(prior.ppf(0.001))
    span = float(prior.ppf(0.999)) - float(prior.ppf(0.001))
    sigma = 1e-3 * span

    def tau_of(pi1: float, sig: float) -> float:
        if family == "case1":
            a = _case1_component_tau(prior, mu1, sig)
            b = _case1_component_tau(prior, mu2, sig)
            return pi1 * a + (1.0 - pi1) * b
        t11 = _case2_pair_tau(prior, mu1, mu1, sig)
        t12 = _case2_pair_tau(prior, mu1, mu2, sig)
        t22 = _case2_pair_tau(prior, mu2, mu2, sig)
        return pi1 ** 2 * t11 + 2 * pi1 * (1 - pi1) * t12 + (1 - pi1) ** 2 * t22

    floor = 1e-4 * span
    while tau_of(0.0, sigma) < target_tau and sigma > floor:
        sigma = max(sigma / 4.0, floor)
    t_all_median = tau_of(1.0, sigma)
    t_all_tail = tau_of(0.0, sigma)
    lo_t, hi_t = min(t_all_median, t_all_tail), max(t_all_median, t_all_tail)
    if not (lo_t <= target_tau <= hi_t):
        raise Unachievable(
            f"target {target_tau} outside reachable [{lo_t:.4f}, {hi_t:.4f}] "
            "for the median-plus-tail mixture family")
    # tau decreases as pi1 grows (more mass at the median component)
    lo_p, hi_p = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo_p + hi_p)
        t = tau_of(mid, sigma)
        if abs(t - target_tau) <= 0.1 * tol:
            lo_p = hi_p = mid
            break
        if t > target_tau:
            lo_p = mid
        else:
            hi_p = mid
    pi1 = 0.5 * (lo_p + hi_p)
    count = 1 if family == "case1" else 2
    return TwoGaussianMixture(pi1=pi1, mu1=mu1, mu2=mu2, sigma=sigma, count=count)
