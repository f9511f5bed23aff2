"""Privatization mechanisms: turn a raw value into a record under two-way,
m-way, ring, ensemble, pullback, selective, and progressive schemes.

Every mechanism is pure given (y, config, rng): identical seeds give
identical records.  Batch callers derive one rng stream per record index
from a master seed so parallel privatization stays deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .core import (
    EMPTY_RANGE,
    NEG_INF,
    POS_INF,
    Interval,
    NullRecord,
    Partition,
    PrivatizedRecord,
    Range,
    StepCDF,
    canonical_partition,
    normalize_parts,
    ring_partition,
)

MAX_TIE_REDRAWS = 100


class InconsistentRecords(ValueError):
    """Two records cannot describe the same underlying value."""


class NonMonotone(ValueError):
    """A transform descriptor failed the monotonicity probe."""


class SessionClosed(RuntimeError):
    """A progressive session was stepped after reaching a terminal state."""


# ---------------------------------------------------------------------------
# Anchor samplers


class AnchorSampler:
    """Base: draws `count` i.i.d. anchors, sorted ascending, ties redrawn.

    Anchors are always independent of the value being privatized.
    """

    count: int

    def _raw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        for _ in range(MAX_TIE_REDRAWS):
            a = np.sort(self._raw(rng, self.count))
            if a.size < 2 or np.all(np.diff(a) > 0):
                return a
        raise RuntimeError("could not draw distinct anchors after 100 attempts")

    def draw_matrix(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n rows of sorted anchors; vectorized, ties resolved row-wise."""
        a = np.sort(self._raw(rng, n * self.count).reshape(n, self.count), axis=1)
        if self.count >= 2:
            bad = np.where(np.any(np.diff(a, axis=1) <= 0, axis=1))[0]
            for i in bad:
                a[i] = self.draw(rng)
        return a

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass
class UniformAnchors(AnchorSampler):
    a: float
    b: float
    count: int = 1

    def _raw(self, rng, size):
        return rng.uniform(self.a, self.b, size=size)

    def to_dict(self):
        return {"kind": "uniform", "a": self.a, "b": self.b, "count": self.count}


@dataclass
class LogisticAnchors(AnchorSampler):
    loc: float = 0.0
    scale: float = 1.0
    count: int = 1

    def _raw(self, rng, size):
        return rng.logistic(self.loc, self.scale, size=size)

    def to_dict(self):
        return {"kind": "logistic", "loc": self.loc, "scale": self.scale,
                "count": self.count}


@dataclass
class GaussianAnchors(AnchorSampler):
    mean: float = 0.0
    sd: float = 1.0
    count: int = 1

    def _raw(self, rng, size):
        return rng.normal(self.mean, self.sd, size=size)

    def to_dict(self):
        return {"kind": "gaussian", "mean": self.mean, "sd": self.sd,
                "count": self.count}


@dataclass
class TwoGaussianMixture(AnchorSampler):
    """pi1 N(mu1, sigma) + (1 - pi1) N(mu2, sigma)."""

    pi1: float
    mu1: float
    mu2: float
    sigma: float
    count: int = 1

    def _raw(self, rng, size):
        pick = rng.uniform(size=size) < self.pi1
        mus = np.where(pick, self.mu1, self.mu2)
        return rng.normal(mus, self.sigma)

    def density(self, u: np.ndarray) -> np.ndarray:
        s = self.sigma
        c = 1.0 / (math.sqrt(2 * math.pi) * s)
        return c * (self.pi1 * np.exp(-0.5 * ((u - self.mu1) / s) ** 2)
                    + (1 - self.pi1) * np.exp(-0.5 * ((u - self.mu2) / s) ** 2))

    def to_dict(self):
        return {"kind": "two_gaussian_mixture", "pi1": self.pi1, "mu1": self.mu1,
                "mu2": self.mu2, "sigma": self.sigma, "count": self.count}


class GridDensityAnchors(AnchorSampler):
    """Tabulated density on a grid; samples by inverse CDF interpolation."""

    def __init__(self, grid: Sequence[float], density: Sequence[float], count: int = 1):
        grid = np.asarray(grid, dtype=float)
        density = np.asarray(density, dtype=float)
        if grid.ndim != 1 or grid.shape != density.shape or grid.size < 2:
            raise ValueError("grid and density must be equal-length 1-d arrays")
        if np.any(density < 0):
            raise ValueError("density must be non-negative")
        cdf = np.concatenate(([0.0], np.cumsum(
            0.5 * (density[1:] + density[:-1]) * np.diff(grid))))
        if cdf[-1] <= 0:
            raise ValueError("density integrates to zero")
        self.grid = grid
        self.density = density / cdf[-1]
        self._cdf = cdf / cdf[-1]
        self.count = count

    def _raw(self, rng, size):
        u = rng.uniform(size=size)
        return np.interp(u, self._cdf, self.grid)

    def to_dict(self):
        return {"kind": "grid_density", "grid": self.grid.tolist(),
                "density": self.density.tolist(), "count": self.count}


def sampler_from_dict(doc: dict) -> AnchorSampler:
    kind = doc["kind"]
    count = doc.get("count", 1)
    if kind == "uniform":
        return UniformAnchors(doc["a"], doc["b"], count)
    if kind == "logistic":
        return LogisticAnchors(doc["loc"], doc["scale"], count)
    if kind == "gaussian":
        return GaussianAnchors(doc["mean"], doc["sd"], count)
    if kind == "two_gaussian_mixture":
        return TwoGaussianMixture(doc["pi1"], doc["mu1"], doc["mu2"],
                                  doc["sigma"], count)
    if kind == "grid_density":
        return GridDensityAnchors(doc["grid"], doc["density"], count)
    raise ValueError(f"unknown sampler kind {kind!r}")


# ---------------------------------------------------------------------------
# Mechanism configuration


@dataclass
class SelectiveParams:
    tau: float
    rho: float
    prior: StepCDF | object  # anything with .cdf; used to evaluate coverage

    def __post_init__(self):
        if not (0.0 <= self.tau <= 1.0 and 0.0 <= self.rho <= 1.0):
            raise ValueError("tau and rho must lie in [0, 1]")


@dataclass
class ProgressiveParams:
    max_rounds: int
    tau: float = 0.0
    prior: object | None = None  # coverage prior; defaults to uniform on domain

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not (0.0 <= self.tau <= 1.0):
            raise ValueError("tau must lie in [0, 1]")


@dataclass
class MechanismConfig:
    """Declarative mechanism description: topology + anchor law + options.

    topology "canonical" yields m consecutive intervals from m-1 anchors;
    "ring" yields q ranges whose first is the union of both tails from q
    anchors.  acceptable is None, a fixed Range, or a frozenset of 1-based
    partition indices within which the exact value is disclosed.
    """

    topology: str
    m: int
    sampler: AnchorSampler
    acceptable: Range | frozenset | None = None
    selective: SelectiveParams | None = None
    progressive: ProgressiveParams | None = None

    def __post_init__(self):
        if self.topology == "canonical":
            if self.m < 2 or self.sampler.count != self.m - 1:
                raise ValueError("canonical(m) needs m >= 2 and m-1 anchors")
        elif self.topology == "ring":
            if self.m < 2 or self.sampler.count != self.m:
                raise ValueError("ring(q) needs q >= 2 and q anchors")
        else:
            raise ValueError(f"unknown topology {self.topology!r}")

    def partition_for(self, anchors: Sequence[float]) -> Partition:
        if self.topology == "canonical":
            return canonical_partition(anchors)
        return ring_partition(anchors)

    def to_dict(self) -> dict:
        doc = {
            "schema": 1,
            "topology": self.topology,
            "m": self.m,
            "sampler": self.sampler.to_dict(),
        }
        if isinstance(self.acceptable, Range):
            doc["acceptable"] = {
                "kind": "range",
                "parts": [[None if math.isinf(p.lo) else p.lo,
                           None if math.isinf(p.hi) else p.hi]
                          for p in self.acceptable.parts],
            }
        elif isinstance(self.acceptable, frozenset):
            doc["acceptable"] = {"kind": "indices", "indices": sorted(self.acceptable)}
        if self.selective is not None:
            doc["selective"] = {"tau": self.selective.tau, "rho": self.selective.rho}
        if self.progressive is not None:
            doc["progressive"] = {"max_rounds": self.progressive.max_rounds,
                                  "tau": self.progressive.tau}
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def config_from_dict(doc: dict, selective_prior=None, progressive_prior=None
                     ) -> MechanismConfig:
    if doc.get("schema") != 1:
        raise ValueError("unsupported mechanism-config schema")
    acc = doc.get("acceptable")
    acceptable = None
    if acc is not None:
        if acc["kind"] == "range":
            acceptable = Range.of(*[
                (NEG_INF if lo is None else lo, POS_INF if hi is None else hi)
                for lo, hi in acc["parts"]])
        else:
            acceptable = frozenset(acc["indices"])
    sel = None
    if "selective" in doc:
        if selective_prior is None:
            raise ValueError("selective config needs a coverage prior")
        sel = SelectiveParams(doc["selective"]["tau"], doc["selective"]["rho"],
                              selective_prior)
    prog = None
    if "progressive" in doc:
        prog = ProgressiveParams(doc["progressive"]["max_rounds"],
                                 doc["progressive"].get("tau", 0.0),
                                 progressive_prior)
    return MechanismConfig(doc["topology"], doc["m"],
                           sampler_from_dict(doc["sampler"]),
                           acceptable, sel, prog)


# ---------------------------------------------------------------------------
# Privatization


def _resolve_acceptable(cfg: MechanismConfig, partition: Partition) -> Range:
    if cfg.acceptable is None:
        return EMPTY_RANGE
    if isinstance(cfg.acceptable, Range):
        return cfg.acceptable
    parts = []
    for idx in cfg.acceptable:
        if 1 <= idx <= partition.m:
            parts.extend(partition.ranges[idx - 1].parts)
    return normalize_parts(parts)


def privatize(y: float, cfg: MechanismConfig, rng: np.random.Generator,
              meta: dict | None = None,
              features: Sequence[float] | None = None) -> PrivatizedRecord:
    """Draw anchors, locate y, and emit a record (without selective gating)."""
    anchors = cfg.sampler.draw(rng)
    partition = cfg.partition_for(anchors)
    choice = partition.locate(y)
    acceptable = _resolve_acceptable(cfg, partition)
    exact = y if acceptable.contains(y) else None
    return PrivatizedRecord(
        anchors=tuple(anchors.tolist()),
        topology=cfg.topology,
        partition=partition,
        choice=choice,
        exact=exact,
        features=None if features is None else tuple(features),
        meta=meta or {},
    )


def privatize_case1(y: float, sampler: AnchorSampler,
                    rng: np.random.Generator, **kw) -> PrivatizedRecord:
    """Two-way threshold: report which side of one random anchor y falls on."""
    if sampler.count != 1:
        raise ValueError("two-way mechanism needs exactly one anchor")
    cfg = MechanismConfig("canonical", 2, sampler)
    return privatize(y, cfg, rng, **kw)


def privatize_canonical(y: float, cfg: MechanismConfig,
                        rng: np.random.Generator, **kw) -> PrivatizedRecord:
    if cfg.topology != "canonical":
        raise ValueError("config topology is not canonical")
    return privatize(y, cfg, rng, **kw)


def privatize_ring(y: float, cfg: MechanismConfig,
                   rng: np.random.Generator, **kw) -> PrivatizedRecord:
    if cfg.topology != "ring":
        raise ValueError("config topology is not ring")
    return privatize(y, cfg, rng, **kw)


def ensemble(a: PrivatizedRecord, b: PrivatizedRecord) -> PrivatizedRecord:
    """Pool two records of the same value: merged anchors, intersected ranges.

    The result's partition is the set of pairwise intersections (empty ones
    dropped), its choice the intersection of the two chosen ranges, and its
    exact value whichever is present.
    """
    if a.exact is not None and b.exact is not None and a.exact != b.exact:
        raise InconsistentRecords("records carry different exact values")
    joint = a.chosen_range.intersect(b.chosen_range)
    if joint.is_empty:
        raise InconsistentRecords("chosen ranges do not intersect")
    cells = []
    for ra in a.partition.ranges:
        for rb in b.partition.ranges:
            cell = ra.intersect(rb)
            if not cell.is_empty:
                cells.append(cell)
    cells.sort(key=lambda r: (r.parts[0].lo, r.parts[0].hi))
    partition = Partition(tuple(cells))
    choice = cells.index(joint) + 1
    exact = a.exact if a.exact is not None else b.exact
    anchors = tuple(sorted(set(a.anchors) | set(b.anchors)))
    return PrivatizedRecord(
        anchors=anchors,
        topology="canonical" if a.topology == b.topology == "canonical" else "ring",
        partition=partition,
        choice=choice,
        exact=exact,
        features=a.features if a.features is not None else b.features,
        meta={**b.meta, **a.meta},
    )


# ---------------------------------------------------------------------------
# Monotone pre-processing (pullback)


@dataclass(frozen=True)
class MonotoneTransform:
    """Strictly monotone transform with a computable inverse.

    Built-ins: affine, exp, logistic-link, and a user-tabulated monotone
    spline.  forward maps data scale -> anchor scale; inverse maps back.
    """

    name: str
    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]

    @staticmethod
    def affine(a: float, b: float) -> "MonotoneTransform":
        if a == 0:
            raise NonMonotone("affine slope must be nonzero")
        return MonotoneTransform("affine",
                                 lambda y: a * np.asarray(y, float) + b,
                                 lambda z: (np.asarray(z, float) - b) / a)

    @staticmethod
    def exp() -> "MonotoneTransform":
        return MonotoneTransform("exp", lambda y: np.exp(np.asarray(y, float)),
                                 lambda z: np.log(np.asarray(z, float)))

    @staticmethod
    def logistic_link() -> "MonotoneTransform":
        from scipy.special import expit, logit

        return MonotoneTransform("logistic", lambda y: expit(np.asarray(y, float)),
                                 lambda z: logit(np.asarray(z, float)))

    @staticmethod
    def tabulated(xs: Sequence[float], ys: Sequence[float]) -> "MonotoneTransform":
        xs = np.asarray(xs, float)
        ys = np.asarray(ys, float)
        d = np.diff(ys)
        if np.all(d > 0):
            return MonotoneTransform(
                "tabulated",
                lambda y: np.interp(np.asarray(y, float), xs, ys),
                lambda z: np.interp(np.asarray(z, float), ys, xs))
        if np.all(d < 0):
            return MonotoneTransform(
                "tabulated",
                lambda y: np.interp(np.asarray(y, float), xs, ys),
                lambda z: np.interp(np.asarray(z, float), ys[::-1], xs[::-1]))
        raise NonMonotone("tabulated transform is not monotone")


class _PullbackSampler(AnchorSampler):
    def __init__(self, inner: AnchorSampler, g: MonotoneTransform):
        self.inner = inner
        self.g = g
        self.count = inner.count

    def _raw(self, rng, size):
        # draw on the transformed scale, then map back
        return self.g.inverse(self.inner._raw(rng, size))

    def to_dict(self):
        return {"kind": "pullback", "inner": self.inner.to_dict(),
                "transform": self.g.name}


def pullback(cfg: MechanismConfig, g: MonotoneTransform,
             domain: tuple[float, float] = (-50.0, 50.0),
             probe_points: int = 1024) -> MechanismConfig:
    """Mechanism that realizes cfg on the g-transformed scale.

    The returned config's anchors are g^{-1} of cfg's anchors, so privatizing
    y under it equals privatizing g(y) under cfg and mapping ranges back.
    Raises NonMonotone when g fails a grid probe on `domain`.
    """
    grid = np.linspace(domain[0], domain[1], probe_points)
    vals = np.asarray(g.forward(grid), dtype=float)
    diffs = np.diff(vals)
    if not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise NonMonotone(f"{g.name} is not strictly monotone on {domain}")
    return replace(cfg, sampler=_PullbackSampler(cfg.sampler, g))


# ---------------------------------------------------------------------------
# Selective gating


def privatize_selective(y: float, cfg: MechanismConfig, rng: np.random.Generator,
                        meta: dict | None = None,
                        features: Sequence[float] | None = None
                        ) -> PrivatizedRecord | NullRecord:
    """Emit the record only when its coverage clears tau AND an independent
    Bernoulli(rho) gate passes; otherwise emit an explicit null and discard
    all generated anchors.
    """
    if cfg.selective is None:
        raise ValueError("config has no selective parameters")
    sel = cfg.selective
    candidate = privatize(y, cfg, rng, meta=meta, features=features)
    w = rng.uniform() < sel.rho
    coverage = 0.0 if candidate.exact is not None else _prior_mass(
        sel.prior, candidate.chosen_range)
    if coverage >= sel.tau and w:
        return candidate
    return NullRecord(meta=meta or {})


def _prior_mass(prior, r: Range) -> float:
    if isinstance(prior, StepCDF):
        return prior.mass(r)
    total = 0.0
    for p in r.parts:
        hi = 1.0 if p.hi == POS_INF else float(prior.cdf(p.hi))
        lo = 0.0 if p.lo == NEG_INF else float(prior.cdf(p.lo))
        total += hi - lo
    return min(max(total, 0.0), 1.0)


# ---------------------------------------------------------------------------
# Progressive multi-round flow


OPT_OUT = "opt_out"


@dataclass
class ProgressiveSession:
    """Multi-round narrowing: each answer restricts the next anchor draw.

    The session starts on the question domain (lower, upper].  Every issued
    round draws a single anchor uniformly inside the current range (the
    default conditional law), the respondent answers which side their value
    falls on, and the cumulative range is intersected accordingly.
    """

    domain: tuple[float, float]
    params: ProgressiveParams
    round: int = 0
    status: str = "active"  # active | done | null_response
    current_range: Range = None  # type: ignore[assignment]
    history: list = None  # type: ignore[assignment]
    pending_anchor: float | None = None

    def __post_init__(self):
        if self.current_range is None:
            self.current_range = Range.of(self.domain)
        if self.history is None:
            self.history = []

    def _coverage(self, r: Range) -> float:
        prior = self.params.prior
        if prior is None:
            lo, hi = self.domain
            width = sum(min(p.hi, hi) - max(p.lo, lo)
                        for p in r.parts if min(p.hi, hi) > max(p.lo, lo))
            return width / (hi - lo)
        return _prior_mass(prior, r)

    def next_anchor(self, rng: np.random.Generator) -> float:
        """Draw the next round's anchor inside the current range."""
        if self.status != "active":
            raise SessionClosed(f"session is {self.status}")
        if self.round >= self.params.max_rounds:
            self.status = "done"
            raise SessionClosed("max rounds reached")
        part = self.current_range.parts[0]
        lo = part.lo if math.isfinite(part.lo) else self.domain[0]
        hi = part.hi if math.isfinite(part.hi) else self.domain[1]
        self.pending_anchor = float(rng.uniform(lo, hi))
        return self.pending_anchor

    def step(self, answer) -> str:
        """Apply an answer (1 = below-or-equal, 2 = above, or OPT_OUT).

        Returns the new status.  Opting out at round 1 yields null_response;
        later opt-outs keep the last accepted cumulative range.
        """
        if self.status != "active":
            raise SessionClosed(f"session is {self.status}")
        if self.pending_anchor is None:
            raise RuntimeError("no question issued; call next_anchor first")
        if answer == OPT_OUT:
            self.status = "null_response" if self.round == 0 else "done"
            self.pending_anchor = None
            return self.status
        u = self.pending_anchor
        side = Range.of((NEG_INF, u)) if answer == 1 else Range.of((u, POS_INF))
        new_range = self.current_range.intersect(side)
        self.round += 1
        self.pending_anchor = None
        if self._coverage(new_range) < self.params.tau:
            # below the floor: round-1 answers are discarded entirely
            if self.round == 1:
                self.status = "null_response"
            else:
                self.status = "done"
            return self.status
        self.current_range = new_range
        self.history.append((self.round, u, answer))
        if self.round >= self.params.max_rounds:
            self.status = "done"
        return self.status

    def result(self) -> Range | None:
        return None if self.status == "null_response" else self.current_range


def progressive_step(session: ProgressiveSession, answer, cfg: MechanismConfig,
                     rng: np.random.Generator):
    """Convenience wrapper: apply an answer, then issue the next anchor if the
    session is still active.  Returns (session, next_anchor | None).
    """
    status = session.step(answer)
    if status == "active":
        return session, session.next_anchor(rng)
    return session, None


def record_stream_rng(master_seed: int, index: int) -> np.random.Generator:
    """Deterministic per-record stream: parallel batches stay reproducible."""
    return np.random.default_rng(np.random.SeedSequence(master_seed).spawn(index + 1)[-1])


def batch_privatize(values: Sequence[float], cfg: MechanismConfig, master_seed: int,
                    features: Sequence[Sequence[float]] | None = None):
    """Privatize a batch with independent per-index streams."""
    children = np.random.SeedSequence(master_seed).spawn(len(values))
    out = []
    for i, y in enumerate(values):
        rng = np.random.default_rng(children[i])
        feats = None if features is None else features[i]
        meta = {"index": i}
        if cfg.selective is not None:
            out.append(privatize_selective(y, cfg, rng, meta=meta, features=feats))
        else:
            out.append(privatize(y, cfg, rng, meta=meta, features=feats))
    return out
