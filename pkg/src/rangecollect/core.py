"""Core value types: extended-real intervals, ranges, partitions, step CDFs,
noise models, and the privatized-record wire format.

All values here are immutable after construction and safe to share across
threads.  Endpoints use IEEE +/-inf purely as order tags; no arithmetic is
ever performed on infinite endpoints, and they serialize as JSON null.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

NEG_INF = float("-inf")
POS_INF = float("inf")


class FidelityError(ValueError):
    """A record's exact value does not lie inside its chosen range."""


@dataclass(frozen=True)
class Interval:
    """Half-open interval (lo, hi] over the extended real line.

    lo may be -inf and hi may be +inf; lo < hi strictly.  Degenerate points
    are never represented as intervals (see PrivatizedRecord.exact).
    """

    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo < self.hi):
            raise ValueError(f"interval requires lo < hi, got ({self.lo}, {self.hi}]")
        if self.lo == POS_INF or self.hi == NEG_INF:
            raise ValueError("lo=+inf or hi=-inf is not a valid interval")

    def contains(self, y: float) -> bool:
        return self.lo < y <= self.hi

    def __str__(self) -> str:
        lo = "-inf" if self.lo == NEG_INF else f"{self.lo:g}"
        hi = "inf" if self.hi == POS_INF else f"{self.hi:g}"
        return f"({lo}, {hi}]"


@dataclass(frozen=True)
class Range:
    """Finite union of disjoint half-open intervals, kept in canonical form.

    Canonical form: parts sorted by lo, pairwise disjoint, and adjacent parts
    strictly separated (part[k].hi < part[k+1].lo).  The empty range is the
    algebra identity only; mechanisms never emit it.
    """

    parts: tuple[Interval, ...]

    def __post_init__(self):
        for a, b in zip(self.parts, self.parts[1:]):
            if not (a.hi < b.lo):
                raise ValueError("range parts must be sorted and strictly separated")

    @staticmethod
    def of(*bounds: tuple[float, float]) -> "Range":
        """Build a canonical range from (lo, hi) pairs, merging as needed."""
        return normalize_parts(Interval(lo, hi) for lo, hi in bounds)

    @property
    def is_empty(self) -> bool:
        return not self.parts

    def contains(self, y: float) -> bool:
        return any(p.contains(y) for p in self.parts)

    def intersect(self, other: "Range") -> "Range":
        out = []
        for a in self.parts:
            for b in other.parts:
                lo = max(a.lo, b.lo)
                hi = min(a.hi, b.hi)
                if lo < hi:
                    out.append(Interval(lo, hi))
        return normalize_parts(out)

    def __str__(self) -> str:
        if self.is_empty:
            return "(empty)"
        return " U ".join(str(p) for p in self.parts)


FULL_LINE = Range((Interval(NEG_INF, POS_INF),))
EMPTY_RANGE = Range(())


def normalize_parts(parts: Iterable[Interval]) -> Range:
    """Sort intervals and merge touching/overlapping ones into canonical form."""
    items = sorted(parts, key=lambda p: (p.lo, p.hi))
    merged: list[Interval] = []
    for p in items:
        if merged and p.lo <= merged[-1].hi:
            last = merged.pop()
            merged.append(Interval(last.lo, max(last.hi, p.hi)))
        else:
            merged.append(p)
    return Range(tuple(merged))


def range_contains(r: Range, y: float) -> bool:
    return r.contains(y)


def range_intersect(a: Range, b: Range) -> Range:
    return a.intersect(b)


@dataclass(frozen=True)
class Partition:
    """Disjoint ranges covering the whole real line, indexed 1..m."""

    ranges: tuple[Range, ...]

    def locate(self, y: float) -> int:
        """1-based index of the unique range containing y."""
        for i, r in enumerate(self.ranges, start=1):
            if r.contains(y):
                return i
        raise AssertionError(f"partition does not cover y={y}")

    @property
    def m(self) -> int:
        return len(self.ranges)


def canonical_partition(anchors: Sequence[float]) -> Partition:
    """Consecutive intervals (-inf, q1], (q1, q2], ..., (q_{m-1}, inf)."""
    qs = [NEG_INF, *anchors, POS_INF]
    if any(not (a < b) for a, b in zip(qs, qs[1:])):
        raise ValueError("anchors must be strictly increasing and finite")
    return Partition(tuple(Range((Interval(a, b),)) for a, b in zip(qs, qs[1:])))


def ring_partition(anchors: Sequence[float]) -> Partition:
    """Wrap range (-inf, t1] U (tq, inf) plus the interior intervals.

    The wrap range is index 1; interior ranges (t_{i-1}, t_i] follow.
    """
    ts = list(anchors)
    if len(ts) < 2 or any(not (a < b) for a, b in zip(ts, ts[1:])):
        raise ValueError("ring needs >= 2 strictly increasing anchors")
    wrap = Range((Interval(NEG_INF, ts[0]), Interval(ts[-1], POS_INF)))
    inner = [Range((Interval(a, b),)) for a, b in zip(ts, ts[1:])]
    return Partition((wrap, *inner))


def partition_locate(p: Partition, y: float) -> int:
    return p.locate(y)


class StepCDF:
    """Right-continuous piecewise-constant CDF with jumps at given points.

    F(x) equals the value at the largest jump point <= x, and 0 before the
    first jump.  The last value must be 1 within 1e-12.
    """

    __slots__ = ("xs", "Fs")

    def __init__(self, xs: Sequence[float], Fs: Sequence[float]):
        xs = np.asarray(xs, dtype=float)
        Fs = np.asarray(Fs, dtype=float)
        if xs.ndim != 1 or xs.shape != Fs.shape or xs.size == 0:
            raise ValueError("need equal-length non-empty jump arrays")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("jump points must be strictly increasing")
        if np.any(np.diff(Fs) < -1e-12) or abs(Fs[-1] - 1.0) > 1e-12:
            raise ValueError("F must be non-decreasing and end at 1")
        self.xs = xs
        self.Fs = np.clip(Fs, 0.0, 1.0)

    @classmethod
    def from_points(cls, points: Sequence[float]) -> "StepCDF":
        """Empirical CDF of a sample."""
        pts = np.sort(np.asarray(points, dtype=float))
        xs, counts = np.unique(pts, return_counts=True)
        return cls(xs, np.cumsum(counts) / pts.size)

    @classmethod
    def from_masses(cls, xs: Sequence[float], masses: Sequence[float]) -> "StepCDF":
        xs = np.asarray(xs, dtype=float)
        masses = np.asarray(masses, dtype=float)
        order = np.argsort(xs)
        xs, masses = xs[order], masses[order]
        ux, inv = np.unique(xs, return_inverse=True)
        agg = np.zeros_like(ux)
        np.add.at(agg, inv, masses)
        total = agg.sum()
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise ValueError(f"masses sum to {total}, expected 1")
        return cls(ux, np.cumsum(agg) / total)

    def cdf(self, x) -> np.ndarray | float:
        """Right-continuous evaluation; accepts scalars or arrays."""
        x_arr = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.xs, x_arr, side="right")
        vals = np.concatenate(([0.0], self.Fs))[idx]
        return vals if x_arr.ndim else float(vals)

    __call__ = cdf

    def _at(self, x: float) -> float:
        if x == NEG_INF:
            return 0.0
        if x == POS_INF:
            return 1.0
        return float(self.cdf(x))

    def mass(self, r: Range) -> float:
        """Probability of a range: sum of F(hi) - F(lo) over its parts."""
        total = sum(self._at(p.hi) - self._at(p.lo) for p in r.parts)
        return min(max(total, 0.0), 1.0)

    def ppf(self, q) -> np.ndarray | float:
        """Generalized inverse: smallest jump point with F >= q."""
        q_arr = np.asarray(q, dtype=float)
        idx = np.searchsorted(self.Fs, q_arr, side="left")
        idx = np.clip(idx, 0, self.xs.size - 1)
        vals = self.xs[idx]
        return vals if q_arr.ndim else float(vals)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.asarray(self.ppf(rng.uniform(size=size)))

    @property
    def jumps(self) -> list[tuple[float, float]]:
        return list(zip(self.xs.tolist(), self.Fs.tolist()))

    def masses(self) -> np.ndarray:
        return np.diff(np.concatenate(([0.0], self.Fs)))

    def mean(self) -> float:
        return float(np.dot(self.xs, self.masses()))


def stepcdf_mass(F: StepCDF, r: Range) -> float:
    return F.mass(r)


def _binary_entropy(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-300, 1.0)
    q = np.clip(1.0 - p, 1e-300, 1.0)
    return -(p * np.log(p) + q * np.log(q))


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean error distribution used in regression: CDF and partial mean.

    kind is "logistic" (scale = logistic scale s) or "gaussian" (scale =
    sigma).  partial_mean(s) is the integral of x dF(x) over (-inf, s]; it is
    0 at both -inf and +inf because the mean is zero.
    """

    kind: str
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("logistic", "gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def cdf(self, s) -> np.ndarray | float:
        s_arr = np.asarray(s, dtype=float)
        z = np.where(np.isfinite(s_arr), s_arr / self.scale, np.sign(s_arr) * 1e6)
        if self.kind == "logistic":
            from scipy.special import expit

            out = expit(z)
        else:
            from scipy.special import erfc

            out = 0.5 * erfc(-z / math.sqrt(2.0))
        return out if s_arr.ndim else float(out)

    def partial_mean(self, s) -> np.ndarray | float:
        s_arr = np.asarray(s, dtype=float)
        finite = np.isfinite(s_arr)
        z = np.where(finite, s_arr / self.scale, 0.0)
        if self.kind == "logistic":
            from scipy.special import expit

            out = -self.scale * _binary_entropy(expit(z))
        else:
            out = -self.scale * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        out = np.where(finite, out, 0.0)
        return out if s_arr.ndim else float(out)


def noise_cdf(nm: NoiseModel, s: float) -> float:
    return float(nm.cdf(s))


def noise_partial_mean(nm: NoiseModel, s: float) -> float:
    return float(nm.partial_mean(s))


@dataclass(frozen=True)
class PrivatizedRecord:
    """One collected datum: anchors, the realized partition, the chosen range
    index (1-based), and optionally the exact value and regression features.
    """

    anchors: tuple[float, ...]
    topology: str  # "canonical" | "ring"
    partition: Partition
    choice: int
    exact: float | None = None
    features: tuple[float, ...] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (1 <= self.choice <= self.partition.m):
            raise ValueError(f"choice {self.choice} out of range 1..{self.partition.m}")
        if self.exact is not None and not self.chosen_range.contains(self.exact):
            raise FidelityError(
                f"exact value {self.exact} outside chosen range {self.chosen_range}"
            )

    @property
    def chosen_range(self) -> Range:
        return self.partition.ranges[self.choice - 1]

    @property
    def is_null(self) -> bool:
        return False

    def to_json(self) -> str:
        def enc(x: float):
            return None if math.isinf(x) else x

        doc = {
            "schema": 1,
            "anchors": list(self.anchors),
            "topology": self.topology,
            "ranges": [
                [[enc(p.lo), enc(p.hi)] for p in r.parts]
                for r in self.partition.ranges
            ],
            "choice": self.choice,
            "exact": self.exact,
            "features": list(self.features) if self.features is not None else None,
            "meta": self.meta,
        }
        return json.dumps(doc, separators=(",", ":"))


@dataclass(frozen=True)
class NullRecord:
    """Explicit non-collection event (selective suppression or opt-out)."""

    meta: dict = field(default_factory=dict)

    @property
    def is_null(self) -> bool:
        return True

    def to_json(self) -> str:
        return json.dumps({"schema": 1, "null": True, "meta": self.meta},
                          separators=(",", ":"))


def record_from_json(line: str) -> PrivatizedRecord | NullRecord:
    """Parse one wire-format line; rejects fidelity-violating records."""
    doc = json.loads(line)
    if doc.get("schema") != 1:
        raise ValueError(f"unsupported schema {doc.get('schema')!r}")
    if doc.get("null"):
        return NullRecord(meta=doc.get("meta", {}))

    def dec(v, side: str) -> float:
        if v is None:
            return NEG_INF if side == "lo" else POS_INF
        return float(v)

    ranges = tuple(
        Range(tuple(Interval(dec(lo, "lo"), dec(hi, "hi")) for lo, hi in parts))
        for parts in doc["ranges"]
    )
    feats = doc.get("features")
    return PrivatizedRecord(
        anchors=tuple(float(a) for a in doc["anchors"]),
        topology=doc["topology"],
        partition=Partition(ranges),
        choice=int(doc["choice"]),
        exact=None if doc.get("exact") is None else float(doc["exact"]),
        features=None if feats is None else tuple(float(f) for f in feats),
        meta=doc.get("meta", {}),
    )


def read_records(lines: Iterable[str], skip_null: bool = False):
    """Parse JSON-lines into records, with line numbers on parse errors."""
    out = []
    for ln, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = record_from_json(line)
        except (ValueError, KeyError) as exc:
            raise ValueError(f"line {ln}: {exc}") from exc
        if skip_null and rec.is_null:
            continue
        out.append(rec)
    return out
