"""Tolerable bit error rate of the prepare-and-measure scheme.

A point (e_b, e_c, e_11) admits a secure key when it lies in the region
e_b e_c + (N-1)(1-e_c)/(N-2) < 1/2 and f(e_b, e_c, e_11) > 0. Scans run in
double precision with a guard band; `f_value_exact` covers boundary checks.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import List, Tuple

import numpy as np

from app.core.exact import Number, as_fraction
from app.core.exceptions import DomainError
from app.schemas.threshold import IffScan, ThresholdSummary, Witness

logger = logging.getLogger(__name__)

GUARD = 1e-9
HALF = 0.5
E11_SAMPLES = 5
BOUNDARY = "boundary (f = 0)"


@dataclass(frozen=True)
class FeasibilityPoint:
    e_b: Number
    e_c: Number
    e_11: Number
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise DomainError(f"n must be >= 2, got {self.n}")
        for name in ("e_b", "e_c", "e_11"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise DomainError(f"{name}={value} outside [0, 1]")

    @property
    def N(self) -> int:
        return 1 << self.n


def _f(e_b, e_c, e_11, N):
    # works elementwise on arrays and on Fractions
    bracket = 1 - e_b * e_c - N * (1 - e_c) / (N - 2) + 2 * e_11
    return bracket * bracket - e_b * (1 - e_b) * e_c * e_c


def f_value(p: FeasibilityPoint) -> float:
    return float(_f(float(p.e_b), float(p.e_c), float(p.e_11), p.N))


def f_value_exact(p: FeasibilityPoint) -> Fraction:
    e_b, e_c, e_11 = (as_fraction(v) for v in (p.e_b, p.e_c, p.e_11))
    return _f(e_b, e_c, e_11, Fraction(p.N))


def region_lhs(e_b, e_c, N):
    return e_b * e_c + (N - 1) * (1 - e_c) / (N - 2)


def in_region(p: FeasibilityPoint) -> bool:
    e_b, e_c = as_fraction(p.e_b), as_fraction(p.e_c)
    return region_lhs(e_b, e_c, Fraction(p.N)) < Fraction(1, 2)


def ec_star(e_b: Number, n: int) -> float:
    """Minimiser of f(e_b, ., 0) over the closure of the region; it sits on the region boundary."""
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    N = 1 << n
    return N / (2 * (N - 1 - (N - 2) * float(e_b)))


def ec_lower(e_b: np.ndarray, N: int) -> np.ndarray:
    """Smallest e_c in the closure of the region for each e_b."""
    c = (N - 1) / (N - 2)
    return (c - HALF) / (c - e_b)


def _classify(value: float) -> str:
    if value > GUARD:
        return "feasible"
    if value >= -GUARD:
        return BOUNDARY
    return "infeasible"


def _slice_minima(e_b: np.ndarray, N: int, grid: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Minimum of f over each e_b's (e_c, e_11) slice; returns (min f, argmin e_c, argmin e_11, ok)."""
    low = np.minimum(ec_lower(e_b, N), 1.0)
    t = np.linspace(0.0, 1.0, grid)
    e_c = low[:, None] + (1.0 - low[:, None]) * t[None, :]
    # the analytic minimiser, clipped into the slice
    star = np.clip(N / (2 * (N - 1 - (N - 2) * e_b)), low, 1.0)
    e_c = np.concatenate([e_c, star[:, None]], axis=1)
    eb = e_b[:, None]
    e11_max = np.minimum(eb * e_c, (1 - e_c) / (N - 2))
    best = np.full(len(e_b), np.inf)
    arg_c = np.zeros(len(e_b))
    arg_11 = np.zeros(len(e_b))
    for s in np.linspace(0.0, 1.0, E11_SAMPLES):
        e11 = s * e11_max
        values = _f(eb, e_c, e11, N)
        idx = np.argmin(values, axis=1)
        rows = np.arange(len(e_b))
        cand = values[rows, idx]
        better = cand < best
        best = np.where(better, cand, best)
        arg_c = np.where(better, e_c[rows, idx], arg_c)
        arg_11 = np.where(better, e11[rows, idx], arg_11)
    return best, arg_c, arg_11, best > GUARD


def e_max_scan(n: int, grid: int = 2000, threads: int = 1, max_witnesses: int = 20):
    """Certified tolerable e_b: (summary, per-e_b rows for the frontier CSV)."""
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    if grid < 1000:
        raise DomainError(f"grid needs at least 1000 points per axis, got {grid}")
    N = 1 << n
    resolution = HALF / (grid - 1)
    below = np.linspace(0.0, HALF, grid)
    above = HALF + resolution * np.arange(1, grid // 5 + 1)
    e_b = np.concatenate([below, above[above < 1.0]])
    chunks = np.array_split(np.arange(len(e_b)), max(1, threads * 4))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda idx: _slice_minima(e_b[idx], N, grid), chunks))
    best, arg_c, arg_11, ok = (np.concatenate([p[i] for p in parts]) for i in range(4))

    rejected = np.flatnonzero(~ok)
    first_bad = int(rejected[0]) if len(rejected) else len(e_b) - 1
    certified = float(e_b[first_bad - 1]) if first_bad > 0 else 0.0
    e_max = float(e_b[first_bad])
    violations = int(np.count_nonzero(~ok & (e_b < HALF)))
    witnesses = [Witness(e_b=float(e_b[i]), e_c=float(arg_c[i]), e_11=float(arg_11[i]), f=float(best[i]),
                         status=_classify(float(best[i]))) for i in rejected[:max_witnesses]]
    summary = ThresholdSummary(n=n, grid=grid, resolution=resolution, e_max=e_max, certified=certified,
                               limit_status=_classify(float(best[first_bad])),
                               violations_below_half=violations, witnesses=witnesses)
    rows = [(float(e_b[i]), float(best[i]), bool(ok[i])) for i in range(len(e_b))]
    logger.info("threshold scan n=%d grid=%d e_max=%.6f certified=%.6f violations=%d", n, grid, e_max,
                certified, violations)
    return summary, rows


def iff_scan(n: int, points: int = 10_000) -> IffScan:
    """f(e_b, e_c*(e_b), 0) > 0 for every e_b < 1/2 and f = 0 at e_b = 1/2."""
    N = 1 << n
    e_b = np.linspace(0.0, HALF, points)[:-1]
    star = N / (2 * (N - 1 - (N - 2) * e_b))
    values = _f(e_b, star, 0.0, N)
    at_half = f_value_exact(FeasibilityPoint(Fraction(1, 2), Fraction(1), 0, n))
    positive = int(np.count_nonzero(values > 0))
    return IffScan(n=n, points=points, positive_below_half=positive, below_half=len(e_b),
                   min_below_half=float(values.min()) if len(values) else None,
                   at_half=float(at_half), passed=positive == len(e_b) and at_half <= 0)


def write_frontier_csv(rows: List[Tuple[float, float, bool]], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["e_b", "min_f", "feasible"])
        for e_b, value, ok in rows:
            writer.writerow([f"{e_b:.9f}", f"{value:.12g}", int(ok)])
