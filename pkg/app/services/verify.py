"""Self-checks run by `qkd verify`: field axioms, the Bell conjugation rule
against dense matrices, mask reduction, the sum rule and the condition
implication sweep."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Iterable, List, Tuple

import numpy as np

from app.services.analysis import bell_distribution, condition_implication_sweep
from app.services.channels import ChannelModel, Unitary
from app.services.field import FieldSpec, field_spec
from app.services.qstates import BellIndex, DiagonalPhase, conjugate_bell, conjugate_bell_phase

logger = logging.getLogger(__name__)

EXHAUSTIVE_FIELD_MAX_N = 4
RANDOM_TUPLES = 10_000


@dataclass(frozen=True)
class SuiteResult:
    name: str
    ok: int
    total: int

    @property
    def passed(self) -> bool:
        return self.ok == self.total

    def line(self) -> str:
        return f"{self.name}: {self.ok}/{self.total} ok"


def field_axioms(spec: FieldSpec, rng: np.random.Generator, samples: int = 2000) -> SuiteResult:
    N = spec.N
    if spec.n <= EXHAUSTIVE_FIELD_MAX_N:
        triples: Iterable[Tuple[int, int, int]] = product(range(N), repeat=3)
    else:
        triples = (tuple(int(v) for v in t) for t in rng.integers(N, size=(samples, 3)))
    ok = total = 0
    mul = spec.mul
    for x, y, z in triples:
        total += 1
        good = (mul(x, y) == mul(y, x)
                and mul(mul(x, y), z) == mul(x, mul(y, z))
                and mul(x, y ^ z) == mul(x, y) ^ mul(x, z)
                and mul(1, x) == x)
        if x:
            good = good and mul(x, spec.inv(x)) == 1 and spec.pow(x, N - 1) == 1
        ok += good
    return SuiteResult("field", ok, total)


def _shift_matrix(spec: FieldSpec, lam: int, beta: int, a: int, phase: DiagonalPhase) -> np.ndarray:
    """Dense N x N matrix of L^-1 X_a P_f L."""
    N = spec.N
    lam_inv = spec.inv(lam)
    U = np.zeros((N, N), dtype=np.int64)
    for x in range(N):
        y = spec.mul(lam, x) ^ beta
        sign = -1 if phase.f(y) else 1
        out = spec.mul(lam_inv, (y ^ a) ^ beta)
        U[out, x] = sign
    return U


def _bell_vector(N: int, b: int, kappa: int) -> np.ndarray:
    """|0, b> + (-1)^kappa |1, b + 1> in the 2N-dimensional space (first register in {0, 1})."""
    v = np.zeros(2 * N, dtype=np.int64)
    v[b] = 1
    v[N + (b ^ 1)] = -1 if kappa else 1
    return v


def dense_conjugate(spec: FieldSpec, lam: int, beta: int, a: int, phase: DiagonalPhase,
                    b: int, kappa: int) -> BellIndex | None:
    """Bell index proportional to (I (x) U) Psi_{b,kappa}, or None if the image is not a Bell vector."""
    N = spec.N
    U = _shift_matrix(spec, lam, beta, a, phase)
    image = np.kron(np.eye(2, dtype=np.int64), U) @ _bell_vector(N, b, kappa)
    first, second = np.flatnonzero(image[:N]), np.flatnonzero(image[N:])
    if len(first) != 1 or len(second) != 1:
        return None
    c = int(first[0])
    if int(second[0]) != c ^ 1:
        return None
    l = 0 if image[c] == image[N + (c ^ 1)] else 1
    return BellIndex(c, l) if abs(int(image @ _bell_vector(N, c, l))) == 2 else None


def conjugation_suite(spec: FieldSpec, rng: np.random.Generator, samples: int | None = None) -> SuiteResult:
    """Exhaustive over (lambda, beta, a, l, b, kappa) when `samples` is None."""
    N = spec.N
    norm = DiagonalPhase.norm(spec)
    if samples is None:
        tuples = product(range(1, N), range(N), range(N), (0, 1), (0, 1), (0, 1))
    else:
        draws = np.stack([rng.integers(1, N, samples), rng.integers(N, size=samples), rng.integers(N, size=samples),
                          rng.integers(2, size=samples), rng.integers(2, size=samples),
                          rng.integers(2, size=samples)], axis=1)
        tuples = (tuple(int(v) for v in row) for row in draws)
    ok = total = 0
    for lam, beta, a, l, b, kappa in tuples:
        total += 1
        phase = norm if l else DiagonalPhase.zero()
        ok += conjugate_bell(spec, lam, beta, a, l, b, kappa) == dense_conjugate(spec, lam, beta, a, phase, b, kappa)
    return SuiteResult("conjugation", ok, total)


def mask_suite(spec: FieldSpec, rng: np.random.Generator, samples: int = 2000) -> SuiteResult:
    """General-mask rule against the dense oracle, and its reduction to the norm rule."""
    N = spec.N
    norm = DiagonalPhase.norm(spec)
    ok = total = 0
    for _ in range(samples):
        lam, beta, a = int(rng.integers(1, N)), int(rng.integers(N)), int(rng.integers(N))
        b, kappa = int(rng.integers(2)), int(rng.integers(2))
        mask = DiagonalPhase(int(rng.integers(1 << min(N, 62))))
        total += 2
        ok += conjugate_bell_phase(spec, lam, beta, a, mask, b, kappa) == dense_conjugate(
            spec, lam, beta, a, mask, b, kappa)
        ok += conjugate_bell_phase(spec, lam, beta, a, norm, b, kappa) == conjugate_bell(
            spec, lam, beta, a, 1, b, kappa)
    return SuiteResult("mask reduction", ok, total)


def random_unitary_channel(spec: FieldSpec, rng: np.random.Generator, terms: int = 4) -> ChannelModel:
    weights = [int(w) for w in rng.integers(1, 20, size=terms)]
    total = sum(weights)
    mask_bits = min(spec.N, 62)
    return ChannelModel(spec, tuple(
        (Fraction(w, total), Unitary(int(rng.integers(spec.N)), DiagonalPhase(int(rng.integers(1 << mask_bits)))))
        for w in weights), "random")


def sum_rule_suite(spec: FieldSpec, rng: np.random.Generator, channels: int = 50) -> SuiteResult:
    ok = sum(bell_distribution(random_unitary_channel(spec, rng)).sum_rule_holds() for _ in range(channels))
    return SuiteResult("sum rule", ok, channels)


def implication_suite(n: int, samples: int, seed: int) -> SuiteResult:
    result = condition_implication_sweep(n, samples, seed)
    return SuiteResult("implication", result["accepted"] - result["counterexamples"], result["accepted"])


def run_verify(n: int, seed: int = 0, samples: int = RANDOM_TUPLES, implication_samples: int = 10_000) -> List[SuiteResult]:
    spec = field_spec(n)
    rng = np.random.default_rng([seed, n])
    exhaustive = spec.n == 2
    results = [
        field_axioms(spec, rng),
        conjugation_suite(spec, rng, None if exhaustive else samples),
        mask_suite(spec, rng),
        sum_rule_suite(spec, rng),
        implication_suite(n, implication_samples, seed),
    ]
    for result in results:
        logger.info("verify n=%d %s", n, result.line())
    return results
