"""Closed-form statistics of the entanglement-based picture.

All probabilities are exact `Fraction`s; floats appear only in reports.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from math import lcm
from typing import Dict, List, Tuple

import numpy as np

from app.core.exact import Number, as_fraction
from app.core.exceptions import DomainError, UnsupportedModelError
from app.services.channels import ChannelModel, InterceptResend, RandomPhase, Unitary, builtin
from app.services.field import FieldSpec, field_spec
from app.services.qstates import DiagonalPhase, SparseKet, all_pairs, apply_error, on_line, probabilities

logger = logging.getLogger(__name__)

HALF = Fraction(1, 2)


@dataclass(frozen=True)
class BellDistribution:
    spec: FieldSpec
    e: Dict[Tuple[int, int], Fraction]

    def __post_init__(self):
        full = {(a, l): Fraction(0) for a in range(self.spec.N) for l in (0, 1)}
        for key, value in self.e.items():
            if key not in full:
                raise DomainError(f"{key} is not a Bell index of {self.spec}")
            if value < 0:
                raise DomainError(f"negative probability e{key} = {value}")
            full[key] = value
        if sum(full.values()) != 1:
            raise DomainError(f"Bell probabilities sum to {sum(full.values())}, not 1")
        object.__setattr__(self, "e", full)

    def __getitem__(self, key: Tuple[int, int]) -> Fraction:
        return self.e[key]

    def shift_weight(self, a: int) -> Fraction:
        return self.e[(a, 0)] + self.e[(a, 1)]

    def sum_rule_holds(self) -> bool:
        weights = {self.shift_weight(a) for a in range(1, self.spec.N)}
        return len(weights) == 1

    def table(self) -> Dict[str, float]:
        return {f"{a},{l}": float(v) for (a, l), v in sorted(self.e.items())}


@dataclass(frozen=True)
class ErrorMatrix:
    """Pauli-frame probabilities of a kept position."""

    p_I: Number
    p_x: Number
    p_y: Number
    p_z: Number

    def __post_init__(self):
        values = self.as_tuple()
        if min(values) < -1e-12:
            raise DomainError(f"negative entry in error matrix {values}")
        if abs(float(sum(values)) - 1) > 1e-9:
            raise DomainError(f"error matrix entries sum to {float(sum(values))}, not 1")

    def as_tuple(self) -> Tuple[Number, Number, Number, Number]:
        return (self.p_I, self.p_x, self.p_y, self.p_z)

    def as_floats(self) -> Tuple[float, float, float, float]:
        return tuple(float(v) for v in self.as_tuple())

    @property
    def bit_error(self) -> Number:
        return self.p_z + self.p_y

    @property
    def phase_error(self) -> Number:
        return self.p_x + self.p_y

    def to_dict(self) -> Dict[str, float]:
        return dict(zip(("p_I", "p_x", "p_y", "p_z"), self.as_floats()))


@dataclass(frozen=True)
class Observables:
    e_b: Fraction | None
    e_c: Fraction
    consistent: bool


@dataclass(frozen=True)
class EDVerdict:
    passed: bool
    lhs: Fraction
    e00_greatest: bool


def _common_weights(weights: List[Fraction]) -> Tuple[List[int], int]:
    denom = lcm(*(w.denominator for w in weights))
    return [w.numerator * (denom // w.denominator) for w in weights], denom


def bell_distribution(model: ChannelModel) -> BellDistribution:
    """e_{a,l}: outcome distribution of the reference pair Psi_00 averaged over (lambda, beta).

    Term (shift a, mask f) under L_{lambda,beta} lands on index lambda^-1 a with
    kappa flipped by f(beta) + f(lambda + beta).
    """
    if not model.is_unitary:
        raise UnsupportedModelError(f"channel {model.name} has non-unitary terms")
    spec = model.spec
    N = spec.N
    grid = N * (N - 1)
    nums, denom = _common_weights([p for p, _ in model.terms])
    dtype = np.int64 if denom * len(nums) < 2 ** 62 and N <= 62 else object
    acc: Dict[Tuple[int, int], int] = {(a, l): 0 for a in range(N) for l in (0, 1)}

    groups: Dict[int, List[Tuple[int, int]]] = {}
    for w, (_, action) in zip(nums, model.terms):
        if isinstance(action, RandomPhase):
            # uniformly random mask: kappa flips with probability 1/2 for every (lambda, beta)
            for lam in range(1, N):
                t = spec.mul(spec.inv(lam), action.a)
                acc[(t, 0)] += w * N
                acc[(t, 1)] += w * N
            continue
        groups.setdefault(action.a, []).append((w, action.phase.mask))

    for a, members in groups.items():
        weights = np.array([w for w, _ in members], dtype=dtype)
        masks = np.array([m for _, m in members], dtype=dtype)
        total = sum(w for w, _ in members)
        flipped = {}
        for x, y in all_pairs(spec):
            bits = ((masks >> x) ^ (masks >> y)) & 1
            flipped[(x, y)] = int(weights[bits == 1].sum())
        for lam in range(1, N):
            t = spec.mul(spec.inv(lam), a)
            for beta in range(N):
                x, y = sorted((beta, lam ^ beta))
                f = flipped[(x, y)]
                # acc is in units of 1/(2 denom grid)
                acc[(t, 1)] += 2 * f
                acc[(t, 0)] += 2 * (total - f)
    scale = 2 * denom * grid
    return BellDistribution(spec, {key: Fraction(v, scale) for key, v in acc.items()})


def predict_observables(d: BellDistribution) -> Observables:
    N = d.spec.N
    e_c = d[(0, 0)] + d[(1, 0)] + d[(0, 1)] + d[(1, 1)]
    consistent = 1 - e_c == (N - 2) * (d[(1, 0)] + d[(1, 1)])
    e_b = (d[(0, 1)] + d[(1, 1)]) / e_c if e_c else None
    return Observables(e_b, e_c, consistent)


def error_matrix(d: BellDistribution) -> ErrorMatrix:
    e_c = d[(0, 0)] + d[(1, 0)] + d[(0, 1)] + d[(1, 1)]
    if e_c == 0:
        raise DomainError("error matrix undefined for e_c = 0")
    return ErrorMatrix(d[(0, 0)] / e_c, d[(1, 0)] / e_c, d[(1, 1)] / e_c, d[(0, 1)] / e_c)


def ed_lhs(d: BellDistribution) -> Fraction:
    N = d.spec.N
    return d[(0, 1)] + d[(1, 1)] + (N - 1) * (d[(1, 0)] + d[(1, 1)])


def check_ed_condition(d: BellDistribution) -> EDVerdict:
    """e01 + e11 + (N-1)(e10 + e11) < 1/2, plus whether e00 > 1/2."""
    lhs = ed_lhs(d)
    return EDVerdict(lhs < HALF, lhs, d[(0, 0)] > HALF)


def normalization_identity(d: BellDistribution) -> bool:
    """e00 + e_b e_c + (N-1)(1-e_c)/(N-2) - e11 == 1."""
    N = d.spec.N
    obs = predict_observables(d)
    e_b_e_c = d[(0, 1)] + d[(1, 1)]
    return d[(0, 0)] + e_b_e_c + Fraction(N - 1, N - 2) * (1 - obs.e_c) - d[(1, 1)] == 1


def _received(action, ket: SparseKet) -> List[Tuple[Fraction, SparseKet]]:
    if isinstance(action, Unitary):
        return [(Fraction(1), apply_error(action.a, action.phase, ket))]
    if isinstance(action, RandomPhase):
        shifted = apply_error(action.a, DiagonalPhase.zero(), ket)
        if len(shifted.terms) == 1:
            return [(Fraction(1), shifted)]
        (x, sx), (y, sy) = shifted.terms
        return [(HALF, shifted), (HALF, SparseKet(ket.spec, ((x, sx), (y, -sy))))]
    if isinstance(action, InterceptResend):
        return [(Fraction(1, len(ket.terms)), SparseKet.basis(ket.spec, idx)) for idx in ket.indices]
    raise UnsupportedModelError(f"unknown channel action {action!r}")  # pragma: no cover


def enumerate_observables(model: ChannelModel, pairs: List[Tuple[int, int]] | None = None) -> Tuple[Fraction | None, Fraction]:
    """(e_b, e_c) of the prepare-and-measure rounds by exact outcome enumeration.

    Alice's pair and bit, the channel term and Bob's line pair are enumerated;
    the uniform pair-choice weights cancel in both ratios.
    """
    spec = model.spec
    pairs = pairs if pairs is not None else list(all_pairs(spec))
    errors = same = line = Fraction(0)
    for pair in pairs:
        line_pairs = [other for other in all_pairs(spec) if on_line(pair, other)]
        for s in (0, 1):
            ket = SparseKet.pair(spec, pair[0], pair[1], s)
            for p, action in model.terms:
                for q, received in _received(action, ket):
                    w = p * q
                    for other in line_pairs:
                        plus, minus, _ = probabilities(received, other)
                        line += w * (plus + minus)
                        if other == pair:
                            same += w * (plus + minus)
                            errors += w * (minus if s == 0 else plus)
    e_b = errors / same if same else None
    e_c = same / line if line else Fraction(0)
    return e_b, e_c


def intercept_distribution(eta: Number, n: int) -> Tuple[Fraction, Fraction]:
    """(e_b, e_c) for partial intercept-resend; exactly (eta/2, 1)."""
    spec = field_spec(n)
    model = builtin("partial_intercept", spec, as_fraction(eta))
    e_b, e_c = enumerate_observables(model, _representative_pairs(spec))
    return e_b, e_c


def _representative_pairs(spec: FieldSpec) -> List[Tuple[int, int]]:
    # statistics are invariant under the affine maps L_{lambda,beta}; all pairs for small N
    if spec.n <= 4:
        return list(all_pairs(spec))
    return [(0, d) for d in range(1, spec.N)]


def channel_observables(model: ChannelModel) -> Tuple[Fraction | None, Fraction]:
    if model.is_unitary:
        obs = predict_observables(bell_distribution(model))
        return obs.e_b, obs.e_c
    return enumerate_observables(model, _representative_pairs(model.spec))


def random_distribution(spec: FieldSpec, rng: np.random.Generator, scale: int = 1 << 20) -> BellDistribution:
    """Random Bell distribution obeying the sum rule, entries on a 1/scale grid."""
    N = spec.N
    w = int(rng.integers(0, scale // (N - 1) + 1))
    e01 = int(rng.integers(0, scale - (N - 1) * w + 1))
    e00 = scale - (N - 1) * w - e01
    e = {(0, 0): Fraction(e00, scale), (0, 1): Fraction(e01, scale)}
    for a in range(1, N):
        part = int(rng.integers(0, w + 1))
        e[(a, 0)] = Fraction(part, scale)
        e[(a, 1)] = Fraction(w - part, scale)
    return BellDistribution(spec, e)


def condition_implication_sweep(n: int, samples: int, seed: int = 0) -> Dict[str, int]:
    """Count PM-condition failures among random distributions passing the ED condition."""
    from app.services.protocol import check_pm_condition

    spec = field_spec(n)
    rng = np.random.default_rng([seed, n])
    accepted = counterexamples = drawn = 0
    while accepted < samples:
        drawn += 1
        d = random_distribution(spec, rng)
        if not check_ed_condition(d).passed:
            continue
        accepted += 1
        obs = predict_observables(d)
        if obs.e_b is None or not obs.consistent or not check_pm_condition(obs.e_b, obs.e_c, n):
            counterexamples += 1
    logger.info("implication sweep n=%d accepted=%d drawn=%d counterexamples=%d", n, accepted, drawn,
                counterexamples)
    return {"accepted": accepted, "drawn": drawn, "counterexamples": counterexamples}


def analysis_report(model: ChannelModel) -> Dict:
    from app.services.protocol import check_pm_condition

    n = model.spec.n
    if not model.is_unitary:
        e_b, e_c = channel_observables(model)
        report = {"channel": model.name, "n": n, "unitary": False,
                  "e_b": None if e_b is None else float(e_b), "e_c": float(e_c)}
        if e_b is not None:
            report["pm_condition"] = check_pm_condition(e_b, e_c, n)
        return report
    d = bell_distribution(model)
    obs = predict_observables(d)
    ed = check_ed_condition(d)
    report = {
        "channel": model.name, "n": n, "unitary": True,
        "e": d.table(),
        "e_b": None if obs.e_b is None else float(obs.e_b),
        "e_c": float(obs.e_c),
        "ed_condition": {"passed": ed.passed, "lhs": float(ed.lhs), "e00_greatest": ed.e00_greatest},
        "consistency": {"sum_rule": d.sum_rule_holds(), "e_c_relation": obs.consistent,
                        "normalization": normalization_identity(d)},
    }
    if obs.e_c:
        report["error_matrix"] = error_matrix(d).to_dict()
    if obs.e_b is not None:
        report["pm_condition"] = check_pm_condition(obs.e_b, obs.e_c, n)
    return report
