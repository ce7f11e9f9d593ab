"""Exact algebra of the transmitted states.

Every reachable state is (|i> +/- |j>)/sqrt(2) or a single basis ket, so kets are
kept as sign-exact sparse term lists and every probability is a multiple of 1/4.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from fractions import Fraction
from functools import lru_cache
from typing import List, Tuple

import numpy as np

from app.core.exceptions import DomainError
from app.services.field import FieldElement, FieldSpec

Scalar = int | FieldElement
Pair = Tuple[int, int]


def _v(x: Scalar) -> int:
    return int(x)


class Outcome(IntEnum):
    PLUS = 0
    MINUS = 1
    OUTSIDE = 2


def canonical_pair(i: int, j: int) -> Pair:
    if i == j:
        raise DomainError(f"pair needs distinct elements, got {i} twice")
    return (i, j) if i < j else (j, i)


@lru_cache(maxsize=None)
def all_pairs(spec: FieldSpec) -> Tuple[Pair, ...]:
    """Unordered pairs in a fixed order; index k is what a uniform draw in range(C) selects."""
    return tuple((i, j) for i in range(spec.N) for j in range(i + 1, spec.N))


def on_line(pair: Pair, other: Pair) -> bool:
    """`other` lies on the line through `pair` iff both have the same element sum."""
    return (pair[0] ^ pair[1]) == (other[0] ^ other[1])


def line_offset(spec: FieldSpec, pair: Pair, other: Pair) -> int | None:
    """Even representative of {t, t+1} with other = {i + t d, i + (t+1) d}, d = i + j."""
    if not on_line(pair, other):
        return None
    i, j = pair
    t = spec.mul(other[0] ^ i, spec.inv(i ^ j))
    return t & ~1


@dataclass(frozen=True)
class PairState:
    i: int
    j: int
    sign: int
    spec: FieldSpec

    def __post_init__(self):
        i, j = canonical_pair(self.i, self.j)
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "j", j)
        if self.sign not in (0, 1):
            raise DomainError(f"sign bit must be 0 or 1, got {self.sign}")

    @property
    def pair(self) -> Pair:
        return (self.i, self.j)

    @property
    def elements(self) -> Tuple[FieldElement, FieldElement]:
        return self.spec.element(self.i), self.spec.element(self.j)

    def ket(self) -> "SparseKet":
        return SparseKet.pair(self.spec, self.i, self.j, self.sign)


@dataclass(frozen=True)
class SparseKet:
    """Terms are (index, +1/-1), sorted by index, first sign +1; amplitude 1/sqrt(len)."""

    spec: FieldSpec
    terms: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        if not 1 <= len(self.terms) <= 2:
            raise DomainError(f"sparse ket supports 1 or 2 terms, got {len(self.terms)}")
        object.__setattr__(self, "terms", _canonical_terms(self.terms))
        if len(self.terms) == 2 and self.terms[0][0] == self.terms[1][0]:
            raise DomainError("sparse ket indices must be distinct")

    @classmethod
    def pair(cls, spec: FieldSpec, i: Scalar, j: Scalar, s: int) -> "SparseKet":
        return cls(spec, ((_v(i), 1), (_v(j), -1 if s else 1)))

    @classmethod
    def basis(cls, spec: FieldSpec, m: Scalar) -> "SparseKet":
        return cls(spec, ((_v(m), 1),))

    @property
    def indices(self) -> Tuple[int, ...]:
        return tuple(idx for idx, _ in self.terms)

    def amplitude_sign(self, index: int) -> int:
        for idx, sgn in self.terms:
            if idx == index:
                return sgn
        return 0

    def to_dense(self) -> np.ndarray:
        vec = np.zeros(self.spec.N)
        for idx, sgn in self.terms:
            vec[idx] = sgn / np.sqrt(len(self.terms))
        return vec


def _canonical_terms(terms) -> Tuple[Tuple[int, int], ...]:
    ordered = sorted((int(idx), int(sgn)) for idx, sgn in terms)
    if ordered[0][1] < 0:
        ordered = [(idx, -sgn) for idx, sgn in ordered]
    return tuple(ordered)


@dataclass(frozen=True)
class BellIndex:
    a: int
    l: int


@dataclass(frozen=True)
class DiagonalPhase:
    """|b> -> (-1)^f(b) |b>, with f stored as an N-bit mask (bit b is f(b))."""

    mask: int

    def f(self, b: int) -> int:
        return (self.mask >> b) & 1

    @classmethod
    def zero(cls) -> "DiagonalPhase":
        return cls(0)

    @classmethod
    def norm(cls, spec: FieldSpec) -> "DiagonalPhase":
        # N(0) = 0, N(b) = 1 otherwise
        return cls(((1 << spec.N) - 1) ^ 1)


def apply_L(lam: Scalar, beta: Scalar, ket: SparseKet) -> SparseKet:
    lam, beta = _v(lam), _v(beta)
    if lam == 0:
        raise DomainError("L requires lambda != 0")
    spec = ket.spec
    return SparseKet(spec, tuple((spec.mul(lam, idx) ^ beta, sgn) for idx, sgn in ket.terms))


def apply_L_inverse(lam: Scalar, beta: Scalar, ket: SparseKet) -> SparseKet:
    lam, beta = _v(lam), _v(beta)
    if lam == 0:
        raise DomainError("L requires lambda != 0")
    spec = ket.spec
    lam_inv = spec.inv(lam)
    return apply_L(lam_inv, spec.mul(lam_inv, beta), ket)


def apply_error(a: Scalar, phase: DiagonalPhase, ket: SparseKet) -> SparseKet:
    """X_a after the diagonal phase."""
    a = _v(a)
    return SparseKet(ket.spec, tuple((idx ^ a, -sgn if phase.f(idx) else sgn) for idx, sgn in ket.terms))


def conjugate_bell_phase(spec: FieldSpec, lam: Scalar, beta: Scalar, a: Scalar,
                         phase: DiagonalPhase, b: Scalar, kappa: int) -> BellIndex:
    """Image of Psi_{b,kappa} under I (x) L^-1 X_a P_f L for a diagonal mask f."""
    lam, beta, a, b = _v(lam), _v(beta), _v(a), _v(b)
    if lam == 0:
        raise DomainError("conjugation requires lambda != 0")
    first = spec.mul(lam, b) ^ beta
    second = spec.mul(lam, b ^ 1) ^ beta
    flip = phase.f(first) ^ phase.f(second)
    return BellIndex(b ^ spec.mul(spec.inv(lam), a), kappa ^ flip)


def conjugate_bell(spec: FieldSpec, lam: Scalar, beta: Scalar, a: Scalar, l: int,
                   b: Scalar, kappa: int) -> BellIndex:
    lam, beta, a, b = _v(lam), _v(beta), _v(a), _v(b)
    if lam == 0:
        raise DomainError("conjugation requires lambda != 0")
    if b not in (0, 1):
        raise DomainError(f"b must be 0 or 1, got {b}")
    kappa_out = kappa
    if l and spec.norm(spec.mul(lam, b) ^ beta) != spec.norm(spec.mul(lam, b ^ 1) ^ beta):
        kappa_out ^= 1
    return BellIndex(b ^ spec.mul(spec.inv(lam), a), kappa_out)


def outcome_weights(ket: SparseKet, pair: Pair) -> Tuple[int, int, int]:
    """(Plus, Minus, Outside) probabilities in quarters."""
    i, j = canonical_pair(*pair)
    si, sj = ket.amplitude_sign(i), ket.amplitude_sign(j)
    scale = 2 // len(ket.terms)
    plus = (si + sj) ** 2 * scale
    minus = (si - sj) ** 2 * scale
    return plus, minus, 4 - plus - minus


def probabilities(ket: SparseKet, pair: Pair) -> Tuple[Fraction, Fraction, Fraction]:
    return tuple(Fraction(w, 4) for w in outcome_weights(ket, pair))


def resolve_outcome(ket: SparseKet, pair: Pair, r: int) -> Outcome:
    """Outcome for the uniform quarter index r in 0..3."""
    plus, minus, _ = outcome_weights(ket, pair)
    if r < plus:
        return Outcome.PLUS
    if r < plus + minus:
        return Outcome.MINUS
    return Outcome.OUTSIDE


def measure(ket: SparseKet, pair: Pair, rng: np.random.Generator) -> Outcome:
    return resolve_outcome(ket, pair, int(rng.integers(4)))


def encode_ket(ket: SparseKet) -> bytes:
    out = bytearray()
    for idx, sgn in ket.terms:
        out += idx.to_bytes(2, "big")
        out.append(0 if sgn > 0 else 1)
    return bytes(out)


def decode_ket(spec: FieldSpec, data: bytes) -> SparseKet:
    if len(data) not in (3, 6):
        raise DomainError(f"ket payload must be 3 or 6 bytes, got {len(data)}")
    terms: List[Tuple[int, int]] = []
    for off in range(0, len(data), 3):
        idx = int.from_bytes(data[off:off + 2], "big")
        flag = data[off + 2]
        if idx >= spec.N or flag not in (0, 1):
            raise DomainError(f"bad ket term index={idx} sign={flag}")
        terms.append((idx, -1 if flag else 1))
    return SparseKet(spec, tuple(terms))
