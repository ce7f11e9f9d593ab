"""Adversary and noise models for the quantum channel.

A model is a finite mixture of unitary terms X_a . P_f (shift after a diagonal
phase) plus, optionally, a computational-basis intercept-resend term. Weights
are exact fractions summing to one.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import List, Tuple, Union

import numpy as np

from app.core.exact import as_fraction, parse_probability
from app.core.exceptions import ChannelSpecError
from app.services.field import FieldSpec
from app.services.qstates import DiagonalPhase, SparseKet, apply_error

logger = logging.getLogger(__name__)

# explicit mask mixture up to N = 16; beyond that one uniformly random mask per use
EXPLICIT_DEPHASE_MAX_N = 4


@dataclass(frozen=True)
class Unitary:
    a: int
    phase: DiagonalPhase


@dataclass(frozen=True)
class RandomPhase:
    """Shift `a` after a phase mask drawn uniformly from all 2^N masks."""

    a: int = 0


@dataclass(frozen=True)
class InterceptResend:
    basis: str = "computational"


Action = Union[Unitary, RandomPhase, InterceptResend]


@dataclass(frozen=True)
class ChannelModel:
    spec: FieldSpec
    terms: Tuple[Tuple[Fraction, Action], ...]
    name: str = "custom"
    _cumulative: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.terms:
            raise ChannelSpecError("channel needs at least one term")
        total = Fraction(0)
        for p, action in self.terms:
            if p < 0 or p > 1:
                raise ChannelSpecError(f"term probability {p} outside [0, 1]")
            if isinstance(action, (Unitary, RandomPhase)) and not 0 <= action.a < self.spec.N:
                raise ChannelSpecError(f"shift {action.a} is not an element of {self.spec}")
            if isinstance(action, Unitary) and action.phase.mask >> self.spec.N:
                raise ChannelSpecError(f"phase mask {action.phase.mask:#x} wider than N={self.spec.N}")
            total += p
        if total != 1:
            raise ChannelSpecError(f"term probabilities sum to {total}, not 1")
        cumulative = np.cumsum([float(p) for p, _ in self.terms])
        cumulative[-1] = 1.0
        object.__setattr__(self, "_cumulative", cumulative)

    @property
    def is_unitary(self) -> bool:
        return all(isinstance(action, (Unitary, RandomPhase)) for _, action in self.terms)

    def pick(self, u: float) -> Action:
        if len(self.terms) == 1:
            return self.terms[0][1]
        return self.terms[int(np.searchsorted(self._cumulative, u, side="right"))][1]


def _drop_empty(terms: List[Tuple[Fraction, Action]]) -> Tuple[Tuple[Fraction, Action], ...]:
    return tuple((p, action) for p, action in terms if p > 0)


def _probability(value, what: str) -> Fraction:
    p = as_fraction(value)
    if p < 0 or p > 1:
        raise ChannelSpecError(f"{what}={value} outside [0, 1]")
    return p


def builtin(name: str, spec: FieldSpec, param=None, custom: List[Tuple] | None = None) -> ChannelModel:
    identity = Unitary(0, DiagonalPhase.zero())
    if name == "identity":
        return ChannelModel(spec, ((Fraction(1), identity),), "identity")
    if name == "z_flip":
        q = _probability(param, "q")
        terms = [(1 - q, identity), (q, Unitary(0, DiagonalPhase.norm(spec)))]
        return ChannelModel(spec, _drop_empty(terms), f"z_flip:{param}")
    if name == "shift_noise":
        eta = _probability(param, "eta")
        share = eta / (spec.N - 1)
        terms = [(1 - eta, identity)] + [(share, Unitary(a, DiagonalPhase.zero())) for a in range(1, spec.N)]
        return ChannelModel(spec, _drop_empty(terms), f"shift_noise:{param}")
    if name == "full_dephase":
        if spec.n <= EXPLICIT_DEPHASE_MAX_N:
            weight = Fraction(1, 1 << spec.N)
            terms = tuple((weight, Unitary(0, DiagonalPhase(mask))) for mask in range(1 << spec.N))
            return ChannelModel(spec, terms, "full_dephase")
        return ChannelModel(spec, ((Fraction(1), RandomPhase(0)),), "full_dephase")
    if name == "partial_intercept":
        eta = _probability(param, "eta")
        terms = [(1 - eta, identity), (eta, InterceptResend())]
        return ChannelModel(spec, _drop_empty(terms), f"partial_intercept:{param}")
    if name == "custom":
        if not custom:
            raise ChannelSpecError("custom channel needs at least one (p, a, f) term")
        terms = tuple((_probability(p, "p"), Unitary(int(a), DiagonalPhase(int(f)))) for p, a, f in custom)
        return ChannelModel(spec, terms, "custom")
    raise ChannelSpecError(f"unknown channel {name!r}")


_CUSTOM_TERM = re.compile(r"\(\s*([^,()]+?)\s*,\s*a\s*=\s*(\w+)\s*,\s*f\s*=\s*(\w+)\s*\)")


@lru_cache(maxsize=64)
def parse_channel(text: str, spec: FieldSpec) -> ChannelModel:
    """Parse `name`, `name:param` or `custom:[(p,a=..,f=0x..),...]`."""
    text = text.strip()
    name, _, arg = text.partition(":")
    name = name.strip()
    if name == "custom":
        body = arg.strip()
        if not (body.startswith("[") and body.endswith("]")):
            raise ChannelSpecError(f"custom channel needs a [...] term list: {text!r}")
        inner = body[1:-1]
        terms = []
        for match in _CUSTOM_TERM.finditer(inner):
            p, a, f = match.groups()
            try:
                terms.append((parse_probability(p), int(a, 0), int(f, 0)))
            except ValueError as e:
                raise ChannelSpecError(f"bad custom term {match.group(0)!r}: {e}") from e
        leftover = _CUSTOM_TERM.sub("", inner).replace(",", "").strip()
        if leftover:
            raise ChannelSpecError(f"unparsed custom channel text: {leftover!r}")
        return builtin("custom", spec, custom=terms)
    if name in ("identity", "full_dephase"):
        if arg:
            raise ChannelSpecError(f"{name} takes no parameter")
        return builtin(name, spec)
    if name in ("z_flip", "shift_noise", "partial_intercept"):
        if not arg:
            raise ChannelSpecError(f"{name} needs a parameter, e.g. {name}:0.1")
        try:
            value = parse_probability(arg)
        except ValueError as e:
            raise ChannelSpecError(f"bad parameter for {name}: {arg!r}") from e
        model = builtin(name, spec, value)
        return ChannelModel(model.spec, model.terms, text)
    raise ChannelSpecError(f"unknown channel {name!r}")


def realize(model: ChannelModel, ket: SparseKet, u: float, pick: int, bits) -> SparseKet:
    """Apply the term selected by the uniform `u`; `pick` and `bits` feed the random sub-actions."""
    action = model.pick(u)
    if isinstance(action, Unitary):
        return apply_error(action.a, action.phase, ket)
    if isinstance(action, RandomPhase):
        mask = 0
        for idx, bit in zip(ket.indices, bits):
            mask |= int(bit) << idx
        return apply_error(action.a, DiagonalPhase(mask), ket)
    # computational-basis measurement: each support index with equal weight
    return SparseKet.basis(ket.spec, ket.indices[pick % len(ket.terms)])


def transmit(model: ChannelModel, ket: SparseKet, rng: np.random.Generator) -> SparseKet:
    return realize(model, ket, float(rng.random()), int(rng.integers(2)), rng.integers(2, size=2).tolist())
