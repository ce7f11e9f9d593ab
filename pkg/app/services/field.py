"""GF(2^n) arithmetic for 2 <= n <= 8.

Elements are ints whose bits are polynomial-basis coordinates. `FieldSpec` owns
the multiplication and inverse tables; `FieldElement` is the typed wrapper used
at API boundaries. Hot loops work on the raw ints through the FieldSpec tables.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import List

import numpy as np

from app.core.exceptions import DomainError, FieldMismatchError

MIN_DEGREE = 2
MAX_DEGREE = 8


def clmul(a: int, b: int) -> int:
    """Carry-less product of two GF(2) polynomials."""
    p = 0
    while b:
        if b & 1:
            p ^= a
        a <<= 1
        b >>= 1
    return p


def poly_mod(a: int, m: int) -> int:
    dm = m.bit_length()
    while a.bit_length() >= dm:
        a ^= m << (a.bit_length() - dm)
    return a


def is_irreducible(poly: int, degree: int) -> bool:
    if poly.bit_length() - 1 != degree:
        return False
    # trial division by every polynomial of degree 1..degree//2
    for d in range(1, degree // 2 + 1):
        for q in range(1 << d, 1 << (d + 1)):
            if poly_mod(poly, q) == 0:
                return False
    return True


@lru_cache(maxsize=None)
def smallest_irreducible(n: int) -> int:
    for poly in range((1 << n) | 1, 1 << (n + 1), 2):
        if is_irreducible(poly, n):
            return poly
    raise DomainError(f"no irreducible polynomial of degree {n}")  # pragma: no cover


@dataclass(frozen=True)
class FieldSpec:
    n: int
    modulus: int
    mul_table: List[List[int]] = field(init=False, repr=False, compare=False)
    inv_table: List[int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not MIN_DEGREE <= self.n <= MAX_DEGREE:
            raise DomainError(f"extension degree n={self.n} outside {MIN_DEGREE}..{MAX_DEGREE}")
        if not is_irreducible(self.modulus, self.n):
            raise DomainError(f"modulus {self.modulus:#x} is not irreducible of degree {self.n}")
        size = 1 << self.n
        table = [[poly_mod(clmul(a, b), self.modulus) for b in range(size)] for a in range(size)]
        inv = [0] * size
        for a in range(1, size):
            row = table[a]
            inv[a] = row.index(1)
        object.__setattr__(self, "mul_table", table)
        object.__setattr__(self, "inv_table", inv)

    @property
    def N(self) -> int:
        return 1 << self.n

    @property
    def pair_count(self) -> int:
        return self.N * (self.N - 1) // 2

    def mul_array(self) -> np.ndarray:
        return np.array(self.mul_table, dtype=np.int64)

    # int-level arithmetic
    def add(self, x: int, y: int) -> int:
        return x ^ y

    def mul(self, x: int, y: int) -> int:
        return self.mul_table[x][y]

    def inv(self, x: int) -> int:
        if x == 0:
            raise DomainError("0 has no multiplicative inverse")
        return self.inv_table[x]

    def pow(self, x: int, e: int) -> int:
        if e < 0:
            return self.pow(self.inv(x), -e)
        result, base = 1, x
        while e:
            if e & 1:
                result = self.mul_table[result][base]
            base = self.mul_table[base][base]
            e >>= 1
        return result

    def norm(self, x: int) -> int:
        return 0 if x == 0 else 1

    def element(self, value: int) -> "FieldElement":
        return FieldElement(value, self)

    def elements(self) -> List["FieldElement"]:
        return [FieldElement(v, self) for v in range(self.N)]

    def __str__(self) -> str:
        return f"GF(2^{self.n}) mod {self.modulus:#x}"


@lru_cache(maxsize=None)
def field_spec(n: int, modulus: int | None = None) -> FieldSpec:
    if not MIN_DEGREE <= n <= MAX_DEGREE:
        raise DomainError(f"extension degree n={n} outside {MIN_DEGREE}..{MAX_DEGREE}")
    return FieldSpec(n, modulus if modulus is not None else smallest_irreducible(n))


@dataclass(frozen=True)
class FieldElement:
    value: int
    spec: FieldSpec

    def __post_init__(self):
        if not 0 <= self.value < self.spec.N:
            raise DomainError(f"{self.value} is not an element of {self.spec}")

    def _check(self, other: "FieldElement") -> None:
        if self.spec != other.spec:
            raise FieldMismatchError(f"cannot combine elements of {self.spec} and {other.spec}")

    def __add__(self, other: "FieldElement") -> "FieldElement":
        return add(self, other)

    __sub__ = __add__

    def __mul__(self, other: "FieldElement") -> "FieldElement":
        return mul(self, other)

    def __truediv__(self, other: "FieldElement") -> "FieldElement":
        return mul(self, inv(other))

    def __pow__(self, e: int) -> "FieldElement":
        return pow_(self, e)

    def __int__(self) -> int:
        return self.value

    def __bool__(self) -> bool:
        return self.value != 0

    def __str__(self) -> str:
        return str(self.value)


def add(x: FieldElement, y: FieldElement) -> FieldElement:
    x._check(y)
    return FieldElement(x.value ^ y.value, x.spec)


def mul(x: FieldElement, y: FieldElement) -> FieldElement:
    x._check(y)
    return FieldElement(x.spec.mul(x.value, y.value), x.spec)


def inv(x: FieldElement) -> FieldElement:
    return FieldElement(x.spec.inv(x.value), x.spec)


def pow_(x: FieldElement, e: int) -> FieldElement:
    return FieldElement(x.spec.pow(x.value, e), x.spec)


def norm(b: FieldElement) -> int:
    """N(b) = b^(N-1): 0 at 0, 1 elsewhere."""
    return b.spec.norm(b.value)
