"""Two-way post-processing: parity rounds, the r-bit block stage and parameter selection.

Error matrices are handled as floats here. The closed-form recursion is
evaluated in log space so large k neither underflows nor loses the ratios.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.signal import fftconvolve
from scipy.stats import binom

from app.core.config import settings
from app.core.exceptions import DegenerateInputError, DomainError, InsufficientLengthError
from app.schemas.distill import DistillParams, MatrixRead, ParamSelection, RoundMargins
from app.services.analysis import ErrorMatrix, bell_distribution, error_matrix
from app.services.channels import parse_channel
from app.services.field import field_spec

logger = logging.getLogger(__name__)

SEED_BOUND = 1 << 63


def _as_float_matrix(m: ErrorMatrix) -> ErrorMatrix:
    return ErrorMatrix(*m.as_floats())


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _powers(m: ErrorMatrix, k: int) -> Tuple[float, float, float, float]:
    """log A, log B, log C, log D for k >= 1 (all four powers are nonnegative)."""
    p_I, p_x, p_y, p_z = m.as_floats()
    e = float(1 << k)
    return (e * _log(p_I + p_x), e * _log(abs(p_I - p_x)), e * _log(p_y + p_z), e * _log(abs(p_y - p_z)))


def _logaddexp(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


def ep_recursion(m: ErrorMatrix, k: int) -> ErrorMatrix:
    """Error matrix after k parity rounds on pairs kept iff their Z parities agree."""
    if k < 0:
        raise DomainError(f"k must be >= 0, got {k}")
    if k == 0:
        return m
    la, lb, lc, ld = _powers(m, k)
    ref = max(la, lc)
    if ref == -math.inf:
        raise DegenerateInputError("A + C = 0: no pair survives a parity round")
    A, B, C, D = (math.exp(v - ref) for v in (la, lb, lc, ld))
    norm = 2 * (A + C)
    # clamp rounding residue below zero
    values = [max(0.0, v / norm) for v in (A + B, A - B, C - D, C + D)]
    total = sum(values)
    return ErrorMatrix(*(v / total for v in values))


def majority_stage(m: ErrorMatrix, r: int) -> Tuple[float, float]:
    """(x_fail, z_fail) of one r-bit block: majority of X components, parity of Z components."""
    if r < 1 or r % 2 == 0:
        raise DomainError(f"r must be an odd integer >= 1, got {r}")
    _, p_x, p_y, p_z = m.as_floats()
    x_rate, z_rate = p_x + p_y, p_z + p_y
    z_fail = (1 - (1 - 2 * z_rate) ** r) / 2
    x_fail = float(binom.sf(r // 2, r, x_rate)) if x_rate > 0 else 0.0
    return x_fail, z_fail


def check_secure_condition(m: ErrorMatrix) -> bool:
    """(p_I - p_x)^2 > (p_I + p_x)(p_y + p_z)."""
    p_I, p_x, p_y, p_z = m.as_floats()
    return (p_I - p_x) ** 2 > (p_I + p_x) * (p_y + p_z)


def _largest_odd(x: float) -> int:
    r = int(math.floor(x))
    return r if r % 2 else r - 1


def _existence_margin(m: ErrorMatrix, k: int, factor: float) -> float:
    """log[(B+D)^2] - log[factor C (A+C)]; nonnegative when an r exists."""
    if k == 0:
        p_I, p_x, p_y, p_z = m.as_floats()
        A, B, C, D = p_I + p_x, p_I - p_x, p_y + p_z, p_y - p_z
        lhs, rhs = (B + D) ** 2, factor * C * (A + C)
        if rhs == 0:
            return math.inf if lhs > 0 else 0.0
        return _log(lhs) - math.log(rhs)
    la, lb, lc, ld = _powers(m, k)
    lhs = 2 * _logaddexp(lb, ld)
    rhs = math.log(factor) + lc + _logaddexp(la, lc)
    if rhs == -math.inf:
        return math.inf if lhs > -math.inf else 0.0
    return lhs - rhs


def _finite(value: float) -> float | None:
    return value if math.isfinite(value) else None


def _matrix_read(m: ErrorMatrix) -> MatrixRead:
    return MatrixRead(**m.to_dict())


def select_params(m: ErrorMatrix, budget: DistillParams | None = None, k_max: int | None = None,
                  r_max: int | None = None) -> ParamSelection:
    budget = budget or DistillParams()
    k_max = settings.K_MAX if k_max is None else k_max
    r_max = settings.R_MAX if r_max is None else r_max
    r_max = r_max if r_max % 2 else r_max - 1
    m = _as_float_matrix(m)
    _, p_x, p_y, p_z = m.as_floats()
    if p_x + p_y + p_z == 0:
        params = budget.model_copy(update={"k": 0, "r": 1})
        return ParamSelection(feasible=True, params=params, reason="no residual error")

    factor = budget.margin * 2 / budget.z_budget
    rounds: List[RoundMargins] = []
    for k in range(k_max + 1):
        mk = ep_recursion(m, k)
        _, px_k, py_k, pz_k = mk.as_floats()
        z_rate = py_k + pz_k
        r = r_max if z_rate == 0 else min(r_max, _largest_odd(budget.z_budget / z_rate))
        if r < 1:
            rounds.append(RoundMargins(k=k, matrix=_matrix_read(mk), r=0, feasible=False))
            continue
        majority = 2 * r * (0.5 - px_k - py_k) ** 2 - budget.margin
        existence = _existence_margin(m, k, factor)
        ok = majority >= 0 and existence >= 0
        rounds.append(RoundMargins(k=k, matrix=_matrix_read(mk), r=r, majority_margin=_finite(majority),
                                   existence_margin=_finite(existence), feasible=ok))
        if ok:
            logger.info("parameters selected k=%d r=%d", k, r)
            return ParamSelection(feasible=True, params=budget.model_copy(update={"k": k, "r": r}),
                                  rounds=rounds)
    logger.info("no feasible parameters up to k=%d", k_max)
    return ParamSelection(feasible=False, reason=f"no k <= {k_max} passes both tests", rounds=rounds)


def expected_survival(m: ErrorMatrix, k: int) -> float:
    """Expected fraction of positions left after k parity rounds."""
    m = _as_float_matrix(m)
    fraction = 1.0
    for _ in range(k):
        p_I, p_x, p_y, p_z = m.as_floats()
        fraction *= ((p_I + p_x) ** 2 + (p_y + p_z) ** 2) / 2
        m = ep_recursion(m, 1)
    return fraction


def depolarizing_boundary() -> float:
    """p where the secure-key condition fails for p_x = p_y = p_z = p."""
    return float(brentq(lambda p: (1 - 4 * p) ** 2 - (1 - 2 * p) * (2 * p), 0.0, 0.25))


def residual_verdict(x_fail: float, z_fail: float, css_target: float = 0.01) -> Tuple[float, bool]:
    residual = x_fail + z_fail
    return residual, residual <= css_target


# bit-level simulation


@dataclass
class LabeledKey:
    """Alice's bits with the (x, z) Pauli label of each position; Bob holds alice ^ z."""

    alice: np.ndarray
    x: np.ndarray
    z: np.ndarray
    phase_known: bool = True

    def __post_init__(self):
        self.alice = np.asarray(self.alice, dtype=np.uint8)
        self.x = np.asarray(self.x, dtype=np.uint8)
        self.z = np.asarray(self.z, dtype=np.uint8)
        if not len(self.alice) == len(self.x) == len(self.z):
            raise DomainError("labeled key arrays differ in length")

    def __len__(self) -> int:
        return len(self.alice)

    @property
    def bob(self) -> np.ndarray:
        return self.alice ^ self.z

    @classmethod
    def sample(cls, m: ErrorMatrix, length: int, rng: np.random.Generator) -> "LabeledKey":
        probs = np.array(m.as_floats())
        labels = rng.choice(4, size=length, p=probs / probs.sum())
        alice = rng.integers(2, size=length, dtype=np.uint8)
        # I=0, x=1, y=2, z=3
        return cls(alice, (labels == 1) | (labels == 2), (labels == 2) | (labels == 3))

    @classmethod
    def from_raw_keys(cls, alice: np.ndarray, bob: np.ndarray) -> "LabeledKey":
        alice = np.asarray(alice, dtype=np.uint8)
        z = alice ^ np.asarray(bob, dtype=np.uint8)
        return cls(alice, np.zeros(len(alice), dtype=np.uint8), z, phase_known=False)

    def tallies(self) -> Dict[str, int]:
        code = self.x.astype(np.int64) + 2 * self.z.astype(np.int64)
        # (x, z): (0,0)=I (1,0)=x (1,1)=y (0,1)=z
        counts = np.bincount(code, minlength=4)
        return {"I": int(counts[0]), "x": int(counts[1]), "y": int(counts[3]), "z": int(counts[2])}


def draw_seeds(rng: np.random.Generator, k: int) -> List[int]:
    """One pairing seed per parity round and one grouping seed for the block stage."""
    return [int(s) for s in rng.integers(SEED_BOUND, size=k + 1)]


def pairing(seed: int, length: int) -> Tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(length)
    half = length // 2
    return perm[0:2 * half:2], perm[1:2 * half:2]


def pair_parities(bits: np.ndarray, first: np.ndarray, second: np.ndarray) -> np.ndarray:
    return bits[first] ^ bits[second]


def grouping(seed: int, length: int, r: int) -> np.ndarray:
    """Rows of r positions; r = 1 keeps the key order."""
    if r == 1:
        return np.arange(length).reshape(-1, 1)
    perm = np.random.default_rng(seed).permutation(length)
    blocks = length // r
    return perm[:blocks * r].reshape(blocks, r)


def block_parities(bits: np.ndarray, groups: np.ndarray) -> np.ndarray:
    if groups.size == 0:
        return np.zeros(0, dtype=np.uint8)
    return np.bitwise_xor.reduce(bits[groups], axis=1).astype(np.uint8)


def pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def unpack_bits(data: bytes, count: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=count).astype(np.uint8)


@dataclass
class DistillOutcome:
    alice: np.ndarray
    bob: np.ndarray
    round_lengths: List[int]
    parity_tallies: Dict[str, int]
    final_tallies: Dict[str, int]
    seeds: List[int] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.alice)

    @property
    def disagreement_rate(self) -> float | None:
        if self.length == 0:
            return None
        return float(np.count_nonzero(self.alice != self.bob)) / self.length

    def summary(self) -> Dict:
        return {"length": self.length, "round_lengths": self.round_lengths,
                "disagreement_rate": self.disagreement_rate, "parity_tallies": self.parity_tallies,
                "final_tallies": self.final_tallies}


def minimum_length(params: DistillParams) -> int:
    return (1 << params.k) * params.r


def simulate_distillation(keys: LabeledKey, params: DistillParams, rng: np.random.Generator) -> DistillOutcome:
    required = minimum_length(params)
    if len(keys) < required:
        raise InsufficientLengthError(required, len(keys))
    seeds = draw_seeds(rng, params.k)
    alice, x, z = keys.alice, keys.x, keys.z
    lengths = [len(alice)]
    for t in range(params.k):
        first, second = pairing(seeds[t], len(alice))
        bob = alice ^ z
        keep = pair_parities(alice, first, second) == pair_parities(bob, first, second)
        f, s = first[keep], second[keep]
        alice, x, z = alice[f], x[f] ^ x[s], z[f]
        lengths.append(len(alice))
        logger.debug("parity round %d kept=%d", t, len(alice))
    survived = LabeledKey(alice, x, z, keys.phase_known)

    groups = grouping(seeds[-1], len(alice), params.r)
    bob = alice ^ z
    final_alice, final_bob = block_parities(alice, groups), block_parities(bob, groups)
    if groups.size:
        final_x = (x[groups].sum(axis=1) > params.r // 2).astype(np.uint8)
        final_z = np.bitwise_xor.reduce(z[groups], axis=1).astype(np.uint8)
    else:
        final_x = final_z = np.zeros(0, dtype=np.uint8)
    final = LabeledKey(final_alice, final_x, final_z, keys.phase_known)
    outcome = DistillOutcome(final_alice, final_bob, lengths, survived.tallies(), final.tallies(), seeds)
    logger.info("distillation k=%d r=%d in=%d out=%d disagreement=%s", params.k, params.r, len(keys),
                outcome.length, outcome.disagreement_rate)
    return outcome


def placeholder_hash(bits: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Seeded binary Toeplitz compression to floor(fraction * len) bits. Not a secure extractor."""
    if not 0 < fraction <= 1:
        raise DomainError(f"hash output fraction must be in (0, 1], got {fraction}")
    bits = np.asarray(bits, dtype=np.uint8)
    length = len(bits)
    out = int(math.floor(fraction * length))
    if out == 0:
        return np.zeros(0, dtype=np.uint8)
    diagonals = np.random.default_rng(seed).integers(2, size=length + out - 1)
    conv = fftconvolve(diagonals.astype(float), bits.astype(float))
    window = conv[length - 1:length - 1 + out]
    return (np.rint(window).astype(np.int64) & 1).astype(np.uint8)


def distill_report(m: ErrorMatrix, budget: DistillParams | None = None, auto: bool = True) -> Dict:
    budget = budget or DistillParams()
    m = _as_float_matrix(m)
    selection = select_params(m, budget) if auto else ParamSelection(feasible=True, params=budget)
    report = {"input": m.to_dict(), "secure_condition": check_secure_condition(m),
              "selection": selection.model_dump()}
    if selection.feasible and selection.params is not None:
        params = selection.params
        x_fail, z_fail = majority_stage(ep_recursion(m, params.k), params.r)
        residual, ok = residual_verdict(x_fail, z_fail, params.css_target)
        report.update(x_fail=x_fail, z_fail=z_fail, residual=residual, residual_ok=ok,
                      expected_survival=expected_survival(m, params.k))
    return report


def resolve_matrix(matrix: Sequence[float] | None = None, channel: str | None = None, n: int = 2,
                   modulus: int | None = None) -> ErrorMatrix:
    """Error matrix from an explicit (p_I, p_x, p_y, p_z) or from a unitary channel spec."""
    if (matrix is None) == (channel is None):
        raise DomainError("give exactly one of a matrix or a channel")
    if matrix is not None:
        if len(matrix) != 4:
            raise DomainError(f"matrix needs four entries p_I,p_x,p_y,p_z, got {len(matrix)}")
        return ErrorMatrix(*(float(v) for v in matrix))
    return error_matrix(bell_distribution(parse_channel(channel, field_spec(n, modulus))))
