"""Monte Carlo engine for the prepare-and-measure rounds, sifting and estimation.

Randomness is organised per role in fixed-size blocks: the generator for a
block is seeded by (master seed, role tag, block index) and always draws the
same array shapes, so a round's draws depend only on the seed and its index.
The network roles reuse `alice_block`/`eve_block`/`bob_block`, `prepare`,
`detect`, `sifted_positions`, `choose_sample` and `estimate_eb` unchanged.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterator, List, Tuple

import numpy as np
from scipy.stats import norm as normal

from app.core.exact import Number, as_fraction
from app.core.exceptions import DomainError
from app.schemas.session import Estimate, SessionConfig, SessionStats
from app.services.channels import ChannelModel, parse_channel, realize
from app.services.field import FieldSpec, field_spec
from app.services.qstates import (
    Outcome,
    Pair,
    PairState,
    SparseKet,
    all_pairs,
    line_offset,
    resolve_outcome,
)

logger = logging.getLogger(__name__)

ROLE_ALICE, ROLE_EVE, ROLE_BOB, ROLE_SAMPLE, ROLE_DISTILL = 1, 2, 3, 4, 5

CONFIDENCE = 0.99
NO_OFFSET = -1


def stream(seed: int, role: int, block: int | None = None) -> np.random.Generator:
    key = [seed, role] if block is None else [seed, role, block]
    return np.random.default_rng(key)


@dataclass(frozen=True)
class AliceBlock:
    pair_idx: List[int]
    sign: List[int]


@dataclass(frozen=True)
class EveBlock:
    u: List[float]
    pick: List[int]
    bits: List[List[int]]


@dataclass(frozen=True)
class BobBlock:
    pair_idx: List[int]
    quarter: List[int]
    coin: List[int]


def alice_block(spec: FieldSpec, seed: int, block: int, size: int) -> AliceBlock:
    rng = stream(seed, ROLE_ALICE, block)
    return AliceBlock(rng.integers(spec.pair_count, size=size).tolist(), rng.integers(2, size=size).tolist())


def eve_block(seed: int, block: int, size: int) -> EveBlock:
    rng = stream(seed, ROLE_EVE, block)
    return EveBlock(rng.random(size).tolist(), rng.integers(2, size=size).tolist(),
                    rng.integers(2, size=(size, 2)).tolist())


def bob_block(spec: FieldSpec, seed: int, block: int, size: int) -> BobBlock:
    rng = stream(seed, ROLE_BOB, block)
    return BobBlock(rng.integers(spec.pair_count, size=size).tolist(), rng.integers(4, size=size).tolist(),
                    rng.integers(2, size=size).tolist())


def prepare(spec: FieldSpec, draws: AliceBlock, k: int) -> PairState:
    i, j = all_pairs(spec)[draws.pair_idx[k]]
    return PairState(i, j, draws.sign[k], spec)


def channel_step(model: ChannelModel, ket: SparseKet, draws: EveBlock, k: int) -> SparseKet:
    return realize(model, ket, draws.u[k], draws.pick[k], draws.bits[k])


def detect(spec: FieldSpec, ket: SparseKet, draws: BobBlock, k: int) -> Tuple[Pair, Outcome, int]:
    """Bob's basis, outcome and decoded bit (Plus -> 0, Minus -> 1, Outside -> coin)."""
    pair = all_pairs(spec)[draws.pair_idx[k]]
    outcome = resolve_outcome(ket, pair, draws.quarter[k])
    bit = draws.coin[k] if outcome is Outcome.OUTSIDE else int(outcome)
    return pair, outcome, bit


@dataclass(frozen=True)
class RoundRecord:
    round: int
    i: int
    j: int
    s: int
    bob_i: int
    bob_j: int
    outcome: Outcome
    sifted: bool
    offset: int | None


@dataclass
class RoundLog:
    """Columnar round log; `offset` is NO_OFFSET off the line."""

    spec: FieldSpec
    i: np.ndarray
    j: np.ndarray
    s: np.ndarray
    bob_i: np.ndarray
    bob_j: np.ndarray
    outcome: np.ndarray
    bob_bit: np.ndarray
    offset: np.ndarray

    def __len__(self) -> int:
        return len(self.i)

    @property
    def sifted(self) -> np.ndarray:
        return (self.i == self.bob_i) & (self.j == self.bob_j)

    @property
    def in_pair(self) -> np.ndarray:
        return self.outcome != int(Outcome.OUTSIDE)

    def record(self, k: int) -> RoundRecord:
        offset = int(self.offset[k])
        return RoundRecord(k, int(self.i[k]), int(self.j[k]), int(self.s[k]), int(self.bob_i[k]),
                           int(self.bob_j[k]), Outcome(int(self.outcome[k])), bool(self.sifted[k]),
                           None if offset == NO_OFFSET else offset)

    def records(self) -> Iterator[RoundRecord]:
        for k in range(len(self)):
            yield self.record(k)

    @classmethod
    def concat(cls, spec: FieldSpec, parts: List["RoundLog"]) -> "RoundLog":
        cols = ("i", "j", "s", "bob_i", "bob_j", "outcome", "bob_bit", "offset")
        return cls(spec, *(np.concatenate([getattr(p, c) for p in parts]) for c in cols))

    def to_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "i", "j", "s", "i_prime", "j_prime", "outcome", "sifted", "offset"])
            for rec in self.records():
                writer.writerow([rec.round, rec.i, rec.j, rec.s, rec.bob_i, rec.bob_j, rec.outcome.name.lower(),
                                 int(rec.sifted), "" if rec.offset is None else rec.offset])


@dataclass
class SessionResult:
    alice_key: np.ndarray
    bob_key: np.ndarray
    stats: SessionStats
    log: RoundLog
    # in-pair flags of the final key positions
    in_pair: np.ndarray


def _run_block(spec: FieldSpec, model: ChannelModel, config: SessionConfig, block: int) -> RoundLog:
    start = block * config.block_size
    count = min(config.block_size, config.rounds - start)
    alice = alice_block(spec, config.seed, block, config.block_size)
    eve = eve_block(config.seed, block, config.block_size)
    bob = bob_block(spec, config.seed, block, config.block_size)
    cols = np.zeros((8, count), dtype=np.int64)
    for k in range(count):
        state = prepare(spec, alice, k)
        received = channel_step(model, state.ket(), eve, k)
        pair, outcome, bit = detect(spec, received, bob, k)
        offset = line_offset(spec, state.pair, pair)
        cols[:, k] = (state.i, state.j, state.sign, pair[0], pair[1], int(outcome), bit,
                      NO_OFFSET if offset is None else offset)
    return RoundLog(spec, *cols)


def simulate_rounds(config: SessionConfig) -> RoundLog:
    spec = field_spec(config.n, config.modulus)
    model = parse_channel(config.channel, spec)
    blocks = range(math.ceil(config.rounds / config.block_size))
    # map() keeps block order, so the log is identical for any thread count
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        parts = list(pool.map(lambda b: _run_block(spec, model, config, b), blocks))
    return RoundLog.concat(spec, parts)


def sifted_positions(alice_pairs: np.ndarray, bob_pairs: np.ndarray, in_pair: np.ndarray,
                     keep_outside: bool) -> np.ndarray:
    """Round indices that enter the raw key."""
    keep = np.all(alice_pairs == bob_pairs, axis=1)
    if not keep_outside:
        keep &= in_pair
    return np.flatnonzero(keep)


def choose_sample(length: int, fraction: float, seed: int) -> np.ndarray:
    """Sorted positions of the raw key consumed for BER estimation."""
    if length == 0:
        return np.zeros(0, dtype=np.int64)
    size = min(length, max(1, round(fraction * length)))
    return np.sort(stream(seed, ROLE_SAMPLE).choice(length, size=size, replace=False))


@lru_cache(maxsize=None)
def _z(confidence: float) -> float:
    return float(normal.ppf(0.5 + confidence / 2))


def wilson(successes: int, trials: int, confidence: float = CONFIDENCE) -> Estimate:
    if trials == 0:
        return Estimate(successes=0, trials=0)
    z = _z(confidence)
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    spread = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    low, high = max(0.0, centre - spread), min(1.0, centre + spread)
    return Estimate(value=p, low=low, high=high, half_width=(high - low) / 2,
                    successes=successes, trials=trials)


def estimate_eb(alice_bits: np.ndarray, bob_bits: np.ndarray, in_pair: np.ndarray) -> Tuple[Estimate, Estimate]:
    """(BER over in-pair sample positions, BER over every sample position)."""
    errors = alice_bits != bob_bits
    return (wilson(int(np.count_nonzero(errors & in_pair)), int(np.count_nonzero(in_pair))),
            wilson(int(np.count_nonzero(errors)), len(errors)))


def ec_counts(offset: np.ndarray, in_pair: np.ndarray, reading: str = "outcome") -> Tuple[int, int]:
    """(numerator, denominator) of the accepted-data-rate estimator."""
    line = offset != NO_OFFSET
    if reading == "outcome":
        line &= in_pair
    elif reading != "announcement":
        raise DomainError(f"unknown e_c reading {reading!r}")
    return int(np.count_nonzero(line & (offset == 0))), int(np.count_nonzero(line))


def estimate_ec(log: RoundLog, reading: str = "outcome") -> Estimate:
    """Rate of same-pair measurements among line-pair measurements.

    Bob's pair is uniform over all pairs, so each line pair carries the same
    basis-choice weight and the per-offset normalisation cancels in the ratio.
    An empty denominator gives an undefined estimate.
    """
    if len(log) == 0:
        raise DomainError("e_c needs a nonempty round log")
    return wilson(*ec_counts(log.offset, log.in_pair, reading))


def subspace_ec(log: RoundLog) -> Estimate:
    """N = 4 form: in-pair raw key over in-pair outcomes on the pair or its complement."""
    if log.spec.N != 4:
        raise DomainError("the subspace form of e_c only applies to N = 4")
    complement_i = np.zeros(len(log), dtype=np.int64)
    complement_j = np.zeros(len(log), dtype=np.int64)
    for k in range(len(log)):
        rest = sorted({0, 1, 2, 3} - {int(log.i[k]), int(log.j[k])})
        complement_i[k], complement_j[k] = rest
    on_complement = (log.bob_i == complement_i) & (log.bob_j == complement_j)
    kept = log.sifted & log.in_pair
    return wilson(int(np.count_nonzero(kept)), int(np.count_nonzero(kept | (on_complement & log.in_pair))))


def pm_lhs(e_b: Number, e_c: Number, n: int) -> Fraction:
    if n < 2:
        raise DomainError(f"the condition needs N >= 4, got n={n}")
    N = 1 << n
    e_b, e_c = as_fraction(e_b), as_fraction(e_c)
    return e_b * e_c + Fraction(N - 1, N - 2) * (1 - e_c)


def check_pm_condition(e_b: Number, e_c: Number, n: int) -> bool:
    """e_b e_c + (N-1)(1-e_c)/(N-2) < 1/2, strict."""
    return pm_lhs(e_b, e_c, n) < Fraction(1, 2)


def session_verdict(e_b: Estimate, e_c: Estimate, n: int, gate: str = "confidence"):
    """(point LHS, worst-case LHS over the confidence bounds, verdict).

    The LHS grows with e_b and shrinks with e_c, so the worst case pairs the
    upper e_b bound with the lower e_c bound.
    """
    if not (e_b.defined and e_c.defined):
        return None, None, None
    point = pm_lhs(Fraction(e_b.successes, e_b.trials), Fraction(e_c.successes, e_c.trials), n)
    bound = pm_lhs(e_b.high, e_c.low, n)
    verdict = (bound if gate == "confidence" else point) < Fraction(1, 2)
    return float(point), float(bound), verdict


def outcome_counts(log: RoundLog) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    line = log.offset != NO_OFFSET
    for offset, outcome in zip(log.offset[line].tolist(), log.outcome[line].tolist()):
        key = f"{offset},{Outcome(outcome).name.lower()}"
        counts[key] = counts.get(key, 0) + 1
    return dict(sorted(counts.items()))


def run_session(config: SessionConfig) -> SessionResult:
    logger.info("session start n=%d rounds=%d channel=%s seed=%d", config.n, config.rounds,
                config.channel, config.seed)
    log = simulate_rounds(config)
    alice_pairs = np.stack([log.i, log.j], axis=1)
    bob_pairs = np.stack([log.bob_i, log.bob_j], axis=1)
    kept = sifted_positions(alice_pairs, bob_pairs, log.in_pair, config.keep_outside)
    alice_raw, bob_raw, in_pair_raw = log.s[kept], log.bob_bit[kept], log.in_pair[kept]
    e_c = estimate_ec(log, config.ec_reading)
    base = dict(rounds=config.rounds, raw_key_length=len(kept),
                in_pair_sifted=int(np.count_nonzero(in_pair_raw)),
                outside_sifted=int(np.count_nonzero(~in_pair_raw)), e_c=e_c,
                ec_reading=config.ec_reading, counts=outcome_counts(log), config=config)

    if len(kept) == 0:
        logger.warning("insufficient sift rounds=%d seed=%d", config.rounds, config.seed)
        stats = SessionStats(status="insufficient-sift", sample_size=0, final_key_length=0,
                             e_b=Estimate(), e_b_all=Estimate(), **base)
        empty = np.zeros(0, dtype=np.int64)
        return SessionResult(empty, empty, stats, log, np.zeros(0, dtype=bool))

    sample = choose_sample(len(kept), config.sample_fraction, config.seed)
    e_b, e_b_all = estimate_eb(alice_raw[sample], bob_raw[sample], in_pair_raw[sample])
    keep_mask = np.ones(len(kept), dtype=bool)
    keep_mask[sample] = False

    lhs, bound, verdict = session_verdict(e_b, e_c, config.n, config.gate)
    stats = SessionStats(status="ok", sample_size=len(sample), final_key_length=int(keep_mask.sum()),
                         e_b=e_b, e_b_all=e_b_all, pm_lhs=lhs, pm_lhs_bound=bound, verdict=verdict, **base)
    logger.info("session done sifted=%d e_b=%s e_c=%s verdict=%s", len(kept), e_b.value, e_c.value, verdict)
    return SessionResult(alice_raw[keep_mask], bob_raw[keep_mask], stats, log, in_pair_raw[keep_mask])
