import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from app.core.exceptions import DomainError
from app.schemas.session import SessionConfig
from app.services import protocol
from app.services.analysis import channel_observables
from app.services.channels import parse_channel
from app.services.field import field_spec
from app.services.protocol import (
    NO_OFFSET, RoundLog, alice_block, check_pm_condition, choose_sample, ec_counts, estimate_eb, estimate_ec,
    pm_lhs, run_session, session_verdict, sifted_positions, simulate_rounds, subspace_ec, wilson,
)

def _within(estimate, expected, sigmas=4.0):
    p = float(expected)
    sigma = math.sqrt(max(p * (1 - p), 1e-4) / estimate.trials)
    return abs(estimate.value - p) <= sigmas * sigma

def test_blocks_depend_only_on_seed_and_index():
    spec = field_spec(3)
    a = alice_block(spec, 9, 4, 16)
    b = alice_block(spec, 9, 4, 16)
    c = alice_block(spec, 9, 5, 16)
    assert a == b
    assert a != c

def test_round_log_independent_of_threads():
    base = dict(n=2, rounds=700, channel="z_flip:0.3", seed=3, block_size=64)
    one = simulate_rounds(SessionConfig(threads=1, **base))
    four = simulate_rounds(SessionConfig(threads=4, **base))
    for col in ("i", "j", "s", "bob_i", "bob_j", "outcome", "bob_bit", "offset"):
        assert np.array_equal(getattr(one, col), getattr(four, col))

def test_round_log_columns_are_consistent():
    log = simulate_rounds(SessionConfig(n=2, rounds=500, seed=2, block_size=100))
    assert len(log) == 500
    assert np.all(log.i < log.j)
    sifted = log.sifted
    assert np.all(log.offset[sifted] == 0)
    rec = log.record(0)
    assert rec.round == 0 and (rec.offset is None) == (log.offset[0] == NO_OFFSET)

def test_identity_channel_has_no_errors():
    result = run_session(SessionConfig(n=2, rounds=6000, channel="identity", seed=1))
    stats = result.stats
    assert stats.status == "ok"
    assert stats.e_b.value == 0
    assert stats.e_c.value == 1
    assert stats.verdict is True
    assert np.array_equal(result.alice_key[result.in_pair], result.bob_key[result.in_pair])
    assert stats.final_key_length == len(result.alice_key) == stats.raw_key_length - stats.sample_size

@pytest.mark.parametrize("n, channel", [(2, "z_flip:0.3"), (2, "shift_noise:0.2"), (3, "z_flip:0.1"),
                                        (2, "partial_intercept:0.4")])
def test_monte_carlo_matches_exact_observables(n, channel):
    spec = field_spec(n)
    e_b, e_c = channel_observables(parse_channel(channel, spec))
    stats = run_session(SessionConfig(n=n, rounds=40_000, channel=channel, seed=7, sample_fraction=0.5)).stats
    assert _within(stats.e_b, e_b)
    assert _within(stats.e_c, e_c)

@settings(max_examples=15, deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2**32 - 1), st.sampled_from([2000, 3000, 5000]))
def test_sift_rate_and_error_estimate_per_seed(seed, rounds):
    stats = run_session(SessionConfig(n=2, rounds=rounds, channel="z_flip:0.3", seed=seed,
                                      sample_fraction=0.5)).stats
    # Bob's pair is uniform over the C = 6 pairs, independent of Alice's
    p = 1 / field_spec(2).pair_count
    assert abs(stats.raw_key_length - rounds * p) <= 4 * math.sqrt(rounds * p * (1 - p))
    assert _within(stats.e_b, Fraction(3, 20))

def test_error_estimate_is_unbiased_over_seeds():
    values = [run_session(SessionConfig(n=2, rounds=3000, channel="z_flip:0.3", seed=seed,
                                        sample_fraction=0.5)).stats.e_b.value for seed in range(100)]
    spread = np.std(values, ddof=1) / math.sqrt(len(values))
    assert abs(np.mean(values) - 0.15) < 4 * spread

def test_full_dephase_fails_the_condition():
    stats = run_session(SessionConfig(n=2, rounds=60_000, channel="full_dephase", seed=4)).stats
    assert _within(stats.e_b, Fraction(1, 2))
    assert stats.verdict is False

def test_insufficient_sift(monkeypatch):
    spec = field_spec(2)
    log = RoundLog(spec, np.array([0]), np.array([1]), np.array([0]), np.array([2]), np.array([3]),
                   np.array([2]), np.array([1]), np.array([2]))
    monkeypatch.setattr(protocol, "simulate_rounds", lambda config: log)
    result = run_session(SessionConfig(n=2, rounds=1, seed=0))
    assert result.stats.status == "insufficient-sift"
    assert result.stats.verdict is None
    assert len(result.alice_key) == 0

def test_announcement_reading_estimates_basis_ratio():
    # every line pair is chosen with equal weight, so the announcement-only rate is 1/(N/2) = 2/N
    stats = run_session(SessionConfig(n=2, rounds=20_000, seed=5, ec_reading="announcement")).stats
    assert _within(stats.e_c, Fraction(1, 2))

def test_subspace_form_matches_estimator_at_n2():
    log = simulate_rounds(SessionConfig(n=2, rounds=3000, channel="shift_noise:0.3", seed=8))
    assert subspace_ec(log) == estimate_ec(log)
    with pytest.raises(DomainError):
        subspace_ec(simulate_rounds(SessionConfig(n=3, rounds=10, seed=8)))

def test_sifted_positions_drop_outside_on_request():
    alice = np.array([[0, 1], [0, 1], [1, 2]])
    bob = np.array([[0, 1], [0, 1], [0, 2]])
    in_pair = np.array([True, False, True])
    assert sifted_positions(alice, bob, in_pair, True).tolist() == [0, 1]
    assert sifted_positions(alice, bob, in_pair, False).tolist() == [0]

def test_choose_sample_is_sorted_and_seeded():
    sample = choose_sample(1000, 0.1, 3)
    assert len(sample) == 100
    assert np.all(np.diff(sample) > 0)
    assert np.array_equal(sample, choose_sample(1000, 0.1, 3))
    assert len(choose_sample(0, 0.1, 3)) == 0
    assert len(choose_sample(3, 0.01, 3)) == 1

def test_wilson_interval():
    est = wilson(5, 10)
    assert est.value == 0.5
    assert est.low == pytest.approx(1 - est.high)
    assert 0 < est.low < 0.5 < est.high < 1
    zero = wilson(0, 50)
    assert zero.low == 0 and zero.high > 0
    assert wilson(0, 0).value is None

def test_estimate_eb_split():
    alice = np.array([0, 1, 0, 1])
    bob = np.array([0, 0, 1, 1])
    in_pair = np.array([True, True, False, False])
    e_b, e_b_all = estimate_eb(alice, bob, in_pair)
    assert (e_b.successes, e_b.trials) == (1, 2)
    assert (e_b_all.successes, e_b_all.trials) == (2, 4)

def test_ec_counts_readings():
    offset = np.array([0, 0, 2, NO_OFFSET, 2])
    in_pair = np.array([True, False, True, True, False])
    assert ec_counts(offset, in_pair, "outcome") == (1, 2)
    assert ec_counts(offset, in_pair, "announcement") == (2, 4)
    with pytest.raises(DomainError):
        ec_counts(offset, in_pair, "other")

def test_pm_condition_exact():
    assert pm_lhs(0, 1, 2) == 0
    assert pm_lhs(Fraction(1, 2), 1, 2) == Fraction(1, 2)
    assert not check_pm_condition(Fraction(1, 2), 1, 2)
    assert check_pm_condition(Fraction(49, 100), 1, 2)
    # (N-1)/(N-2) (1 - e_c) at N = 8, e_c = 0.9: 7/6 * 1/10
    assert pm_lhs(0, Fraction(9, 10), 3) == Fraction(7, 60)

def test_session_verdict_gates():
    e_b, e_c = wilson(40, 100), wilson(100, 100)
    point, bound, verdict = session_verdict(e_b, e_c, 2, "point")
    assert point == pytest.approx(0.4)
    assert bound > point
    assert verdict is True
    _, _, strict = session_verdict(wilson(45, 100), e_c, 2, "confidence")
    assert strict is False
    assert session_verdict(wilson(0, 0), e_c, 2) == (None, None, None)

def test_confidence_gate_is_the_default():
    assert SessionConfig().gate == "confidence"
    e_b, e_c = wilson(40, 100), wilson(100, 100)
    assert session_verdict(e_b, e_c, 2, "point")[2] is True
    assert session_verdict(e_b, e_c, 2, "confidence")[2] is False
    assert session_verdict(e_b, e_c, 2) == session_verdict(e_b, e_c, 2, "confidence")

def test_round_log_csv(tmp_path):
    log = simulate_rounds(SessionConfig(n=2, rounds=20, seed=1))
    path = tmp_path / "rounds.csv"
    log.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "round,i,j,s,i_prime,j_prime,outcome,sifted,offset"
    assert len(lines) == 21
