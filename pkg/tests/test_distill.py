import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError

from app.core.exceptions import DomainError, InsufficientLengthError
from app.schemas.distill import DistillParams
from app.services.analysis import ErrorMatrix
from app.services.distill import (
    LabeledKey, block_parities, check_secure_condition, depolarizing_boundary, distill_report, draw_seeds,
    ep_recursion, expected_survival, grouping, majority_stage, pack_bits, pairing, placeholder_hash,
    resolve_matrix, residual_verdict, select_params, simulate_distillation, unpack_bits,
)

M = ErrorMatrix(0.75, 0.05, 0.05, 0.15)

def test_one_round_recursion_values():
    assert ep_recursion(M, 1).as_floats() == pytest.approx((0.830882, 0.110294, 0.022059, 0.036765), abs=1e-6)

def test_closed_form_equals_iterated_steps():
    m = M
    for k in range(1, 8):
        m = ep_recursion(m, 1)
        assert ep_recursion(M, k).as_floats() == pytest.approx(m.as_floats(), abs=1e-12)

def test_recursion_large_k_stays_normalized():
    m = ep_recursion(M, 30)
    assert sum(m.as_floats()) == pytest.approx(1.0)
    assert all(v >= 0 for v in m.as_floats())

def test_recursion_edge_cases():
    assert ep_recursion(M, 0) is M
    with pytest.raises(DomainError):
        ep_recursion(M, -1)
    # no I or X component: every surviving pair is Y or Z with equal weight
    assert ep_recursion(ErrorMatrix(0.0, 0.0, 0.5, 0.5), 1).as_floats() == pytest.approx((0, 0, 0.5, 0.5))

unit = st.floats(0, 1, allow_nan=False)

@settings(max_examples=300, deadline=None)
@given(st.floats(0, 0.49, allow_nan=False), st.tuples(unit, unit, unit), st.integers(1, 2))
def test_recursion_keeps_a_majority_identity_component(rest, weights, k):
    total = sum(weights) or 1.0
    p_x, p_y, p_z = (rest * w / total for w in weights)
    p_I = 1 - p_x - p_y - p_z
    out_I, out_x, out_y, out_z = ep_recursion(ErrorMatrix(p_I, p_x, p_y, p_z), k).as_floats()
    assert out_I > 0.5
    assert out_I - out_z > out_x - out_y

def test_majority_stage():
    m = ErrorMatrix(0.8, 0.1, 0.0, 0.1)
    assert majority_stage(m, 1) == pytest.approx((0.1, 0.1))
    x_fail, z_fail = majority_stage(m, 3)
    assert x_fail == pytest.approx(3 * 0.01 * 0.9 + 0.001)
    assert z_fail == pytest.approx((1 - 0.8 ** 3) / 2)
    with pytest.raises(DomainError):
        majority_stage(m, 2)

def test_secure_condition_and_depolarizing_boundary():
    p = depolarizing_boundary()
    assert p == pytest.approx((5 - math.sqrt(5)) / 20, abs=1e-9)
    assert p == pytest.approx(0.138197, abs=1e-6)
    below = ErrorMatrix(1 - 3 * (p - 0.01), p - 0.01, p - 0.01, p - 0.01)
    above = ErrorMatrix(1 - 3 * (p + 0.01), p + 0.01, p + 0.01, p + 0.01)
    assert check_secure_condition(below)
    assert not check_secure_condition(above)

def test_select_params_no_error():
    selection = select_params(ErrorMatrix(1, 0, 0, 0))
    assert selection.feasible
    assert (selection.params.k, selection.params.r) == (0, 1)

def test_select_params_z_flip():
    selection = select_params(resolve_matrix(channel="z_flip:0.3", n=2))
    assert selection.feasible
    assert (selection.params.k, selection.params.r) == (3, 5315)
    assert [r.feasible for r in selection.rounds] == [False, False, False, True]

def test_select_params_infeasible_past_the_boundary():
    selection = select_params(ErrorMatrix(0.4, 0.2, 0.2, 0.2), k_max=6)
    assert not selection.feasible
    assert selection.params is None
    assert len(selection.rounds) == 7

def test_expected_survival():
    assert expected_survival(M, 0) == 1.0
    assert expected_survival(M, 1) == pytest.approx((0.8 ** 2 + 0.2 ** 2) / 2)

def test_residual_verdict():
    assert residual_verdict(0.004, 0.005) == (pytest.approx(0.009), True)
    assert residual_verdict(0.01, 0.005)[1] is False

def test_params_validation():
    with pytest.raises(ValidationError):
        DistillParams(r=4)
    with pytest.raises(ValidationError):
        DistillParams(z_budget=0.02, css_target=0.01)

def test_resolve_matrix():
    assert resolve_matrix([1, 0, 0, 0]).as_floats() == (1.0, 0.0, 0.0, 0.0)
    assert resolve_matrix(channel="z_flip:0.3").as_floats() == pytest.approx((0.85, 0, 0, 0.15))
    with pytest.raises(DomainError):
        resolve_matrix()
    with pytest.raises(DomainError):
        resolve_matrix([1, 0, 0])

def test_labeled_key_from_raw_keys():
    keys = LabeledKey.from_raw_keys(np.array([0, 1, 1, 0]), np.array([0, 0, 1, 1]))
    assert not keys.phase_known
    assert keys.tallies() == {"I": 2, "x": 0, "y": 0, "z": 2}
    assert np.array_equal(keys.bob, [0, 0, 1, 1])

def test_pairing_and_grouping():
    first, second = pairing(5, 11)
    assert len(first) == len(second) == 5
    assert len(set(first.tolist()) | set(second.tolist())) == 10
    assert np.array_equal(grouping(5, 6, 1).ravel(), np.arange(6))
    groups = grouping(5, 10, 3)
    assert groups.shape == (3, 3)
    assert len(set(groups.ravel().tolist())) == 9

def test_block_parities_and_bitmaps():
    bits = np.array([1, 0, 1, 1, 1, 1], dtype=np.uint8)
    assert block_parities(bits, np.array([[0, 1, 2], [3, 4, 5]])).tolist() == [0, 1]
    assert block_parities(bits, np.zeros((0, 3), dtype=np.int64)).tolist() == []
    data = pack_bits(bits)
    assert len(data) == 1
    assert unpack_bits(data, 6).tolist() == bits.tolist()

def test_draw_seeds():
    seeds = draw_seeds(np.random.default_rng(1), 3)
    assert len(seeds) == 4
    assert all(0 <= s < 2 ** 63 for s in seeds)

def test_simulated_frequencies_follow_recursion():
    length = 200_000
    keys = LabeledKey.sample(M, length, np.random.default_rng(3))
    outcome = simulate_distillation(keys, DistillParams(k=2, r=1), np.random.default_rng(4))
    total = sum(outcome.parity_tallies.values())
    assert outcome.round_lengths[0] == length and outcome.round_lengths[-1] == total
    expected = ep_recursion(M, 2).to_dict()
    for label, key in (("I", "p_I"), ("x", "p_x"), ("y", "p_y"), ("z", "p_z")):
        p = expected[key]
        observed = outcome.parity_tallies[label] / total
        assert abs(observed - p) < 4 * math.sqrt(p * (1 - p) / total)
    survival = expected_survival(M, 2)
    assert abs(total / length - survival) < 0.01

@settings(max_examples=50, deadline=None)
@given(st.integers(1, 500), st.integers(0, 2**32 - 1))
def test_no_rounds_and_single_bit_blocks_is_the_identity(length, seed):
    keys = LabeledKey.sample(M, length, np.random.default_rng(seed))
    outcome = simulate_distillation(keys, DistillParams(k=0, r=1), np.random.default_rng(seed + 1))
    assert np.array_equal(outcome.alice, keys.alice)
    assert np.array_equal(outcome.bob, keys.bob)
    assert outcome.final_tallies == keys.tallies()
    assert outcome.round_lengths == [length]

def test_block_stage_disagreement_equals_z_labels():
    keys = LabeledKey.sample(M, 30_000, np.random.default_rng(6))
    outcome = simulate_distillation(keys, DistillParams(k=1, r=3), np.random.default_rng(7))
    tallies = outcome.final_tallies
    assert outcome.length == sum(tallies.values())
    assert outcome.disagreement_rate == pytest.approx((tallies["y"] + tallies["z"]) / outcome.length)
    assert len(outcome.seeds) == 2

def test_z_flip_pipeline_meets_budget():
    m = resolve_matrix(channel="z_flip:0.3")
    params = select_params(m).params
    x_fail, z_fail = majority_stage(ep_recursion(m, params.k), params.r)
    assert residual_verdict(x_fail, z_fail)[1]
    keys = LabeledKey.sample(m, 2_000_000, np.random.default_rng(8))
    outcome = simulate_distillation(keys, params, np.random.default_rng(9))
    assert outcome.length > 0
    # block errors are rare events: Poisson bound around the expected count
    expected = outcome.length * z_fail
    errors = outcome.disagreement_rate * outcome.length
    assert errors <= expected + 4 * math.sqrt(expected) + 1

def test_insufficient_length():
    keys = LabeledKey.sample(M, 10, np.random.default_rng(1))
    with pytest.raises(InsufficientLengthError) as exc:
        simulate_distillation(keys, DistillParams(k=2, r=3), np.random.default_rng(1))
    assert exc.value.required == 12

def test_placeholder_hash():
    rng = np.random.default_rng(2)
    a = rng.integers(2, size=200).astype(np.uint8)
    b = rng.integers(2, size=200).astype(np.uint8)
    ha = placeholder_hash(a, 0.5, 11)
    assert len(ha) == 100
    assert set(ha.tolist()) <= {0, 1}
    assert np.array_equal(ha, placeholder_hash(a, 0.5, 11))
    # Toeplitz hashing is linear over GF(2)
    assert np.array_equal(placeholder_hash(a ^ b, 0.5, 11), ha ^ placeholder_hash(b, 0.5, 11))
    with pytest.raises(DomainError):
        placeholder_hash(a, 0, 11)

def test_distill_report_trivial():
    report = distill_report(ErrorMatrix(1, 0, 0, 0))
    assert report["selection"]["feasible"]
    assert report["selection"]["params"]["k"] == 0
    assert report["x_fail"] == 0 and report["z_fail"] == 0
    assert report["residual_ok"] is True
