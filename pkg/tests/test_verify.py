import numpy as np

from app.services.field import field_spec
from app.services.qstates import BellIndex, DiagonalPhase
from app.services.verify import (
    SuiteResult, conjugation_suite, dense_conjugate, field_axioms, mask_suite, run_verify, sum_rule_suite,
)

def test_suite_line():
    assert SuiteResult("conjugation", 768, 768).line() == "conjugation: 768/768 ok"
    assert not SuiteResult("x", 1, 2).passed

def test_exhaustive_conjugation_n2():
    result = conjugation_suite(field_spec(2), np.random.default_rng(0))
    assert (result.ok, result.total) == (768, 768)

def test_random_conjugation_n3():
    result = conjugation_suite(field_spec(3), np.random.default_rng(0), samples=2000)
    assert result.passed and result.total == 2000

def test_dense_oracle_identity():
    spec = field_spec(2)
    for b in (0, 1):
        for kappa in (0, 1):
            assert dense_conjugate(spec, 1, 0, 0, DiagonalPhase.zero(), b, kappa) == BellIndex(b, kappa)

def test_field_axioms_exhaustive_and_sampled():
    small = field_axioms(field_spec(3), np.random.default_rng(0))
    assert small.passed and small.total == 8 ** 3
    large = field_axioms(field_spec(6), np.random.default_rng(0), samples=500)
    assert large.passed and large.total == 500

def test_mask_and_sum_rule_suites():
    rng = np.random.default_rng(1)
    assert mask_suite(field_spec(3), rng, samples=300).passed
    assert sum_rule_suite(field_spec(3), rng, channels=10).passed

def test_run_verify_n2():
    results = run_verify(2, seed=0, implication_samples=300)
    assert [r.name for r in results] == [
        "field", "conjugation", "mask reduction", "sum rule", "implication"]
    assert all(r.passed for r in results)
    assert results[1].line() == "conjugation: 768/768 ok"
