import os
import sys

# ensure project root is on sys.path so "import app" works when running the script directly
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

import asyncio
import math

import numpy as np

from app.schemas.distill import DistillParams
from app.schemas.netrun import ProtocolParams
from app.schemas.session import SessionConfig
from app.netrun.roles import CONDITION_FAILED, run_local
from app.services.analysis import (ErrorMatrix, bell_distribution, channel_observables,
                                   condition_implication_sweep, error_matrix)
from app.services.channels import parse_channel
from app.services.distill import (LabeledKey, ep_recursion, majority_stage, select_params,
                                  simulate_distillation)
from app.services.field import field_spec
from app.services.protocol import run_session
from app.services.threshold import e_max_scan, iff_scan
from app.services.verify import run_verify

CHANNELS = ["identity", "z_flip:0.1", "z_flip:0.3", "shift_noise:0.2", "partial_intercept:0.4"]

failures = []

def check(ok, label):
    if not ok:
        failures.append(label)
    return ok

def within(count, trials, p, sigmas=4.0):
    sigma = math.sqrt(max(p * (1 - p), 1e-4) / trials)
    return abs(count / trials - p) <= sigmas * sigma

def threshold():
    print("Scanning thresholds...")
    for n in (2, 3, 4):
        summary, _ = e_max_scan(n, 2000)
        iff = iff_scan(n)
        ok = (summary.violations_below_half == 0 and iff.passed
              and abs(summary.e_max - 0.5) <= summary.resolution)
        check(ok, f"threshold n={n}")
        print(f"  n={n} e_max={summary.e_max:.6f} certified={summary.certified:.6f} "
              f"violations={summary.violations_below_half} iff={iff.passed} {'ok' if ok else 'FAIL'}")

def implication(samples):
    print("Checking condition implication...")
    for n in (2, 3):
        result = condition_implication_sweep(n, samples, seed=1)
        check(result["counterexamples"] == 0, f"implication n={n}")
        print(f"  n={n} accepted={result['accepted']} counterexamples={result['counterexamples']}")

def conjugation():
    print("Running identity suites...")
    for n in (2, 3, 4):
        for suite in run_verify(n, seed=0):
            check(suite.passed, f"verify n={n} {suite.name}")
            print(f"  {suite.line()}")

def monte_carlo(rounds):
    print("Comparing Monte Carlo with the exact analysis...")
    for n in (2, 3):
        spec = field_spec(n)
        for channel in CHANNELS:
            e_b, e_c = (float(v) for v in channel_observables(parse_channel(channel, spec)))
            stats = run_session(SessionConfig(n=n, rounds=rounds, channel=channel, seed=7)).stats
            ok = (within(stats.e_b.successes, stats.e_b.trials, e_b)
                  and within(stats.e_c.successes, stats.e_c.trials, e_c))
            check(ok, f"monte carlo n={n} {channel}")
            print(f"  n={n} {channel}: e_b={stats.e_b.value:.4f} ({e_b:.4f}) "
                  f"e_c={stats.e_c.value:.4f} ({e_c:.4f}) {'ok' if ok else 'MISMATCH'}")

def recursion(length):
    print("Checking the parity-round recursion...")
    m = ErrorMatrix(0.75, 0.05, 0.05, 0.15)
    keys = LabeledKey.sample(m, length, np.random.default_rng(3))
    outcome = simulate_distillation(keys, DistillParams(k=2, r=1), np.random.default_rng(4))
    expected = ep_recursion(m, 2).to_dict()
    total = sum(outcome.parity_tallies.values())
    for label, key in (("I", "p_I"), ("x", "p_x"), ("y", "p_y"), ("z", "p_z")):
        ok = check(within(outcome.parity_tallies[label], total, expected[key]), f"recursion {label}")
        print(f"  {label}: {outcome.parity_tallies[label] / total:.5f} (expected {expected[key]:.5f}) "
              f"{'ok' if ok else 'MISMATCH'}")

def feasibility(length):
    print("Running the z_flip:0.3 pipeline...")
    m = error_matrix(bell_distribution(parse_channel("z_flip:0.3", field_spec(2))))
    selection = select_params(m)
    print(f"  selection feasible={selection.feasible} params={selection.params}")
    if not check(selection.feasible, "feasibility selection"):
        return
    params = selection.params
    keys = LabeledKey.sample(m, length, np.random.default_rng(5))
    outcome = simulate_distillation(keys, params, np.random.default_rng(6))
    x_fail, _ = majority_stage(ep_recursion(m, params.k), params.r)
    residual = (outcome.disagreement_rate or 0.0) + x_fail
    ok = check(outcome.length > 0 and residual <= params.css_target, "feasibility residual")
    print(f"  final length={outcome.length} disagreement={outcome.disagreement_rate} "
          f"x_fail={x_fail:.3g} residual={residual:.3g} {'ok' if ok else 'FAIL'}")

def netrun():
    print("Running the network roles locally...")
    params = ProtocolParams(rounds=4000, seed=11, distill=DistillParams(k=1, r=1))
    for channel in (None, "identity", "full_dephase"):
        alice, bob, _ = asyncio.run(run_local(params, channel))
        if channel == "full_dephase":
            ok = alice.status == bob.status == "aborted" and alice.reason == CONDITION_FAILED
        else:
            ok = (alice.status == bob.status == "ok" and alice.final_key_length > 0
                  and alice.final_key == bob.final_key)
        check(ok, f"netrun {channel}")
        print(f"  channel={channel}: alice={alice.status} bob={bob.status} reason={alice.reason} "
              f"keys_equal={alice.final_key == bob.final_key} {'ok' if ok else 'FAIL'}")

if __name__ == "__main__":
    threshold()
    implication(100_000)
    conjugation()
    monte_carlo(1_000_000)
    recursion(1_000_000)
    feasibility(10_000_000)
    netrun()
    if failures:
        print(f"FAILED: {', '.join(failures)}")
        sys.exit(1)
    print("Done.")
