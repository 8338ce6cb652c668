"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line.

The comparison protocol (10 seeds, up to 8000 samples per client) takes a
few minutes and is shared by criteria 4, 5 and 6.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from fedsim import cli
from fedsim.datagen import paper13
from fedsim.engine import run_comparison, run_federation
from fedsim.nn import NUM_PARAMS, GradModifier, backward, init_model
from fedsim.report import selection_table
from fedsim.strategies import StrategyConfig
from fedsim.strategies.flad import Flad
from tests import oracles
from tests import test_datagen, test_nn, test_strategies

SEEDS = range(1, 11)
PROTOCOL_SAMPLES = 8000
PROTOCOL_FLAD_CAP = 40


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def protocol():
    start = time.perf_counter()
    runs = {}
    for seed in SEEDS:
        federation = paper13(seed, PROTOCOL_SAMPLES)
        tiny = min(range(len(federation)), key=lambda i: federation[i].num_samples)
        runs[seed] = (run_comparison(federation, seed, flad_cap=PROTOCOL_FLAD_CAP), tiny)
    return runs, time.perf_counter() - start


def test_criterion_1_gradient_oracle(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    checks = 0
    for pair in range(20):
        params = init_model(pair).params + rng.normal(0, 0.1, NUM_PARAMS)
        n = int(rng.integers(1, 9))
        x = rng.random((n, 110))
        y = rng.integers(0, 2, n).astype(float)
        loss_fd = oracles.fd_gradient(params, x, y)
        modifiers = [
            None,
            GradModifier("proximal", lam=float(rng.uniform(0.01, 2)), anchor=rng.normal(size=NUM_PARAMS)),
            GradModifier("variate_correction", c_global=rng.normal(0, 0.01, NUM_PARAMS),
                         c_local=rng.normal(0, 0.01, NUM_PARAMS)),
            GradModifier("additive", lam=float(rng.uniform(0.01, 2)), term=rng.normal(0, 0.1, NUM_PARAMS)),
        ]
        for mod in modifiers:
            numeric = loss_fd if mod is None else loss_fd + oracles.fd_potential(params, mod)
            worst = max(worst, oracles.max_relative_error(backward(params, x, y, mod), numeric))
            checks += 1
    elapsed = time.perf_counter() - start
    verdict(capsys, 1, worst < 1e-4 and elapsed < 10,
            f"{checks} checks, max relative error {worst:.2e} (< 1e-4), {elapsed:.1f} s (< 10 s)")


def test_criterion_2_aggregation_oracles(capsys):
    test_strategies.test_aggregation_oracles_100_instances()
    verdict(capsys, 2, True, "FedAvg, SCAFFOLD, DAFL, FLAD, FedSBS match brute force on 100 instances to 1e-12")


def test_criterion_3_byte_counts(capsys, small_federation):
    from tests import test_engine as te

    te.test_fedavg_round_is_twelve_models(small_federation)
    te.test_scaffold_round_is_twelve_models_and_twelve_variates(small_federation)
    te.test_fedsbs_round_is_25_models(small_federation)
    te.test_dafl_round_with_twelve_passers_is_25_models(small_federation)
    ledgers = [dict(run_federation(small_federation, name, seed=9, round_cap=5).ledger.client_side)
               for name in ("fedavg", "fedprox", "fedala")]
    ok = ledgers[0] == ledgers[1] == ledgers[2]
    verdict(capsys, 3, ok, "FedAvg 12, FedSBS 25, DAFL 25, SCAFFOLD 12+12 models per round; "
                           f"FedAvg/FedProx/FedALA ledgers identical: {ok}")


@pytest.mark.slow
def test_criterion_4_bandwidth_ordering(capsys, protocol):
    runs, elapsed = protocol
    good, notes = 0, []
    for seed, (res, _) in runs.items():
        b = {name: r.ledger.total for name, r in res.items()}
        ok = (b["fedavg"] == b["fedprox"] == b["fedala"] < b["flad"] < b["scaffold"] < b["dafl"] <= b["fedsbs"])
        good += ok
        if not ok:
            notes.append(f"seed {seed}: dafl-fedsbs={b['dafl'] - b['fedsbs']} B, flad<scaffold={b['flad'] < b['scaffold']}")
    detail = f"ordering holds in {good}/10 seeds (need 9), protocol {elapsed / 60:.1f} min"
    if notes:
        detail += "; " + "; ".join(notes)
    verdict(capsys, 4, good >= 9 and elapsed < 1800, detail)


@pytest.mark.slow
def test_criterion_5_participation(capsys, protocol):
    runs, _ = protocol
    federation = paper13(0, 300)
    spread = []
    for name in ("fedavg", "fedprox", "scaffold", "fedala"):
        r = run_federation(federation, name, seed=11, round_cap=1000)
        pct = selection_table(r).column("participation_pct")[:-1]
        spread.append((name, min(pct), max(pct)))
    random_ok = all(46 - 5 <= lo and hi <= 46 + 5 for _, lo, hi in spread)
    dafl_ok = all(set(selection_table(res["dafl"]).column("participation_pct")) == {100.0}
                  for res, _ in runs.values())
    flad_means = [selection_table(res["flad"]).rows[-1][-1] for res, _ in runs.values()]
    flad_good = sum(m < 46 for m in flad_means)
    ranges = ", ".join(f"{n} {lo:.1f}-{hi:.1f}%" for n, lo, hi in spread)
    verdict(capsys, 5, random_ok and dafl_ok and flad_good >= 8,
            f"random over 1000 rounds: {ranges}; DAFL 100% in all seeds: {dafl_ok}; "
            f"FLAD mean < 46% in {flad_good}/10 (mean {np.mean(flad_means):.1f}%)")


@pytest.mark.slow
def test_criterion_6_test_f1(capsys, protocol):
    runs, _ = protocol
    best, tiny_gap = 0, 0
    gaps = []
    for res, tiny in runs.values():
        means = {name: float(np.mean([m.f1 for m in r.test_metrics])) for name, r in res.items()}
        best += all(means["flad"] >= v for v in means.values())
        gap = res["flad"].test_metrics[tiny].f1 - res["fedavg"].test_metrics[tiny].f1
        gaps.append(gap)
        tiny_gap += gap >= 0.2
    verdict(capsys, 6, best >= 8 and tiny_gap >= 8,
            f"FLAD best mean F1 in {best}/10; tiny-OOD F1 gap >= 0.2 in {tiny_gap}/10 "
            f"(median gap {np.median(gaps):.2f})")


class _ScriptedFlad(Flad):
    """FLAD whose clients report frozen synthetic accuracies."""

    def __init__(self, script, *args):
        super().__init__(*args)
        self.script = script
        self.seen = {}

    def should_stop(self, round_idx, reports, global_params):
        self.seen[round_idx] = np.array(global_params, copy=True)
        acc = self.script(round_idx)
        frozen = {i: [acc + 0.001 * (i % 3)] for i in range(self.num_clients)}
        return super().should_stop(round_idx, frozen, global_params)


def test_criterion_7_flad_patience(capsys, small_federation):
    cases = {"peak at 10": (10, lambda t: 0.5 + 0.04 * t if t <= 10 else 0.9 - 0.01 * (t % 4)),
             "flat from 0": (0, lambda t: 0.7)}
    details, ok = [], True
    for label, (best, script) in cases.items():
        strategy = _ScriptedFlad(script, StrategyConfig(), len(small_federation), NUM_PARAMS)
        r = run_federation(small_federation, strategy, seed=0, round_cap=500)
        stop = r.rounds[-1].round
        restored = np.array_equal(r.final_params, strategy.seen[best])
        ok &= (r.best_round == best and stop == best + 25 and r.rounds[-1].terminal
               and r.stop_reason == "flad_patience" and restored)
        details.append(f"{label}: best {r.best_round}, stop {stop}, restored {restored}")
    verdict(capsys, 7, ok, "; ".join(details))


def test_criterion_8_determinism(capsys, tmp_path):
    data = tmp_path / "data"
    assert cli.main(["generate", "--out", str(data), "--max-samples", "400", "--seed", "5"]) == 0
    mismatched = []
    for strategy in ("fedavg", "fedprox", "scaffold", "fedala", "dafl", "fedsbs", "flad"):
        outputs = []
        for i, threads in enumerate((1, 1, 4, 4)):
            out = tmp_path / f"{strategy}-{i}"
            args = ["run", "--strategy", strategy, "--data", str(data), "--seed", "2",
                    "--out", str(out), "--threads", str(threads), "--flad-patience", "2"]
            if strategy != "flad":
                args += ["--rounds", "3"]
            assert cli.main(args) == 0
            outputs.append({p.name: p.read_bytes() for p in sorted(Path(out).glob("*.csv"))})
        if any(o != outputs[0] for o in outputs[1:]) or not outputs[0]:
            mismatched.append(strategy)
    verdict(capsys, 8, not mismatched,
            f"7 strategies x 2 repeats x threads 1 and 4: byte-identical CSVs; mismatches {mismatched or 'none'}")


PROPERTY_SUITES = {
    "convexity": test_strategies.test_convex_aggregators_stay_in_bounds,
    "permutation invariance": test_strategies.test_aggregators_permutation_invariant,
    "DAFL weights sum to one": test_strategies.test_dafl_weights_sum_to_one,
    "flatten round-trip": test_nn.test_flatten_roundtrip,
    "split disjointness": test_datagen.test_split_partitions_samples,
    "theta clamping": test_strategies.test_fedala_theta_stays_clamped,
    "work monotonicity": test_strategies.test_flad_work_monotone_in_deficit,
}


def test_criterion_9_property_suites(capsys):
    failed = []
    cases = {}
    for name, suite in PROPERTY_SUITES.items():
        assert suite.hypothesis.inner_test is not None
        calls = [0]
        inner = suite.hypothesis.inner_test

        def counting(*args, _inner=inner, **kwargs):
            calls[0] += 1
            return _inner(*args, **kwargs)

        suite.hypothesis.inner_test = counting
        try:
            suite()
        except Exception as exc:  # report every suite before failing
            failed.append(f"{name}: {type(exc).__name__}")
        finally:
            suite.hypothesis.inner_test = inner
        cases[name] = calls[0]
    few = [n for n, c in cases.items() if c < 1000]
    verdict(capsys, 9, not failed and not few,
            f"{len(PROPERTY_SUITES)} suites, min cases {min(cases.values())}; failures {failed or 'none'}; "
            f"under 1000 cases {few or 'none'}")
