"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``acceptance <n> PASS|FAIL`` line (shown even
when pytest captures output) before asserting.  Criteria 7 and 8 train
full models and take several minutes; they carry the ``slow`` marker.
"""

import calendar
import hashlib
import json
import time
from collections import defaultdict
from itertools import groupby

import numpy as np
import pandas as pd
import pytest

from oracles import GRADCHECK_SPECS, gradient_check, reference_boosting
from scenarios import regime_shift_scenario
from windcorrect.cli import main
from windcorrect.continual import run_strategies, strategy_table
from windcorrect.evaluation import compare_models, compute_metrics
from windcorrect.gbdt import GbConfig, fit_gb
from windcorrect.ingest import fit_normalizer
from windcorrect.models import NEURAL_KINDS, cnn_spec, nn_spec, train_forecaster
from windcorrect.nnet import param_count
from windcorrect.sampler import build_samples, split_monthly, stack_samples


@pytest.fixture
def verdict(capsys):
    def emit(n, title, ok, detail):
        with capsys.disabled():
            print(f"\nacceptance {n} {'PASS' if ok else 'FAIL'}: {title} [{detail}]")
        assert ok, detail
    return emit


def run(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"{argv[0]} exited with {code}"


def _file_hashes(d):
    return {str(p.relative_to(d)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(d.rglob("*")) if p.is_file() and p.name != "manifest.json"}


def test_1_parameter_counts(verdict):
    t = time.perf_counter()
    counts = (param_count(nn_spec()), param_count(cnn_spec()))
    elapsed = time.perf_counter() - t
    verdict(1, "parameter counts", counts == (5185, 81593) and elapsed < 1.0,
            f"nn={counts[0]} cnn={counts[1]} in {elapsed:.3f} s")


REFERENCE_PAIRS = [(725.1, 34.5), (519.1, 24.7), (476.9, 22.7), (462.9, 22.0), (462.3, 22.0)]


def test_2_nrmse_arithmetic(verdict):
    worst = 0.0
    for rmse, nrmse in REFERENCE_PAIRS:
        r = compute_metrics(np.full((1, 49), rmse), np.zeros((1, 49)), 2100.0)
        worst = max(worst, abs(r.nrmse - nrmse))
    verdict(2, "NRMSE arithmetic", worst <= 0.05, f"max deviation {worst:.4f} pp")


def test_3_relative_error_arithmetic(verdict):
    def report(rmse):
        return compute_metrics(np.full((1, 49), rmse), np.zeros((1, 49)), 2100.0)
    table = compare_models({"cnn": report(462.9)}, report(725.1))
    pct = float(table.rmse_pct_of_baseline[0])
    verdict(3, "relative error", 63.8 - 0.1 <= pct <= 63.9 + 0.1, f"{pct:.3f}%")


def test_4_gradient_oracle(verdict):
    t = time.perf_counter()
    worst = {kind: max(gradient_check(spec, seed) for seed in range(20)) for kind, spec in GRADCHECK_SPECS.items()}
    elapsed = time.perf_counter() - t
    ok = max(worst.values()) < 1e-4 and elapsed < 60.0
    verdict(4, "gradient oracle", ok,
            ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; 20 seeds each in {elapsed:.1f} s")


def test_5_gb_oracle(verdict):
    rng = np.random.default_rng(2024)
    mismatches = 0
    for i in range(120):
        n = int(rng.integers(2, 51))
        p = int(rng.integers(1, 4))
        # integer grids create many tied gains, continuous columns many candidates
        x = rng.integers(0, 4, size=(n, p)).astype(float) if i % 2 else rng.normal(size=(n, p))
        y = rng.normal(size=n) if i % 3 else rng.integers(0, 3, size=n).astype(float)
        stages, depth, lr = int(rng.integers(1, 4)), int(rng.integers(1, 3)), float(rng.choice([0.1, 0.5, 1.0]))
        ens = fit_gb(x, y, GbConfig(n_stages=stages, learning_rate=lr, max_depth=depth))
        base, ref = reference_boosting(x, y, stages, lr, depth)
        same = ens.base_prediction == base and all(t.splits() == r.preorder() for t, r in zip(ens.trees, ref))
        mismatches += not same
    verdict(5, "GB exhaustive oracle", mismatches == 0, f"{mismatches} mismatches in 120 datasets")


def test_6_split_invariants(verdict, small_farm):
    per_turbine = {tid: build_samples(small_farm.nwp, df) for tid, df in small_farm.scada.items()}
    problems = []
    for seed in range(200):
        maps = {}
        for tid, samples in per_turbine.items():
            split = split_monthly(samples, seed)
            parts = [set(split.indices(p)) for p in ("train", "validation", "test")]
            if sum(map(len, parts)) != len(samples) or set.union(*parts) != set(range(len(samples))):
                problems.append((seed, tid, "partitions do not cover the samples exactly once"))
            maps[tid] = split.assignment
            by_month = defaultdict(list)
            for d in sorted(split.assignment):
                by_month[(d.year, d.month)].append(split.assignment[d])
            for (y, m), labels in by_month.items():
                target = 0.2 * calendar.monthrange(y, m)[1]
                for part in ("validation", "test"):
                    runs = [len(list(g)) for k, g in groupby(labels) if k == part]
                    if len(runs) != 1 or abs(runs[0] - target) > 1:
                        problems.append((seed, tid, f"{y}-{m:02d} {part} runs {runs}"))
        if len({json.dumps({str(k): v for k, v in m.items()}, sort_keys=True) for m in maps.values()}) != 1:
            problems.append((seed, "day maps differ across turbines"))
    verdict(6, "split invariants", not problems, f"200 seeds, {len(problems)} violations {problems[:3]}")


FARM7 = {
    "version": 1,
    "farm": {"n_turbines": 2, "start_time": "2021-03-01T00:00:00Z", "duration_days": 183, "rng_seed": 7},
    "bias": {"diurnal_amplitude_ms": 2.0, "seasonal_amplitude_ms": 1.0, "per_turbine_offset_std_ms": 0.3,
             "noise_std_ms": 0.8},
}


@pytest.mark.slow
def test_7_end_to_end_bias_correction(verdict, tmp_path):
    t = time.perf_counter()
    cfg = tmp_path / "farm.json"
    cfg.write_text(json.dumps(FARM7))
    run("generate", "--config", cfg, "--out", tmp_path / "raw")
    run("prepare", "--raw", tmp_path / "raw", "--out", tmp_path / "prepared", "--seed", 0)
    run("train", "--kind", "baseline", *NEURAL_KINDS, "--prepared", tmp_path / "prepared",
        "--out", tmp_path / "models", "--seed", 0)
    run("evaluate", "--models", tmp_path / "models", "--prepared", tmp_path / "prepared",
        "--out", tmp_path / "evaluation")
    elapsed = time.perf_counter() - t

    hourly = pd.read_csv(tmp_path / "evaluation" / "bias_by_hour.csv")
    base = hourly[hourly.model == "baseline"]
    day = base.hour.between(6, 17)
    gap = (np.average(base.mean_bias[day], weights=base.n[day])
           - np.average(base.mean_bias[~day], weights=base.n[~day]))
    summary = pd.read_csv(tmp_path / "evaluation" / "summary.csv").set_index("model")
    mb0, nrmse0 = summary.loc["baseline", "mb_mean"], summary.loc["baseline", "nrmse_mean"]
    checks = [abs(gap) > 100.0]
    details = [f"baseline day-night gap {gap:.1f} kW, MB {mb0:.1f} kW, NRMSE {nrmse0:.2f}%"]
    for kind in NEURAL_KINDS:
        mb, nrmse = summary.loc[kind, "mb_mean"], summary.loc[kind, "nrmse_mean"]
        reduction = 1.0 - abs(mb) / abs(mb0)
        checks += [reduction >= 0.8, nrmse < nrmse0]
        details.append(f"{kind} MB {mb:.1f} kW ({reduction:.0%} smaller), NRMSE {nrmse:.2f}%")
    details.append(f"{elapsed / 60:.1f} min")
    verdict(7, "end-to-end bias correction", all(checks) and elapsed < 15 * 60, "; ".join(details))


@pytest.mark.slow
def test_8_continual_learning_ordering(verdict):
    sc = regime_shift_scenario()
    train, val, _ = sc.old
    norm = fit_normalizer(stack_samples(train)[0], sc.dataset.truth_curve.capacity_kw)
    checks, details, reports = [], [], []
    for kind in NEURAL_KINDS:
        original = train_forecaster(kind, train, val, norm)
        rep = run_strategies(original, *sc.new, sc.dataset.truth_curve)
        reports.append(rep)
        r1, r2, r3 = (rep.rmse(s) for s in ("original", "retrain", "continual"))
        gain = 1.0 - r3 / r1
        checks += [r3 <= r2 <= r1, gain >= 0.05]
        details.append(f"{kind} {r1:.1f} / {r2:.1f} / {r3:.1f} kW ({gain:.0%} gain)")
    table = strategy_table(reports)
    base = table[table.model == "baseline"].drop(columns="strategy")
    checks.append(len(base) == 3 and bool((base.nunique() == 1).all()))
    details.append(f"baseline {reports[0].baseline.rmse:.1f} kW")
    verdict(8, "continual learning ordering (original / retrain / continual)", all(checks), "; ".join(details))


FARM9 = {
    "version": 1,
    "farm": {"n_turbines": 2, "start_time": "2021-04-01T00:00:00Z", "duration_days": 45, "rng_seed": 9},
    "bias": {"diurnal_amplitude_ms": 2.0, "noise_std_ms": 0.5},
    "models": {"gb": {"n_stages": 10, "max_depth": 3}},
}


def _pipeline(root):
    root.mkdir()
    cfg = root / "config.json"
    cfg.write_text(json.dumps(FARM9))
    run("generate", "--config", cfg, "--out", root / "raw")
    run("prepare", "--raw", root / "raw", "--out", root / "prepared", "--seed", 3)
    run("train", "--kind", "all", "--config", cfg, "--prepared", root / "prepared", "--out", root / "models",
        "--seed", 3, "--max-epochs", 3)
    run("evaluate", "--models", root / "models", "--prepared", root / "prepared", "--out", root / "evaluation")


def test_9_determinism(verdict, tmp_path):
    _pipeline(tmp_path / "a")
    _pipeline(tmp_path / "b")
    diffs = []
    for stage in ("raw", "prepared", "models", "evaluation"):
        a, b = _file_hashes(tmp_path / "a" / stage), _file_hashes(tmp_path / "b" / stage)
        diffs += [f"{stage}/{f}" for f in sorted(set(a) | set(b)) if a.get(f) != b.get(f)]
    n_reports = len(_file_hashes(tmp_path / "a" / "evaluation"))
    verdict(9, "determinism", not diffs and n_reports == 8,
            f"{n_reports} report files compared, {len(diffs)} differ {diffs[:3]}")
