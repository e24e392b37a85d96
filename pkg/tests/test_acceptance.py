"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Criteria 5, 6, 7 and 10 share one full experiment on the bundled synthetic
corpus (configs/synth_av.ini with configs/experiment.ini), which takes several
minutes on one core.
"""

import importlib
import inspect
import itertools
import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from avphon import abx, cli
from avphon.dpgmm import DpgmmConfig, crp_assignment_probs, fit

ROOT = Path(__file__).parents[1]
TESTS = Path(__file__).parent
sys.path.insert(0, str(TESTS))

from test_abx import brute_dtw  # noqa: E402
from test_dpgmm import gaussian_density, random_model  # noqa: E402


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, f"criterion {number} failed: {detail}"
    return emit


def test_01_dtw_matches_exhaustive_paths(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        k = int(rng.integers(1, 6))
        s1 = rng.dirichlet(np.full(k, 0.5), size=int(rng.integers(1, 7)))
        s2 = rng.dirichlet(np.full(k, 0.5), size=int(rng.integers(1, 7)))
        ours, oracle = abx.dtw_dissimilarity(s1, s2), brute_dtw(s1, s2)
        worst = max(worst, abs(ours - oracle) / max(abs(oracle), 1e-300))
    elapsed = time.perf_counter() - start
    verdict(1, "DTW vs exhaustive paths", worst <= 1e-10 and elapsed < 10,
            f"200 pairs, worst relative error {worst:.2e}, {elapsed:.2f}s")


def test_02_posteriors_match_direct_densities(verdict):
    rng = np.random.default_rng(2025)
    worst, exact = 0.0, True
    for _ in range(100):
        d, K = int(rng.integers(1, 9)), int(rng.integers(1, 6))
        m = random_model(rng, d, K)
        x = rng.normal(0, 2, size=d)
        dens = np.array([w * gaussian_density(x, mu, c)
                         for w, mu, c in zip(m.weights, m.means, m.covariances)])
        worst = max(worst, np.max(np.abs(m.posterior(x) - dens / dens.sum()) / (dens / dens.sum())))
        obs = np.sort(rng.choice(d, size=int(rng.integers(1, d + 1)), replace=False))
        dens = np.array([w * gaussian_density(x[obs], mu[obs], c[np.ix_(obs, obs)])
                         for w, mu, c in zip(m.weights, m.means, m.covariances)])
        got = m.posterior_marginal(x[obs], obs)
        worst = max(worst, np.max(np.abs(got - dens / dens.sum()) / (dens / dens.sum())))
        exact &= np.array_equal(m.posterior_marginal(x, np.arange(d)), m.posterior(x))
    verdict(2, "posterior and marginal vs direct densities", worst <= 1e-10 and exact,
            f"100 models, worst relative error {worst:.2e}, all-dims marginal identical: {exact}")


def test_03_crp_probabilities(verdict):
    rng = np.random.default_rng(2026)
    worst, formula_ok = 0.0, True
    for _ in range(1000):
        counts = rng.integers(0, 40, size=int(rng.integers(0, 9))).tolist()
        n = sum(counts) + 1
        alpha = float(rng.uniform(0.01, 20))
        new, existing = crp_assignment_probs(n, counts, alpha)
        worst = max(worst, abs(new + existing.sum() - 1.0))
        formula_ok &= math.isclose(new, alpha / (n - 1 + alpha), rel_tol=1e-15)
        formula_ok &= all(math.isclose(p, c / (n - 1 + alpha), rel_tol=1e-15, abs_tol=0)
                          for p, c in zip(existing, counts))
    first = crp_assignment_probs(1, [], 0.7)[0] == 1.0
    verdict(3, "CRP assignment probabilities", worst <= 1e-12 and formula_ok and first,
            f"1000 instances, worst mass error {worst:.1e}, n=1 new-cluster prob 1: {first}")


def test_04_dpgmm_recovers_three_gaussians(verdict):
    start = time.perf_counter()
    truth = np.array([[0.0, 0.0], [10.0, 0.0], [5.0, 10.0 * math.sqrt(3) / 2]])
    hits, worst_shift = 0, 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = np.vstack([rng.normal(mu, 1.0, (300, 2)) for mu in truth])
        model = fit(X, config=DpgmmConfig(alpha=1.0, iterations=300, seed=seed))
        if model.n_clusters != 3:
            continue
        shift = min(max(np.linalg.norm(model.means[list(p)] - truth, axis=1))
                    for p in itertools.permutations(range(3)))
        worst_shift = max(worst_shift, shift)
        hits += shift <= 0.2
    elapsed = time.perf_counter() - start
    verdict(4, "DPGMM recovery", hits >= 9 and elapsed < 120,
            f"K=3 with means within 0.2 sd in {hits}/10 seeds "
            f"(worst shift {worst_shift:.3f} sd), {elapsed:.1f}s")


# --- criteria 5 to 7 and 10: one full run ----------------------------------------

@pytest.fixture(scope="module")
def av_run(tmp_path_factory):
    work = tmp_path_factory.mktemp("acceptance")
    start = time.perf_counter()
    assert cli.main(["synth", str(ROOT / "configs" / "synth_av.ini"), str(work / "corpus")]) == 0
    assert cli.main(["run", "--config", str(ROOT / "configs" / "experiment.ini"),
                     "--corpus", str(work / "corpus"), "--output", str(work / "run"),
                     "--sequential"]) == 0
    elapsed = time.perf_counter() - start
    summary = json.loads((work / "run" / "summary.json").read_text())
    comparisons = {(c["better"], c["baseline"]): c for c in summary["comparisons"]}
    means = {c["condition"]: c["mean"] for c in summary["conditions"]}
    return {"dir": work / "run", "elapsed": elapsed, "cmp": comparisons, "means": means}


def _describe(c):
    return f"{c['better']} {c['mean_better']:.4f} vs {c['baseline']} {c['mean_baseline']:.4f} (p={c['p']:.2g})"


def test_05_av_beats_audio(verdict, av_run):
    c = av_run["cmp"]["AV-AV", "A-A"]
    ok = c["absolute"] > 0 and c["p"] < 0.05 and av_run["elapsed"] < 15 * 60
    verdict(5, "AV-AV > A-A", ok, f"{_describe(c)}, run time {av_run['elapsed']:.0f}s")


def test_06_noise_effects(verdict, av_run):
    cmp = av_run["cmp"]
    pairs = [("A-A", "A-N"), ("AV-AV", "AV-NV"), ("AV-NV", "A-N")]
    ok = all(cmp[p]["absolute"] > 0 and cmp[p]["p"] < 0.05 for p in pairs)
    verdict(6, "5 dB noise: A-N < A-A, AV-NV < AV-AV, AV-NV > A-N", ok,
            "; ".join(_describe(cmp[p]) for p in pairs))


def test_07_av_training_helps_audio_test(verdict, av_run):
    c = av_run["cmp"]["AV-A", "A-A"]
    strict = c["absolute"] > 0 and c["p"] < 0.05
    fallback = c["mean_better"] >= c["mean_baseline"] - 0.01
    verdict(7, "AV-A > A-A", strict,
            f"{_describe(c)}; fallback AV-A >= A-A - 0.01: {fallback}")


def test_08_relative_improvement_arithmetic(verdict):
    rel = abx.relative_improvement(0.860, 0.833)
    verdict(8, "relative improvement", abs(rel - 0.081) <= 0.002,
            f"relative_improvement(0.860, 0.833) = {rel:.4f}")


PROPERTY_MODULES = ("test_abx", "test_audio", "test_dpgmm", "test_fusion", "test_visual",
                    "test_synth", "test_stats", "test_invariants")


def _property_tests():
    found = []
    for name in PROPERTY_MODULES:
        mod = importlib.import_module(name)
        members = list(inspect.getmembers(mod, inspect.isfunction))
        for _, cls in inspect.getmembers(mod, inspect.isclass):
            if cls.__module__ == name:
                members += inspect.getmembers(cls, inspect.isfunction)
        for fname, fn in members:
            if fname.startswith("test_") and getattr(fn, "is_hypothesis_test", False):
                found.append((f"{name}.{fn.__qualname__}",
                              fn._hypothesis_internal_use_settings.max_examples))
    return found


def test_09_invariant_property_suite(verdict):
    props = _property_tests()
    too_few = [n for n, k in props if k < 100]
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           "-m", "hypothesis", *(str(TESTS / f"{m}.py") for m in PROPERTY_MODULES)],
                          capture_output=True, text=True, cwd=ROOT)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and not too_few and len(props) >= 20
    verdict(9, "invariant property suite", ok,
            f"{len(props)} property tests, minimum {min(k for _, k in props)} cases each"
            f"{', under 100: ' + ', '.join(too_few) if too_few else ''}; {tail}")


def test_10_rerun_from_manifest_is_byte_identical(verdict, av_run, tmp_path):
    run = av_run["dir"]
    assert cli.main(["run", "--manifest", str(run / "manifest.json"), "--output", str(tmp_path),
                     "--sequential"]) == 0
    files = sorted(p.relative_to(run) for p in run.rglob("*") if p.is_file())
    differ = [str(p) for p in files if p.name != "manifest.json"
              and (tmp_path / p).read_bytes() != (run / p).read_bytes()]
    first, second = (json.loads((d / "manifest.json").read_text()) for d in (run, tmp_path))
    first.pop("timestamps")
    second.pop("timestamps")
    same_manifest = first == second
    verdict(10, "rerun from manifest", not differ and same_manifest,
            f"{len(files) - 1} result files compared, {len(differ)} differ"
            f"{' (' + ', '.join(differ[:3]) + ')' if differ else ''}; "
            f"manifest identical apart from timestamps: {same_manifest}")
