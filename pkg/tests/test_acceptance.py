"""Acceptance gate: one PASS/FAIL line per criterion, shown in the terminal summary."""

import time

import numpy as np
import pytest

from conftest import CONFIGS, E, F, H, JX, JY, JZ, gl_basis, random_stable
from lieswitch.cli import cmd_certify
from lieswitch.config import load_config
from lieswitch.entropy import CompactSet, entropy_estimate, lyapunov_det_exponent
from lieswitch.lie_algebra import (
    GeneratorSet,
    LieBasis,
    closure,
    is_semisimple,
    killing_form,
    levi_complement,
    levi_decomposition,
    radical,
)
from lieswitch.report import read_report
from lieswitch.stability import gues_fit, trajectory_ensemble
from lieswitch.switched_system import (
    SwitchingSignal,
    evolve_factored,
    evolve_full,
    evolve_parts,
    factorization_residual,
    random_signal,
)

pytestmark = pytest.mark.acceptance


@pytest.fixture
def record(acceptance_log):
    def _record(label, checks: dict, elapsed=None, limit=None):
        if limit is not None:
            checks[f"runtime {elapsed:.1f}s < {limit}s"] = elapsed < limit
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = f"[{'PASS' if ok else 'FAIL'}] {label}" + ("" if ok else f" (failed: {'; '.join(failed)})")
        acceptance_log.append(line)
        print(line)
        assert ok, line
    return _record


def test_criterion_1_algebra_suite(record):
    t0 = time.perf_counter()
    checks = {}
    checks["closure({e,f}) has dim 3"] = closure(GeneratorSet((E, F))).dim == 3

    g = LieBasis.from_matrices(gl_basis(2))
    R = radical(g)
    checks["radical of 2x2 algebra is span{I}"] = R.dim == 1 and R.coordinates(np.eye(2))[1] < 1e-9
    L = levi_complement(g, R)
    sv = np.linalg.svd(killing_form(L), compute_uv=False)
    checks["Levi complement Killing form nondegenerate"] = L.dim == 3 and is_semisimple(L) and sv.min() > 1e-6

    rng = np.random.default_rng(2024)
    worst = 0.0
    full_dims = True
    for k in range(100):
        n = 2 if k < 50 else 3
        N = int(rng.integers(1, 4))
        gens = GeneratorSet(tuple(rng.normal(size=(n, n)) for _ in range(N)))
        d = levi_decomposition(gens)
        worst = max(worst, d.reconstruction_error)
        full_dims &= d.radical.dim + d.levi.dim == d.algebra.dim
    checks[f"split error {worst:.1e} < 1e-9 on 100 random sets"] = worst < 1e-9 and full_dims
    record("1 algebra suite", checks, time.perf_counter() - t0, 10)


def test_criterion_2_factorization(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in range(50):
        n = int(rng.integers(2, 4))
        N = int(rng.integers(1, 4))
        gens = GeneratorSet(tuple(random_stable(rng, n) for _ in range(N)))
        d = levi_decomposition(gens)
        sig = random_signal(1000 + k, 1.0, 10.0, N)
        worst = max(worst, factorization_residual(evolve_full(gens, sig, 1e-3), evolve_factored(d, sig, 1e-3)))

    # order check above the roundoff floor
    gens = GeneratorSet(tuple(rng.normal(size=(3, 3)) for _ in range(2)))
    d = levi_decomposition(gens)
    sig = random_signal(11, 2.0, 2.0, 2)
    res = [factorization_residual(evolve_full(gens, sig, h, check=False), evolve_factored(d, sig, h))
           for h in (0.04, 0.02, 0.01)]
    ratios = [res[0] / res[1], res[1] / res[2]]
    checks = {
        f"max residual {worst:.1e} < 1e-5 over 50 systems": worst < 1e-5,
        f"halving ratios {ratios[0]:.1f}, {ratios[1]:.1f} in [8, 32]": all(8 <= r <= 32 for r in ratios),
    }
    record("2 factorization (order 4)", checks, time.perf_counter() - t0, 60)


def test_criterion_3_entropy_oracles(record):
    t0 = time.perf_counter()
    checks = {}
    zeros = lambda A: [np.zeros_like(A)]

    a = np.array([[1.0]])
    scalar = evolve_parts(zeros(a), [a], SwitchingSignal.constant(1, 4.0), 1e-2)
    est = entropy_estimate(scalar, CompactSet.from_bounds([0.0], [1.0], 2001), [0.2, 0.1], [1, 2, 3, 4])
    checks[f"scalar a=1 h={est.h_estimate:.3f} in [0.85, 1.15]"] = 0.85 <= est.h_estimate <= 1.15
    tables = [est.spanning_counts]

    d = levi_decomposition(GeneratorSet((JX, JY, JZ)))
    so3 = evolve_factored(d, random_signal(3, 1.0, 4.0, 3), 1e-2)
    est = entropy_estimate(so3, CompactSet.unit_box(3, 7), [0.4, 0.2], [1, 2, 3, 4])
    checks[f"so(3) h={est.h_estimate:.3f} < 0.05"] = est.h_estimate < 0.05
    tables.append(est.spanning_counts)

    c = np.diag([-1.0, -2.0])
    contr = evolve_parts(zeros(c), [c], SwitchingSignal.constant(1, 4.0), 1e-2)
    est = entropy_estimate(contr, CompactSet.unit_box(2, 15), [0.4, 0.2, 0.1], [1, 2, 3, 4])
    checks[f"contracting h={est.h_estimate}"] = est.h_estimate == 0.0
    tables.append(est.spanning_counts)

    checks["r monotone in eps in every cell"] = all(np.all(np.diff(t, axis=0) >= 0) for t in tables)

    K1 = CompactSet.from_bounds([0.0], [0.5], 1001)
    K2 = CompactSet.from_bounds([1.0], [1.5], 1001)
    hs = [entropy_estimate(scalar, K, [0.2, 0.1], [1, 2, 3, 4]).h_estimate for K in (K1, K2, [K1, K2])]
    checks[f"union-max |{hs[2]:.3f} - {max(hs[:2]):.3f}| <= 0.1"] = abs(hs[2] - max(hs[:2])) <= 0.1
    record("3 entropy oracles", checks, time.perf_counter() - t0, 120)


def test_criterion_4_liouville(record):
    rng = np.random.default_rng(4)
    worst_levi = 0.0
    for k in range(10):
        gens = GeneratorSet(tuple(random_stable(rng, 3) for _ in range(2)))
        d = levi_decomposition(gens)
        tr = evolve_factored(d, random_signal(k, 1.0, 5.0, 2))
        worst_levi = max(worst_levi, abs(lyapunov_det_exponent(tr).lambda_star))
    worst_full = 0.0
    for k in range(10):
        A = rng.normal(size=(3, 3))
        tr = evolve_full(GeneratorSet((A,)), SwitchingSignal.constant(1, 2.0), 1e-3)
        worst_full = max(worst_full, abs(lyapunov_det_exponent(tr, "full").lambda_star - np.trace(A)))
    record("4 Liouville / lambda*", {
        f"Levi-part lambda* max {worst_levi:.1e} < 1e-8": worst_levi < 1e-8,
        f"single-mode lambda* - trace max {worst_full:.1e} < 1e-8": worst_full < 1e-8,
    })


def test_criterion_5_end_to_end(record, tmp_path):
    t0 = time.perf_counter()
    cfg = load_config(CONFIGS / "so3_radical_stable.yaml")
    assert cfg.signal.count == 200
    code = cmd_certify(cfg, tmp_path / "stable")
    cert = read_report(tmp_path / "stable" / "certify.yaml")["results"]["certificate"]
    fit = cert["empirical"]
    band = fit["lambda"] / cert["predicted_rate"]

    bad = load_config(CONFIGS / "unstable_radical.yaml")
    code_bad = cmd_certify(bad, tmp_path / "unstable")
    verdict_bad = read_report(tmp_path / "unstable" / "certify.yaml")["results"]["certificate"]["verdict"]
    record("5 certificate end to end", {
        "stable fixture runs": code == 0,
        "stable fixture CERTIFIED_GUES": cert["verdict"] == "CERTIFIED_GUES",
        f"gues_fit decaying over 200 signals, lambda={fit['lambda']:.3f} > 0": fit["decaying"] and fit["lambda"] > 0,
        f"fitted/predicted rate {band:.2f} in [0.5, 1.5]": 0.5 <= band <= 1.5,
        "positive-abscissa fixture INCONCLUSIVE": code_bad == 0 and verdict_bad == "INCONCLUSIVE",
    }, time.perf_counter() - t0, 120)


def test_criterion_6_gues_calibration(record):
    ens = trajectory_ensemble(GeneratorSet((np.array([[-1.0]]),)), 10, 0, 0.0, 5.0, 1e-3)
    fit = gues_fit(ens.times, ens.norms)
    record("6 GUES fit calibration", {
        f"M={fit.M:.4f} within 2% of 1": abs(fit.M - 1) <= 0.02,
        f"lambda={fit.rate:.4f} within 2% of 1": abs(fit.rate - 1) <= 0.02,
    })


def test_criterion_7_determinism(record, tmp_path):
    cfg = load_config(CONFIGS / "so3_radical_stable.yaml")
    cmd_certify(cfg, tmp_path / "a")
    cmd_certify(load_config(CONFIGS / "so3_radical_stable.yaml"), tmp_path / "b")
    same = (tmp_path / "a" / "certify.yaml").read_bytes() == (tmp_path / "b" / "certify.yaml").read_bytes()
    csv_same = (tmp_path / "a" / "envelope.csv").read_bytes() == (tmp_path / "b" / "envelope.csv").read_bytes()
    record("7 determinism", {"byte-identical certify reports": same, "identical envelope CSV": csv_same})
