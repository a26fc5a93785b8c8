import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from conftest import E, F, JX, JY, random_stable
from lieswitch.errors import GridMismatch, IllConditioned, InputError, StepTooCoarse
from lieswitch.lie_algebra import GeneratorSet, levi_decomposition
from lieswitch.switched_system import (
    SwitchingSignal,
    evolve_factored,
    evolve_full,
    evolve_parts,
    factorization_residual,
    merge_traces,
    random_signal,
    state_trajectory,
    time_grid,
    trace_to_csv,
)


def exact_product(gens, sig):
    """Oracle: ordered product of interval exponentials."""
    P = np.eye(gens.n)
    for a, b, p in sig.intervals():
        P = expm((b - a) * gens[p]) @ P
    return P


# --- signals --------------------------------------------------------------------

def test_random_signal_rate_zero_is_constant():
    sig = random_signal(7, 0.0, 5.0, 3)
    assert sig.switch_count == 0
    assert len(sig.modes) == 1 and 1 <= sig.modes[0] <= 3


def test_random_signal_deterministic():
    assert random_signal(7, 2.0, 10.0, 2) == random_signal(7, 2.0, 10.0, 2)


def test_random_signal_switch_count():
    counts = [random_signal(s, 2.0, 10.0, 2).switch_count for s in range(100)]
    assert 10 <= np.mean(counts) <= 30
    assert abs(np.mean(counts) - 20) < 3


def test_random_signal_mode_range():
    sig = random_signal(3, 5.0, 10.0, 3)
    assert set(sig.modes) <= {1, 2, 3}
    assert sig.breakpoints[0] == 0.0 and sig.breakpoints[-1] < 10.0


@pytest.mark.parametrize("args", [(0, 1.0, 0.0, 2), (0, 1.0, 1.0, 0), (0, -1.0, 1.0, 1)])
def test_random_signal_validation(args):
    with pytest.raises(InputError):
        random_signal(*args)


@pytest.mark.parametrize(
    "bps, modes, T",
    [((0.5,), (1,), 1.0), ((0.0, 0.5), (1,), 1.0), ((0.0, 0.5, 0.5), (1, 2, 1), 1.0),
     ((0.0, 1.0), (1, 2), 1.0), ((0.0,), (0,), 1.0), ((0.0,), (1,), -1.0)],
)
def test_signal_validation(bps, modes, T):
    with pytest.raises(InputError):
        SwitchingSignal(bps, modes, T)


def test_signal_pairs_roundtrip_and_lookup():
    sig = SwitchingSignal.from_pairs([[0, 2], [0.3, 1], [0.7, 3]], 1.0)
    assert SwitchingSignal.from_pairs(sig.to_pairs(), 1.0) == sig
    assert [sig.mode_at(t) for t in (0.0, 0.29, 0.3, 0.99)] == [2, 2, 1, 3]
    with pytest.raises(InputError):
        sig.check_modes(2)
    sh = sig.shifted(0.5)
    assert sh.breakpoints == pytest.approx((0.0, 0.2)) and sh.modes == (1, 3)


def test_grid_contains_breakpoints():
    sig = SwitchingSignal((0.0, 0.12345, 0.5, 0.77777), (1, 2, 1, 2), 1.0)
    times, edges = time_grid(sig, 0.01)
    for b, e in zip(sig.breakpoints + (1.0,), edges):
        assert times[e] == b
    assert np.all(np.diff(times) > 0)
    assert np.max(np.diff(times)) <= 0.01 + 1e-15
    # 0.5 coincides with a grid point and is not duplicated
    assert np.sum(np.isclose(times, 0.5)) == 1


# --- full evolution ---------------------------------------------------------------

def test_zero_generator_gives_identity():
    tr = evolve_full(GeneratorSet((np.zeros((2, 2)),)), SwitchingSignal.constant(1, 1.0))
    np.testing.assert_array_equal(tr.matrices("Phi")[-1], np.eye(2))


def test_diagonal_exponential():
    tr = evolve_full(GeneratorSet((np.diag([-1.0, -2.0]),)), SwitchingSignal.constant(1, 1.0))
    np.testing.assert_allclose(tr.matrices("Phi")[-1], np.diag([math.exp(-1), math.exp(-2)]), atol=1e-8, rtol=0)


def test_nilpotent_switch():
    gens = GeneratorSet((E, F))
    sig = SwitchingSignal((0.0, 0.5), (1, 2), 1.0)
    tr = evolve_full(gens, sig)
    # exp(0.5 f) exp(0.5 e) by hand
    expected = np.array([[1.0, 0.5], [0.5, 1.25]])
    np.testing.assert_allclose(tr.matrices("Phi")[-1], expected, atol=1e-8, rtol=0)
    np.testing.assert_allclose(tr.expm_checkpoints[-1], expected, atol=1e-12)


def test_initial_sample_is_identity():
    rng = np.random.default_rng(0)
    gens = GeneratorSet((random_stable(rng, 3), random_stable(rng, 3)))
    sig = random_signal(1, 2.0, 2.0, 2)
    full = evolve_full(gens, sig)
    fac = evolve_factored(levi_decomposition(gens), sig)
    for M in (full.matrices("Phi")[0], fac.matrices("Phi_h")[0], fac.matrices("Phi_m")[0]):
        np.testing.assert_array_equal(M, np.eye(3))


def test_full_matches_exact_product():
    rng = np.random.default_rng(1)
    gens = GeneratorSet(tuple(random_stable(rng, 3) for _ in range(3)))
    sig = random_signal(2, 2.0, 5.0, 3)
    tr = evolve_full(gens, sig)
    P = exact_product(gens, sig)
    np.testing.assert_allclose(tr.matrices("Phi")[-1], P, atol=1e-9)


def test_step_too_coarse():
    gens = GeneratorSet((np.diag([-30.0, 5.0]),))
    with pytest.raises(StepTooCoarse):
        evolve_full(gens, SwitchingSignal.constant(1, 1.0), step=0.1)
    tr = evolve_full(gens, SwitchingSignal.constant(1, 1.0), step=0.1, check=False)
    assert tr.local_error > 1e-6


def test_overflow_is_rescaled():
    gens = GeneratorSet((np.array([[40.0]]),))
    tr = evolve_full(gens, SwitchingSignal.constant(1, 10.0), step=2.5e-4)
    assert np.all(np.isfinite(tr.Phi))
    assert tr.Phi_exp[-1] > 0
    assert math.log(abs(tr.Phi[-1, 0, 0])) + tr.Phi_exp[-1] * math.log(2) == pytest.approx(400.0, rel=1e-6)
    assert tr.logdet[-1] == pytest.approx(400.0, rel=1e-12)


def test_cocycle():
    rng = np.random.default_rng(4)
    gens = GeneratorSet(tuple(random_stable(rng, 3) for _ in range(2)))
    sig = random_signal(5, 3.0, 3.0, 2)
    tr = evolve_full(gens, sig)
    for s in (0.4, 1.5, 2.2):
        k = tr.index_of(s)
        tail = evolve_full(gens, sig.shifted(s))
        np.testing.assert_allclose(tail.matrices("Phi")[-1] @ tr.matrices("Phi")[k], tr.matrices("Phi")[-1], atol=1e-6)


def test_index_of_off_grid():
    tr = evolve_full(GeneratorSet((np.eye(1),)), SwitchingSignal.constant(1, 1.0))
    assert tr.index_of(0.5) == 500
    with pytest.raises(KeyError):
        tr.index_of(0.5005)


# --- factored evolution -------------------------------------------------------

def test_factored_commuting_split():
    gens = GeneratorSet((np.diag([2.0, 0.0]),))
    d = levi_decomposition(gens)
    assert d.radical.dim == 1  # span{diag(2,0)} alone is abelian
    # explicit split from the full 2x2 algebra
    fac = evolve_parts([np.eye(2)], [np.diag([1.0, -1.0])], SwitchingSignal.constant(1, 1.0))
    e = math.e
    np.testing.assert_allclose(fac.matrices("Phi_h")[-1], np.diag([e, 1 / e]), atol=1e-8)
    np.testing.assert_allclose(fac.matrices("Phi_m")[-1], e * np.eye(2), atol=1e-8)
    full = evolve_full(gens, SwitchingSignal.constant(1, 1.0))
    np.testing.assert_allclose((fac.matrices("Phi_h") @ fac.matrices("Phi_m"))[-1], np.diag([e * e, 1.0]), atol=1e-8)
    assert factorization_residual(full, fac) < 1e-8


def test_zero_radical_parts_keep_m_identity():
    gens = GeneratorSet((E, F))
    d = levi_decomposition(gens)
    fac = evolve_factored(d, random_signal(3, 2.0, 2.0, 2))
    assert np.all(fac.matrices("Phi_m") == np.eye(2))


def test_zero_levi_parts_reduce_to_full():
    rng = np.random.default_rng(6)
    mats = (random_stable(rng, 2), random_stable(rng, 2))
    sig = random_signal(4, 2.0, 2.0, 2)
    fac = evolve_parts(mats, [np.zeros((2, 2))] * 2, sig)
    full = evolve_full(GeneratorSet(mats), sig)
    assert np.all(fac.matrices("Phi_h") == np.eye(2))
    np.testing.assert_allclose(fac.matrices("Phi_m"), full.matrices("Phi"), atol=1e-12)


def test_residual_first_sample_is_zero():
    rng = np.random.default_rng(7)
    gens = GeneratorSet(tuple(random_stable(rng, 2) for _ in range(2)))
    sig = SwitchingSignal.constant(1, 1e-3)
    full = evolve_full(gens, sig)
    fac = evolve_factored(levi_decomposition(gens), sig)
    assert np.linalg.norm(full.Phi[0] - fac.Phi_h[0] @ fac.Phi_m[0], 2) == 0.0


def test_residual_random_full_2x2_algebra():
    rng = np.random.default_rng(8)
    gens = GeneratorSet(tuple(rng.normal(size=(2, 2)) - 0.5 * np.eye(2) for _ in range(3)))
    d = levi_decomposition(gens)
    assert d.algebra.dim == 4
    sig = random_signal(9, 1.0, 10.0, 3)
    assert factorization_residual(evolve_full(gens, sig), evolve_factored(d, sig)) < 1e-5


def test_residual_order_four():
    """Halving the step shrinks the residual by ~16 while still above roundoff."""
    rng = np.random.default_rng(10)
    gens = GeneratorSet(tuple(rng.normal(size=(3, 3)) for _ in range(2)))
    d = levi_decomposition(gens)
    sig = random_signal(11, 2.0, 2.0, 2)
    res = []
    for h in (0.04, 0.02, 0.01):
        res.append(factorization_residual(evolve_full(gens, sig, h, check=False), evolve_factored(d, sig, h)))
    ratios = [res[0] / res[1], res[1] / res[2]]
    assert all(8 <= r <= 32 for r in ratios), (res, ratios)


def test_grid_mismatch():
    gens = GeneratorSet((np.eye(2),))
    d = levi_decomposition(gens)
    sig = SwitchingSignal.constant(1, 1.0)
    with pytest.raises(GridMismatch):
        factorization_residual(evolve_full(gens, sig, 1e-2), evolve_factored(d, sig, 2e-2))


def test_ill_conditioned():
    # Phi_h = diag(e^{15t}, e^{-15t}) reaches cond ~ e^{30 t}
    with pytest.raises(IllConditioned):
        evolve_parts([np.eye(2) * 0.1], [np.diag([15.0, -15.0])], SwitchingSignal.constant(1, 2.0), 1e-3)


def test_liouville_and_volume_preservation():
    gens = GeneratorSet((JX - np.eye(3), JY - np.eye(3), np.diag([1.0, -0.5, -0.5])))
    d = levi_decomposition(gens)
    sig = random_signal(12, 2.0, 5.0, 3)
    fac = evolve_factored(d, sig)
    H = fac.matrices("Phi_h")
    sign, logabs = np.linalg.slogdet(H[::250])
    np.testing.assert_allclose(fac.logdet_h[::250], logabs, atol=1e-6)
    if all(abs(np.trace(Ah)) < 1e-12 for Ah in d.levi_parts):
        assert np.max(np.abs(np.linalg.det(H) - 1)) < 1e-6


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.sampled_from([2, 3]), N=st.integers(1, 3))
def test_levi_flow_is_volume_preserving(seed, n, N):
    rng = np.random.default_rng(seed)
    gens = GeneratorSet(tuple(random_stable(rng, n) for _ in range(N)))
    d = levi_decomposition(gens)
    fac = evolve_factored(d, random_signal(seed, 2.0, 2.0, N))
    assert np.max(np.abs(fac.logdet_h)) < 1e-8
    assert np.max(np.abs(np.linalg.det(fac.matrices("Phi_h")) - 1)) < 1e-6


# --- state trajectories -------------------------------------------------------

def test_state_zero_initial():
    traj = state_trajectory(GeneratorSet((np.eye(2),)), SwitchingSignal.constant(1, 1.0), [0.0, 0.0])
    assert not np.any(traj.states)


def test_state_scalar_decay():
    traj = state_trajectory(GeneratorSet((np.array([[-1.0]]),)), SwitchingSignal.constant(1, 1.0), [1.0])
    assert traj.states[-1, 0] == pytest.approx(math.exp(-1), abs=1e-8)


def test_state_nilpotent_first_column():
    traj = state_trajectory(GeneratorSet((E, F)), SwitchingSignal((0.0, 0.5), (1, 2), 1.0), [1.0, 0.0])
    np.testing.assert_allclose(traj.states[-1], [1.0, 0.5], atol=1e-8)


def test_state_rejects_bad_x0():
    with pytest.raises(InputError):
        state_trajectory(GeneratorSet((np.eye(2),)), SwitchingSignal.constant(1, 1.0), [1.0])


# --- export -----------------------------------------------------------------------

def test_trace_csv(tmp_path):
    gens = GeneratorSet((np.diag([1.0, 0.0]), E))
    sig = SwitchingSignal((0.0, 0.3333), (1, 2), 1.0)
    d = levi_decomposition(gens)
    tr = merge_traces(evolve_full(gens, sig), evolve_factored(d, sig))
    path = trace_to_csv(tr, tmp_path / "t.csv", stride=100)
    rows = list(csv.reader(path.open()))
    assert rows[0][:2] == ["t", "Phi_00"] and rows[0][-1] == "logdet_h"
    assert len(rows[0]) == 1 + 3 * 4 + 1
    ts = [float(r[0]) for r in rows[1:]]
    assert 0.3333 in ts and ts[-1] == 1.0
