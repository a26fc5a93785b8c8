"""Switching signals and propagation of the evolution operator.

The full operator solves ``dPhi/dt = A_sigma Phi``.  The factored pair solves
``dH/dt = A^h_sigma H`` and ``dM/dt = (H^-1 A^m_sigma H) M`` jointly, so that
``Phi = H M`` can be checked sample by sample.

Integration is classical fixed-step RK4, restarted at every switching
instant.  Sample grids are the uniform step grid plus every breakpoint.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import ceil, floor
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .errors import GridMismatch, IllConditioned, InputError, StepTooCoarse
from .lie_algebra import GeneratorSet, LeviDecomposition

DEFAULT_STEP = 1e-3
LOCAL_ERROR_LIMIT = 1e-6
CONDITION_LIMIT = 1e12
RESCALE_THRESHOLD = 1e150
_RESCALE_BITS = 500
_CHECK_EVERY = 64
_BLOCK = 64


@dataclass(frozen=True)
class SwitchingSignal:
    """Piecewise-constant mode schedule on ``[0, horizon]``.

    ``modes[k]`` (1-based) is active on ``[breakpoints[k], breakpoints[k+1])``;
    the last interval runs to ``horizon``.
    """

    breakpoints: tuple[float, ...]
    modes: tuple[int, ...]
    horizon: float

    def __post_init__(self):
        bps = tuple(float(b) for b in self.breakpoints)
        modes = tuple(int(p) for p in self.modes)
        T = float(self.horizon)
        if not bps or bps[0] != 0.0:
            raise InputError("breakpoints must start at 0")
        if len(bps) != len(modes):
            raise InputError("one mode per interval required")
        if not np.isfinite(T) or T <= 0:
            raise InputError("horizon must be positive and finite")
        if any(b1 <= b0 for b0, b1 in zip(bps, bps[1:])):
            raise InputError("breakpoints must be strictly increasing")
        if bps[-1] >= T:
            raise InputError("last breakpoint must precede the horizon")
        if any(p < 1 for p in modes):
            raise InputError("mode indices are 1-based")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "horizon", T)

    @classmethod
    def constant(cls, mode: int, horizon: float) -> "SwitchingSignal":
        return cls((0.0,), (mode,), horizon)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]], horizon: float) -> "SwitchingSignal":
        return cls(tuple(p[0] for p in pairs), tuple(int(p[1]) for p in pairs), horizon)

    def to_pairs(self) -> list[list]:
        return [[t, p] for t, p in zip(self.breakpoints, self.modes)]

    @property
    def switch_count(self) -> int:
        return len(self.modes) - 1

    def intervals(self) -> list[tuple[float, float, int]]:
        ends = self.breakpoints[1:] + (self.horizon,)
        return list(zip(self.breakpoints, ends, self.modes))

    def mode_at(self, t: float) -> int:
        k = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return self.modes[max(k, 0)]

    def check_modes(self, N: int) -> None:
        bad = [p for p in self.modes if p > N]
        if bad:
            raise InputError(f"mode index {bad[0]} outside 1..{N}")

    def shifted(self, s: float) -> "SwitchingSignal":
        """The same schedule seen from time ``s`` (re-based to start at 0)."""
        if not 0 <= s < self.horizon:
            raise InputError("shift must lie in [0, horizon)")
        k = int(np.searchsorted(self.breakpoints, s, side="right")) - 1
        bps = (0.0,) + tuple(b - s for b in self.breakpoints[k + 1:])
        return SwitchingSignal(bps, self.modes[k:], self.horizon - s)


def random_signal(seed: int, switch_rate: float, T: float, N: int) -> SwitchingSignal:
    """Exponential dwell times with mean ``1/switch_rate`` and uniform mode draws."""
    if T <= 0 or N < 1 or switch_rate < 0:
        raise InputError("need T > 0, N >= 1 and switch_rate >= 0")
    rng = np.random.default_rng(seed)
    bps = [0.0]
    modes = [int(rng.integers(1, N + 1))]
    if switch_rate > 0:
        t = 0.0
        while True:
            t += rng.exponential(1.0 / switch_rate)
            if t >= T:
                break
            bps.append(t)
            modes.append(int(rng.integers(1, N + 1)))
    return SwitchingSignal(tuple(bps), tuple(modes), T)


def time_grid(sig: SwitchingSignal, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Uniform grid merged with breakpoints.

    Returns ``(times, edges)`` where ``edges[k]`` is the sample index at which
    interval k starts and ``edges[-1]`` the index of the horizon.
    """
    if not step > 0:
        raise InputError("step must be positive")
    merge = 1e-9 * step
    times = [0.0]
    edges = [0]
    for a, b, _ in sig.intervals():
        k0 = floor(a / step) + 1
        k1 = ceil(b / step) - 1
        for k in range(k0, k1 + 1):
            t = k * step
            if t - a > merge and b - t > merge:
                times.append(t)
        times.append(b)
        edges.append(len(times) - 1)
    return np.array(times), np.array(edges)


def rk4_polynomial(hA: np.ndarray) -> np.ndarray:
    """One RK4 step for a constant linear field: ``I + Z + Z^2/2 + Z^3/6 + Z^4/24``."""
    n = hA.shape[0]
    Z2 = hA @ hA
    return np.eye(n) + hA + Z2 / 2 + (Z2 @ hA) / 6 + (Z2 @ Z2) / 24


def _runs(hs: np.ndarray) -> list[tuple[float, int]]:
    """Run-length encoding of step sizes (equal within 1e-8 relative, i.e. up to grid rounding)."""
    if hs.size == 0:
        return []
    change = np.abs(np.diff(hs)) > 1e-8 * hs[1:]
    starts = np.concatenate([[0], np.flatnonzero(change) + 1])
    counts = np.diff(np.concatenate([starts, [hs.size]]))
    return [(float(hs[s]), int(c)) for s, c in zip(starts, counts)]


def _power_table(P: np.ndarray, m: int) -> np.ndarray:
    """``[I, P, P^2, ..., P^m]``, each power one multiplication from the previous."""
    out = np.empty((m + 1,) + P.shape)
    out[0] = np.eye(P.shape[0])
    for j in range(1, m + 1):
        out[j] = P @ out[j - 1]
    return out


def _opnorm(X: np.ndarray) -> float:
    return float(np.linalg.norm(X, 2))


@dataclass(frozen=True, eq=False)
class PropagatorTrace:
    """Sampled evolution operators on one signal.

    Matrices are stored as mantissas with per-sample base-2 exponents
    (``*_exp``), which stay zero unless an entry passes 1e150.  Use
    :meth:`matrices` for the actual values.
    """

    times: np.ndarray
    edges: np.ndarray
    step: float
    signal: SwitchingSignal
    Phi: np.ndarray | None = None
    Phi_h: np.ndarray | None = None
    Phi_m: np.ndarray | None = None
    logdet: np.ndarray | None = None
    logdet_h: np.ndarray | None = None
    Phi_exp: np.ndarray | None = None
    Phi_h_exp: np.ndarray | None = None
    Phi_m_exp: np.ndarray | None = None
    expm_checkpoints: np.ndarray | None = field(default=None, repr=False)
    expm_deviation: float | None = None
    local_error: float | None = None

    @property
    def n(self) -> int:
        for M in (self.Phi, self.Phi_h, self.Phi_m):
            if M is not None:
                return M.shape[1]
        raise ValueError("empty trace")

    def matrices(self, name: str = "Phi") -> np.ndarray:
        M = getattr(self, name)
        if M is None:
            raise ValueError(f"{name} not populated in this trace")
        e = getattr(self, f"{name}_exp")
        if e is None or not np.any(e):
            return M
        return np.ldexp(M, e[:, None, None])

    def index_of(self, t: float, atol: float | None = None) -> int:
        atol = 1e-9 * max(self.step, 1.0) if atol is None else atol
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > atol:
            raise KeyError(t)
        return k


class _Scaler:
    """Keeps a running matrix finite by pulling out powers of two."""

    def __init__(self, size: int):
        self.exp = np.zeros(size, dtype=np.int64)
        self.current = 0

    def maybe_rescale(self, X: np.ndarray) -> np.ndarray:
        if np.max(np.abs(X)) > RESCALE_THRESHOLD:
            self.current += _RESCALE_BITS
            return np.ldexp(X, -_RESCALE_BITS)
        return X


def evolve_full(gens: GeneratorSet, sig: SwitchingSignal, step: float = DEFAULT_STEP,
                check: bool = True) -> PropagatorTrace:
    """Integrate ``dPhi/dt = A_sigma Phi`` from the identity.

    On each constant interval two extra channels are formed: the same RK4
    product at half the step (local error proxy) and the exact exponential
    of the interval.  ``StepTooCoarse`` is raised if either disagrees with
    the stored product by more than 1e-6 relative to ``max(1, |prop|)``.
    """
    sig.check_modes(gens.N)
    n = gens.n
    times, edges = time_grid(sig, step)
    K = len(times)
    Phi = np.empty((K, n, n))
    logdet = np.empty(K)
    scaler = _Scaler(K)
    Phi[0] = np.eye(n)
    logdet[0] = 0.0
    checkpoints = [np.eye(n)]
    exact = np.eye(n)
    worst_proxy = 0.0
    worst_exact = 0.0

    for (a, b, p), i0, i1 in zip(sig.intervals(), edges[:-1], edges[1:]):
        A = gens[p]
        trA = float(np.trace(A))
        hs = np.diff(times[i0:i1 + 1])
        logdet[i0 + 1:i1 + 1] = logdet[i0] + np.cumsum(hs) * trA
        X = Phi[i0]
        k = i0
        for h, count in _runs(hs):
            pows = _power_table(rk4_polynomial(h * A), min(count, _BLOCK))
            done = 0
            while done < count:
                nb = min(_BLOCK, count - done)
                block = pows[1:nb + 1] @ X
                Phi[k + 1:k + 1 + nb] = block
                scaler.exp[k + 1:k + 1 + nb] = scaler.current
                X = scaler.maybe_rescale(block[-1])
                k += nb
                done += nb

        prop = np.eye(n)
        prop_half = np.eye(n)
        for h, count in _runs(hs):
            prop = np.linalg.matrix_power(rk4_polynomial(h * A), count) @ prop
            prop_half = np.linalg.matrix_power(rk4_polynomial(0.5 * h * A), 2 * count) @ prop_half
        E = expm((b - a) * A)
        worst_proxy = max(worst_proxy, _opnorm(prop - prop_half) / max(1.0, _opnorm(prop_half)))
        worst_exact = max(worst_exact, _opnorm(prop - E) / max(1.0, _opnorm(E)))
        exact = E @ exact
        checkpoints.append(exact)

    if check and worst_proxy > LOCAL_ERROR_LIMIT:
        raise StepTooCoarse(f"step-halving error proxy {worst_proxy:.3e} exceeds {LOCAL_ERROR_LIMIT:g}")
    if check and worst_exact > LOCAL_ERROR_LIMIT:
        raise StepTooCoarse(f"RK4 and exact interval propagators differ by {worst_exact:.3e}")

    return PropagatorTrace(
        times=times, edges=edges, step=step, signal=sig,
        Phi=Phi, logdet=logdet, Phi_exp=scaler.exp,
        expm_checkpoints=np.array(checkpoints), expm_deviation=worst_exact, local_error=worst_proxy,
    )


def evolve_parts(radical_parts: Sequence[np.ndarray], levi_parts: Sequence[np.ndarray],
                 sig: SwitchingSignal, step: float = DEFAULT_STEP) -> PropagatorTrace:
    """Co-integrate ``H`` (Levi parts) and ``M`` (conjugated radical parts).

    ``H^-1 X`` is evaluated with a linear solve at every RK4 stage.
    """
    if len(radical_parts) != len(levi_parts):
        raise InputError("radical and Levi part lists differ in length")
    sig.check_modes(len(levi_parts))
    Ams = [np.asarray(A, dtype=float) for A in radical_parts]
    Ahs = [np.asarray(A, dtype=float) for A in levi_parts]
    n = Ahs[0].shape[0]
    times, edges = time_grid(sig, step)
    K = len(times)
    H_all = np.empty((K, n, n))
    M_all = np.empty((K, n, n))
    logdet_h = np.empty(K)
    sh, sm = _Scaler(K), _Scaler(K)
    H = np.eye(n)
    M = np.eye(n)
    H_all[0] = H
    M_all[0] = M
    logdet_h[0] = 0.0

    for (_, _, p), i0, i1 in zip(sig.intervals(), edges[:-1], edges[1:]):
        Ah, Am = Ahs[p - 1], Ams[p - 1]
        trh = float(np.trace(Ah))
        radical_zero = not np.any(Am)
        for k in range(i0, i1):
            h = times[k + 1] - times[k]

            def rhs(Hs, Ms):
                if radical_zero:
                    return Ah @ Hs, np.zeros_like(Ms)
                return Ah @ Hs, np.linalg.solve(Hs, Am @ Hs @ Ms)

            k1h, k1m = rhs(H, M)
            k2h, k2m = rhs(H + 0.5 * h * k1h, M + 0.5 * h * k1m)
            k3h, k3m = rhs(H + 0.5 * h * k2h, M + 0.5 * h * k2m)
            k4h, k4m = rhs(H + h * k3h, M + h * k3m)
            H = H + (h / 6) * (k1h + 2 * k2h + 2 * k3h + k4h)
            M = M + (h / 6) * (k1m + 2 * k2m + 2 * k3m + k4m)
            if (k - i0) % _CHECK_EVERY == 0 or k == i1 - 1:
                H = sh.maybe_rescale(H)
                M = sm.maybe_rescale(M)
                if np.linalg.cond(H) > CONDITION_LIMIT:
                    raise IllConditioned(f"cond(Phi_h) exceeds {CONDITION_LIMIT:g} at t={times[k + 1]:.6g}")
            H_all[k + 1] = H
            M_all[k + 1] = M
            sh.exp[k + 1] = sh.current
            sm.exp[k + 1] = sm.current
            logdet_h[k + 1] = logdet_h[k] + h * trh

    return PropagatorTrace(
        times=times, edges=edges, step=step, signal=sig,
        Phi_h=H_all, Phi_m=M_all, logdet_h=logdet_h,
        Phi_h_exp=sh.exp, Phi_m_exp=sm.exp,
    )


def evolve_factored(decomp: LeviDecomposition, sig: SwitchingSignal,
                    step: float = DEFAULT_STEP) -> PropagatorTrace:
    return evolve_parts(decomp.radical_parts, decomp.levi_parts, sig, step)


def factorization_residual(full: PropagatorTrace, factored: PropagatorTrace) -> float:
    """``max_t |Phi(t) - Phi_h(t) Phi_m(t)|`` in the operator 2-norm."""
    if full.times.shape != factored.times.shape or not np.allclose(full.times, factored.times, rtol=0, atol=1e-12):
        raise GridMismatch("traces are sampled on different grids")
    Phi = full.matrices("Phi")
    prod = factored.matrices("Phi_h") @ factored.matrices("Phi_m")
    return float(np.max(np.linalg.norm(Phi - prod, ord=2, axis=(1, 2))))


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    times: np.ndarray
    states: np.ndarray

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)


def state_trajectory(gens: GeneratorSet, sig: SwitchingSignal, x0, step: float = DEFAULT_STEP,
                     check: bool = True) -> StateTrajectory:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (gens.n,) or not np.all(np.isfinite(x0)):
        raise InputError(f"x0 must be a finite vector of length {gens.n}")
    tr = evolve_full(gens, sig, step, check=check)
    return StateTrajectory(tr.times, tr.matrices("Phi") @ x0)


def trace_to_csv(trace: PropagatorTrace, path, stride: int = 1) -> Path:
    """Write t, vec(Phi), vec(Phi_h), vec(Phi_m), logdet_h (row-major vectorization)."""
    path = Path(path)
    n = trace.n
    cols = ["t"]
    blocks = []
    for name in ("Phi", "Phi_h", "Phi_m"):
        if getattr(trace, name) is not None:
            cols += [f"{name}_{i}{j}" for i in range(n) for j in range(n)]
            blocks.append(trace.matrices(name).reshape(len(trace.times), n * n))
    if trace.logdet_h is not None:
        cols.append("logdet_h")
        blocks.append(trace.logdet_h[:, None])
    data = np.hstack([trace.times[:, None]] + blocks)
    idx = sorted(set(range(0, len(trace.times), stride)) | set(int(e) for e in trace.edges))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for k in idx:
            w.writerow([f"{v:.12g}" for v in data[k]])
    return path


def merge_traces(full: PropagatorTrace, factored: PropagatorTrace) -> PropagatorTrace:
    if full.times.shape != factored.times.shape or not np.allclose(full.times, factored.times, rtol=0, atol=1e-12):
        raise GridMismatch("traces are sampled on different grids")
    return PropagatorTrace(
        times=full.times, edges=full.edges, step=full.step, signal=full.signal,
        Phi=full.Phi, Phi_h=factored.Phi_h, Phi_m=factored.Phi_m,
        logdet=full.logdet, logdet_h=factored.logdet_h,
        Phi_exp=full.Phi_exp, Phi_h_exp=factored.Phi_h_exp, Phi_m_exp=factored.Phi_m_exp,
        expm_checkpoints=full.expm_checkpoints, expm_deviation=full.expm_deviation,
        local_error=full.local_error,
    )
