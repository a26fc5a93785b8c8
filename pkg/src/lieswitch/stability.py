"""Stability certificate from the Levi-Malcev split, plus empirical GUES checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .entropy import EntropyEstimate, LyapunovEstimate
from .errors import DegenerateEnvelope, EigenFailure, InputError
from .lie_algebra import LeviDecomposition
from .switched_system import SwitchingSignal, evolve_factored

DEFAULT_FIT_WINDOW = 0.5
SPHERE_SAMPLES = 64


class Verdict(str, Enum):
    CERTIFIED_GUES = "CERTIFIED_GUES"
    INCONCLUSIVE = "INCONCLUSIVE"


def spectral_abscissa(A) -> float:
    """Largest real part over the spectrum."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.all(np.isfinite(A)):
        raise InputError("spectral_abscissa needs a finite square matrix")
    try:
        ev = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    return float(np.max(ev.real))


@dataclass(frozen=True)
class EnvelopeFit:
    M: float
    rate: float
    decaying: bool
    window: float = DEFAULT_FIT_WINDOW

    def to_record(self) -> dict:
        return {"M": self.M, "lambda": self.rate, "decaying": self.decaying, "fit_window": self.window}


@dataclass(frozen=True)
class StabilityCertificate:
    lambda_bar_m: tuple[float, ...]
    h_value: float
    lambda_star: float
    entropy_condition: bool
    determinant_condition: bool
    verdict: Verdict
    empirical: EnvelopeFit | None = None
    notes: tuple[str, ...] = field(default_factory=tuple)

    def with_empirical(self, fit: EnvelopeFit) -> "StabilityCertificate":
        return StabilityCertificate(self.lambda_bar_m, self.h_value, self.lambda_star,
                                    self.entropy_condition, self.determinant_condition, self.verdict, fit, self.notes)

    @property
    def predicted_rate(self) -> float:
        """Decay rate suggested by the abscissa/determinant condition, ``-(max lambda_bar + lambda*)``."""
        return -(max(self.lambda_bar_m) + self.lambda_star)

    def to_record(self) -> dict:
        return {
            "lambda_bar_m": list(self.lambda_bar_m),
            "h_value": self.h_value,
            "lambda_star": self.lambda_star,
            "entropy_condition": self.entropy_condition,
            "determinant_condition": self.determinant_condition,
            "verdict": self.verdict.value,
            "empirical": None if self.empirical is None else self.empirical.to_record(),
            "notes": list(self.notes),
        }


def certify(decomp: LeviDecomposition, h_est: Union[EntropyEstimate, float],
            lyap: Union[LyapunovEstimate, float]) -> StabilityCertificate:
    """Sufficient test: entropy of the Levi flow below minus every radical abscissa.

    The determinant condition ``max lambda_bar + lambda* < 0`` is reported
    alongside but does not drive the verdict.
    """
    h = h_est.h_estimate if isinstance(h_est, EntropyEstimate) else float(h_est)
    lam = lyap.lambda_star if isinstance(lyap, LyapunovEstimate) else float(lyap)
    bars = tuple(spectral_abscissa(Am) for Am in decomp.radical_parts)
    worst = max(bars)
    cond_entropy = h < -worst
    cond_det = worst + lam < 0
    notes = []
    if decomp.radical.dim == 0:
        notes.append(
            "radical is trivial: every radical part is zero, its abscissa is 0 and the entropy "
            "condition h < 0 cannot hold; the verdict is INCONCLUSIVE by construction"
        )
    verdict = Verdict.CERTIFIED_GUES if cond_entropy else Verdict.INCONCLUSIVE
    return StabilityCertificate(bars, h, lam, cond_entropy, cond_det, verdict, None, tuple(notes))


def envelope(times: np.ndarray, norms: Sequence[np.ndarray]) -> np.ndarray:
    return np.max(np.vstack(norms), axis=0)


def gues_fit(times, trajectories: Sequence[np.ndarray], fit_window: float = DEFAULT_FIT_WINDOW,
             min_trajectories: int = 10) -> EnvelopeFit:
    """Fit ``log E(t) ~ log M - lambda t`` on the trailing window of the envelope.

    ``trajectories`` are norms ``|x(t)|`` on the common grid ``times`` with
    ``|x(0)| = 1``.  A single trajectory is accepted when
    ``min_trajectories=1`` (deterministic systems).
    """
    times = np.asarray(times, dtype=float)
    if len(trajectories) < min_trajectories:
        raise InputError(f"need at least {min_trajectories} trajectories")
    if not 0 < fit_window <= 1:
        raise InputError("fit_window must lie in (0, 1]")
    if times[-1] <= 0:
        raise InputError("horizon must be positive")
    E = envelope(times, trajectories)
    if not np.any(E > 0):
        raise DegenerateEnvelope("envelope vanishes identically")
    if np.any(E <= 0):
        raise DegenerateEnvelope("envelope hits zero; log-fit undefined")
    mask = times >= times[-1] * (1 - fit_window)
    A = np.vstack([np.ones(mask.sum()), -times[mask]]).T
    (logM, rate), *_ = np.linalg.lstsq(A, np.log(E[mask]), rcond=None)
    M = max(1.0, float(np.exp(logM)))
    decaying = bool(rate > 0 and E[-1] < E[0])
    return EnvelopeFit(M, float(rate), decaying, fit_window)


@dataclass(frozen=True)
class RadicalBoundReport:
    M_emp: float
    rate: float
    exceeds_unit_constant: bool

    def to_record(self) -> dict:
        return {"M_emp": self.M_emp, "rate": self.rate, "exceeds_unit_constant": self.exceeds_unit_constant}


def radical_bound_check(decomp: LeviDecomposition, sig: SwitchingSignal, step: float,
                        T: float | None = None, seed: int = 0) -> RadicalBoundReport:
    """Smallest ``M`` with ``|Phi_m(t) x| <= M exp(lambda_bar t) |x|`` over samples.

    ``x`` ranges over 64 seeded random unit vectors and the standard basis;
    ``lambda_bar`` is the largest radical abscissa.  The unit-constant form
    of this bound fails for non-normal radical parts, which the flag
    reports.
    """
    if T is not None and abs(T - sig.horizon) > 1e-12:
        raise InputError("T must match the signal horizon")
    n = decomp.n
    rate = max(spectral_abscissa(Am) for Am in decomp.radical_parts)
    tr = evolve_factored(decomp, sig, step)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(SPHERE_SAMPLES, n))
    X = np.vstack([X / np.linalg.norm(X, axis=1, keepdims=True), np.eye(n)])
    growth = np.linalg.norm(np.einsum("tij,vj->tvi", tr.matrices("Phi_m"), X), axis=2)
    ratio = growth * np.exp(-rate * tr.times)[:, None]
    M = float(ratio.max())
    return RadicalBoundReport(M, rate, M > 1 + 1e-6)


def derive_seed(root: int, stream: int, index: int) -> int:
    """Child seed for trajectory ``index`` of ``stream``; depends on nothing but its arguments."""
    return int(np.random.SeedSequence([int(root), int(stream), int(index)]).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class Ensemble:
    times: np.ndarray
    norms: list[np.ndarray]
    signals: list[SwitchingSignal]


def trajectory_ensemble(gens, count: int, seed: int, switch_rate: float, T: float,
                        step: float, grid_points: int = 2001, workers: int = 1) -> Ensemble:
    """Norms of unit-initial-state trajectories under seeded random signals.

    Trajectory i draws its signal and its initial direction from
    ``derive_seed(seed, 1, i)``, so results do not depend on ``workers``.
    Norms are resampled on a common uniform grid for envelope fitting.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .switched_system import random_signal, state_trajectory

    common = np.linspace(0.0, T, grid_points)

    def one(i: int):
        s = derive_seed(seed, 1, i)
        sig = random_signal(s, switch_rate, T, gens.N)
        x0 = np.random.default_rng([s, 2]).normal(size=gens.n)
        x0 /= np.linalg.norm(x0)
        traj = state_trajectory(gens, sig, x0, step)
        return sig, np.interp(common, traj.times, traj.norms())

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, range(count)))
    else:
        out = [one(i) for i in range(count)]
    return Ensemble(common, [o[1] for o in out], [o[0] for o in out])
