"""Spanning-set estimates of topological entropy for a sampled linear flow.

Points are compared with the Bowen pseudo-distance
``d_T(x, y) = max_{t <= T} |Phi_h(t) (x - y)|`` (Euclidean norm, sup over
the trace samples).  Because the flow is linear, ``d_T`` depends only on
``x - y``; on a box lattice that means one evaluation per lattice offset
instead of one per point pair.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from math import ceil
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import InputError, InsufficientGrowthData, OffGrid
from .switched_system import PropagatorTrace

DEFAULT_TIME_SAMPLES = 400
_SLACK = 1e-12
_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class CompactSet:
    """Axis-aligned box ``center +- half_widths`` with a regular test grid."""

    center: np.ndarray
    half_widths: np.ndarray
    grid_resolution: Union[int, tuple[int, ...]] = 9

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        w = np.atleast_1d(np.asarray(self.half_widths, dtype=float))
        if c.shape != w.shape or c.ndim != 1:
            raise InputError("center and half_widths must be vectors of equal length")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(w))):
            raise InputError("box parameters must be finite")
        if np.any(w <= 0):
            raise InputError("half widths must be positive")
        res = self.grid_resolution
        res = tuple([int(res)] * c.size) if np.isscalar(res) else tuple(int(r) for r in res)
        if len(res) != c.size or min(res) < 2:
            raise InputError("grid_resolution must be >= 2 per axis")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_widths", w)
        object.__setattr__(self, "grid_resolution", res)

    @classmethod
    def unit_box(cls, n: int, grid_resolution=9) -> "CompactSet":
        return cls(np.zeros(n), np.full(n, 0.5), grid_resolution)

    @classmethod
    def from_bounds(cls, lower, upper, grid_resolution=9) -> "CompactSet":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        return cls((lower + upper) / 2, (upper - lower) / 2, grid_resolution)

    @property
    def n(self) -> int:
        return self.center.size

    @property
    def spacing(self) -> np.ndarray:
        return 2 * self.half_widths / (np.array(self.grid_resolution) - 1)

    def lattice(self) -> np.ndarray:
        """Integer lattice coordinates of the grid points, C order."""
        axes = [np.arange(r) for r in self.grid_resolution]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.n)

    def grid(self) -> np.ndarray:
        return self.center - self.half_widths + self.lattice() * self.spacing


SetLike = Union[CompactSet, Sequence[CompactSet]]


def _grid_points(K: SetLike) -> np.ndarray:
    if isinstance(K, CompactSet):
        return K.grid()
    pts = np.vstack([k.grid() for k in K])
    _, idx = np.unique(np.round(pts, 12), axis=0, return_index=True)
    return pts[np.sort(idx)]


def _flow(trace: PropagatorTrace) -> np.ndarray:
    return trace.matrices("Phi_h")


def _sample_indices(trace: PropagatorTrace, horizons: Sequence[float],
                    max_samples: int = DEFAULT_TIME_SAMPLES) -> tuple[np.ndarray, list[int]]:
    """Subsampled trace indices on ``[0, max(horizons)]`` plus the position of each horizon."""
    hidx = []
    for T in horizons:
        try:
            hidx.append(trace.index_of(T))
        except KeyError:
            raise OffGrid(f"horizon {T} is not a sample time of the trace") from None
    last = max(hidx)
    stride = max(1, ceil((last + 1) / max_samples))
    idx = np.union1d(np.arange(0, last + 1, stride), hidx)
    return idx, [int(np.searchsorted(idx, k)) for k in hidx]


def _sup_norms(Phi: np.ndarray, vecs: np.ndarray, positions: list[int]) -> np.ndarray:
    """``out[h, v] = max over the first positions[h]+1 samples of |Phi(t) v|``."""
    out = np.empty((len(positions), vecs.shape[0]))
    for s in range(0, vecs.shape[0], _CHUNK):
        chunk = vecs[s:s + _CHUNK]
        norms = np.linalg.norm(np.einsum("tij,vj->tvi", Phi, chunk), axis=2)
        run = np.maximum.accumulate(norms, axis=0)
        out[:, s:s + _CHUNK] = run[positions]
    return out


def pseudo_distances(trace: PropagatorTrace, K: SetLike, horizons: Sequence[float],
                     max_time_samples: int = DEFAULT_TIME_SAMPLES) -> tuple[np.ndarray, np.ndarray]:
    """Grid points of ``K`` and the matrix ``d_T(x_i, x_j)`` for each horizon."""
    idx, pos = _sample_indices(trace, horizons, max_time_samples)
    Phi = _flow(trace)[idx]
    pts = _grid_points(K)
    if pts.shape[1] != Phi.shape[1]:
        raise InputError(f"set dimension {pts.shape[1]} does not match flow dimension {Phi.shape[1]}")
    if isinstance(K, CompactSet):
        res = np.array(K.grid_resolution)
        offsets = np.stack(np.meshgrid(*[np.arange(-r + 1, r) for r in res], indexing="ij"),
                           axis=-1).reshape(-1, K.n)
        nu = _sup_norms(Phi, offsets * K.spacing, pos)
        lat = K.lattice()
        diff = lat[:, None, :] - lat[None, :, :] + (res - 1)
        radix = np.cumprod(np.concatenate([[1], (2 * res - 1)[::-1][:-1]]))[::-1]
        flat = (diff * radix).sum(axis=-1)
        return pts, nu[:, flat]
    P = pts.shape[0]
    iu, ju = np.triu_indices(P, k=1)
    # boxes sharing a spacing repeat difference vectors; evaluate each once
    diffs = pts[iu] - pts[ju]
    scale = max(1.0, float(np.max(np.abs(pts))))
    _, first, inverse = np.unique(np.round(diffs / scale, 11), axis=0, return_index=True, return_inverse=True)
    nu = np.empty((len(pos), first.size))
    for s in range(0, first.size, _CHUNK):
        nu[:, s:s + _CHUNK] = _sup_norms(Phi, diffs[first[s:s + _CHUNK]], pos)
    D = np.zeros((len(pos), P, P))
    D[:, iu, ju] = nu[:, inverse.reshape(-1)]
    D[:, ju, iu] = D[:, iu, ju]
    return pts, D


def greedy_cover(dist: np.ndarray, eps: float) -> list[int]:
    """Indices of centers chosen by max-coverage greedy set cover at radius ``eps``."""
    C = dist <= eps * (1 + _SLACK)
    P = C.shape[0]
    uncovered = np.ones(P, dtype=bool)
    counts = C.sum(axis=0).astype(np.int64)
    centers = []
    while uncovered.any():
        j = int(np.argmax(counts))
        newly = uncovered & C[:, j]
        centers.append(j)
        uncovered &= ~newly
        counts -= C[newly].sum(axis=0)
    return centers


def monotone_covers(dist: np.ndarray, epsilons: Sequence[float]) -> list[list[int]]:
    """Smallest greedy cover among all radii ``delta <= eps``, for each eps.

    The coverage pattern only changes at distinct values of ``dist``, so
    running the greedy at each of those up to ``max(epsilons)`` and keeping
    the running best gives counts that never increase with eps.  Every
    returned cover is valid at its own eps.
    """
    order = np.argsort(epsilons)
    top = float(np.max(epsilons)) * (1 + _SLACK)
    levels = np.unique(dist[dist <= top])
    out: list[list[int]] = [[] for _ in epsilons]
    best: list[int] | None = None
    li = 0
    for k in order:
        e = float(epsilons[k]) * (1 + _SLACK)
        while li < levels.size and levels[li] <= e:
            cover = greedy_cover(dist, float(levels[li]))
            if best is None or len(cover) < len(best):
                best = cover
            li += 1
        out[k] = list(best) if best is not None else greedy_cover(dist, float(epsilons[k]))
    return out


def exact_cover_size(dist: np.ndarray, eps: float, max_points: int = 18) -> int:
    """Minimal number of grid centers covering the grid (brute force, tiny grids only)."""
    C = dist <= eps * (1 + _SLACK)
    P = C.shape[0]
    if P > max_points:
        raise InputError(f"exact cover limited to {max_points} points")
    masks = [int("".join("1" if c else "0" for c in col[::-1]), 2) for col in C.T]
    full = (1 << P) - 1
    for k in range(1, P + 1):
        for combo in itertools.combinations(masks, k):
            acc = 0
            for m in combo:
                acc |= m
            if acc == full:
                return k
    return P


def flow_map(trace: PropagatorTrace, x, t: float) -> np.ndarray:
    try:
        k = trace.index_of(t)
    except KeyError:
        raise OffGrid(f"t={t} is not a sample time of the trace") from None
    return _flow(trace)[k] @ np.asarray(x, dtype=float)


def is_spanning(F, K_grid, trace: PropagatorTrace, T: float, eps: float,
                max_time_samples: int = DEFAULT_TIME_SAMPLES) -> bool:
    """Does every point of ``K_grid`` stay within ``eps`` of some point of ``F`` up to time T?"""
    if eps <= 0:
        raise InputError("eps must be positive")
    K_grid = np.atleast_2d(np.asarray(K_grid, dtype=float))
    F = np.asarray(F, dtype=float)
    if K_grid.size == 0:
        return True
    if F.size == 0:
        return False
    F = np.atleast_2d(F)
    idx, pos = _sample_indices(trace, [T], max_time_samples)
    Phi = _flow(trace)[idx]
    for x in K_grid:
        d = _sup_norms(Phi, x - F, pos)[0]
        if d.min() > eps * (1 + _SLACK):
            return False
    return True


def spanning_set(trace: PropagatorTrace, K: SetLike, T: float, eps: float,
                 max_time_samples: int = DEFAULT_TIME_SAMPLES) -> np.ndarray:
    """Greedy (T, eps)-spanning subset of the grid of ``K``."""
    if eps <= 0:
        raise InputError("eps must be positive")
    pts, D = pseudo_distances(trace, K, [T], max_time_samples)
    return pts[monotone_covers(D[0], [eps])[0]]


def spanning_number(trace: PropagatorTrace, K: SetLike, T: float, eps: float,
                    max_time_samples: int = DEFAULT_TIME_SAMPLES) -> int:
    """Size of :func:`spanning_set`: an upper bound on the minimal spanning set over the grid."""
    return len(spanning_set(trace, K, T, eps, max_time_samples))


@dataclass(frozen=True, eq=False)
class EntropyEstimate:
    epsilons: tuple[float, ...]
    horizons: tuple[float, ...]
    spanning_counts: np.ndarray
    slope_fits: tuple[float, ...]
    h_estimate: float
    diagnostics: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "epsilons": list(self.epsilons),
            "horizons": list(self.horizons),
            "spanning_counts": self.spanning_counts.tolist(),
            "slope_fits": list(self.slope_fits),
            "h_estimate": self.h_estimate,
            "diagnostics": self.diagnostics,
        }

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epsilon", "T", "r", "r_greedy"])
            raw = np.asarray(self.diagnostics.get("greedy_counts", self.spanning_counts))
            for i, e in enumerate(self.epsilons):
                for j, T in enumerate(self.horizons):
                    w.writerow([f"{e:.12g}", f"{T:.12g}", int(self.spanning_counts[i, j]), int(raw[i, j])])
        return path


def entropy_estimate(trace: PropagatorTrace, K: SetLike, epsilons: Sequence[float],
                     horizons: Sequence[float],
                     max_time_samples: int = DEFAULT_TIME_SAMPLES) -> EntropyEstimate:
    """Fill the r(T, eps) table and read off the growth rate.

    Each cell holds the smallest greedy cover found at any radius up to eps
    (see :func:`monotone_covers`), lowered further by any cell with a larger
    horizon, since such a set also spans at (T, eps).  Per eps, the slope of log r against T is fitted over the
    upper half of the horizons; the estimate is the slope at the smallest
    eps, clamped at zero.
    """
    eps = sorted((float(e) for e in epsilons), reverse=True)
    hor = sorted(float(T) for T in horizons)
    if len(hor) < 3 or len(eps) < 2:
        raise InputError("need at least 3 horizons and 2 epsilons")
    if min(eps) <= 0 or min(hor) <= 0:
        raise InputError("epsilons and horizons must be positive")
    if hor[-1] > trace.times[-1] + 1e-9:
        raise InputError(f"horizon {hor[-1]} beyond trace end {trace.times[-1]}")

    pts, D = pseudo_distances(trace, K, hor, max_time_samples)
    P = pts.shape[0]
    raw = np.array([[len(greedy_cover(D[j], e)) for j in range(len(hor))] for e in eps])
    best = np.array([[len(c) for c in monotone_covers(D[j], eps)] for j in range(len(hor))]).T

    # a set spanning at a longer horizon also spans at every shorter one
    for j in range(len(hor) - 2, -1, -1):
        best[:, j] = np.minimum(best[:, j], best[:, j + 1])

    saturated = best >= P
    if saturated.all():
        raise InsufficientGrowthData(
            f"every r(T, eps) equals the {P} grid points; raise grid_resolution or enlarge eps"
        )

    k = max(2, ceil(len(hor) / 2))
    Tfit = np.array(hor[-k:])
    slopes, resid = [], []
    dT = Tfit - Tfit.mean()
    for i in range(len(eps)):
        y = np.log(best[i, -k:].astype(float))
        dy = y - y[0]  # constant counts give an exactly zero slope
        slope = float(dT @ dy / (dT @ dT))
        fitted = dy.mean() + slope * dT
        slopes.append(slope)
        resid.append(float(np.sqrt(np.mean((fitted - dy) ** 2))))
    h = max(0.0, slopes[-1])

    monotone_eps = bool(np.all(np.diff(best, axis=0) >= 0))
    diagnostics = {
        "grid_points": int(P),
        "greedy_counts": raw.tolist(),
        "fit_horizons": Tfit.tolist(),
        "fit_rms_residuals": resid,
        "raw_slope_smallest_eps": slopes[-1],
        "saturated_cells": int(saturated.sum()),
        "fit_cells_saturated": bool(saturated[-1, -k:].any()),
        "monotone_in_eps": monotone_eps,
        "time_samples": int(min(max_time_samples, trace.index_of(hor[-1]) + 1)),
    }
    return EntropyEstimate(tuple(eps), tuple(hor), best, tuple(slopes), h, diagnostics)


def family_entropy(traces: Sequence[PropagatorTrace], K: SetLike, epsilons, horizons,
                   max_time_samples: int = DEFAULT_TIME_SAMPLES) -> tuple[list[EntropyEstimate], float]:
    """Per-signal estimates and their maximum."""
    ests = [entropy_estimate(tr, K, epsilons, horizons, max_time_samples) for tr in traces]
    return ests, max(e.h_estimate for e in ests)


@dataclass(frozen=True, eq=False)
class LyapunovEstimate:
    lambda_star: float
    horizon_used: float
    convergence_series: np.ndarray  # rows (t, logdet/t)

    def to_record(self, every: int = 1) -> dict:
        return {
            "lambda_star": self.lambda_star,
            "horizon_used": self.horizon_used,
        }


def lyapunov_det_exponent(trace: PropagatorTrace, which: str = "h") -> LyapunovEstimate:
    """``log|det Phi_h(T)| / T`` with the running series ``(t, log|det|/t)``.

    ``which="full"`` reads the full operator's log-determinant instead.
    """
    logdet = trace.logdet_h if which == "h" else trace.logdet
    if logdet is None:
        raise InputError(f"trace has no log-determinant for '{which}'")
    t = trace.times
    mask = t > 0
    if not mask.any():
        raise InputError("trace has no positive sample time")
    series = np.column_stack([t[mask], logdet[mask] / t[mask]])
    return LyapunovEstimate(float(series[-1, 1]), float(t[-1]), series)
