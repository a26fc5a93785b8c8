"""Matrix Lie algebras generated by mode matrices and their Levi-Malcev splitting.

All rank decisions go through one rule: a stack of vectorized matrices has
numerical rank equal to the number of singular values above
``tol * reference``, where ``reference`` is the largest singular value of the
stack (or of the parent basis when the stack itself may be numerically zero,
e.g. a list of brackets).  Bases produced here are orthonormal in the
Frobenius inner product, so the reference is 1 for every derived object.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AlgebraError,
    InputError,
    LiftingSingular,
    ResidualTooLarge,
    SolvabilityCheckFailed,
)

DEFAULT_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _as_matrix(X, name: str = "matrix") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise InputError(f"{name} must be square, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError(f"{name} has non-finite entries")
    return X


@dataclass(frozen=True)
class GeneratorSet:
    """Ordered mode matrices ``A_1 .. A_N`` of a switched linear system."""

    modes: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.modes) == 0:
            raise InputError("at least one mode matrix is required")
        mats = tuple(_frozen(_as_matrix(A, f"mode {p + 1}")) for p, A in enumerate(self.modes))
        n = mats[0].shape[0]
        for p, A in enumerate(mats):
            if A.shape != (n, n):
                raise InputError(f"mode {p + 1} has shape {A.shape}, expected {(n, n)}")
        object.__setattr__(self, "modes", mats)

    @classmethod
    def from_matrices(cls, mats: Iterable) -> "GeneratorSet":
        return cls(tuple(mats))

    @property
    def n(self) -> int:
        return self.modes[0].shape[0]

    @property
    def N(self) -> int:
        return len(self.modes)

    def __getitem__(self, p: int) -> np.ndarray:
        """Mode matrix by 1-based index."""
        if not 1 <= p <= self.N:
            raise InputError(f"mode index {p} outside 1..{self.N}")
        return self.modes[p - 1]

    def permuted(self, order: Sequence[int]) -> "GeneratorSet":
        return GeneratorSet(tuple(self.modes[i] for i in order))


def bracket(X, Y) -> np.ndarray:
    """Commutator ``XY - YX``."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or X.shape != Y.shape or X.shape[0] != X.shape[1]:
        raise InputError(f"bracket needs equal square shapes, got {X.shape} and {Y.shape}")
    return X @ Y - Y @ X


def _singular_values(stack: np.ndarray) -> np.ndarray:
    if stack.size == 0:
        return np.zeros(0)
    return np.linalg.svd(stack, compute_uv=False)


def numerical_rank(vectors: np.ndarray, tol: float = DEFAULT_TOL, reference: float | None = None) -> int:
    """Rank of a row stack at threshold ``tol * reference``.

    ``reference`` defaults to the largest singular value of the stack.
    """
    s = _singular_values(np.atleast_2d(vectors))
    if s.size == 0:
        return 0
    ref = s[0] if reference is None else reference
    if ref <= 0:
        return 0
    return int(np.sum(s > tol * ref))


def _orthonormal_rows(vectors: np.ndarray, threshold: float) -> np.ndarray:
    """Orthonormal basis (rows) for the row span, dropping directions below ``threshold``."""
    if vectors.shape[0] == 0:
        return np.zeros((0, vectors.shape[1]))
    _, s, vt = np.linalg.svd(vectors, full_matrices=False)
    return vt[s > threshold]


def _gram_schmidt_add(Q: list[np.ndarray], v: np.ndarray) -> np.ndarray:
    r = v.copy()
    for _ in range(2):
        for q in Q:
            r -= (q @ r) * q
    return r / np.linalg.norm(r)


@dataclass(frozen=True)
class LieBasis:
    """A basis of a matrix Lie algebra together with its structure constants.

    ``structure_constants[i, j, k]`` is the coefficient of ``basis[k]`` in
    ``[basis[i], basis[j]]``.
    """

    n: int
    basis: np.ndarray
    structure_constants: np.ndarray
    rank_tolerance: float = DEFAULT_TOL
    closure_residual: float = 0.0

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def vectors(self) -> np.ndarray:
        return self.basis.reshape(self.dim, self.n * self.n)

    @classmethod
    def empty(cls, n: int, tol: float = DEFAULT_TOL) -> "LieBasis":
        return cls(n, _frozen(np.zeros((0, n, n))), _frozen(np.zeros((0, 0, 0))), tol, 0.0)

    @classmethod
    def from_matrices(
        cls,
        mats,
        n: int | None = None,
        tol: float = DEFAULT_TOL,
        normalize: bool = True,
        check_closure: bool = True,
    ) -> "LieBasis":
        """Wrap linearly independent matrices as a Lie algebra basis.

        Raises InputError on dependent input and AlgebraError when the span
        is not closed under the bracket (residual above ``tol``).
        """
        mats = [np.asarray(M, dtype=float) for M in mats]
        if not mats:
            if n is None:
                raise InputError("dimension n required for an empty basis")
            return cls.empty(n, tol)
        n = mats[0].shape[0]
        B = np.stack([_as_matrix(M, "basis element") for M in mats])
        if normalize:
            norms = np.linalg.norm(B.reshape(len(mats), -1), axis=1)
            if np.any(norms == 0):
                raise InputError("zero matrix in basis")
            B = B / norms[:, None, None]
        V = B.reshape(len(mats), n * n)
        if numerical_rank(V, tol) < len(mats):
            raise InputError("basis matrices are linearly dependent at the rank tolerance")

        d = len(mats)
        brackets = np.einsum("iab,jbc->ijac", B, B)
        brackets = brackets - brackets.transpose(1, 0, 2, 3)
        rhs = brackets.reshape(d * d, n * n).T
        coef, *_ = np.linalg.lstsq(V.T, rhs, rcond=None)
        resid = np.linalg.norm(V.T @ coef - rhs, axis=0)
        c = coef.T.reshape(d, d, d)
        scale = max(1.0, float(np.max(np.linalg.norm(V, axis=1))) ** 2)
        residual = float(resid.max()) if resid.size else 0.0
        if check_closure and residual > tol * scale:
            raise AlgebraError(f"span is not bracket-closed (residual {residual:.3e})")
        return cls(n, _frozen(B), _frozen(c), tol, residual)

    def coordinates(self, X) -> tuple[np.ndarray, float]:
        """Least-squares coordinates of ``X`` and the Frobenius norm of what is left over."""
        x = np.asarray(X, dtype=float).reshape(-1)
        if self.dim == 0:
            return np.zeros(0), float(np.linalg.norm(x))
        c, *_ = np.linalg.lstsq(self.vectors.T, x, rcond=None)
        return c, float(np.linalg.norm(self.vectors.T @ c - x))

    def element(self, coeffs) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        if self.dim == 0:
            return np.zeros((self.n, self.n))
        return np.tensordot(coeffs, self.basis, axes=1)

    def contains(self, X, tol: float | None = None) -> bool:
        tol = self.rank_tolerance if tol is None else tol
        _, r = self.coordinates(X)
        return r <= tol * max(1.0, float(np.linalg.norm(X)))

    def ad_matrices(self) -> np.ndarray:
        """``ad`` of each basis element in the structure-constant representation.

        ``ad[i][k, j] = c[i, j, k]`` so that column j holds ``[b_i, b_j]``.
        """
        return self.structure_constants.transpose(0, 2, 1)

    def jacobi_residual(self) -> float:
        c = self.structure_constants
        if self.dim == 0:
            return 0.0
        # sum_l c_ijl c_lkm + cyclic
        t = np.einsum("ijl,lkm->ijkm", c, c)
        jac = t + t.transpose(1, 2, 0, 3) + t.transpose(2, 0, 1, 3)
        return float(np.abs(jac).max())

    def to_record(self) -> dict:
        return {
            "dim": self.dim,
            "basis": self.basis.tolist(),
            "structure_constants": self.structure_constants.tolist(),
            "rank_tolerance": self.rank_tolerance,
            "closure_residual": self.closure_residual,
        }


def closure(gens: GeneratorSet, tol: float = DEFAULT_TOL) -> LieBasis:
    """Basis of the smallest bracket-closed subspace containing every mode matrix.

    Generators are seeded in order, then brackets are taken breadth first:
    each round brackets the newly added elements against the whole current
    basis.  A bracket is kept when it raises the numerical rank.
    """
    if tol <= 0:
        raise InputError("tol must be positive")
    n = gens.n
    cap = n * n
    Q: list[np.ndarray] = []

    def try_add(v: np.ndarray, reference: float) -> bool:
        if len(Q) >= cap:
            return False
        stack = np.vstack(Q + [v]) if Q else v[None, :]
        if numerical_rank(stack, tol, reference=max(reference, _singular_values(stack)[0])) > len(Q):
            Q.append(_gram_schmidt_add(Q, v))
            return True
        return False

    G = np.stack([A.reshape(-1) for A in gens.modes])
    gen_ref = _singular_values(G)[0] if np.any(G) else 0.0
    if gen_ref == 0.0:
        return LieBasis.empty(n, tol)
    for v in G:
        try_add(v, gen_ref)

    frontier = list(range(len(Q)))
    while frontier and len(Q) < cap:
        start = len(Q)
        in_frontier = set(frontier)
        for i in frontier:
            Xi = Q[i].reshape(n, n)
            for j in range(start):
                if j == i or (j in in_frontier and j > i):
                    continue
                try_add(bracket(Xi, Q[j].reshape(n, n)).reshape(-1), 1.0)
        frontier = list(range(start, len(Q)))

    return LieBasis.from_matrices([q.reshape(n, n) for q in Q], tol=tol, normalize=False)


def killing_form(basis: LieBasis) -> np.ndarray:
    """``K_ij = trace(ad b_i ad b_j)``, computed from structure constants."""
    c = basis.structure_constants
    if basis.dim == 0:
        return np.zeros((0, 0))
    K = np.einsum("ikl,jlk->ij", c, c)
    return 0.5 * (K + K.T)


def _bracket_reference(basis: LieBasis) -> float:
    s = _singular_values(basis.vectors)
    return float(s[0]) ** 2 if s.size else 0.0


def derived_subalgebra(basis: LieBasis, tol: float = DEFAULT_TOL) -> LieBasis:
    """Orthonormal basis of ``span{[b_i, b_j]}``."""
    d, n = basis.dim, basis.n
    if d < 2:
        return LieBasis.empty(n, tol)
    iu, ju = np.triu_indices(d, k=1)
    brs = np.stack([bracket(basis.basis[i], basis.basis[j]).reshape(-1) for i, j in zip(iu, ju)])
    rows = _orthonormal_rows(brs, tol * _bracket_reference(basis))
    return LieBasis.from_matrices([r.reshape(n, n) for r in rows], n=n, tol=tol, normalize=False)


def derived_series(basis: LieBasis, tol: float = DEFAULT_TOL) -> list[LieBasis]:
    """``[g, g^(1), g^(2), ...]`` stopping at dimension 0 or at stabilization."""
    series = [basis]
    for _ in range(basis.dim + 1):
        cur = series[-1]
        if cur.dim == 0:
            break
        nxt = derived_subalgebra(cur, tol)
        if nxt.dim == cur.dim:
            break
        series.append(nxt)
    return series


def is_solvable(basis: LieBasis, tol: float = DEFAULT_TOL) -> bool:
    return derived_series(basis, tol)[-1].dim == 0


def is_semisimple(basis: LieBasis, tol: float = DEFAULT_TOL) -> bool:
    """Cartan's criterion: nondegenerate Killing form (the zero algebra counts)."""
    if basis.dim == 0:
        return True
    K = killing_form(basis)
    ref = max(1.0, float(np.max(np.sum(basis.ad_matrices() ** 2, axis=(1, 2)))))
    s = _singular_values(K)
    return bool(s[-1] > tol * ref)


def radical(basis: LieBasis, tol: float = DEFAULT_TOL) -> LieBasis:
    """Maximal solvable ideal, as the Killing-orthogonal complement of ``[g, g]``."""
    d, n = basis.dim, basis.n
    if d == 0:
        return LieBasis.empty(n, tol)
    D = derived_subalgebra(basis, tol)
    if D.dim == 0:
        return basis
    P, *_ = np.linalg.lstsq(basis.vectors.T, D.vectors.T, rcond=None)  # (d, dD)
    M = killing_form(basis) @ P
    ref = max(1.0, float(np.max(np.sum(basis.ad_matrices() ** 2, axis=(1, 2)))))
    _, s, vt = np.linalg.svd(M.T, full_matrices=True)
    s_full = np.zeros(d)
    s_full[: s.size] = s
    null_coords = vt[s_full <= tol * ref]
    if null_coords.shape[0] == 0:
        return LieBasis.empty(n, tol)
    mats = np.tensordot(null_coords, basis.basis, axes=1)
    rows = _orthonormal_rows(mats.reshape(len(mats), -1), tol * float(np.linalg.norm(mats.reshape(len(mats), -1), 2)))
    rad = LieBasis.from_matrices([r.reshape(n, n) for r in rows], tol=tol, normalize=False)
    if not is_solvable(rad, tol):
        raise SolvabilityCheckFailed(
            f"Killing-orthogonal complement of [g,g] (dim {rad.dim}) is not solvable at tol={tol:g}"
        )
    return rad


def _complement_rows(outer: np.ndarray, inner: np.ndarray, tol: float) -> np.ndarray:
    """Orthonormal rows spanning the orthogonal complement of ``inner`` inside ``span(outer)``."""
    if inner.shape[0] == 0:
        return _orthonormal_rows(outer, tol)
    Qi = _orthonormal_rows(inner, tol)
    proj = outer - (outer @ Qi.T) @ Qi
    k = outer.shape[0] - Qi.shape[0]
    _, s, vt = np.linalg.svd(proj, full_matrices=False)
    return vt[:k]


def levi_complement(basis: LieBasis, rad: LieBasis, tol: float = DEFAULT_TOL) -> LieBasis:
    """A semi-simple subalgebra complementary to the radical.

    Starts from the Frobenius-orthogonal complement of the radical and
    corrects it level by level along the derived series of the radical.  At
    level i the correction maps the complement into ``R^(i)`` and is the
    least-squares solution of the linear equations that remove the
    ``R^(i) / R^(i+1)`` component of every bracket of complement elements.
    """
    d, n, r = basis.dim, basis.n, rad.dim
    if r == 0:
        return basis
    if r == d:
        return LieBasis.empty(n, tol)
    m = n * n

    series = derived_series(rad, tol)
    if series[-1].dim != 0:
        raise SolvabilityCheckFailed("radical passed to levi_complement is not solvable")
    # adapted orthonormal basis of the radical: W_0 | W_1 | ... with W_i spanning R^(i) minus R^(i+1)
    levels = []
    for i, Ri in enumerate(series):
        if Ri.dim == 0:
            break
        nxt = series[i + 1].vectors if i + 1 < len(series) else np.zeros((0, m))
        levels.append(_complement_rows(Ri.vectors, nxt, tol))
    W = np.vstack(levels)
    offsets = np.cumsum([0] + [lv.shape[0] for lv in levels])

    S = _complement_rows(basis.vectors, rad.vectors, tol)
    s = S.shape[0]
    if s != d - r:
        raise LiftingSingular(f"complement has dim {s}, expected {d - r}")

    def bracket_vec(u, v):
        return bracket(u.reshape(n, n), v.reshape(n, n)).reshape(-1)

    for i in range(len(levels)):
        full = np.vstack([S, W])
        pinv = np.linalg.pinv(full.T)  # coordinates in [S | W]
        Wi = W[offsets[i]:]  # basis of R^(i)
        ri = Wi.shape[0]
        lo, hi = s + offsets[i], s + offsets[i + 1]
        w_i = hi - lo
        pairs = [(a, b) for a in range(s) for b in range(a + 1, s)]
        L = np.zeros((len(pairs) * w_i, s * ri))
        rhs = np.zeros(len(pairs) * w_i)
        # coords of [x_a, w_q] restricted to the W_i block
        xw = np.array([[pinv @ bracket_vec(S[a], Wi[q]) for q in range(ri)] for a in range(s)])
        for row, (a, b) in enumerate(pairs):
            c = pinv @ bracket_vec(S[a], S[b])
            sl = slice(row * w_i, (row + 1) * w_i)
            rhs[sl] = -c[lo:hi]
            # + [x_a, phi(x_b)]
            L[sl, b * ri:(b + 1) * ri] += xw[a, :, lo:hi].T
            # - [x_b, phi(x_a)]
            L[sl, a * ri:(a + 1) * ri] -= xw[b, :, lo:hi].T
            # - phi(S-component of [x_a, x_b]), W_i rows are the first w_i of R^(i)
            for a2 in range(s):
                L[sl, a2 * ri:a2 * ri + w_i] -= c[a2] * np.eye(w_i)
        if L.size == 0:
            continue
        z, *_ = np.linalg.lstsq(L, rhs, rcond=None)
        res = float(np.linalg.norm(L @ z - rhs))
        if res > tol * max(1.0, float(np.linalg.norm(rhs)), float(np.linalg.norm(L))):
            raise LiftingSingular(f"no lifting at radical level {i}: residual {res:.3e}")
        S = S + z.reshape(s, ri) @ Wi

    rows = _orthonormal_rows(S, tol * float(np.linalg.norm(S, 2)))
    return LieBasis.from_matrices([row.reshape(n, n) for row in rows], tol=tol, normalize=False)


@dataclass(frozen=True)
class LeviDecomposition:
    """Radical and Levi subalgebra of the generated algebra, with per-mode splits."""

    algebra: LieBasis
    radical: LieBasis
    levi: LieBasis
    splits: tuple[tuple[np.ndarray, np.ndarray], ...]
    reconstruction_error: float
    generators: GeneratorSet | None = field(default=None, compare=False)

    @property
    def n(self) -> int:
        return self.algebra.n

    @property
    def N(self) -> int:
        return len(self.splits)

    @property
    def radical_parts(self) -> tuple[np.ndarray, ...]:
        return tuple(m for m, _ in self.splits)

    @property
    def levi_parts(self) -> tuple[np.ndarray, ...]:
        return tuple(h for _, h in self.splits)

    def to_record(self) -> dict:
        return {
            "algebra_dim": self.algebra.dim,
            "radical_dim": self.radical.dim,
            "levi_dim": self.levi.dim,
            "algebra": self.algebra.to_record(),
            "radical": self.radical.to_record(),
            "levi": self.levi.to_record(),
            "splits": [
                {"mode": p + 1, "radical_part": m.tolist(), "levi_part": h.tolist()}
                for p, (m, h) in enumerate(self.splits)
            ],
            "reconstruction_error": self.reconstruction_error,
        }


def split_generators(
    gens: GeneratorSet,
    rad: LieBasis,
    levi: LieBasis,
    tol: float = DEFAULT_TOL,
    algebra: LieBasis | None = None,
) -> LeviDecomposition:
    """Write each ``A_p`` as radical part plus Levi part."""
    n = gens.n
    parts = [b for b in (rad, levi) if b.dim]
    if parts:
        C = np.vstack([b.vectors for b in parts])
    else:
        C = np.zeros((0, n * n))
    splits = []
    err = 0.0
    for p, A in enumerate(gens.modes):
        a = A.reshape(-1)
        if C.shape[0]:
            coef, *_ = np.linalg.lstsq(C.T, a, rcond=None)
        else:
            coef = np.zeros(0)
        Am = (coef[: rad.dim] @ rad.vectors).reshape(n, n) if rad.dim else np.zeros((n, n))
        Ah = (coef[rad.dim:] @ levi.vectors).reshape(n, n) if levi.dim else np.zeros((n, n))
        e = float(np.linalg.norm(A - Am - Ah))
        if e > tol * max(1.0, float(np.linalg.norm(A))):
            raise ResidualTooLarge(f"mode {p + 1} is not reconstructed by radical + Levi parts (error {e:.3e})")
        err = max(err, e)
        splits.append((_frozen(Am), _frozen(Ah)))
    if algebra is None:
        algebra = closure(gens, tol)
    return LeviDecomposition(algebra, rad, levi, tuple(splits), err, gens)


def levi_decomposition(gens: GeneratorSet, tol: float = DEFAULT_TOL) -> LeviDecomposition:
    """Closure, radical, Levi complement and generator split in one call."""
    g = closure(gens, tol)
    rad = radical(g, tol)
    levi = levi_complement(g, rad, tol)
    return split_generators(gens, rad, levi, tol, algebra=g)
