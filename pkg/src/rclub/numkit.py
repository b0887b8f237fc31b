"""Small dense SPD linear algebra.

Every estimator in the package keeps a regularised Gram matrix
``lam * I + sum_j w_j x_j x_j^T`` together with its inverse.  The inverse is
maintained with rank-1 (Sherman-Morrison) updates and recomputed from the
Gram matrix every ``refresh_every`` updates to stop drift from compounding.

The module has two layers: jit-able kernels working on raw arrays (used by
the round loop in :mod:`rclub.bandits`) and a thin :class:`SpdState` wrapper
with argument checking for library use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import jit
from .errors import InvalidArgument, NumericFailure

DEFAULT_REFRESH = 4096
_NORM_SLACK = 1e-9
_DRIFT_TOL = 1e-6


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@jit
def sherman_morrison(inv, x, w):
    """In-place inverse update for ``gram += w * x x^T``."""
    v = inv @ x
    denom = 1.0 + w * (x @ v)
    inv -= (w / denom) * np.outer(v, v)


@jit
def quad_form(inv, x):
    q = x @ (inv @ x)
    return q if q > 0.0 else 0.0


@jit
def lower_cholesky(g):
    """Cholesky factor ``L`` with ``g = L L^T``; raises on a non-positive pivot."""
    n = g.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = g[j, j] - L[j, :j] @ L[j, :j]
        if s <= 0.0:
            raise ValueError("matrix is not positive definite")
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            L[i, j] = (g[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


@jit
def spd_inverse(g):
    """Inverse of an SPD matrix through its Cholesky factor (exactly symmetric)."""
    n = g.shape[0]
    L = lower_cholesky(g)
    # U = L^{-T}, filled row-wise so every dot product is contiguous
    U = np.zeros((n, n))
    for i in range(n):
        U[i, i] = 1.0 / L[i, i]
        for j in range(i):
            U[j, i] = -(L[i, j:i] @ U[j, j:i]) / L[i, i]
    inv = U @ U.T
    return 0.5 * (inv + inv.T)


@jit
def jacobi_eigh(a, max_sweeps=100):
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Returns ``(w, V)`` with ``a = V diag(w) V^T``; ``w`` is ascending.
    """
    n = a.shape[0]
    A = 0.5 * (a + a.T)
    V = np.eye(n)
    eps = 2.220446049250313e-16
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                app = A[p, p]
                aqq = A[q, q]
                if apq == 0.0:
                    continue
                # skip entries already negligible relative to the diagonal
                if abs(apq) <= 0.1 * eps * np.sqrt(abs(app * aqq)):
                    A[p, q] = 0.0
                    A[q, p] = 0.0
                    continue
                rotated = True
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp = A[:, p].copy()
                cq = A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = 0.0
                A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
        if not rotated:
            break
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


@jit
def jacobi_min_eigenvalue(a):
    w, _ = jacobi_eigh(a)
    return w[0]


# ---------------------------------------------------------------------------
# library surface
# ---------------------------------------------------------------------------


@dataclass
class SpdState:
    """Regularised Gram matrix with a maintained inverse.

    ``gram`` equals ``reg * I + sum_j w_j x_j x_j^T``.  Operations mutate the
    state in place and return it.
    """

    reg: float
    gram: np.ndarray
    inv: np.ndarray
    update_count: int = 0
    refresh_every: int = DEFAULT_REFRESH

    @property
    def dim(self) -> int:
        return self.gram.shape[0]

    @property
    def payload(self) -> np.ndarray:
        """The data part ``gram - reg * I``."""
        return self.gram - self.reg * np.eye(self.dim)

    def refresh(self) -> None:
        self.inv = spd_inverse(self.gram)
        self.update_count = 0
        drift = np.max(np.abs(self.gram @ self.inv - np.eye(self.dim)))
        if drift > _DRIFT_TOL:
            raise NumericFailure(f"inverse drift {drift:.3e} after refresh")

    def copy(self) -> "SpdState":
        return SpdState(self.reg, self.gram.copy(), self.inv.copy(),
                        self.update_count, self.refresh_every)


def spd_new(d: int, reg: float, refresh_every: int = DEFAULT_REFRESH) -> SpdState:
    if int(d) != d or d < 1:
        raise InvalidArgument(f"dimension must be a positive integer, got {d!r}")
    if not reg > 0:
        raise InvalidArgument(f"regulariser must be positive, got {reg!r}")
    if refresh_every < 1:
        raise InvalidArgument("refresh_every must be >= 1")
    d = int(d)
    return SpdState(float(reg), reg * np.eye(d), np.eye(d) / reg, 0, int(refresh_every))


def rank1_update(s: SpdState, x, w: float = 1.0) -> SpdState:
    """``gram += w x x^T`` with the inverse kept in step."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (s.dim,):
        raise InvalidArgument(f"expected a {s.dim}-vector, got shape {x.shape}")
    if w < 0 or w > 1:
        raise InvalidArgument(f"weight must lie in [0, 1], got {w!r}")
    if np.linalg.norm(x) > 1.0 + _NORM_SLACK:
        raise InvalidArgument("feature vectors must have norm <= 1")
    if w == 0:
        return s
    s.gram += w * np.outer(x, x)
    sherman_morrison(s.inv, x, float(w))
    s.update_count += 1
    if s.update_count >= s.refresh_every:
        s.refresh()
    return s


def mahalanobis(s: SpdState, x) -> float:
    """``sqrt(x^T gram^{-1} x)``."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("x must be finite")
    sym = 0.5 * (s.inv + s.inv.T)
    return float(np.sqrt(max(x @ sym @ x, 0.0)))


def solve(s: SpdState, b) -> np.ndarray:
    """``gram^{-1} b`` via the maintained inverse, refreshed once if the residual is off."""
    b = np.asarray(b, dtype=np.float64)
    if not np.all(np.isfinite(b)):
        raise InvalidArgument("b must be finite")
    tol = 1e-8 * (1.0 + np.linalg.norm(b))
    out = s.inv @ b
    if np.linalg.norm(s.gram @ out - b) <= tol:
        return out
    s.refresh()
    out = s.inv @ b
    res = np.linalg.norm(s.gram @ out - b)
    if res > tol:
        raise NumericFailure(f"solve residual {res:.3e} exceeds {tol:.3e}")
    return out


def min_eigenvalue(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgument("expected a square matrix")
    if np.max(np.abs(m - m.T), initial=0.0) > 1e-8:
        raise InvalidArgument("matrix is not symmetric")
    return float(jacobi_min_eigenvalue(np.ascontiguousarray(m)))


def aggregate(states, reg: float) -> SpdState:
    """``reg * I + sum_i payload_i`` with a freshly factorised inverse.

    ``states`` may mix :class:`SpdState` objects (their ``gram - reg_i I`` part
    is used) and raw ``d x d`` payload arrays.
    """
    if not reg > 0:
        raise InvalidArgument(f"regulariser must be positive, got {reg!r}")
    parts = [st.payload if isinstance(st, SpdState) else np.asarray(st, dtype=np.float64)
             for st in states]
    if not parts:
        raise InvalidArgument("aggregate needs at least one state")
    d = parts[0].shape[0]
    if any(p.shape != (d, d) for p in parts):
        raise InvalidArgument("dimension mismatch in aggregate")
    gram = reg * np.eye(d)
    for p in parts:
        gram = gram + p
    out = SpdState(float(reg), gram, np.eye(d), 0, DEFAULT_REFRESH)
    out.refresh()
    return out
