"""Ratings matrix to feature vectors.

A rating matrix is binarised (liked / not liked), factorised with a
truncated SVD, and the factors are rescaled so every row has norm at most
one.  User factors absorb the singular values (``U S``); item factors are
the right singular vectors.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numkit
from .errors import ConvergenceError, InvalidArgument, ParseError

log = logging.getLogger(__name__)

_NORM_SLACK = 1e-9


@dataclass
class FeedbackMatrix:
    """Dense binary user x item matrix."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries)
        if e.ndim != 2 or min(e.shape) < 1:
            raise InvalidArgument("feedback matrix must be 2-D with positive dimensions")
        if not np.isin(e, (0, 1)).all():
            raise InvalidArgument("feedback entries must be 0 or 1")
        self.entries = e.astype(np.float64)

    @property
    def n_users(self) -> int:
        return self.entries.shape[0]

    @property
    def n_items(self) -> int:
        return self.entries.shape[1]


def binarize(ratings, threshold: float = 3.0) -> FeedbackMatrix:
    """1 where the rating is strictly above ``threshold``, else 0."""
    r = np.asarray(ratings, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise InvalidArgument("ratings must be finite")
    return FeedbackMatrix((r > threshold).astype(np.float64))


@dataclass
class SvdResult:
    u: np.ndarray            # (n_users, d) left singular vectors
    s: np.ndarray            # (d,) non-increasing
    v: np.ndarray            # (n_items, d) right singular vectors
    iterations: int
    residual: float

    @property
    def user_factors(self) -> np.ndarray:
        """``U S`` rescaled so the largest row norm is at most one."""
        return max_norm_scale(self.u * self.s)

    @property
    def item_factors(self) -> np.ndarray:
        return max_norm_scale(self.v)


def max_norm_scale(a: np.ndarray) -> np.ndarray:
    """Divide by the largest row norm when it exceeds one."""
    top = float(np.max(np.linalg.norm(a, axis=1), initial=0.0))
    return a / top if top > 1.0 else a.copy()


def _complete_basis(q: np.ndarray, keep: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Replace the columns of ``q`` not in ``keep`` by an orthonormal completion."""
    n, k = q.shape
    out = q.copy()
    basis = [out[:, j] for j in range(k) if keep[j]]
    for j in range(k):
        if keep[j]:
            continue
        while True:
            v = rng.standard_normal(n)
            for b in basis:
                v -= (b @ v) * b
            for b in basis:  # second pass for stability
                v -= (b @ v) * b
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                break
        out[:, j] = v / nv
        basis.append(out[:, j])
    return out


def truncated_svd(m, d: int, max_iters: int = 500, tol: float = 1e-10, *,
                  oversample: int = 5, seed: int = 0) -> SvdResult:
    """Rank-``d`` SVD by block subspace iteration on ``R^T R``.

    Each sweep multiplies the block by ``R^T R``, re-orthonormalises it and
    extracts Ritz pairs; iteration stops when every retained Ritz pair has
    relative residual ``||R^T R v - s^2 v|| <= tol * ||R||_2^2``.
    """
    R = m.entries if isinstance(m, FeedbackMatrix) else np.asarray(m, dtype=np.float64)
    if R.ndim != 2:
        raise InvalidArgument("expected a 2-D matrix")
    n, p = R.shape
    if int(d) != d or not 1 <= d <= min(n, p):
        raise InvalidArgument(f"rank must lie in [1, {min(n, p)}], got {d!r}")
    if max_iters < 1 or not tol > 0:
        raise InvalidArgument("max_iters must be >= 1 and tol > 0")
    d = int(d)
    k = min(d + max(int(oversample), 0), p)
    rng = np.random.Generator(np.random.Philox(seed))
    Q, _ = np.linalg.qr(rng.standard_normal((p, k)))
    scale = 0.0
    residual = math.inf
    for it in range(1, max_iters + 1):
        Z = R.T @ (R @ Q)
        Q, _ = np.linalg.qr(Z)
        # Rayleigh-Ritz on the current subspace
        RQ = R @ Q
        B = RQ.T @ RQ
        w, W = numkit.jacobi_eigh(np.ascontiguousarray(0.5 * (B + B.T)))
        order = np.argsort(-w, kind="stable")
        w, W = w[order], W[:, order]
        Q = Q @ W
        scale = max(scale, float(w[0]))
        if scale == 0.0:
            residual = 0.0
            break
        V = Q[:, :d]
        res = R.T @ (R @ V) - V * w[:d]
        residual = float(np.max(np.linalg.norm(res, axis=0))) / scale
        if residual <= tol:
            break
    else:
        raise ConvergenceError(f"subspace iteration did not converge in {max_iters} sweeps",
                               residual)
    V = Q[:, :d]
    RV = R @ V
    s = np.linalg.norm(RV, axis=0)
    order = np.argsort(-s, kind="stable")
    s, V, RV = s[order], V[:, order], RV[:, order]
    floor = max(float(s[0]), 1.0) * 1e-12
    keep = s > floor
    U = np.zeros((n, d))
    U[:, keep] = RV[:, keep] / s[keep]
    if not keep.all():
        s = np.where(keep, s, 0.0)
        U = _complete_basis(U, keep, rng)
    return SvdResult(u=U, s=s, v=V, iterations=it, residual=residual)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _header_dims(row: list[str]) -> bool:
    return all(cell.strip() == f"dim{j}" for j, cell in enumerate(row))


def load_features(path, *, require_rows: int | None = None) -> np.ndarray:
    """Read a features CSV (optional ``dim0,dim1,...`` header).

    Rows with norm above one are scaled to unit norm and a warning is logged.
    """
    path = Path(path)
    rows: list[list[float]] = []
    width = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and _header_dims(row):
                width = len(row)
                continue
            if width is None:
                width = len(row)
            if len(row) != width:
                raise ParseError(f"expected {width} fields, found {len(row)}", lineno, path)
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ParseError("non-numeric field", lineno, path) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite field", lineno, path)
            rows.append(vals)
    feats = np.array(rows, dtype=np.float64).reshape(len(rows), width or 0)
    if require_rows is not None and feats.shape[0] < require_rows:
        raise ParseError(f"need at least {require_rows} rows, found {feats.shape[0]}", path=path)
    norms = np.linalg.norm(feats, axis=1)
    over = norms > 1.0 + _NORM_SLACK
    if over.any():
        log.warning("%s: %d row(s) with norm > 1 scaled to unit norm", path, int(over.sum()))
        feats[over] /= norms[over, None]
    return feats


def write_features(path, feats: np.ndarray) -> None:
    feats = np.asarray(feats, dtype=np.float64)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"dim{j}" for j in range(feats.shape[1])])
        for row in feats:
            w.writerow([repr(float(v)) for v in row])


def load_ratings(path) -> np.ndarray:
    """Ratings CSV as a dense matrix.

    Accepts ``user_id,item_id,rating`` triplets (optional header; ids are
    mapped to dense indices in order of first appearance after sorting) or
    a dense numeric grid.  Missing triplet entries are 0.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        raw = [(i, r) for i, r in enumerate(csv.reader(fh), start=1)
               if r and any(c.strip() for c in r)]
    if not raw:
        raise ParseError("empty ratings file", path=path)
    first = raw[0][1]
    try:
        [float(c) for c in first]
        header = False
    except ValueError:
        header = True
    body = raw[1:] if header else raw
    names = [c.strip().lower() for c in first] if header else []
    triplets = names[:3] == ["user_id", "item_id", "rating"] or (
        not header and len(first) == 3 and _looks_like_ids(body))
    if triplets:
        return _parse_triplets(body, path)
    width = len(body[0][1]) if body else 0
    out = []
    for lineno, row in body:
        if len(row) != width:
            raise ParseError(f"expected {width} fields, found {len(row)}", lineno, path)
        try:
            out.append([float(c) for c in row])
        except ValueError:
            raise ParseError("non-numeric field", lineno, path) from None
    return np.array(out, dtype=np.float64)


def _looks_like_ids(body) -> bool:
    try:
        return all(float(r[0]).is_integer() and float(r[1]).is_integer() for _, r in body)
    except (ValueError, IndexError):
        return False


def _parse_triplets(body, path) -> np.ndarray:
    recs = []
    for lineno, row in body:
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, found {len(row)}", lineno, path)
        try:
            recs.append((row[0].strip(), row[1].strip(), float(row[2])))
        except ValueError:
            raise ParseError("non-numeric rating", lineno, path) from None
    users = {k: i for i, k in enumerate(sorted({r[0] for r in recs}, key=_id_key))}
    items = {k: i for i, k in enumerate(sorted({r[1] for r in recs}, key=_id_key))}
    mat = np.zeros((len(users), len(items)))
    for uid, iid, val in recs:
        mat[users[uid], items[iid]] = val
    return mat


def _id_key(s: str):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)
