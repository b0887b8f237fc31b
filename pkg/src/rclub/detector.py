"""Online corrupted-user detection (OCCUD), the GCUD baseline, and AUC.

OCCUD keeps, next to the robust (weighted) statistics of the policy, a plain
ridge-regression estimate per user.  A user is flagged when the distance
between that non-robust estimate and the robust estimate of the user's
inferred cluster exceeds a confidence threshold built from both estimates'
minimum eigenvalues.

GCUD is the naive competitor: inside every inferred cluster it flags the
users whose robust estimate lies farthest from the cluster estimate, keeping
a fixed fraction of each cluster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numkit
from ._accel import jit
from .errors import InvalidArgument, NumericFailure, UndefinedResult
from .graph import UserGraph


@jit
def nonrobust_update_kernel(user, x, r, lam, refresh, ngram, nb, ninv, nnupd, ntheta):
    """Unweighted ridge statistics of one user: ``M~ += x x^T``, ``b~ += r x``."""
    ngram[user] += np.outer(x, x)
    nb[user] += r * x
    numkit.sherman_morrison(ninv[user], x, 1.0)
    nnupd[user] += 1
    if nnupd[user] >= refresh:
        ninv[user] = numkit.spd_inverse(lam * np.eye(x.shape[0]) + ngram[user])
        nnupd[user] = 0
    ntheta[user] = ninv[user] @ nb[user]


@jit
def batch_min_eigenvalues(mats):
    out = np.empty(mats.shape[0])
    for i in range(mats.shape[0]):
        out[i] = numkit.jacobi_min_eigenvalue(mats[i])
    return out


@dataclass
class UserNonRobustState:
    """Unweighted ridge statistics of a single user."""

    gram_part: np.ndarray
    b: np.ndarray
    theta_tilde: np.ndarray
    spd: numkit.SpdState
    count: int = 0

    @classmethod
    def new(cls, d: int, lam: float) -> "UserNonRobustState":
        return cls(np.zeros((d, d)), np.zeros(d), np.zeros(d), numkit.spd_new(d, lam))


def nonrobust_update(s: UserNonRobustState, x, r: float) -> UserNonRobustState:
    x = np.asarray(x, dtype=np.float64)
    numkit.rank1_update(s.spd, x, 1.0)
    s.gram_part += np.outer(x, x)
    s.b += r * x
    s.count += 1
    s.theta_tilde = numkit.solve(s.spd, s.b)
    return s


def occud_threshold(T_i: float, T_V: float, lmin_user: float, lmin_cluster: float,
                    lam: float, d: int, delta: float, alpha_c: float) -> float:
    """Detection radius for one user.

    ``lmin_user`` is the smallest eigenvalue of the user's unregularised
    Gram matrix; ``lmin_cluster`` that of the regularised cluster matrix.
    ``alpha_c`` is the product of the weight coefficient and corruption level.
    """
    if T_i < 0 or T_V < 0:
        raise InvalidArgument("counts must be >= 0")
    floor = math.sqrt(lam) * (1 - 1e-9)
    den_user = math.sqrt(max(lmin_user + lam, 0.0))
    den_cluster = math.sqrt(max(lmin_cluster, 0.0))
    if den_user < floor or den_cluster < floor:
        raise NumericFailure("threshold denominator fell below sqrt(lambda)")
    log_delta = 2.0 * math.log(1.0 / delta)
    num_user = math.sqrt(d * math.log(1 + T_i / (lam * d)) + log_delta) + math.sqrt(lam)
    num_cluster = (math.sqrt(d * math.log(1 + T_V / (lam * d)) + log_delta)
                   + math.sqrt(lam) + alpha_c)
    return num_user / den_user + num_cluster / den_cluster


@dataclass
class DetectionReport:
    t: int
    algorithm: str
    scores: np.ndarray
    flagged: np.ndarray
    thresholds: np.ndarray = field(default=None)
    lhs: np.ndarray = field(default=None)

    @property
    def detected_set(self) -> list[int]:
        return np.flatnonzero(self.flagged).tolist()


@dataclass
class RobustStats:
    """Per-user robust statistics as stacked arrays (views into a policy)."""

    gram: np.ndarray    # (u, d, d) weighted Gram part, no lambda
    b: np.ndarray       # (u, d)
    count: np.ndarray   # (u,)
    theta: np.ndarray   # (u, d)


@dataclass
class NonRobustStats:
    gram: np.ndarray    # (u, d, d)
    b: np.ndarray
    theta: np.ndarray


def cluster_estimates(robust: RobustStats, graph: UserGraph, lam: float):
    """Per-component regularised Gram, estimate and total count.

    Returns ``(labels, grams, thetas, counts)`` indexed by component id.
    """
    labels = graph.refresh().copy()
    ncomp = int(labels.max()) + 1
    d = robust.b.shape[1]
    grams = np.empty((ncomp, d, d))
    thetas = np.empty((ncomp, d))
    counts = np.empty(ncomp)
    for c, members in enumerate(graph.components()):
        st = numkit.aggregate([robust.gram[i] for i in members], lam)
        grams[c] = st.gram
        thetas[c] = numkit.solve(st, robust.b[members].sum(axis=0))
        counts[c] = robust.count[members].sum()
    return labels, grams, thetas, counts


def occud_scan(robust: RobustStats, nonrobust: NonRobustStats, graph: UserGraph, t: int,
               *, lam: float, delta: float, alpha_c: float) -> DetectionReport:
    labels, grams, thetas, counts = cluster_estimates(robust, graph, lam)
    d = robust.b.shape[1]
    lmin_cluster = batch_min_eigenvalues(grams)
    lmin_user = batch_min_eigenvalues(np.ascontiguousarray(nonrobust.gram))
    u = labels.shape[0]
    lhs = np.linalg.norm(nonrobust.theta - thetas[labels], axis=1)
    thr = np.empty(u)
    for i in range(u):
        c = labels[i]
        thr[i] = occud_threshold(float(robust.count[i]), float(counts[c]), float(lmin_user[i]),
                                 float(lmin_cluster[c]), lam, d, delta, alpha_c)
    scores = lhs - thr
    return DetectionReport(t=int(t), algorithm="OCCUD", scores=scores, flagged=scores > 0,
                           thresholds=thr, lhs=lhs)


def gcud_scan(user_theta: np.ndarray, cluster_theta: np.ndarray, graph: UserGraph,
              rho: float, t: int = 0) -> DetectionReport:
    """Flag the top ``ceil(rho |V|)`` users of every component by estimate gap.

    ``cluster_theta`` holds, for every user, the estimate of its component.
    """
    if not 0 <= rho < 1:
        raise InvalidArgument("rho must lie in [0, 1)")
    scores = np.linalg.norm(np.asarray(user_theta) - np.asarray(cluster_theta), axis=1)
    flagged = np.zeros(scores.shape[0], dtype=bool)
    for members in graph.components():
        n_flag = math.ceil(rho * len(members) - 1e-12)
        if n_flag <= 0:
            continue
        # stable sort on -score keeps lower ids first among ties
        order = members[np.argsort(-scores[members], kind="stable")]
        flagged[order[:n_flag]] = True
    return DetectionReport(t=int(t), algorithm="GCUD", scores=scores, flagged=flagged)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties counted one half, via mid-ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise InvalidArgument("scores and labels must have the same shape")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedResult("AUC needs at least one positive and one negative label")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    # mid-rank of each tie group (1-based ranks)
    _, start, counts = np.unique(sorted_scores, return_index=True, return_counts=True)
    mid = start + (counts + 1) / 2.0
    ranks[order] = np.repeat(mid, counts)
    u_stat = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))
