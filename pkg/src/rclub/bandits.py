"""Arm-selection policies.

One kernel family serves every policy kind.  A kind only decides which
statistics slot a user maps to and how the slot's statistics are grouped
before the UCB step:

=============  ======================  ========  ==================
kind           statistics              weights   grouping
=============  ======================  ========  ==================
RCLUB_WCU      per user                robust    graph component
CLUB           per user                unit      graph component
LINUCB         one shared slot         unit      the slot
LINUCB_IND     per user                unit      the slot
CW_OFUL        one shared slot         robust    the slot
CW_OFUL_IND    per user                robust    the slot
=============  ======================  ========  ==================

Robust weights are ``min(1, alpha / ||x||_{M'^{-1}})`` where ``M'`` is the
slot's regularised Gram matrix *before* the current sample is added.  The
lagged variant (weight of the previous visit applied now) sits behind
``lagged_weights``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import numkit
from ._accel import jit
from .detector import NonRobustStats, RobustStats, nonrobust_update_kernel
from .errors import ConfigError, InvalidArgument
from .graph import UserGraph, label_components


class PolicyKind(str, Enum):
    RCLUB_WCU = "RCLUB_WCU"
    CLUB = "CLUB"
    LINUCB = "LINUCB"
    LINUCB_IND = "LINUCB_IND"
    CW_OFUL = "CW_OFUL"
    CW_OFUL_IND = "CW_OFUL_IND"

    @property
    def clustered(self) -> bool:
        return self in (PolicyKind.RCLUB_WCU, PolicyKind.CLUB)

    @property
    def shared(self) -> bool:
        return self in (PolicyKind.LINUCB, PolicyKind.CW_OFUL)

    @property
    def robust(self) -> bool:
        return self in (PolicyKind.RCLUB_WCU, PolicyKind.CW_OFUL, PolicyKind.CW_OFUL_IND)


AUTO = "auto"

# relative tolerance under which two UCB scores are treated as tied
TIE_RTOL = 1e-12


@dataclass
class PolicyConfig:
    """User-facing knobs; ``"auto"`` entries are resolved against the run horizon.

    ``C`` is the corruption level fed to the formulas (auto: sqrt(T)); ``alpha``
    auto is ``(sqrt(d) + sqrt(lam)) / C``; ``delta`` auto is ``1 / T``.
    ``beta`` may be a fixed exploration radius instead of the closed form.
    """

    lam: float = 1.0
    alpha: float | str = AUTO
    alpha1: float = 1.0
    delta: float | str = AUTO
    C: float | str = AUTO
    weights: bool | None = None
    deletion: bool = True
    lagged_weights: bool = False
    beta: float | str = AUTO
    beta_scale: float = 1.0
    beta_horizon: str = "round"
    refresh_every: int = numkit.DEFAULT_REFRESH


# float parameter slots
P_LAM, P_ALPHA, P_ALPHA_C, P_ALPHA1, P_DELTA, P_BETA_FIXED, P_BETA_SCALE = range(7)
# integer flag slots
F_SHARED, F_CLUSTER, F_WEIGHTED, F_LAGGED, F_DELETION, F_BETA_CLUSTER, F_REFRESH, \
    F_NONROBUST, F_TRACK = range(9)


@dataclass(frozen=True)
class ResolvedParams:
    kind: PolicyKind
    lam: float
    alpha: float
    C: float
    alpha_c: float
    alpha1: float
    delta: float
    weighted: bool
    deletion: bool
    lagged: bool
    beta_fixed: float | None
    beta_scale: float
    beta_cluster: bool
    refresh_every: int

    def float_vector(self) -> np.ndarray:
        fp = np.zeros(7)
        fp[P_LAM] = self.lam
        fp[P_ALPHA] = self.alpha
        fp[P_ALPHA_C] = self.alpha_c
        fp[P_ALPHA1] = self.alpha1
        fp[P_DELTA] = self.delta
        fp[P_BETA_FIXED] = -1.0 if self.beta_fixed is None else self.beta_fixed
        fp[P_BETA_SCALE] = self.beta_scale
        return fp


def _num(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number or 'auto', got {value!r}")
    return float(value)


def resolve_params(kind: PolicyKind | str, cfg: PolicyConfig, horizon: int, d: int) -> ResolvedParams:
    kind = PolicyKind(kind)
    if not cfg.lam > 0:
        raise ConfigError("lam must be positive")
    weighted = kind.robust if cfg.weights is None else bool(cfg.weights)
    if weighted and not kind.robust:
        raise ConfigError(f"{kind.value} never weights samples")
    if cfg.delta == AUTO:
        delta = 1.0 / max(int(horizon), 2)
    else:
        delta = _num(cfg.delta, "delta")
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    if kind.robust:
        C = math.sqrt(horizon) if cfg.C == AUTO else _num(cfg.C, "C")
    else:
        C = 0.0
    if C < 0:
        raise ConfigError("C must be >= 0")
    if cfg.alpha == AUTO:
        alpha = (math.sqrt(d) + math.sqrt(cfg.lam)) / C if C > 0 else math.inf
    else:
        alpha = _num(cfg.alpha, "alpha")
    if not alpha > 0:
        raise ConfigError("alpha must be positive")
    alpha_c = alpha * C if (weighted and C > 0) else 0.0
    if not cfg.alpha1 > 0:
        raise ConfigError("alpha1 must be positive")
    beta_fixed = None if cfg.beta == AUTO else _num(cfg.beta, "beta")
    if beta_fixed is not None and beta_fixed < 0:
        raise ConfigError("beta must be >= 0")
    if not cfg.beta_scale > 0:
        raise ConfigError("beta_scale must be positive")
    if cfg.beta_horizon not in ("round", "cluster"):
        raise ConfigError("beta_horizon must be 'round' or 'cluster'")
    if cfg.refresh_every < 1:
        raise ConfigError("refresh_every must be >= 1")
    return ResolvedParams(kind=kind, lam=float(cfg.lam), alpha=alpha, C=C, alpha_c=alpha_c,
                          alpha1=float(cfg.alpha1), delta=delta, weighted=weighted,
                          deletion=bool(cfg.deletion) and kind.clustered,
                          lagged=bool(cfg.lagged_weights) and weighted,
                          beta_fixed=beta_fixed, beta_scale=float(cfg.beta_scale),
                          beta_cluster=cfg.beta_horizon == "cluster",
                          refresh_every=int(cfg.refresh_every))


# ---------------------------------------------------------------------------
# scalar rules
# ---------------------------------------------------------------------------


@jit
def deletion_scale(count):
    """``sqrt((1 + ln(1 + T)) / (1 + T))``."""
    return np.sqrt((1.0 + np.log1p(count)) / (1.0 + count))


@jit
def beta_radius(lam, delta, d, T, alpha_c):
    return np.sqrt(lam) + np.sqrt(2.0 * np.log(1.0 / delta) + d * np.log1p(T / (lam * d))) + alpha_c


def beta(lam: float, delta: float, d: int, T: float, alpha: float = 0.0, C: float = 0.0) -> float:
    """Closed-form confidence radius; ``alpha * C`` is dropped when C == 0."""
    if lam < 0 or T < 0 or not 0 < delta < 1:
        raise InvalidArgument("beta needs lam >= 0, T >= 0 and delta in (0, 1)")
    alpha_c = alpha * C if C > 0 else 0.0
    return float(beta_radius(lam, delta, d, float(T), alpha_c))


def deletion_check(theta_i, theta_l, T_i: int, T_l: int, alpha1: float, alpha_c: float = 0.0) -> bool:
    """True when the edge between two users must go."""
    if T_i < 0 or T_l < 0:
        raise InvalidArgument("counts must be >= 0")
    gap = float(np.linalg.norm(np.asarray(theta_i) - np.asarray(theta_l)))
    return gap >= alpha1 * (deletion_scale(T_i) + deletion_scale(T_l) + alpha_c)


@dataclass
class UserRobustState:
    """Snapshot of one slot's weighted ridge statistics."""

    gram_part: np.ndarray
    b: np.ndarray
    count: int
    theta_hat: np.ndarray
    spd: numkit.SpdState


def compute_weight(state: UserRobustState, x, alpha: float) -> float:
    if not alpha > 0:
        raise InvalidArgument("alpha must be positive")
    radius = numkit.mahalanobis(state.spd, x)
    return 1.0 if radius == 0 else min(1.0, alpha / radius)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@jit
def _regroup(gram, bvec, count, adj, labels, dirty, cgram, cb, ccount):
    """Relabel components and rebuild their summed statistics from the users'."""
    if dirty[0]:
        label_components(adj, labels)
        dirty[0] = False
    dirty[1] = False
    cgram[:] = 0.0
    cb[:] = 0.0
    ccount[:] = 0
    for l in range(labels.shape[0]):
        c = labels[l]
        cgram[c] += gram[l]
        cb[c] += bvec[l]
        ccount[c] += count[l]


@jit
def _group_stats(slot, ip, lam, gram, bvec, count, adj, labels, dirty, cgram, cb, ccount):
    d = bvec.shape[1]
    G = lam * np.eye(d)
    bg = np.zeros(d)
    if ip[F_CLUSTER]:
        if dirty[1]:
            _regroup(gram, bvec, count, adj, labels, dirty, cgram, cb, ccount)
        lab = labels[slot]
        G += cgram[lab]
        bg += cb[lab]
        Tg = ccount[lab]
    else:
        G += gram[slot]
        bg += bvec[slot]
        Tg = count[slot]
    return G, bg, Tg


@jit
def select_kernel(slot, t, X, fp, ip, gram, bvec, count, adj, labels, dirty, cgram, cb, ccount):
    """UCB arm choice for the group containing ``slot``; ties go to the lowest index."""
    lam = fp[P_LAM]
    G, bg, Tg = _group_stats(slot, ip, lam, gram, bvec, count, adj, labels, dirty,
                             cgram, cb, ccount)
    Ginv = numkit.spd_inverse(G)
    th = Ginv @ bg
    if fp[P_BETA_FIXED] >= 0.0:
        b = fp[P_BETA_FIXED]
    else:
        horizon = float(Tg) if ip[F_BETA_CLUSTER] else float(t)
        b = fp[P_BETA_SCALE] * beta_radius(lam, fp[P_DELTA], X.shape[1], horizon, fp[P_ALPHA_C])
    width2 = np.sum((X @ Ginv) * X, axis=1)
    vals = X @ th + b * np.sqrt(np.maximum(width2, 0.0))
    # scores within rounding of the maximum count as ties, so the choice does
    # not hinge on summation order (compiled and numpy paths then agree)
    top = vals.max()
    cut = top - TIE_RTOL * (1.0 + abs(top))
    for a in range(X.shape[0]):
        if vals[a] >= cut:
            return a
    return 0


@jit
def update_kernel(slot, user, x, r, fp, ip, gram, bvec, inv, nupd, theta, count, wprev,
                  adj, labels, dirty, cgram, cb, ccount, ngram, nb, ninv, nnupd, ntheta):
    """Fold one observation into the slot's statistics; prune the user's edges.

    Returns the weight applied to the sample.
    """
    lam = fp[P_LAM]
    d = x.shape[0]
    if ip[F_WEIGHTED]:
        if ip[F_LAGGED]:
            w = wprev[slot]
        else:
            q = numkit.quad_form(inv[slot], x)
            w = 1.0 if q == 0.0 else min(1.0, fp[P_ALPHA] / np.sqrt(q))
    else:
        w = 1.0
    wxx = w * np.outer(x, x)
    wrx = (w * r) * x
    gram[slot] += wxx
    bvec[slot] += wrx
    if ip[F_CLUSTER] and not dirty[1]:
        # component sums stay current until the next deletion forces a rebuild
        c = labels[user]
        cgram[c] += wxx
        cb[c] += wrx
        ccount[c] += 1
    numkit.sherman_morrison(inv[slot], x, w)
    nupd[slot] += 1
    count[slot] += 1
    if nupd[slot] >= ip[F_REFRESH]:
        inv[slot] = numkit.spd_inverse(lam * np.eye(d) + gram[slot])
        nupd[slot] = 0
    theta[slot] = inv[slot] @ bvec[slot]
    res = (lam * theta[slot] + gram[slot] @ theta[slot]) - bvec[slot]
    if np.sqrt(res @ res) > 1e-8 * (1.0 + np.sqrt(bvec[slot] @ bvec[slot])):
        inv[slot] = numkit.spd_inverse(lam * np.eye(d) + gram[slot])
        nupd[slot] = 0
        theta[slot] = inv[slot] @ bvec[slot]
    if ip[F_LAGGED]:
        q = numkit.quad_form(inv[slot], x)
        wprev[slot] = 1.0 if q == 0.0 else min(1.0, fp[P_ALPHA] / np.sqrt(q))
    if ip[F_NONROBUST]:
        nonrobust_update_kernel(user, x, r, lam, ip[F_REFRESH], ngram, nb, ninv, nnupd, ntheta)
    if ip[F_CLUSTER] and ip[F_DELETION]:
        fi = deletion_scale(float(count[user]))
        base = fp[P_ALPHA1]
        for l in range(adj.shape[0]):
            if l == user or not adj[user, l]:
                continue
            thr = base * (fi + deletion_scale(float(count[l])) + fp[P_ALPHA_C])
            diff = theta[user] - theta[l]
            if np.sqrt(diff @ diff) >= thr:
                adj[user, l] = False
                adj[l, user] = False
                dirty[0] = True
                dirty[1] = True
    return w


@jit
def track_kernel(j, x, lam, refresh, tgram, tinv, tnupd, tpot):
    """Potential sum of one ground-truth cluster's unweighted Gram sequence."""
    q = numkit.quad_form(tinv[j], x)
    tpot[j] += min(q, 1.0)
    tgram[j] += np.outer(x, x)
    numkit.sherman_morrison(tinv[j], x, 1.0)
    tnupd[j] += 1
    if tnupd[j] >= refresh:
        tinv[j] = numkit.spd_inverse(lam * np.eye(x.shape[0]) + tgram[j])
        tnupd[j] = 0


@jit
def run_block_kernel(t0, users, armidx, noise, arm_pool, user_theta, bad_mask, k_window,
                     corrupt_on, noise_sd, assign, fp, ip,
                     gram, bvec, inv, nupd, theta, count, wprev, adj, labels, dirty,
                     cgram, cb, ccount, ngram, nb, ninv, nnupd, ntheta, tgram, tinv, tnupd, tpot,
                     out_regret, out_corr, out_choice, out_weight):
    n = users.shape[0]
    for s in range(n):
        t = t0 + s
        i = users[s]
        ids = armidx[s]
        X = arm_pool[ids]
        slot = 0 if ip[F_SHARED] else i
        a = select_kernel(slot, t, X, fp, ip, gram, bvec, count, adj, labels, dirty,
                          cgram, cb, ccount)
        x = X[a].copy()
        expected = X @ user_theta[i]
        mean = expected[a]
        c = -2.0 * mean if (corrupt_on and bad_mask[i] and t <= k_window) else 0.0
        r = mean + noise_sd * noise[s] + c
        out_regret[s] = expected.max() - mean
        out_corr[s] = abs(c)
        out_choice[s] = ids[a]
        out_weight[s] = update_kernel(slot, i, x, r, fp, ip, gram, bvec, inv, nupd, theta,
                                      count, wprev, adj, labels, dirty, cgram, cb, ccount,
                                      ngram, nb, ninv, nnupd, ntheta)
        if ip[F_TRACK]:
            track_kernel(assign[i], x, fp[P_LAM], ip[F_REFRESH], tgram, tinv, tnupd, tpot)


# ---------------------------------------------------------------------------
# policy object
# ---------------------------------------------------------------------------


class Policy:
    """State of one policy over ``u`` users in dimension ``d``.

    ``horizon`` resolves the auto parameters.  ``track_clusters`` (with the
    ground-truth ``assign`` map) enables the per-cluster potential tracker.
    """

    def __init__(self, kind: PolicyKind | str, cfg: PolicyConfig | None, u: int, d: int,
                 horizon: int, *, assign: np.ndarray | None = None,
                 track_clusters: bool = False, label: str | None = None):
        self.kind = PolicyKind(kind)
        self.cfg = cfg if cfg is not None else PolicyConfig()
        self.params = resolve_params(self.kind, self.cfg, horizon, d)
        self.label = label or self.kind.value
        self.u, self.d = int(u), int(d)
        lam = self.params.lam
        S = 1 if self.kind.shared else self.u
        self.gram = np.zeros((S, d, d))
        self.bvec = np.zeros((S, d))
        self.inv = np.repeat((np.eye(d) / lam)[None], S, axis=0)
        self.nupd = np.zeros(S, dtype=np.int64)
        self.theta = np.zeros((S, d))
        self.count = np.zeros(S, dtype=np.int64)
        self.wprev = np.ones(S)
        if self.kind.clustered:
            self.graph = UserGraph.complete(self.u)
            self.graph.refresh()
            nu = self.u
        else:
            self.graph = None
            nu = 0
        self._adj = self.graph.adj if self.graph else np.zeros((0, 0), dtype=np.bool_)
        self._labels = self.graph.labels if self.graph else np.zeros(0, dtype=np.int64)
        self._dirty = self.graph.dirty if self.graph else np.zeros(2, dtype=np.bool_)
        self.cgram = np.zeros((nu, d, d))
        self.cb = np.zeros((nu, d))
        self.ccount = np.zeros(nu, dtype=np.int64)
        self.ngram = np.zeros((nu, d, d))
        self.nb = np.zeros((nu, d))
        self.ninv = np.repeat((np.eye(d) / lam)[None], nu, axis=0)
        self.nnupd = np.zeros(nu, dtype=np.int64)
        self.ntheta = np.zeros((nu, d))
        self.track = bool(track_clusters)
        if self.track:
            if assign is None:
                raise InvalidArgument("cluster tracking needs the ground-truth assignment")
            m = int(np.max(assign)) + 1
            self.assign = np.ascontiguousarray(assign, dtype=np.int64)
        else:
            m = 0
            self.assign = np.zeros(self.u, dtype=np.int64)
        self.tgram = np.zeros((m, d, d))
        self.tinv = np.repeat((np.eye(d) / lam)[None], m, axis=0)
        self.tnupd = np.zeros(m, dtype=np.int64)
        self.tpot = np.zeros(m)
        self.tcount = np.zeros(m, dtype=np.int64)
        self.fp = self.params.float_vector()
        ip = np.zeros(9, dtype=np.int64)
        ip[F_SHARED] = self.kind.shared
        ip[F_CLUSTER] = self.kind.clustered
        ip[F_WEIGHTED] = self.params.weighted
        ip[F_LAGGED] = self.params.lagged
        ip[F_DELETION] = self.params.deletion
        ip[F_BETA_CLUSTER] = self.params.beta_cluster
        ip[F_REFRESH] = self.params.refresh_every
        ip[F_NONROBUST] = self.kind.clustered
        ip[F_TRACK] = self.track
        self.ip = ip

    def _slot(self, user: int) -> int:
        if not 0 <= user < self.u:
            raise InvalidArgument(f"user {user} out of range")
        return 0 if self.kind.shared else int(user)

    def _stats(self):
        return (self.gram, self.bvec, self.inv, self.nupd, self.theta, self.count, self.wprev,
                self._adj, self._labels, self._dirty, self.cgram, self.cb, self.ccount,
                self.ngram, self.nb, self.ninv, self.nnupd, self.ntheta)

    # -- single-round API ---------------------------------------------------

    def select_arm(self, user: int, arm_vectors, t: int) -> int:
        X = np.ascontiguousarray(arm_vectors, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise InvalidArgument("arm set must be a non-empty (K, d) array")
        if X.shape[1] != self.d:
            raise InvalidArgument("arm dimension mismatch")
        return int(select_kernel(self._slot(user), int(t), X, self.fp, self.ip, self.gram,
                                 self.bvec, self.count, self._adj, self._labels, self._dirty,
                                 self.cgram, self.cb, self.ccount))

    def update(self, user: int, x, r: float, t: int = 0) -> float:
        x = np.ascontiguousarray(x, dtype=np.float64)
        w = update_kernel(self._slot(user), int(user), x, float(r), self.fp, self.ip,
                          *self._stats())
        if self.track:
            track_kernel(int(self.assign[user]), x, self.params.lam, self.params.refresh_every,
                         self.tgram, self.tinv, self.tnupd, self.tpot)
            self.tcount[self.assign[user]] += 1
        return float(w)

    # -- block API used by the harness --------------------------------------

    def run_block(self, t0, users, armidx, noise, inst, k_window, corrupt_on):
        n = users.shape[0]
        out_regret = np.zeros(n)
        out_corr = np.zeros(n)
        out_choice = np.zeros(n, dtype=np.int64)
        out_weight = np.zeros(n)
        run_block_kernel(int(t0), users, armidx, noise, inst.arm_pool, inst.user_theta,
                         inst.corrupted_mask, int(k_window), bool(corrupt_on),
                         float(inst.noise_sd), self.assign, self.fp, self.ip,
                         *self._stats(), self.tgram, self.tinv, self.tnupd, self.tpot,
                         out_regret, out_corr, out_choice, out_weight)
        if self.track:
            self.tcount += np.bincount(self.assign[users], minlength=self.tcount.shape[0])
        return out_regret, out_corr, out_choice, out_weight

    # -- views ----------------------------------------------------------------

    def robust_state(self, user: int) -> UserRobustState:
        s = self._slot(user)
        lam = self.params.lam
        spd = numkit.SpdState(lam, lam * np.eye(self.d) + self.gram[s], self.inv[s].copy(),
                              int(self.nupd[s]), self.params.refresh_every)
        return UserRobustState(self.gram[s].copy(), self.bvec[s].copy(), int(self.count[s]),
                               self.theta[s].copy(), spd)

    def robust_stats(self) -> RobustStats:
        return RobustStats(self.gram, self.bvec, self.count, self.theta)

    def nonrobust_stats(self) -> NonRobustStats:
        if not self.kind.clustered:
            raise InvalidArgument("non-robust statistics exist for clustered kinds only")
        return NonRobustStats(self.ngram, self.nb, self.ntheta)

    def components(self) -> list[list[int]]:
        if self.graph is None:
            return [list(range(self.u))] if self.kind.shared else [[i] for i in range(self.u)]
        return [c.tolist() for c in self.graph.components()]

    def potential_bound(self, horizon: int) -> float:
        return 2.0 * self.d * math.log1p(horizon / (self.params.lam * self.d))
