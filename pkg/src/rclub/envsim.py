"""Synthetic world: cluster preferences, arm pool, arrivals, rewards, corruption.

Randomness is split into purpose-specific Philox streams (instance, arrivals,
arm sets, noise).  Arrival/arm/noise streams are generated in fixed-size
blocks keyed by ``(seed, purpose, block)`` so any round can be regenerated on
its own, and switching corruption on or off never shifts the arm draws.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, ParseError

STREAM_INSTANCE = 0
STREAM_USERS = 1
STREAM_ARMS = 2
STREAM_NOISE = 3
BLOCK = 16384


def philox(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def lift_unit(g: np.ndarray) -> np.ndarray:
    """Normalise rows, append a constant-1 coordinate and divide by sqrt(2)."""
    g = np.asarray(g, dtype=np.float64)
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    out = np.hstack([g / norms, np.ones((g.shape[0], 1))]) / math.sqrt(2.0)
    return out


def min_pairwise_gap(theta: np.ndarray) -> float | None:
    m = theta.shape[0]
    if m < 2:
        return None
    diff = theta[:, None, :] - theta[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    dist[np.diag_indices(m)] = np.inf
    return float(dist.min())


@dataclass
class GenerationConfig:
    u: int = 100
    m: int = 5
    d: int = 20
    pool: int = 1000
    arms_per_round: int = 20
    corrupted_fraction: float = 0.1
    noise_sd: float = 0.1
    # "gaussian": random directions; "orthogonal": orthonormal directions (gap exactly 1)
    cluster_geometry: str = "gaussian"

    def validate(self) -> None:
        if self.m < 1 or self.u < self.m:
            raise InvalidArgument(f"need u >= m >= 1, got u={self.u}, m={self.m}")
        if self.d < 2:
            raise InvalidArgument(f"need d >= 2, got {self.d}")
        if self.arms_per_round < 1 or self.pool < self.arms_per_round:
            raise InvalidArgument("need pool >= arms_per_round >= 1")
        if not 0 <= self.corrupted_fraction < 1:
            raise InvalidArgument("corrupted_fraction must lie in [0, 1)")
        if not 0 <= self.noise_sd <= 1:
            raise InvalidArgument("noise_sd must lie in [0, 1] (1-sub-Gaussian noise)")
        if self.cluster_geometry not in ("gaussian", "orthogonal"):
            raise InvalidArgument(f"unknown cluster_geometry {self.cluster_geometry!r}")
        if self.cluster_geometry == "orthogonal" and self.m > self.d - 1:
            raise InvalidArgument("orthogonal geometry needs m <= d - 1")


@dataclass
class BanditInstance:
    """Ground truth of one synthetic world (immutable after generation)."""

    theta: np.ndarray          # (m, d) cluster preference vectors
    assign: np.ndarray         # (u,) cluster index of every user
    corrupted: np.ndarray      # sorted ids of corrupted users
    arm_pool: np.ndarray       # (pool, d)
    arms_per_round: int
    noise_sd: float
    seed: int = 0
    gamma: float | None = field(default=None)

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        self.assign = np.ascontiguousarray(self.assign, dtype=np.int64)
        self.corrupted = np.unique(np.asarray(self.corrupted, dtype=np.int64))
        self.arm_pool = np.ascontiguousarray(self.arm_pool, dtype=np.float64)
        if self.gamma is None:
            self.gamma = min_pairwise_gap(self.theta)
        self._user_theta = np.ascontiguousarray(self.theta[self.assign])
        mask = np.zeros(self.u, dtype=np.bool_)
        mask[self.corrupted] = True
        self._mask = mask

    @property
    def u(self) -> int:
        return self.assign.shape[0]

    @property
    def m(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.theta.shape[1]

    @property
    def user_theta(self) -> np.ndarray:
        return self._user_theta

    @property
    def corrupted_mask(self) -> np.ndarray:
        return self._mask

    def clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.assign == j) for j in range(self.m)]

    def to_json(self) -> dict:
        return {
            "dims": {"u": self.u, "m": self.m, "d": self.d,
                     "pool": int(self.arm_pool.shape[0]),
                     "arms_per_round": int(self.arms_per_round)},
            "noise_sd": float(self.noise_sd),
            "seed": int(self.seed),
            "gamma": self.gamma,
            "theta": self.theta.tolist(),
            "assign": self.assign.tolist(),
            "corrupted": self.corrupted.tolist(),
            "arms": self.arm_pool.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BanditInstance":
        try:
            dims = doc["dims"]
            inst = cls(theta=np.array(doc["theta"], dtype=np.float64),
                       assign=np.array(doc["assign"], dtype=np.int64),
                       corrupted=np.array(doc["corrupted"], dtype=np.int64),
                       arm_pool=np.array(doc["arms"], dtype=np.float64),
                       arms_per_round=int(dims["arms_per_round"]),
                       noise_sd=float(doc.get("noise_sd", 0.1)),
                       seed=int(doc.get("seed", 0)),
                       gamma=doc.get("gamma"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"invalid instance document: {exc}") from exc
        if inst.theta.shape != (dims["m"], dims["d"]) or inst.u != dims["u"]:
            raise ParseError("instance dims do not match array shapes")
        return inst

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "BanditInstance":
        return cls.from_json(json.loads(Path(path).read_text()))


def generate_instance(cfg: GenerationConfig, seed: int) -> BanditInstance:
    cfg.validate()
    rng = philox(seed, STREAM_INSTANCE)
    if cfg.cluster_geometry == "orthogonal":
        q, _ = np.linalg.qr(rng.standard_normal((cfg.d - 1, cfg.m)))
        theta = lift_unit(q.T)
    else:
        theta = lift_unit(rng.standard_normal((cfg.m, cfg.d - 1)))
    arms = lift_unit(rng.standard_normal((cfg.pool, cfg.d - 1)))
    # balanced sizes: the first u % m clusters get one extra user
    sizes = np.full(cfg.m, cfg.u // cfg.m)
    sizes[: cfg.u % cfg.m] += 1
    assign = np.repeat(np.arange(cfg.m), sizes)
    n_bad = int(round(cfg.corrupted_fraction * cfg.u))
    corrupted = np.sort(rng.choice(cfg.u, size=n_bad, replace=False))
    return BanditInstance(theta=theta, assign=assign, corrupted=corrupted, arm_pool=arms,
                          arms_per_round=cfg.arms_per_round, noise_sd=cfg.noise_sd,
                          seed=int(seed))


def instance_from_features(arms: np.ndarray, theta: np.ndarray, u: int,
                           corrupted_fraction: float, arms_per_round: int,
                           noise_sd: float, seed: int) -> BanditInstance:
    """Build an instance around externally supplied arm and cluster vectors."""
    theta = np.asarray(theta, dtype=np.float64)
    m = theta.shape[0]
    if u < m:
        raise InvalidArgument("need u >= number of cluster vectors")
    if arms.shape[1] != theta.shape[1]:
        raise InvalidArgument("arm and preference dimensions differ")
    if arms.shape[0] < arms_per_round:
        raise InvalidArgument("arm pool smaller than arms_per_round")
    rng = philox(seed, STREAM_INSTANCE)
    sizes = np.full(m, u // m)
    sizes[: u % m] += 1
    assign = np.repeat(np.arange(m), sizes)
    corrupted = np.sort(rng.choice(u, size=int(round(corrupted_fraction * u)), replace=False))
    return BanditInstance(theta=theta, assign=assign, corrupted=corrupted, arm_pool=arms,
                          arms_per_round=arms_per_round, noise_sd=noise_sd, seed=seed)


# ---------------------------------------------------------------------------
# round streams
# ---------------------------------------------------------------------------


def floyd_sample(uniforms: np.ndarray, pool: int) -> np.ndarray:
    """Distinct indices per row by Floyd's algorithm, vectorised over rows.

    ``uniforms`` has shape (rows, k); row r yields k distinct ids in [0, pool).
    """
    rows, k = uniforms.shape
    out = np.empty((rows, k), dtype=np.int64)
    for step, j in enumerate(range(pool - k, pool)):
        cand = np.minimum((uniforms[:, step] * (j + 1)).astype(np.int64), j)
        if step:
            taken = (out[:, :step] == cand[:, None]).any(axis=1)
            cand = np.where(taken, j, cand)
        out[:, step] = cand
    return out


@dataclass
class RoundDraw:
    t: int
    user: int
    arm_set: np.ndarray


class RoundStreams:
    """Block-addressable arrivals, arm sets and standard-normal noise."""

    def __init__(self, inst: BanditInstance, seed: int, block: int = BLOCK):
        self.inst = inst
        self.seed = int(seed)
        self.block = int(block)
        self._cache: dict[int, tuple] = {}

    def _block(self, b: int):
        hit = self._cache.get(b)
        if hit is not None:
            return hit
        n = self.block
        users = philox(self.seed, STREAM_USERS, b).integers(0, self.inst.u, size=n)
        unif = philox(self.seed, STREAM_ARMS, b).random((n, self.inst.arms_per_round))
        arms = floyd_sample(unif, self.inst.arm_pool.shape[0])
        noise = philox(self.seed, STREAM_NOISE, b).standard_normal(n)
        hit = (users.astype(np.int64), arms, noise)
        if len(self._cache) > 4:
            self._cache.clear()
        self._cache[b] = hit
        return hit

    def window(self, t0: int, t1: int):
        """Draws for rounds ``t0 <= t < t1`` (1-based): users, arm ids, noise."""
        if t0 < 1 or t1 < t0:
            raise InvalidArgument(f"bad round window [{t0}, {t1})")
        parts_u, parts_a, parts_n = [], [], []
        t = t0
        while t < t1:
            b, off = divmod(t - 1, self.block)
            stop = min(t1 - t, self.block - off)
            users, arms, noise = self._block(b)
            parts_u.append(users[off:off + stop])
            parts_a.append(arms[off:off + stop])
            parts_n.append(noise[off:off + stop])
            t += stop
        if not parts_u:
            k = self.inst.arms_per_round
            return (np.empty(0, np.int64), np.empty((0, k), np.int64), np.empty(0))
        return (np.ascontiguousarray(np.concatenate(parts_u)),
                np.ascontiguousarray(np.concatenate(parts_a)),
                np.ascontiguousarray(np.concatenate(parts_n)))

    def noise(self, t: int) -> float:
        return float(self.window(t, t + 1)[2][0])


def sample_round(inst: BanditInstance, t: int, streams: RoundStreams) -> RoundDraw:
    if t < 1:
        raise InvalidArgument("rounds are numbered from 1")
    users, arms, _ = streams.window(t, t + 1)
    return RoundDraw(t=int(t), user=int(users[0]), arm_set=arms[0].copy())


# ---------------------------------------------------------------------------
# rewards and corruption
# ---------------------------------------------------------------------------


@dataclass
class CorruptionState:
    """Flip-prefix adversary: corrupted users report ``-x^T theta + noise`` for t <= k."""

    k: int = 0
    enabled: bool = True
    mode: str = "flip_prefix"
    realized_budget: float = 0.0

    def __post_init__(self):
        if self.mode != "flip_prefix":
            raise InvalidArgument(f"unsupported corruption mode {self.mode!r}")
        if self.k < 0:
            raise InvalidArgument("corruption window k must be >= 0")

    def active(self, inst: BanditInstance, user: int, t: int) -> bool:
        return self.enabled and t <= self.k and bool(inst.corrupted_mask[user])


def realize_reward(inst: BanditInstance, cs: CorruptionState, draw: RoundDraw,
                   chosen_arm: int, noise) -> tuple[float, float]:
    """Reward and corruption for the chosen arm.

    ``chosen_arm`` is a pool index from ``draw.arm_set``.  ``noise`` is the
    round's standard-normal draw (float) or a numpy Generator to draw it from.
    """
    if chosen_arm not in draw.arm_set:
        raise InvalidArgument(f"arm {chosen_arm} not offered at round {draw.t}")
    z = noise.standard_normal() if isinstance(noise, np.random.Generator) else float(noise)
    mean = float(inst.arm_pool[chosen_arm] @ inst.user_theta[draw.user])
    c = -2.0 * mean if cs.active(inst, draw.user, draw.t) else 0.0
    cs.realized_budget += abs(c)
    return mean + inst.noise_sd * z + c, c


# ---------------------------------------------------------------------------
# theory diagnostics
# ---------------------------------------------------------------------------


def _adaptive_simpson(f, a: float, b: float, tol: float, max_depth: int = 60) -> float:
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) * (fa + 4 * fm + fb) / 6.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    total = 0.0
    while stack:
        a, b, fa, fm, fb, whole, tol, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) * (fa + 4 * flm + fm) / 6.0
        right = (b - m) * (fm + 4 * frm + fb) / 6.0
        delta = left + right - whole
        if depth >= max_depth or abs(delta) <= 15.0 * tol:
            total += left + right + delta / 15.0
        else:
            stack.append((a, m, fa, flm, fm, left, 0.5 * tol, depth + 1))
            stack.append((m, b, fm, frm, fb, right, 0.5 * tol, depth + 1))
    return total


def lambda_tilde(lambda_x: float, sigma: float, K: int) -> float:
    """Effective eigenvalue rate under argmax selection.

    Integral over ``[0, lambda_x]`` of ``(1 - exp(-(lambda_x - x)^2 / (2 sigma^2)))^K``,
    by adaptive Simpson; successive refinements agree to 1e-9.
    """
    if not (lambda_x > 0 and sigma > 0 and K >= 1):
        raise InvalidArgument("lambda_tilde needs lambda_x > 0, sigma > 0, K >= 1")

    def integrand(x):
        e = math.exp(-((lambda_x - x) ** 2) / (2.0 * sigma * sigma))
        if e >= 1.0:
            return 0.0
        return math.exp(K * math.log1p(-e))

    return _adaptive_simpson(integrand, 0.0, float(lambda_x), 1e-11)


def t0_bound(u: int, d: int, gamma: float, alpha: float, lam: float,
             lam_tilde: float, C: float, delta: float) -> float:
    """Sufficient number of rounds for correct clustering (diagnostic only)."""
    if not 0 < delta < 1 / 3:
        raise InvalidArgument("delta must lie in (0, 1/3)")
    if min(u, d, gamma, alpha, lam, lam_tilde) <= 0 or C < 0:
        raise InvalidArgument("t0_bound arguments must be positive (C >= 0)")
    terms = t0_terms(u, d, gamma, alpha, lam, lam_tilde, C, delta)
    return 16.0 * u * math.log(u / delta) + 4.0 * u * max(terms)


def t0_terms(u, d, gamma, alpha, lam, lam_tilde, C, delta) -> tuple[float, ...]:
    """The four candidates inside the max of :func:`t0_bound` (for reporting)."""
    sl = math.sqrt(lam)
    log_u = math.log(u / delta)
    return (
        288.0 * d / (gamma ** 2 * alpha * sl * lam_tilde) * log_u,
        16.0 / lam_tilde ** 2 * math.log(8.0 * d / (lam_tilde ** 2 * delta)),
        72.0 * sl / (alpha * gamma ** 2 * lam_tilde),
        72.0 * alpha * C ** 2 / (gamma ** 2 * sl * lam_tilde),
    )
