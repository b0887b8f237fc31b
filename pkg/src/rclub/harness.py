"""Experiment configuration, the round loop, and output files.

All policies of a run see the same arrivals, the same offered arm sets and
the same per-round noise draw; only their choices differ.  Rounds are
processed in segments that end on detection checkpoints, and each segment is
handed to the policies' compiled block loop.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, envsim
from ._accel import backend_name
from .bandits import AUTO, Policy, PolicyConfig, PolicyKind
from .detector import DetectionReport, auc, cluster_estimates, gcud_scan, occud_scan
from .errors import ConfigError, InvariantViolation, UndefinedResult

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUTPUT_ROOT_ENV = "RCLUB_OUTPUT_ROOT"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class CorruptionConfig:
    mode: str = "flip_prefix"
    k: int = 0
    enabled: bool = True


@dataclass
class RunConfig:
    T: int = 10_000
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str | None = None
    trace_downsample: int = 1000      # number of trace points kept
    track_clusters: bool = False
    plot: bool = True


@dataclass
class DetectorConfig:
    detect_every: int | str = AUTO    # auto: T / 5
    delta: float | str = AUTO         # auto: each policy's own delta
    rho: float | str = AUTO           # auto: corrupted_fraction


@dataclass
class PolicySpec:
    kind: PolicyKind
    label: str
    config: PolicyConfig


@dataclass
class ExperimentConfig:
    instance: envsim.GenerationConfig = field(default_factory=envsim.GenerationConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    run: RunConfig = field(default_factory=RunConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    policies: list[PolicySpec] = field(default_factory=list)

    @property
    def detect_every(self) -> int:
        de = self.detector.detect_every
        return max(1, self.run.T // 5) if de == AUTO else int(de)

    @property
    def rho(self) -> float:
        r = self.detector.rho
        return self.instance.corrupted_fraction if r == AUTO else float(r)

    def validate(self) -> None:
        try:
            self.instance.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.run.T < 1:
            raise ConfigError("run.T must be >= 1")
        if not self.run.seeds:
            raise ConfigError("run.seeds must list at least one seed")
        if self.run.trace_downsample < 1:
            raise ConfigError("run.trace_downsample must be >= 1")
        if not 1 <= self.detect_every <= self.run.T:
            raise ConfigError("detector.detect_every must lie in [1, T]")
        if not 0 <= self.rho < 1:
            raise ConfigError("detector.rho must lie in [0, 1)")
        if self.corruption.mode != "flip_prefix":
            raise ConfigError(f"unsupported corruption mode {self.corruption.mode!r}")
        if self.corruption.k < 0:
            raise ConfigError("corruption.k must be >= 0")
        labels = [p.label for p in self.policies]
        if len(set(labels)) != len(labels):
            raise ConfigError("policy labels must be unique")

    def to_dict(self) -> dict:
        doc = {
            "instance": dataclasses.asdict(self.instance),
            "corruption": dataclasses.asdict(self.corruption),
            "run": dataclasses.asdict(self.run),
            "detector": dataclasses.asdict(self.detector),
            "policies": [],
        }
        for p in self.policies:
            entry = {"kind": p.kind.value, "label": p.label}
            entry.update(dataclasses.asdict(p.config))
            doc["policies"].append(entry)
        return doc


def _fill(cls, table: dict, section: str):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    return cls(**table)


def config_from_dict(doc: dict) -> ExperimentConfig:
    top = {"instance", "corruption", "run", "detector", "policies"}
    unknown = sorted(set(doc) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    cfg = ExperimentConfig(
        instance=_fill(envsim.GenerationConfig, doc.get("instance", {}), "instance"),
        corruption=_fill(CorruptionConfig, doc.get("corruption", {}), "corruption"),
        run=_fill(RunConfig, doc.get("run", {}), "run"),
        detector=_fill(DetectorConfig, doc.get("detector", {}), "detector"),
    )
    for n, raw in enumerate(doc.get("policies", [])):
        raw = dict(raw)
        try:
            kind = PolicyKind(str(raw.pop("kind")).upper())
        except KeyError:
            raise ConfigError(f"policies[{n}] needs a 'kind'") from None
        except ValueError:
            raise ConfigError(f"policies[{n}]: unknown kind") from None
        label = str(raw.pop("label", kind.value))
        pc = _fill(PolicyConfig, raw, f"policies[{n}]")
        cfg.policies.append(PolicySpec(kind, label, pc))
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc)


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


@dataclass
class CheckpointRecord:
    t: int
    policy: str
    detector: str
    auc: float | None
    report: DetectionReport


@dataclass
class RunResult:
    config: dict
    seed: int
    labels: list[str]
    trace_t: np.ndarray                     # rounds at which the trace is sampled
    trace: dict[str, np.ndarray]            # cumulative regret at trace_t
    total_regret: dict[str, float]
    checkpoints: list[CheckpointRecord]
    realized_budget: dict[str, float]
    components: dict[str, list[list[int]]]
    potential: dict[str, dict]
    diagnostics: dict
    wall_time: float
    # full per-round records, kept in memory only
    regret_rounds: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    corruption_rounds: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    choices: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    policies: dict[str, Policy] = field(repr=False, default_factory=dict)
    instance: envsim.BanditInstance | None = field(repr=False, default=None)


def trace_points(T: int, n_points: int) -> np.ndarray:
    """Evenly spaced rounds ending at T (at most ``n_points`` of them)."""
    n = min(int(n_points), int(T))
    return np.unique(np.ceil(np.arange(1, n + 1) * (T / n)).astype(np.int64))


def checkpoints(T: int, every: int) -> list[int]:
    pts = list(range(every, T + 1, every))
    if not pts or pts[-1] != T:
        pts.append(T)
    return pts


def _arm_diagnostics(inst: envsim.BanditInstance) -> tuple[float, float]:
    """Empirical lambda_x (min eigenvalue of E[x x^T]) and the spread sigma of (theta^T x)^2."""
    X = inst.arm_pool
    lam_x = float(np.linalg.eigvalsh(X.T @ X / X.shape[0])[0])
    proj2 = (X @ inst.theta.T) ** 2
    sigma = float(np.max(proj2.std(axis=0)))
    return lam_x, sigma


def theory_diagnostics(cfg: ExperimentConfig, inst: envsim.BanditInstance) -> dict:
    """lambda_tilde_x and T0 for the first clustered policy (or default knobs)."""
    spec = next((p for p in cfg.policies if p.kind == PolicyKind.RCLUB_WCU), None)
    pc = spec.config if spec else PolicyConfig()
    kind = spec.kind if spec else PolicyKind.RCLUB_WCU
    from .bandits import resolve_params

    params = resolve_params(kind, pc, cfg.run.T, inst.d)
    lam_x, sigma = _arm_diagnostics(inst)
    out = {"lambda_x": lam_x, "sigma": sigma, "K": int(inst.arms_per_round),
           "lambda_tilde_x": None, "T0": None, "T0_terms": None,
           "alpha": None, "C": params.C, "delta": params.delta, "gamma": inst.gamma}
    if lam_x <= 0 or sigma <= 0:
        return out
    lt = envsim.lambda_tilde(lam_x, sigma, inst.arms_per_round)
    out["lambda_tilde_x"] = lt
    # all weights are 1 when alpha >= 1/sqrt(lam), so that is the effective alpha
    alpha = min(params.alpha, 1.0 / math.sqrt(params.lam))
    out["alpha"] = alpha
    if inst.gamma is None or lt <= 0 or not 0 < params.delta < 1 / 3:
        return out
    terms = envsim.t0_terms(inst.u, inst.d, inst.gamma, alpha, params.lam, lt,
                            params.C, params.delta)
    out["T0_terms"] = list(terms)
    out["T0"] = envsim.t0_bound(inst.u, inst.d, inst.gamma, alpha, params.lam, lt,
                                params.C, params.delta)
    return out


def build_policies(cfg: ExperimentConfig, inst: envsim.BanditInstance) -> dict[str, Policy]:
    out = {}
    for spec in cfg.policies:
        out[spec.label] = Policy(spec.kind, spec.config, inst.u, inst.d, cfg.run.T,
                                 assign=inst.assign, track_clusters=cfg.run.track_clusters,
                                 label=spec.label)
    return out


def _scan(policy: Policy, inst: envsim.BanditInstance, t: int, cfg: ExperimentConfig):
    params = policy.params
    delta = params.delta if cfg.detector.delta == AUTO else float(cfg.detector.delta)
    robust = policy.robust_stats()
    occ = occud_scan(robust, policy.nonrobust_stats(), policy.graph, t,
                     lam=params.lam, delta=delta, alpha_c=params.alpha_c)
    labels, _, thetas, _ = cluster_estimates(robust, policy.graph, params.lam)
    gc = gcud_scan(policy.theta, thetas[labels], policy.graph, cfg.rho, t)
    truth = inst.corrupted_mask
    recs = []
    for rep in (occ, gc):
        try:
            a = auc(rep.scores, truth)
        except UndefinedResult:
            a = None
        recs.append(CheckpointRecord(t, policy.label, rep.algorithm, a, rep))
    return recs


def run_experiment(cfg: ExperimentConfig, seed: int,
                   instance: envsim.BanditInstance | None = None) -> RunResult:
    """Run every configured policy on one seeded world."""
    cfg.validate()
    start = time.perf_counter()
    inst = instance if instance is not None else envsim.generate_instance(cfg.instance, seed)
    T = cfg.run.T
    streams = envsim.RoundStreams(inst, seed)
    policies = build_policies(cfg, inst)
    labels = list(policies)
    regret = {k: np.zeros(T) for k in labels}
    corr = {k: np.zeros(T) for k in labels}
    choice = {k: np.zeros(T, dtype=np.int64) for k in labels}
    k_window = cfg.corruption.k
    corrupt_on = cfg.corruption.enabled
    records: list[CheckpointRecord] = []
    t0 = 1
    for cp in checkpoints(T, cfg.detect_every):
        while t0 <= cp:
            t1 = min(cp + 1, t0 + envsim.BLOCK)
            users, arms, noise = streams.window(t0, t1)
            for lab, pol in policies.items():
                r, c, a, _ = pol.run_block(t0, users, arms, noise, inst, k_window, corrupt_on)
                regret[lab][t0 - 1:t1 - 1] = r
                corr[lab][t0 - 1:t1 - 1] = c
                choice[lab][t0 - 1:t1 - 1] = a
            t0 = t1
        for pol in policies.values():
            if pol.kind.clustered:
                records.extend(_scan(pol, inst, cp, cfg))

    pts = trace_points(T, cfg.run.trace_downsample)
    trace, total, budget, comps, potential = {}, {}, {}, {}, {}
    for lab, pol in policies.items():
        r = regret[lab]
        if r.size and (r.min() < -1e-12 or r.max() > 2.0 + 1e-12):
            raise InvariantViolation(f"{lab}: instantaneous regret outside [0, 2]")
        cum = np.cumsum(r)
        trace[lab] = cum[pts - 1]
        total[lab] = float(cum[-1])
        budget[lab] = math.fsum(corr[lab])
        comps[lab] = pol.components()
        if pol.track:
            bound = pol.potential_bound(T)
            sums = pol.tpot.tolist()
            viol = [j for j, s in enumerate(sums) if s > bound]
            potential[lab] = {"sums": sums, "bound": bound, "violations": viol}
            if viol:
                raise InvariantViolation(
                    f"{lab}: potential sum exceeds 2d log(1+T/(lam d)) = {bound:.4f} "
                    f"for cluster(s) {viol}: {[sums[j] for j in viol]}")
    return RunResult(config=cfg.to_dict(), seed=int(seed), labels=labels, trace_t=pts,
                     trace=trace, total_regret=total, checkpoints=records,
                     realized_budget=budget, components=comps, potential=potential,
                     diagnostics=theory_diagnostics(cfg, inst),
                     wall_time=time.perf_counter() - start,
                     regret_rounds=regret, corruption_rounds=corr, choices=choice,
                     policies=policies, instance=inst)


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _num(x):
    return repr(float(x))


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def emit_outputs(r: RunResult, out_dir, *, plot: bool = True) -> list[Path]:
    """Write regret.csv, detection.csv, detected_users.json, run_meta.json (+ regret.svg)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    written = []

    def put(name: str, text: str):
        path = out / name
        try:
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from exc
        written.append(path)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *r.labels])
    if r.labels:
        for n, t in enumerate(r.trace_t):
            w.writerow([int(t), *(_num(r.trace[k][n]) for k in r.labels)])
    put("regret.csv", buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["checkpoint_t", "policy", "detector", "auc"])
    for rec in r.checkpoints:
        w.writerow([rec.t, rec.policy, rec.detector, "" if rec.auc is None else _num(rec.auc)])
    put("detection.csv", buf.getvalue())

    detected = [{"t": rec.t, "policy": rec.policy, "detector": rec.detector,
                 "flagged": rec.report.detected_set,
                 "scores": [float(s) for s in rec.report.scores]}
                for rec in r.checkpoints]
    put("detected_users.json", json.dumps(_json_safe(detected), indent=1))

    meta = {
        "config": r.config,
        "seed": r.seed,
        "realized_budget": r.realized_budget,
        "total_regret": r.total_regret,
        "final_components": r.components,
        "potential_check": r.potential,
        "diagnostics": r.diagnostics,
        "identical_draws": True,
        "versions": {"rclub": __version__, "numpy": np.__version__,
                     "python": platform.python_version(), "backend": backend_name()},
    }
    put("run_meta.json", json.dumps(_json_safe(meta), indent=1, sort_keys=True))
    if plot and r.labels:
        put("regret.svg", regret_svg(r))
    return written


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]


def regret_svg(r: RunResult, width: int = 640, height: int = 400) -> str:
    """Minimal polyline chart of the cumulative regret traces."""
    ml, mr, mt, mb = 60, 150, 20, 40
    pw, ph = width - ml - mr, height - mt - mb
    tmax = float(r.trace_t[-1]) if len(r.trace_t) else 1.0
    ymax = max([float(v.max()) for v in r.trace.values() if v.size] + [1e-12])

    def sx(t):
        return ml + pw * float(t) / tmax

    def sy(v):
        return mt + ph * (1.0 - float(v) / ymax)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="11">',
             f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for n in range(5):
        t = tmax * n / 4
        y = ymax * n / 4
        parts.append(f'<text x="{sx(t):.1f}" y="{mt + ph + 15}" text-anchor="middle">{t:.3g}</text>')
        parts.append(f'<text x="{ml - 5}" y="{sy(y) + 4:.1f}" text-anchor="end">{y:.3g}</text>')
    for n, lab in enumerate(r.labels):
        col = _COLORS[n % len(_COLORS)]
        pts = " ".join(f"{sx(t):.2f},{sy(v):.2f}" for t, v in zip(r.trace_t, r.trace[lab]))
        parts.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{pts}"/>')
        ly = mt + 15 * (n + 1)
        parts.append(f'<text x="{ml + pw + 10}" y="{ly}" fill="{col}">{lab}</text>')
    parts.append(f'<text x="{ml + pw / 2}" y="{height - 5}" text-anchor="middle">round</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def read_regret_csv(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    t = np.array([int(row[0]) for row in body], dtype=np.int64)
    cols = {lab: np.array([float(row[j + 1]) for row in body]) for j, lab in enumerate(header[1:])}
    return t, cols
