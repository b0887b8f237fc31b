"""Command-line entry point (``rclub``).

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import envsim, harness, ingest
from .errors import ConfigError, ParseError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rclub", description="Robust clustered bandit simulations.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True, help="TOML experiment config")
    run.add_argument("--seed", type=int, help="run only this seed (default: config seeds)")
    run.add_argument("--out", help="output directory (default: config output_dir, "
                                    f"else ${harness.OUTPUT_ROOT_ENV} or ./runs)")

    gen = sub.add_parser("gen-instance", help="write the synthetic instance of a config")
    gen.add_argument("--config", required=True)
    gen.add_argument("--seed", type=int, help="instance seed (default: first config seed)")
    gen.add_argument("--out", required=True, help="output JSON path")

    svd = sub.add_parser("svd", help="binarise a ratings CSV and extract rank-d features")
    svd.add_argument("--ratings", required=True)
    svd.add_argument("--rank", type=int, required=True)
    svd.add_argument("--out", required=True, help="item features CSV")
    svd.add_argument("--users-out", help="optional user features CSV")
    svd.add_argument("--threshold", type=float, default=3.0)
    svd.add_argument("--seed", type=int, default=0)

    diag = sub.add_parser("diag-t0", help="print lambda_tilde_x and T0 for a config")
    diag.add_argument("--config", required=True)
    diag.add_argument("--seed", type=int)
    return p


def _config(path: str) -> harness.ExperimentConfig:
    if not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    return harness.load_config(path)


def _cmd_run(args) -> int:
    cfg = _config(args.config)
    seeds = [args.seed] if args.seed is not None else list(cfg.run.seeds)
    if args.out:
        root = Path(args.out)
    elif cfg.run.output_dir:
        root = Path(cfg.run.output_dir)
    else:
        root = harness.default_output_root() / Path(args.config).stem
    for seed in seeds:
        res = harness.run_experiment(cfg, seed)
        out = root if len(seeds) == 1 else root / f"seed_{seed}"
        harness.emit_outputs(res, out, plot=cfg.run.plot)
        totals = ", ".join(f"{k}={v:.2f}" for k, v in res.total_regret.items())
        print(f"seed {seed}: {totals} ({res.wall_time:.1f}s) -> {out}")
    return 0


def _cmd_gen(args) -> int:
    cfg = _config(args.config)
    seed = args.seed if args.seed is not None else cfg.run.seeds[0]
    inst = envsim.generate_instance(cfg.instance, seed)
    inst.save(args.out)
    print(f"instance u={inst.u} m={inst.m} d={inst.d} gamma={inst.gamma} -> {args.out}")
    return 0


def _cmd_svd(args) -> int:
    ratings = ingest.load_ratings(args.ratings)
    fb = ingest.binarize(ratings, args.threshold)
    if not 1 <= args.rank <= min(fb.n_users, fb.n_items):
        raise _UsageError(f"--rank must lie in [1, {min(fb.n_users, fb.n_items)}]")
    res = ingest.truncated_svd(fb, args.rank, seed=args.seed)
    ingest.write_features(args.out, res.item_factors)
    if args.users_out:
        ingest.write_features(args.users_out, res.user_factors)
    top = np.array2string(res.s[:5], precision=4)
    print(f"rank {args.rank}: leading singular values {top}; {res.iterations} sweeps")
    return 0


def _cmd_diag(args) -> int:
    cfg = _config(args.config)
    seed = args.seed if args.seed is not None else cfg.run.seeds[0]
    inst = envsim.generate_instance(cfg.instance, seed)
    diag = harness.theory_diagnostics(cfg, inst)
    print(f"lambda_x       = {diag['lambda_x']:.6g}")
    print(f"sigma          = {diag['sigma']:.6g}")
    lt = diag["lambda_tilde_x"]
    print(f"lambda_tilde_x = {'n/a' if lt is None else format(lt, '.6g')}")
    if diag["T0"] is None:
        print("T0             = n/a (needs at least two clusters and delta < 1/3)")
    else:
        terms = ", ".join(f"{t:.6g}" for t in diag["T0_terms"])
        print(f"T0             = {diag['T0']:.6g}")
        print(f"T0 max-terms   = [{terms}]  (alpha={diag['alpha']:.6g}, C={diag['C']:.6g})")
    return 0


_COMMANDS = {"run": _cmd_run, "gen-instance": _cmd_gen, "svd": _cmd_svd, "diag-t0": _cmd_diag}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = _parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"rclub: error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ParseError) as exc:
        print(f"rclub: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure: report and exit 2
        print(f"rclub: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
