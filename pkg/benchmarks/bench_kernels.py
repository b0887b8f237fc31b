"""Compare the numba-compiled kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because ``RCLUB_JIT`` is read once at
import time.  Compilation is excluded from the timings by a warm-up call, and
both backends must produce the same regret trajectory.

    python benchmarks/bench_kernels.py --rounds 3000
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def worker(args):
    from rclub import envsim, numkit
    from rclub._accel import backend_name
    from rclub.bandits import Policy, PolicyConfig

    inst = envsim.generate_instance(
        envsim.GenerationConfig(u=args.u, m=5, d=args.d, pool=500, arms_per_round=20), 0)
    users, arms, noise = envsim.RoundStreams(inst, 0).window(1, args.rounds + 1)
    out = {"backend": backend_name()}

    def policy(kind):
        return Policy(kind, PolicyConfig(alpha=0.5, C=1.0, alpha1=0.2, beta=0.3),
                      inst.u, inst.d, args.rounds)

    for kind in ("RCLUB_WCU", "LINUCB_IND"):
        policy(kind).run_block(1, users[:50], arms[:50], noise[:50], inst, 0, False)  # warm-up
        p = policy(kind)
        t = time.perf_counter()
        reg = p.run_block(1, users, arms, noise, inst, 500, True)[0]
        out[kind] = {"seconds": time.perf_counter() - t, "regret": float(reg.sum())}

    rng = np.random.default_rng(1)
    X = rng.standard_normal((2000, args.d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    s = numkit.spd_new(args.d, 1.0)
    numkit.sherman_morrison(s.inv, X[0], 1.0)
    t = time.perf_counter()
    for x in X:
        numkit.sherman_morrison(s.inv, x, 0.5)
    out["sherman_morrison_2000"] = {"seconds": time.perf_counter() - t}

    A = X[:64].T @ X[:64] + np.eye(args.d)
    numkit.jacobi_eigh(A)
    t = time.perf_counter()
    for _ in range(50):
        numkit.jacobi_eigh(A)
    out["jacobi_eigh_50"] = {"seconds": time.perf_counter() - t}
    print(json.dumps(out))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rounds", type=int, default=3000)
    ap.add_argument("--u", type=int, default=50)
    ap.add_argument("--d", type=int, default=10)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        return worker(args)

    results = {}
    for flag in ("1", "0"):
        cmd = [sys.executable, __file__, "--worker", "--rounds", str(args.rounds),
               "--u", str(args.u), "--d", str(args.d)]
        res = subprocess.run(cmd, env=dict(os.environ, RCLUB_JIT=flag),
                             capture_output=True, text=True, check=True)
        doc = json.loads(res.stdout.strip().splitlines()[-1])
        results[doc["backend"]] = doc

    jit, py = results["numba"], results["numpy"]
    print(f"u={args.u} d={args.d} rounds={args.rounds}")
    print(f"{'task':<24}{'numba s':>10}{'numpy s':>10}{'speed-up':>10}")
    for task in ("RCLUB_WCU", "LINUCB_IND", "sherman_morrison_2000", "jacobi_eigh_50"):
        a, b = jit[task]["seconds"], py[task]["seconds"]
        print(f"{task:<24}{a:>10.3f}{b:>10.3f}{b / a:>9.1f}x")
    for kind in ("RCLUB_WCU", "LINUCB_IND"):
        same = np.isclose(jit[kind]["regret"], py[kind]["regret"], rtol=1e-9)
        print(f"{kind} regret agrees across backends: {bool(same)}")


if __name__ == "__main__":
    main()
