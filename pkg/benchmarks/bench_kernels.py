"""Compare the compiled and numpy edge kernels, and a full training epoch under each.

    python benchmarks/bench_kernels.py            # kernels at AIFB-like sizes
    python benchmarks/bench_kernels.py --epoch    # also time train epochs per backend

The epoch timing runs each backend in a subprocess because the backend is
fixed at import (``MPERL_PURE_PYTHON=1`` selects numpy).
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from mperl import _kernels_py

try:
    from mperl import _kernels
except ImportError:
    _kernels = None


def make_edges(rng, n, n_rel, m):
    src = rng.integers(0, n, m)
    dst = rng.integers(0, n, m)
    rel = np.sort(rng.integers(0, n_rel, m))
    w = rng.uniform(0.1, 1.0, m)
    return src, dst, rel, w


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_kernels(n, n_rel, m, bases, width, repeat, seed=0):
    rng = np.random.default_rng(seed)
    src, dst, rel, w = make_edges(rng, n, n_rel, m)
    table = rng.normal(size=(n, bases, width))
    coef = rng.normal(size=(n_rel, bases))
    x = rng.normal(size=(n, width))
    g = rng.normal(size=(n, width))
    cases = {
        "contract": lambda mod: mod.contract(table, coef, src, dst, rel, w, n),
        "expand": lambda mod: mod.expand(x, coef, src, dst, rel, w, n),
        "coef_grad": lambda mod: mod.coef_grad(table, g, src, dst, rel, w, n_rel),
    }
    rows = []
    for name, call in cases.items():
        py = best_of(lambda: call(_kernels_py), repeat)
        row = {"kernel": name, "python_s": py}
        if _kernels is not None:
            cy = best_of(lambda: call(_kernels), repeat)
            np.testing.assert_allclose(call(_kernels), call(_kernels_py), rtol=1e-9, atol=1e-9)
            row.update(cython_s=cy, speedup=py / cy)
        rows.append(row)
    return rows


EPOCH_SCRIPT = """
import json, sys, time
sys.path.insert(0, {tests!r})
from fixtures import separable_graph
from mperl import kernels
from mperl.config import RunConfig
from mperl.trainer import train
kg = separable_graph({per_class}, 4, noise_edges={noise})
cfg = RunConfig(dataset="custom", epochs={epochs}, repeats=1, seed=0)
t = time.perf_counter()
res = train(cfg, kg)
print(json.dumps({{"backend": kernels.BACKEND, "seconds_per_epoch": (time.perf_counter() - t) / {epochs},
                  "final_loss": res.curve[-1]["total"]}}))
"""


def bench_epoch(per_class, noise, epochs):
    here = os.path.dirname(os.path.abspath(__file__))
    code = EPOCH_SCRIPT.format(tests=os.path.join(here, "..", "tests"), per_class=per_class, noise=noise,
                               epochs=epochs)
    out = []
    for pure in ("1", "0"):
        env = dict(os.environ, MPERL_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        out.append(json.loads(res.stdout.strip().splitlines()[-1]))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=8285)
    ap.add_argument("--relations", type=int, default=90)
    ap.add_argument("--edges", type=int, default=58000)
    ap.add_argument("--bases", type=int, default=40)
    ap.add_argument("--width", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--epoch", action="store_true")
    args = ap.parse_args()

    print(f"kernels: {args.nodes} nodes, {args.edges} edges, {args.relations} relations, "
          f"{args.bases} bases, width {args.width}")
    for r in bench_kernels(args.nodes, args.relations, args.edges, args.bases, args.width, args.repeat):
        line = f"  {r['kernel']:<10} python {r['python_s'] * 1e3:8.2f} ms"
        if "cython_s" in r:
            line += f"   cython {r['cython_s'] * 1e3:8.2f} ms   x{r['speedup']:.1f}"
        print(line)
    if args.epoch:
        print("train epoch (separable toy, 4 classes x 500 entities, 3000 noise edges):")
        for r in bench_epoch(500, 3000, 5):
            print(f"  {r['backend']:<7} {r['seconds_per_epoch'] * 1e3:8.1f} ms/epoch  final loss {r['final_loss']:.6f}")


if __name__ == "__main__":
    main()
