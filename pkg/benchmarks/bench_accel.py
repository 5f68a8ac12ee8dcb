"""Time the compiled signal core against the numpy/scipy fallback.

    python3 benchmarks/bench_accel.py [--repeat 5] [--n 92 460] [--fois 20]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from hiercrop import _pyext

try:
    from hiercrop import _ext
except ImportError:  # pragma: no cover
    _ext = None


def cases(n, rng):
    y = np.cumsum(rng.normal(size=n)) + rng.normal(scale=0.3, size=n)
    w = rng.uniform(0.2, 1.0, n)
    return {
        "whittaker d=2": lambda m: m.whittaker_solve(y, w, 100.0, 2),
        "whittaker d=3": lambda m: m.whittaker_solve(y, w, 100.0, 3),
        "asym whittaker": lambda m: m.asym_whittaker(y, w, 100.0, 0.9),
        "hampel hw=3": lambda m: m.hampel_flags(y, 3, 3.0, 0),
    }


def bench(fn, repeat):
    timer = timeit.Timer(fn)
    loops, _ = timer.autorange()
    return min(timer.repeat(repeat, loops)) / loops


PIPELINE = """
import time
from hiercrop import BACKEND, synth
from hiercrop.pipeline import featurize_dataset
d, _ = synth.generate(synth.load_scenario("tiny", n_fois={fois}))
t = time.perf_counter()
featurize_dataset(d)
print(BACKEND, time.perf_counter() - t)
"""


def pipeline(fois):
    """Featurize a tiny scenario under each backend; the backend is fixed at import, hence subprocesses."""
    out = {}
    for pure in ("1", "0"):
        env = dict(os.environ, HIERCROP_PURE=pure)
        res = subprocess.run([sys.executable, "-c", PIPELINE.format(fois=fois)], env=env, capture_output=True,
                             text=True, check=True)
        name, secs = res.stdout.split()
        out[name] = float(secs)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, nargs="+", default=[92, 460])
    ap.add_argument("--fois", type=int, default=20, help="FOIs in the end-to-end featurization run (0 skips it)")
    args = ap.parse_args()
    if _ext is None:
        raise SystemExit("compiled core not built; run pip install -e . --no-build-isolation")
    rng = np.random.default_rng(0)
    print(f"{'case':<16} {'n':>5} {'python us':>11} {'cython us':>11} {'speedup':>8}")
    for n in args.n:
        for name, call in cases(n, rng).items():
            a, b = call(_pyext), call(_ext)
            agree = np.allclose(a[0] if isinstance(a, tuple) else a, b[0] if isinstance(b, tuple) else b, atol=1e-8)
            tp, tc = bench(lambda: call(_pyext), args.repeat), bench(lambda: call(_ext), args.repeat)
            flag = "" if agree else "  MISMATCH"
            print(f"{name:<16} {n:>5} {tp * 1e6:>11.1f} {tc * 1e6:>11.1f} {tp / tc:>7.1f}x{flag}")
    if args.fois:
        t = pipeline(args.fois)
        print(f"featurize {args.fois} FOIs: python {t['python']:.2f} s, cython {t['cython']:.2f} s, "
              f"{t['python'] / t['cython']:.1f}x")


if __name__ == "__main__":
    main()
