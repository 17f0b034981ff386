"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeats 5] [--nodes 125]

Both backends run on the same synthetic inputs; outputs are checked for
agreement before timings are reported.
"""

import argparse
import time

import numpy as np

from hieragg import _kernels_py
from hieragg.aggregate import ALGORITHMS
from hieragg.data import average_panel
from hieragg.experts import build_columns, default_grid, seasonal_difference
from hieragg.synth import SynthSpec, generate

try:
    from hieragg import _kernels
except ImportError:  # pragma: no cover
    _kernels = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--nodes", type=int, default=125, help="nodes aggregated per timing")
    args = parser.parse_args()
    if _kernels is None:
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation`")

    tree, panel = generate(SynthSpec(seed=1))
    h, n = 7, 1
    y = average_panel(panel, n)
    specs = default_grid()
    cubes = [build_columns(y[i], h, n, specs) for i in range(min(args.nodes, len(tree)))]
    d = seasonal_difference(y[0])
    alphas = np.array([s.alpha for s in specs if s.kind == "holt_add"])
    betas = np.array([s.beta for s in specs if s.kind == "holt_add"])

    cases = {
        "ses_filter": lambda k: k.ses_filter(d, 53, alphas),
        "holt_filter": lambda k: k.holt_filter(d, 54, alphas, betas),
    }
    for code, name in enumerate(ALGORITHMS):
        cases[f"aggregate[{name}]"] = lambda k, code=code: [
            k.aggregate(code, False, 0, y[i], F, h, 0.1, 2.0) for i, F in enumerate(cubes)
        ]

    print(f"{'kernel':<22}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>10}{'max |diff|':>14}")
    for label, fn in cases.items():
        ref, fast = fn(_kernels_py), fn(_kernels)
        diff = max(
            float(np.nanmax(np.abs(np.asarray(a) - np.asarray(b)), initial=0.0))
            for a, b in zip(_flatten(ref), _flatten(fast))
        )
        t_py = best_of(lambda fn=fn: fn(_kernels_py), args.repeats)
        t_c = best_of(lambda fn=fn: fn(_kernels), args.repeats)
        print(f"{label:<22}{t_py * 1e3:>14.2f}{t_c * 1e3:>14.2f}{t_py / t_c:>10.1f}{diff:>14.2e}")


def _flatten(result):
    if isinstance(result, np.ndarray):
        return [result]
    out = []
    for item in result:
        out.extend(_flatten(item))
    return out


if __name__ == "__main__":
    main()
