"""Compare the compiled kernels with their pure-Python twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each row times one call shape typical of a scoring run and checks the two
implementations agree on the result before reporting a speed-up.
"""
from __future__ import annotations

import argparse
import random
import timeit

from iuq import _pykernels

try:
    from iuq import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None


def _cases(rng: random.Random):
    seq = [rng.random() for _ in range(50)]
    scores = [round(rng.random(), 3) for _ in range(5000)]
    labels = [int(rng.random() < 0.4) for _ in scores]
    # bipartite claim/response graph: 30 responses x 20 claims, 60% edge density
    n_resp, n_claim = 30, 600
    adj = {i: set() for i in range(n_resp + n_claim)}
    for c in range(n_claim):
        for r in range(n_resp):
            if rng.random() < 0.6:
                adj[r].add(n_resp + c)
                adj[n_resp + c].add(r)
    indptr, indices = [0], []
    for v in range(n_resp + n_claim):
        indices.extend(sorted(adj[v]))
        indptr.append(len(indices))
    return [
        ("exp_weights (50 claims)", "exp_weights", (seq, 1.0), 2000),
        ("linear_weights (50 claims)", "linear_weights", (seq, 0.1, 0.0), 2000),
        ("mann_whitney_auc (5000)", "mann_whitney_auc", (scores, labels), 20),
        ("average_precision (5000)", "average_precision", (scores, labels), 20),
        ("closeness (630 nodes)", "closeness", (indptr, indices), 2),
    ]


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return
    print(f"{'kernel':30s} {'python (ms)':>12s} {'cython (ms)':>12s} {'speed-up':>9s}")
    for label, name, call_args, number in _cases(random.Random(args.seed)):
        py_fn, c_fn = getattr(_pykernels, name), getattr(_ckernels, name)
        if py_fn(*call_args) != c_fn(*call_args):
            raise SystemExit(f"{name}: implementations disagree")
        t_py = min(timeit.repeat(lambda: py_fn(*call_args), number=number, repeat=args.repeat)) / number
        t_c = min(timeit.repeat(lambda: c_fn(*call_args), number=number, repeat=args.repeat)) / number
        print(f"{label:30s} {t_py * 1e3:12.4f} {t_c * 1e3:12.4f} {t_py / t_c:8.1f}x")


if __name__ == "__main__":
    main()
