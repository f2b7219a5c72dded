"""Compare the compiled and pure-Python persistence kernels.

    python benchmarks/bench_reduce.py [--sizes 40,80,120] [--maxdim 2] [--repeat 3]

Both kernels run on the same Gabor-Klein filter clouds; the script checks
that their diagrams agree and prints a timing table.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from kleinvae.data import sample_filter_cloud
from kleinvae.tda import rips as rips_mod
from kleinvae.tda import rips_ph, distance_matrix


def best_time(fn, repeat: int) -> tuple[float, object]:
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--sizes", default="40,80,120")
    ap.add_argument("--maxdim", type=int, default=2)
    ap.add_argument("--field", type=int, default=2)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = sorted(rips_mod._KERNELS)
    if "compiled" not in backends:
        print("compiled kernel not built; timing the Python kernel only")
    print(f"{'n':>5} " + " ".join(f"{b:>12}" for b in backends) + f" {'speedup':>9}  agree")
    for n in (int(s) for s in args.sizes.split(",")):
        D = distance_matrix(sample_filter_cloud(n, args.seed).filters)
        times, dgms = {}, {}
        for b in backends:
            times[b], dgms[b] = best_time(
                lambda b=b: rips_ph(D, max_dim=args.maxdim, field_char=args.field, backend=b), args.repeat)
        agree = all(np.array_equal(dgms[b].points, dgms[backends[0]].points) for b in backends)
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{n:>5} " + " ".join(f"{times[b]:>11.3f}s" for b in backends) + f" {speed:>8.1f}x  {agree}")


if __name__ == "__main__":
    main()
