"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each case checks that both backends agree before timing them.
"""

import argparse
import json
import timeit

import numpy as np

from metasaug import kernels


def cases(rng):
    def psd(d):
        a = rng.standard_normal((d, d))
        return a @ a.T / d

    for d in (8, 32, 64):
        a = psd(d)
        yield f"jacobi_eigh d={d}", "jacobi_eigh", (a, 1e-12, 100)
    for C, d in ((10, 10), (10, 64), (100, 16)):
        w = rng.standard_normal((C, d))
        sig = np.stack([psd(d) for _ in range(C)])
        coef = rng.standard_normal((C, C))
        dw = rng.standard_normal((C, d))
        yield f"pair_quadratic C={C} d={d}", "pair_quadratic", (w, sig)
        yield f"pair_outer_sum C={C} d={d}", "pair_outer_sum", (w, coef)
        yield f"pair_cross_sum C={C} d={d}", "pair_cross_sum", (w, dw, coef)
        yield f"pair_sigma_apply C={C} d={d}", "pair_sigma_apply", (w, sig)


def _first(result):
    return result[0] if isinstance(result, tuple) else result


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json")
    args = p.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'case':34s}" + "".join(f"{b:>14s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for label, fn, inputs in cases(rng):
        inputs = tuple(np.ascontiguousarray(x) if isinstance(x, np.ndarray) else x for x in inputs)
        outs = {b: _first(getattr(kernels.module_for(b), fn)(*inputs)) for b in backends}
        ref = outs["python"]
        for b, out in outs.items():
            np.testing.assert_allclose(out, ref, rtol=1e-9, atol=1e-9 * max(1.0, np.abs(ref).max()),
                                       err_msg=f"{b} disagrees on {label}")
        times = {}
        for b in backends:
            f = getattr(kernels.module_for(b), fn)
            timer = timeit.Timer(lambda: f(*inputs))
            number, _ = timer.autorange()
            times[b] = min(timer.repeat(args.repeat, number)) / number
        row = {"case": label, "seconds": times}
        line = f"{label:34s}" + "".join(f"{times[b] * 1e6:12.1f}us" for b in backends)
        if len(backends) > 1:
            row["speedup"] = times["python"] / times["cython"]
            line += f"{row['speedup']:11.1f}x"
        rows.append(row)
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
