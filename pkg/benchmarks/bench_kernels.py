"""Time the numba and numpy kernels side by side and check they agree bit for bit.

    python benchmarks/bench_kernels.py [--repeat 5] [--json]

Both implementations are called directly, so the SNNHW_DISABLE_NUMBA flag
does not matter here. The first numba call (compilation or cache load) is
timed separately and excluded from the steady-state numbers.
"""
import argparse
import json
import time

import numpy as np

from snnhw import kernels
from snnhw._accel import HAVE_NUMBA
from snnhw.encoding import rate_encode
from snnhw.hwmodel import pack_params
from snnhw.network import FloatNetwork, NetworkConfig, quantize_network


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def hw_case():
    cfg = NetworkConfig()  # 4096-512-2, T=25
    q, _ = quantize_network(FloatNetwork.init_random(cfg, seed=0))
    spikes = rate_encode(np.random.default_rng(0).uniform(size=cfg.input_size), cfg.timesteps, seed=1)
    l1, l2 = q.layers
    args = (l1.weights, l1.bias, l2.weights, l2.bias, spikes.bits,
            pack_params(q.params[0]), pack_params(q.params[1]))
    return "hw_run 4096-512-2 T=25", kernels._hw_run_numba, kernels._hw_run_numpy, args


def tree_case():
    rng = np.random.default_rng(1)
    s = (rng.random((512, 4096)) < 0.3).astype(np.uint8)
    w = rng.integers(-32768, 32768, (512, 4096))
    return "tree_reduce 512 rows x 4096", kernels._tree_reduce_numba, kernels._tree_reduce_numpy, (s, w)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()

    rows = []
    for name, fast, slow, call_args in (hw_case(), tree_case()):
        t_np, ref = best_of(lambda: slow(*call_args), args.repeat)
        row = {"kernel": name, "numpy_s": t_np}
        if HAVE_NUMBA:
            t0 = time.perf_counter()
            fast(*call_args)
            row["numba_first_call_s"] = time.perf_counter() - t0
            t_nb, got = best_of(lambda: fast(*call_args), args.repeat)
            row["numba_s"] = t_nb
            row["speedup"] = t_np / t_nb
            row["identical"] = all(np.array_equal(a, b) for a, b in zip(ref, got))
        rows.append(row)

    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'kernel':32s} {'numpy (ms)':>11s} {'numba (ms)':>11s} {'speedup':>8s}  identical")
    for r in rows:
        if "numba_s" in r:
            print(f"{r['kernel']:32s} {1e3 * r['numpy_s']:11.2f} {1e3 * r['numba_s']:11.2f} "
                  f"{r['speedup']:7.1f}x  {r['identical']}")
        else:
            print(f"{r['kernel']:32s} {1e3 * r['numpy_s']:11.2f} {'n/a':>11s} {'':>8s}  numba not installed")


if __name__ == "__main__":
    main()
