"""Benchmark the 3x3 convolution kernels: compiled vs pure-numpy backend.

The package dispatches conv work at import time based on numba availability
and the ADAMRI_NO_NUMBA environment flag.  This script times both code paths
directly (they are always importable) on shapes that actually occur in the
reconstruction network, and prints a small table.

Run:  python3 benchmarks/bench_conv.py
"""

import time

import numpy as np

from adamri import kernels


def _time(fn, *args, repeats: int = 5, warmup: int = 2) -> float:
    for _ in range(warmup):
        fn(*args)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(h: int, w: int, cin: int, cout: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, cin, h, w)).astype(np.float32)
    wgt = rng.standard_normal((cout, cin, 3, 3)).astype(np.float32)
    bias = rng.standard_normal(cout).astype(np.float32)
    gy = rng.standard_normal((1, cout, h, w)).astype(np.float32)

    row = {"shape": f"{cin}x{h}x{w} -> {cout}"}
    row["fwd_np"] = _time(kernels.conv2d_forward_numpy, x, wgt, bias)
    row["gi_np"] = _time(kernels.conv2d_grad_input_numpy, gy, wgt)
    row["gw_np"] = _time(kernels.conv2d_grad_weight_numpy, gy, x)
    if kernels._HAVE_NUMBA:
        row["fwd_nb"] = _time(kernels.conv2d_forward_numba, x, wgt, bias)
        row["gi_nb"] = _time(kernels.conv2d_grad_input_numba, gy, wgt)
        row["gw_nb"] = _time(kernels.conv2d_grad_weight_numba, gy, x)

        # parity check while we are here
        a = kernels.conv2d_forward_numpy(x, wgt, bias)
        b = kernels.conv2d_forward_numba(x, wgt, bias)
        assert np.allclose(a, b, atol=1e-4), "backend outputs diverge"
    return row


def main() -> None:
    print(f"active backend: {kernels.backend_name()}")
    print(f"numba importable: {kernels._HAVE_NUMBA}")
    print()

    cases = [
        # (h, w, cin, cout): first layer, body layer and last layer of the
        # denoiser at desk size and at full reconstruction size.
        (48, 48, 2, 16),
        (48, 48, 16, 16),
        (48, 48, 16, 2),
        (320, 320, 2, 64),
        (320, 320, 64, 64),
        (320, 320, 64, 2),
    ]

    header = f"{'case':>18s} {'fwd np':>9s} {'fwd nb':>9s} {'speedup':>8s} {'gw np':>9s} {'gw nb':>9s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for i, (h, w, cin, cout) in enumerate(cases):
        row = bench_case(h, w, cin, cout, seed=17 + i)
        if "fwd_nb" in row:
            print(
                f"{row['shape']:>18s} {row['fwd_np'] * 1e3:8.2f}m {row['fwd_nb'] * 1e3:8.2f}m "
                f"{row['fwd_np'] / row['fwd_nb']:7.1f}x {row['gw_np'] * 1e3:8.2f}m "
                f"{row['gw_nb'] * 1e3:8.2f}m {row['gw_np'] / row['gw_nb']:7.1f}x"
            )
        else:
            print(f"{row['shape']:>18s} {row['fwd_np'] * 1e3:8.2f}m {'-':>9s} {'-':>8s} {row['gw_np'] * 1e3:8.2f}m {'-':>9s} {'-':>8s}")


if __name__ == "__main__":
    main()
