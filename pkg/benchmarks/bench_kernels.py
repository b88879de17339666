"""Convolution backend benchmark: compiled extension vs NumPy im2col.

Times the forward and backward kernels on shapes matching the desk and
default vision configurations, checks the two backends agree bitwise-close,
and prints a table. Run from the repository root:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from mmfusion.kernels import BACKEND, reference
from mmfusion.rng import keyed_rng

try:
    from mmfusion.kernels import _convext as compiled
except ImportError:
    compiled = None

CASES = [
    # label, batch, cin, cout, resolution, kernel, stride
    ("stem 32x32", 32, 3, 16, 32, 3, 1),
    ("block 16x16", 32, 32, 32, 16, 3, 1),
    ("down 16->8", 32, 32, 64, 16, 3, 2),
    ("desk 12x12", 32, 8, 16, 12, 3, 1),
]


def run_case(impl, x, w, dout, stride, repeats):
    out = impl.conv2d_forward(x, w, stride, 1)
    t0 = time.perf_counter()
    for _ in range(repeats):
        impl.conv2d_forward(x, w, stride, 1)
    fwd = (time.perf_counter() - t0) / repeats
    t0 = time.perf_counter()
    for _ in range(repeats):
        impl.conv2d_backward(x, w, dout, stride, 1)
    bwd = (time.perf_counter() - t0) / repeats
    return out, fwd, bwd


def main():
    rng = keyed_rng(0, "bench")
    print(f"active backend: {BACKEND}")
    if compiled is None:
        print("compiled extension unavailable; timing NumPy only")
    header = (f"{'case':<14} {'shape':<22} "
              f"{'numpy fwd':>10} {'numpy bwd':>10}")
    if compiled is not None:
        header += f" {'ext fwd':>10} {'ext bwd':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for label, b, cin, cout, res, k, stride in CASES:
        x = rng.standard_normal((b, cin, res, res)).astype(np.float32)
        w = rng.standard_normal((cout, cin, k, k)).astype(np.float32)
        out_res = (res + 2 - k) // stride + 1
        dout = rng.standard_normal((b, cout, out_res, out_res)).astype(np.float32)
        repeats = max(3, int(2e7 / (b * cin * cout * res * res)))

        ref_out, ref_fwd, ref_bwd = run_case(reference, x, w, dout,
                                             stride, repeats)
        row = (f"{label:<14} {f'{b}x{cin}->{cout} @{res}':<22} "
               f"{ref_fwd * 1e3:>9.2f}ms {ref_bwd * 1e3:>9.2f}ms")
        if compiled is not None:
            ext_out, ext_fwd, ext_bwd = run_case(compiled, x, w, dout,
                                                 stride, repeats)
            err = float(np.max(np.abs(ref_out - ext_out)))
            assert err < 1e-4, f"backends disagree on {label}: {err}"
            speedup = (ref_fwd + ref_bwd) / (ext_fwd + ext_bwd)
            row += (f" {ext_fwd * 1e3:>9.2f}ms {ext_bwd * 1e3:>9.2f}ms"
                    f" {speedup:>7.2f}x")
        print(row)


if __name__ == "__main__":
    main()
