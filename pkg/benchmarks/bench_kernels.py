"""Time the numba kernels against their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--batch 64] [--repeat 5]

Both paths are called directly, so the PCGSSL_BACKEND flag does not matter
here.  Shapes follow the default backbone on 5 s windows at 2 kHz.  Each row
reports the median wall time over ``--repeat`` runs after one warm-up call
(which also triggers JIT compilation) and checks the two outputs agree.
"""
import argparse
import statistics
import time

import numpy as np
import scipy.signal

from pcgssl import kernels
from pcgssl._backend import HAVE_NUMBA


def median_ms(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return 1e3 * statistics.median(times)


def cases(batch, rng):
    x1 = rng.standard_normal((batch, 1, 10_000)).astype(np.float32)
    w1 = rng.standard_normal((16, 1, 16)).astype(np.float32)
    b1 = np.zeros(16, np.float32)
    gy1 = rng.standard_normal((batch, 16, 10_000)).astype(np.float32)
    x2 = rng.standard_normal((batch, 16, 2_500)).astype(np.float32)
    w2 = rng.standard_normal((32, 16, 16)).astype(np.float32)
    b2 = np.zeros(32, np.float32)
    gy2 = rng.standard_normal((batch, 32, 2_500)).astype(np.float32)
    _, arg = kernels.maxpool1d_forward_np(gy1, 4)
    gp = rng.standard_normal(arg.shape).astype(np.float32)
    sos = scipy.signal.butter(4, 250, "highpass", fs=2000, output="sos")
    sig = rng.standard_normal((batch, 10_000))
    return [
        ("conv1d forward, block 1", lambda: kernels.conv1d_forward_np(x1, w1, b1),
         lambda: kernels.conv1d_forward_nb(x1, w1, b1)),
        ("conv1d backward, block 1", lambda: kernels.conv1d_backward_np(x1, w1, gy1, False),
         lambda: kernels.conv1d_backward_nb(x1, w1, gy1, False)),
        ("conv1d forward, block 2", lambda: kernels.conv1d_forward_np(x2, w2, b2),
         lambda: kernels.conv1d_forward_nb(x2, w2, b2)),
        # the dispatcher sends block 2 (c*k = 256 taps) to the GEMM path; this row shows why
        ("conv1d forward, block 2, loops", lambda: kernels.conv1d_forward_np(x2, w2, b2),
         lambda: kernels._conv_direct_nb(kernels._pad(x2, 16), w2, b2, 2_500)),
        ("conv1d backward, block 2", lambda: kernels.conv1d_backward_np(x2, w2, gy2),
         lambda: kernels.conv1d_backward_nb(x2, w2, gy2)),
        ("maxpool forward", lambda: kernels.maxpool1d_forward_np(gy1, 4),
         lambda: kernels.maxpool1d_forward_nb(gy1, 4)),
        ("maxpool backward", lambda: kernels.maxpool1d_backward_np(gp, arg, 4, 10_000),
         lambda: kernels.maxpool1d_backward_nb(gp, arg, 4, 10_000)),
        ("sosfilt (4th-order highpass)", lambda: kernels.sosfilt_np(sos, sig),
         lambda: kernels.sosfilt_nb(sos, sig)),
    ]


def _flatten(out):
    return [o for o in (out if isinstance(out, tuple) else (out,)) if o is not None]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"batch {args.batch}, median of {args.repeat}")
    print(f"{'kernel':<30}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  outputs")
    for name, np_fn, nb_fn in cases(args.batch, rng):
        agree = all(np.allclose(a, b, rtol=1e-4, atol=1e-3) for a, b in zip(_flatten(np_fn()), _flatten(nb_fn())))
        t_np, t_nb = median_ms(np_fn, args.repeat), median_ms(nb_fn, args.repeat)
        print(f"{name:<30}{t_np:>10.1f}{t_nb:>10.1f}{t_np / t_nb:>8.2f}x  {'agree' if agree else 'DIFFER'}")


if __name__ == "__main__":
    main()
