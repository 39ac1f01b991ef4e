"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes follow the full-size 512-sample network at batch 16.
"""

import argparse
import timeit

import numpy as np

from qcprobe.engine import _pykernels

try:
    from qcprobe.engine import _ckernels
except ImportError:
    _ckernels = None

# (batch, in_channels, length, out_channels, kernel)
CONV_CASES = [
    (16, 1, 512, 30, 100),
    (16, 30, 256, 15, 100),
    (16, 15, 128, 15, 30),
    (16, 15, 64, 5, 20),
    (16, 30, 512, 1, 100),
]


def _cases(rng):
    for b, c, n, o, k in CONV_CASES:
        x = rng.standard_normal((b, c, n))
        w = rng.standard_normal((o, c, k))
        bias = rng.standard_normal(o)
        dy = rng.standard_normal((b, o, n))
        pad = (k - 1) // 2
        label = f"conv {c}->{o} k={k} L={n}"
        yield label + " fwd", lambda m, x=x, w=w, bias=bias, pad=pad: m.conv1d_forward(x, w, bias, pad)
        yield label + " bwd", lambda m, x=x, w=w, dy=dy, pad=pad: m.conv1d_backward(dy, x, w, pad)
    x = rng.standard_normal((16, 30, 512))
    yield "maxpool2 30x512", lambda m: m.maxpool2_forward(x)
    yield "upsample2 30x256", lambda m: m.upsample2_forward(x[:, :, :256])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    rng = np.random.default_rng(0)
    print(f"{'case':34s}" + "".join(f"{name:>12s}" for name, _ in backends) + ("   speedup" if _ckernels else ""))
    for label, fn in _cases(rng):
        times = [min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) for _, mod in backends]
        line = f"{label:34s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:9.2f}x"
        print(line)
    if _ckernels is None:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
