"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--batch 32] [--repeat 5]

Also times one CNN1 training step under each backend (each in a fresh
interpreter, since the backend is chosen at import).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from rfadv import _accel as K


def _best(fn, repeat):
    fn()  # warm-up / JIT compile
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_table(batch, repeat):
    rng = np.random.default_rng(0)
    rows = []
    for name, shape, k in [("conv7 in", (batch, 32, 62, 1), 7), ("conv3 mid", (batch, 16, 31, 16), 3)]:
        x = rng.normal(size=shape)
        p = k // 2
        xp = np.ascontiguousarray(np.pad(x, ((0, 0), (p, k - 1 - p), (p, k - 1 - p), (0, 0))))
        cols = K.im2col_numpy(x, k)
        rows.append((f"im2col {name}", _best(lambda: K.im2col_numpy(x, k), repeat),
                     _best(lambda: K._im2col_nb(xp, shape[1], shape[2], k), repeat)))
        rows.append((f"col2im {name}", _best(lambda: K.col2im_numpy(cols, shape, k), repeat),
                     _best(lambda: K._col2im_nb(cols, *shape, k), repeat)))
    x = np.ascontiguousarray(rng.normal(size=(batch, 32, 62, 16)))
    out, idx = K.maxpool2x2_forward_numpy(x)
    rows.append(("maxpool fwd", _best(lambda: K.maxpool2x2_forward_numpy(x), repeat),
                 _best(lambda: K._maxpool_fwd_nb(x), repeat)))
    rows.append(("maxpool bwd", _best(lambda: K.maxpool2x2_backward_numpy(out, idx, x.shape), repeat),
                 _best(lambda: K._maxpool_bwd_nb(out, idx, *x.shape), repeat)))
    return rows


STEP = """
import time, numpy as np
from rfadv.models import build
from rfadv.engine import loss_and_param_gradients
m = build('CNN1', (32, 62), 10, 0)
x = np.random.default_rng(1).normal(size=({b}, 32, 62)); y = np.arange({b}) % 10
loss_and_param_gradients(m, x, y)
t = []
for _ in range({r}):
    t0 = time.perf_counter(); loss_and_param_gradients(m, x, y); t.append(time.perf_counter() - t0)
print(min(t))
"""


def step_time(flag, batch, repeat):
    env = dict(os.environ, RFADV_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", STEP.format(b=batch, r=repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-step", action="store_true", help="skip the end-to-end training step")
    a = ap.parse_args(argv)
    print(f"{'kernel':<20}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, t_np, t_nb in kernel_table(a.batch, a.repeat):
        print(f"{name:<20}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")
    if not a.no_step:
        t_np, t_nb = step_time("0", a.batch, a.repeat), step_time("1", a.batch, a.repeat)
        print(f"{'CNN1 train step':<20}{t_np * 1e3:>10.1f}{t_nb * 1e3:>10.1f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
