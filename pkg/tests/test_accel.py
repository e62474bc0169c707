import os
import subprocess
import sys

import numpy as np
import pytest

from rfadv import _accel as K

pytestmark = pytest.mark.skipif(not K.NUMBA_AVAILABLE, reason="numba not installed")


@pytest.mark.parametrize("shape,k", [((2, 7, 9, 3), 3), ((1, 32, 62, 1), 7), ((3, 5, 4, 2), 1), ((2, 6, 6, 4), 4)])
def test_im2col_col2im_agree(shape, k):
    rng = np.random.default_rng(0)
    x = rng.normal(size=shape)
    p = k // 2
    xp = np.ascontiguousarray(np.pad(x, ((0, 0), (p, k - 1 - p), (p, k - 1 - p), (0, 0))))
    cols = K.im2col_numpy(x, k)
    assert np.array_equal(K._im2col_nb(xp, shape[1], shape[2], k), cols)
    g = rng.normal(size=cols.shape)
    assert np.allclose(K._col2im_nb(g, *shape, k), K.col2im_numpy(g, shape, k), atol=1e-12)


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(1)
    shape, k = (2, 6, 5, 3), 3
    x = rng.normal(size=shape)
    g = rng.normal(size=(np.prod(shape[:3]), k * k * shape[3]))
    assert np.sum(K.im2col(x, k) * g) == pytest.approx(np.sum(x * K.col2im(g, shape, k)))


@pytest.mark.parametrize("shape", [(2, 8, 6, 3), (1, 7, 5, 2)])
def test_maxpool_agree_including_ties(shape):
    rng = np.random.default_rng(2)
    x = rng.integers(0, 3, size=shape).astype(float)  # many ties
    out_np, idx_np = K.maxpool2x2_forward_numpy(x)
    out_nb, idx_nb = K._maxpool_fwd_nb(np.ascontiguousarray(x))
    assert np.array_equal(out_np, out_nb) and np.array_equal(idx_np, idx_nb)
    d = rng.normal(size=out_np.shape)
    assert np.array_equal(K.maxpool2x2_backward_numpy(d, idx_np, shape), K._maxpool_bwd_nb(d, idx_nb, *shape))


def test_env_flag_selects_numpy_path():
    code = "from rfadv import _accel; print(_accel.backend())"
    env = dict(os.environ, RFADV_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["RFADV_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"


def test_model_outputs_match_across_backends():
    code = ("import numpy as np; from rfadv.models import build; m = build('CNN1', (32, 62), 10, 0);"
            "x = np.random.default_rng(3).normal(size=(2, 32, 62)); print(repr(m.net.run(x)[0].tolist()))")
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, RFADV_NUMBA=flag)
        r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        outs.append(np.array(eval(r.stdout)))
    assert np.allclose(outs[0], outs[1], rtol=1e-10, atol=1e-12)
