"""The numba kernels and their numpy twins must agree on identical inputs."""
import os
import subprocess
import sys

import numpy as np
import pytest

from anglerig import kernels as K
from anglerig._backend import HAVE_NUMBA
from anglerig.geometry import exp_so, skew
from anglerig.gradcheck import random_camera_state


def _inputs(rng, n, d):
    p, R = random_camera_state(rng, n, d, side=25.0)
    mask = K.sensing_mask_np(p, R, 30.0, 0.5)
    T = K.triples_from_mask_np(mask)
    w = K.angle_weights_np(p, R, T, 24.0, 30.0, 0.5, 0.7)
    nu = rng.normal(size=(n, d))
    ph = p + rng.normal(scale=0.5, size=p.shape)
    th = rng.normal(scale=0.3, size=(n, d * (d - 1) // 2))
    return {
        "angle_values": (p, T),
        "angle_matrix": (p, T),
        "bearing_matrix": (p, R, np.argwhere(mask).astype(np.int64)),
        "weighted_gram": (p, T, w),
        "sensing_mask": (p, R, 30.0, 0.5),
        "triples_from_mask": (mask,),
        "angle_weights": (p, R, T, 24.0, 30.0, 0.5, 0.7),
        "rigidity_gradient": (p, R, T, nu, 24.0, 30.0, 0.5, 0.7),
        "localization_flow": (ph, T, K.angle_values_np(p, T), 0, 1,
                              float(np.linalg.norm(p[1] - p[0])), 1000.0, 0.05),
        "collision_flow": (p, mask, 30.0),
        "mission_flow": (p, R, p + rng.normal(scale=15.0, size=p.shape), 6.0, 1.0, 20.0),
        "right_exp": (R, th),
        "dexpinv": (th, rng.normal(size=th.shape)),
    }


def _assert_same(a, b):
    if isinstance(a, tuple):
        for x, y in zip(a, b):
            _assert_same(x, y)
    else:
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("n", [3, 6, 9])
def test_twins_agree(rng, d, n):
    for _ in range(3):
        for name, args in _inputs(rng, n, d).items():
            _assert_same(getattr(K, name + "_loop")(*args), getattr(K, name + "_np")(*args))


def test_dispatch_names_exist():
    for name in K.__all__:
        assert callable(getattr(K, name))


def test_sigma_matches_smoothstep():
    x = np.linspace(-1, 3, 41)
    s = K.sigma(x, 0.5, 2.0)
    assert s[0] == 0 and s[-1] == 1
    assert np.all(np.diff(s) >= 0)
    h = 1e-6
    fd = (K.sigma(x + h, 0.5, 2.0) - K.sigma(x - h, 0.5, 2.0)) / (2 * h)
    assert np.allclose(K.dsigma(x, 0.5, 2.0), fd, atol=1e-6)


@pytest.mark.parametrize("d", [2, 3])
def test_right_exp_and_dexpinv(rng, d):
    dr = d * (d - 1) // 2
    R = np.array([exp_so(rng.normal(size=dr)) for _ in range(4)])
    th = rng.normal(scale=0.2, size=(4, dr))
    out = K.right_exp(R, th)
    for i in range(4):
        assert np.allclose(out[i], R[i] @ exp_so(th[i]), atol=1e-13)
    om = rng.normal(size=(4, dr))
    got = K.dexpinv(th, om)
    if d == 2:
        assert np.allclose(got, om)
    else:
        for i in range(4):
            S = skew(th[i])
            want = om[i] + 0.5 * S @ om[i] + S @ S @ om[i] / 12.0
            assert np.allclose(got[i], want)


def test_numpy_fallback_selected_by_env():
    env = dict(os.environ, ANGLERIG_DISABLE_NUMBA="1")
    code = ("from anglerig import kernels as K; from anglerig._backend import backend_name;"
            "print(K.angle_matrix is K.angle_matrix_np, backend_name())")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split()[0] == "True"
    assert out.stdout.split()[1] == "numpy"
