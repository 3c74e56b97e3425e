"""The numba kernels and their numpy fallbacks must agree.

Each looped kernel is exercised both compiled (when numba is importable) and
as plain Python, against the vectorised numpy flavour.
"""

import math

import numpy as np
import pytest

from glmdiar import _accel, margin_loss, numerics


def flavours(kernel):
    out = [("python", getattr(kernel, "py_func", kernel))]
    if hasattr(kernel, "py_func"):
        out.append(("numba", kernel))
    return out


def ids(fl):
    return [name for name, _ in fl]


JACOBI = flavours(numerics._jacobi_cyclic)
ASSIGN = flavours(numerics._assign_loop)
PSI = flavours(margin_loss._psi_loop)
GLM = flavours(margin_loss._glm_batch_loop)


def test_backend_name_reflects_flag():
    assert _accel.backend_name() in ("numba", "numpy")
    assert _accel.USE_NUMBA == (_accel.backend_name() == "numba")


@pytest.mark.parametrize("name,kernel", JACOBI, ids=ids(JACOBI))
@pytest.mark.parametrize("n", [2, 7, 20])
def test_jacobi(rng, name, kernel, n):
    a = rng.normal(size=(n, n))
    a = 0.5 * (a + a.T)
    d1, v1, s1 = kernel(a.copy(), numerics.JACOBI_TOL, numerics.MAX_SWEEPS)
    d2, v2, s2 = numerics._jacobi_roundrobin(a.copy(), numerics.JACOBI_TOL, numerics.MAX_SWEEPS)
    assert s1 >= 0 and s2 >= 0
    np.testing.assert_allclose(np.sort(np.diag(d1)), np.sort(np.diag(d2)), atol=1e-10)
    for d, v in ((d1, v1), (d2, v2)):
        np.testing.assert_allclose(v @ np.diag(np.diag(d)) @ v.T, a, atol=1e-10)


@pytest.mark.parametrize("name,kernel", ASSIGN, ids=ids(ASSIGN))
def test_assign(rng, name, kernel):
    pts = rng.normal(size=(200, 5))
    cen = rng.normal(size=(7, 5))
    cen[3] = cen[1]  # duplicate centroid: ties must go to index 1
    l1, d1 = kernel(pts, cen)
    l2, d2 = numerics._assign_numpy(pts, cen)
    assert np.array_equal(l1, l2) and not np.any(l1 == 3)
    np.testing.assert_allclose(d1, d2, rtol=1e-12)


@pytest.mark.parametrize("name,kernel", PSI, ids=ids(PSI))
@pytest.mark.parametrize("params", [(1.0, 0.0, 0.0), (1.1, 0.0, 0.0), (2.0, 0.0, 0.0), (0.94, 0.2, 0.0),
                                    (1.0, 7.0, 0.0)])
def test_psi(name, kernel, params):
    grid = np.linspace(0, math.pi, 1001)
    grid = np.concatenate([grid, [math.pi / 2]])
    v1, k1 = kernel(grid, *params)
    v2, k2 = margin_loss._psi_numpy(grid, *params)
    assert np.array_equal(k1, k2)
    np.testing.assert_allclose(v1, v2, atol=1e-15)


@pytest.mark.parametrize("name,kernel", GLM, ids=ids(GLM))
@pytest.mark.parametrize("approx", [False, True])
def test_glm_batch(rng, name, kernel, approx):
    b, c, d = 30, 6, 9
    x = rng.normal(size=(b, d)) * 3
    x[4] = 0.0  # degenerate embedding path
    w = rng.normal(size=(c, d))
    x[7] = w[2] * 2.0  # theta_t = 0 exercises the sin floor
    targets = rng.integers(c, size=b)
    targets[7] = 2
    m1 = rng.choice([1.0, 1.05, 1.1, 2.0], size=b)
    m2 = rng.choice([0.0, 0.08, 0.2], size=b)
    m3 = rng.choice([0.0, 0.02, 0.15], size=b)
    out1 = kernel(x, w, targets, m1, m2, m3, approx, margin_loss.SIN_FLOOR)
    out2 = margin_loss._glm_batch_numpy(x, w, targets, m1, m2, m3, approx, margin_loss.SIN_FLOOR)
    for a, bb in zip(out1, out2):
        np.testing.assert_allclose(a, bb, rtol=1e-11, atol=1e-12, equal_nan=True)


def test_disable_flag_selects_numpy(monkeypatch):
    import importlib
    import subprocess
    import sys

    code = "import glmdiar._accel as a; print(a.backend_name())"
    env = {"GLMD_DISABLE_NUMBA": "1", "PATH": ""}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
    importlib.import_module("glmdiar._accel")
