import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from snnhrl import _kernels
from snnhrl.envs import make_maze

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba disabled")


@pytest.fixture
def both_backends():
    original = _kernels.backend()

    def run(fn, *args):
        out = {}
        for name in ("numpy", "numba") if _kernels.HAVE_NUMBA else ("numpy",):
            _kernels.use_backend(name)
            out[name] = fn(*args)
        _kernels.use_backend(original)
        return out

    yield run
    _kernels.use_backend(original)


def test_use_backend_rejects_unknown():
    with pytest.raises(ValueError):
        _kernels.use_backend("cuda")


def _brute_ray(origin, angle, segs, max_range):
    """Closed-form line intersection, one segment at a time."""
    best = max_range
    d = np.array([math.cos(angle), math.sin(angle)])
    for x0, y0, x1, y1 in segs:
        e = np.array([x1 - x0, y1 - y0])
        M = np.array([[d[0], -e[0]], [d[1], -e[1]]])
        if abs(np.linalg.det(M)) < 1e-14:
            continue
        t, u = np.linalg.solve(M, np.array([x0, y0]) - origin)
        if t >= 0 and 0 <= u <= 1:
            best = min(best, t)
    return best


def test_ray_segment_examples(both_backends):
    wall = np.array([[3.0, -1.0, 3.0, 1.0]])
    diag = np.array([[2.0, 0.0, 0.0, 2.0]])
    for name, out in both_backends(_kernels.ray_segments, np.zeros((1, 2)), np.zeros((1, 1)), wall, 5.0).items():
        assert out[0, 0] == 3.0
    for out in both_backends(_kernels.ray_segments, np.zeros((1, 2)), np.zeros((1, 1)), np.zeros((0, 4)),
                             5.0).values():
        assert out[0, 0] == 5.0
    for out in both_backends(_kernels.ray_segments, np.zeros((1, 2)), np.full((1, 1), math.pi / 4), diag,
                             5.0).values():
        assert abs(out[0, 0] - math.sqrt(2)) < 1e-12


@given(st.integers(0, 2 ** 32 - 1))
def test_ray_segments_match_bruteforce(seed):
    r = np.random.default_rng(seed)
    segs = r.uniform(-4, 4, size=(5, 4))
    origins = r.uniform(-3, 3, size=(3, 2))
    angles = r.uniform(-math.pi, math.pi, size=(3, 4))
    nb_or_np = {}
    for name in ("numpy", "numba") if _kernels.HAVE_NUMBA else ("numpy",):
        _kernels.use_backend(name)
        nb_or_np[name] = _kernels.ray_segments(origins, angles, segs, 6.0)
    _kernels.use_backend("numba" if _kernels.HAVE_NUMBA else "numpy")
    for out in nb_or_np.values():
        for i in range(3):
            for j in range(4):
                assert abs(out[i, j] - _brute_ray(origins[i], angles[i, j], segs, 6.0)) < 1e-9


def test_ray_circles(both_backends):
    centers = np.array([[[3.0, 0.0], [0.0, 2.0]]])
    alive = np.array([[True, True]])
    ang = np.array([[0.0, math.pi / 2, math.pi]])
    for out in both_backends(_kernels.ray_circles, np.zeros((1, 2)), ang, centers, alive, 0.5, 5.0).values():
        np.testing.assert_allclose(out[0], [2.5, 1.5, 5.0], rtol=0, atol=1e-12)
    dead = np.array([[False, True]])
    for out in both_backends(_kernels.ray_circles, np.zeros((1, 2)), ang, centers, dead, 0.5, 5.0).values():
        np.testing.assert_allclose(out[0], [5.0, 1.5, 5.0], rtol=0, atol=1e-12)


def test_move_head_on_into_wall(both_backends):
    segs = np.array([[1.0, -1.0, 1.0, 1.0]])
    pos = np.array([[0.99, 0.0]])
    disp = np.array([[0.1, 0.0]])
    for out in both_backends(_kernels.move_with_walls, pos, disp, segs, 1e-6).values():
        new, normals, n_hits = out
        assert abs(new[0, 0] - (1.0 - 1e-6)) < 1e-12 and new[0, 1] == 0.0
        assert n_hits[0] == 1
        np.testing.assert_allclose(normals[0, 0], [-1.0, 0.0], atol=1e-15)


def test_move_slides_along_wall(both_backends):
    segs = np.array([[1.0, -1.0, 1.0, 1.0]])
    for new, _, _ in both_backends(_kernels.move_with_walls, np.array([[0.95, 0.0]]), np.array([[0.1, 0.1]]), segs,
                                   1e-6).values():
        assert new[0, 0] < 1.0
        assert abs(new[0, 1] - 0.1) < 1e-6


@needs_numba
@given(st.integers(0, 2 ** 32 - 1))
def test_move_backends_agree_and_never_cross(seed):
    r = np.random.default_rng(seed)
    spec = make_maze(int(r.integers(4)))
    segs = spec.segment_array()
    p_np = p_nb = np.tile(np.asarray(spec.start, dtype=float), (64, 1))
    try:
        for _ in range(20):
            disp = r.normal(scale=0.4, size=p_np.shape)
            _kernels.use_backend("numpy")
            q_np, _, _ = _kernels.move_with_walls(p_np, disp, segs, 1e-6)
            _kernels.use_backend("numba")
            q_nb, _, _ = _kernels.move_with_walls(p_nb, disp, segs, 1e-6)
            np.testing.assert_allclose(q_nb, q_np, rtol=0, atol=1e-12)
            assert not np.any(_kernels.segments_crossed(p_nb, q_nb, segs))
            p_np, p_nb = q_np, q_nb
    finally:
        _kernels.use_backend("numba")


def test_env_flag_selects_numpy_backend():
    import os
    import subprocess
    import sys

    code = "from snnhrl import _kernels; print(_kernels.backend())"
    env = dict(os.environ, SNNHRL_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout
    assert out.strip() == "numpy"
