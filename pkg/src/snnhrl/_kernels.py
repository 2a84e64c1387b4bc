"""Geometry kernels for the batched environments.

Every kernel has two implementations with identical semantics:

* a loop version compiled with ``numba.njit`` (used when numba imports and
  ``SNNHRL_NUMBA`` is not set to ``0``), and
* a broadcast version written in plain numpy.

``backend()`` reports which one is active; ``use_backend`` switches at runtime,
which the tests use to check the two paths against each other.
"""
from __future__ import annotations

import os

import numpy as np

PARALLEL_TOL = 1e-14
MAX_SLIDES = 4

try:
    if os.environ.get("SNNHRL_NUMBA", "1").strip().lower() in ("0", "false", "no", "off"):
        raise ImportError("numba disabled by SNNHRL_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


_BACKEND = "numba" if HAVE_NUMBA else "numpy"


def backend() -> str:
    return _BACKEND


def use_backend(name: str) -> None:
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable or disabled")
    _BACKEND = name


# ---------------------------------------------------------------------------
# ray vs. segments
# ---------------------------------------------------------------------------

@njit(cache=True)
def _ray_segments_nb(origins, angles, segs, max_range):
    n, r = angles.shape
    out = np.full((n, r), max_range)
    for i in range(n):
        ox = origins[i, 0]
        oy = origins[i, 1]
        for j in range(r):
            dx = np.cos(angles[i, j])
            dy = np.sin(angles[i, j])
            best = max_range
            for s in range(segs.shape[0]):
                ax = segs[s, 0]
                ay = segs[s, 1]
                ex = segs[s, 2] - ax
                ey = segs[s, 3] - ay
                denom = dx * ey - dy * ex
                if abs(denom) < PARALLEL_TOL:
                    continue
                wx = ax - ox
                wy = ay - oy
                t = (wx * ey - wy * ex) / denom
                u = (wx * dy - wy * dx) / denom
                if t >= 0.0 and 0.0 <= u <= 1.0 and t < best:
                    best = t
            out[i, j] = best
    return out


def _ray_segments_np(origins, angles, segs, max_range):
    n, r = angles.shape
    if segs.shape[0] == 0:
        return np.full((n, r), float(max_range))
    dx = np.cos(angles)[:, :, None]
    dy = np.sin(angles)[:, :, None]
    ax, ay = segs[:, 0], segs[:, 1]
    ex, ey = segs[:, 2] - ax, segs[:, 3] - ay
    wx = (ax[None, :] - origins[:, 0:1])[:, None, :]
    wy = (ay[None, :] - origins[:, 1:2])[:, None, :]
    denom = dx * ey - dy * ex
    ok = np.abs(denom) >= PARALLEL_TOL
    safe = np.where(ok, denom, 1.0)
    t = (wx * ey - wy * ex) / safe
    u = (wx * dy - wy * dx) / safe
    hit = ok & (t >= 0.0) & (u >= 0.0) & (u <= 1.0)
    t = np.where(hit, t, np.inf)
    return np.minimum(t.min(axis=2), max_range)


def ray_segments(origins: np.ndarray, angles: np.ndarray, segs: np.ndarray, max_range: float) -> np.ndarray:
    """Distance along each ray to the nearest segment, capped at ``max_range``.

    origins: (n, 2); angles: (n, r) radians; segs: (s, 4) rows ``ax, ay, bx, by``.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    angles = np.ascontiguousarray(angles, dtype=np.float64)
    segs = np.ascontiguousarray(np.reshape(segs, (-1, 4)), dtype=np.float64)
    if _BACKEND == "numba":
        return _ray_segments_nb(origins, angles, segs, float(max_range))
    return _ray_segments_np(origins, angles, segs, float(max_range))


# ---------------------------------------------------------------------------
# ray vs. circles (goal disk, balls)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _ray_circles_nb(origins, angles, centers, alive, radius, max_range):
    n, r = angles.shape
    m = centers.shape[1]
    out = np.full((n, r), max_range)
    for i in range(n):
        ox = origins[i, 0]
        oy = origins[i, 1]
        for j in range(r):
            dx = np.cos(angles[i, j])
            dy = np.sin(angles[i, j])
            best = max_range
            for k in range(m):
                if not alive[i, k]:
                    continue
                fx = ox - centers[i, k, 0]
                fy = oy - centers[i, k, 1]
                b = dx * fx + dy * fy
                c = fx * fx + fy * fy - radius * radius
                if c <= 0.0:
                    best = 0.0
                    continue
                disc = b * b - c
                if disc < 0.0:
                    continue
                t = -b - np.sqrt(disc)
                if t >= 0.0 and t < best:
                    best = t
            out[i, j] = best
    return out


def _ray_circles_np(origins, angles, centers, alive, radius, max_range):
    n, r = angles.shape
    if centers.shape[1] == 0:
        return np.full((n, r), float(max_range))
    dx = np.cos(angles)[:, :, None]
    dy = np.sin(angles)[:, :, None]
    fx = (origins[:, 0:1] - centers[:, :, 0])[:, None, :]
    fy = (origins[:, 1:2] - centers[:, :, 1])[:, None, :]
    b = dx * fx + dy * fy
    c = np.broadcast_to(fx * fx + fy * fy - radius * radius, b.shape)
    disc = b * b - c
    t = -b - np.sqrt(np.maximum(disc, 0.0))
    live = alive[:, None, :]
    t = np.where(live & (c <= 0.0), 0.0, np.where(live & (disc >= 0.0) & (t >= 0.0), t, np.inf))
    return np.minimum(t.min(axis=2), max_range)


def ray_circles(origins, angles, centers, alive, radius: float, max_range: float) -> np.ndarray:
    """Distance along each ray to the nearest live circle of ``radius``.

    centers: (n, m, 2) per-environment circle centers; alive: (n, m) bool.
    A ray starting inside a circle reports distance 0.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    angles = np.ascontiguousarray(angles, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    alive = np.ascontiguousarray(alive, dtype=np.bool_)
    if _BACKEND == "numba":
        return _ray_circles_nb(origins, angles, centers, alive, float(radius), float(max_range))
    return _ray_circles_np(origins, angles, centers, alive, float(radius), float(max_range))


# ---------------------------------------------------------------------------
# motion resolved against walls (hit, back off, slide)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _crosses_any_nb(px, py, qx, qy, segs):
    for s in range(segs.shape[0]):
        ax = segs[s, 0]
        ay = segs[s, 1]
        ex = segs[s, 2] - ax
        ey = segs[s, 3] - ay
        mx = qx - px
        my = qy - py
        denom = mx * ey - my * ex
        if abs(denom) < PARALLEL_TOL:
            continue
        wx = ax - px
        wy = ay - py
        t = (wx * ey - wy * ex) / denom
        u = (wx * my - wy * mx) / denom
        if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
            return True
    return False


@njit(cache=True)
def _move_nb(pos, disp, segs, eps):
    n = pos.shape[0]
    out = pos.copy()
    normals = np.zeros((n, MAX_SLIDES, 2))
    n_hits = np.zeros(n, dtype=np.int64)
    for i in range(n):
        px = pos[i, 0]
        py = pos[i, 1]
        mx = disp[i, 0]
        my = disp[i, 1]
        first_x = px
        first_y = py
        for it in range(MAX_SLIDES):
            if mx == 0.0 and my == 0.0:
                break
            best_t = np.inf
            best_s = -1
            # motions ending within eps of a wall count as contact
            t_max = 1.0 + eps / np.sqrt(mx * mx + my * my)
            for s in range(segs.shape[0]):
                ax = segs[s, 0]
                ay = segs[s, 1]
                ex = segs[s, 2] - ax
                ey = segs[s, 3] - ay
                denom = mx * ey - my * ex
                if abs(denom) < PARALLEL_TOL:
                    continue
                wx = ax - px
                wy = ay - py
                t = (wx * ey - wy * ex) / denom
                u = (wx * my - wy * mx) / denom
                if 0.0 <= t <= t_max and 0.0 <= u <= 1.0 and t < best_t:
                    best_t = t
                    best_s = s
            if best_s < 0:
                px += mx
                py += my
                mx = 0.0
                my = 0.0
                break
            ax = segs[best_s, 0]
            ay = segs[best_s, 1]
            ex = segs[best_s, 2] - ax
            ey = segs[best_s, 3] - ay
            el = np.sqrt(ex * ex + ey * ey)
            nx = -ey / el
            ny = ex / el
            # the normal opposes the motion, i.e. points back to the robot's side
            if nx * mx + ny * my > 0.0:
                nx = -nx
                ny = -ny
            hx = px + best_t * mx
            hy = py + best_t * my
            px = hx + eps * nx
            py = hy + eps * ny
            rest = max(1.0 - best_t, 0.0)
            rx = rest * mx
            ry = rest * my
            dn = rx * nx + ry * ny
            if dn < 0.0:
                rx -= dn * nx
                ry -= dn * ny
            mx = rx
            my = ry
            normals[i, n_hits[i], 0] = nx
            normals[i, n_hits[i], 1] = ny
            n_hits[i] += 1
            if it == 0:
                first_x = px
                first_y = py
            if it == MAX_SLIDES - 1:
                mx = 0.0
                my = 0.0
        if n_hits[i] > 0 and _crosses_any_nb(pos[i, 0], pos[i, 1], px, py, segs):
            px = first_x
            py = first_y
        out[i, 0] = px
        out[i, 1] = py
    return out, normals, n_hits


def _crosses_any_np(p, q, segs):
    m = q - p
    ax, ay = segs[:, 0], segs[:, 1]
    ex, ey = segs[:, 2] - ax, segs[:, 3] - ay
    denom = m[:, 0:1] * ey - m[:, 1:2] * ex
    ok = np.abs(denom) >= PARALLEL_TOL
    safe = np.where(ok, denom, 1.0)
    wx = ax[None, :] - p[:, 0:1]
    wy = ay[None, :] - p[:, 1:2]
    t = (wx * ey - wy * ex) / safe
    u = (wx * m[:, 1:2] - wy * m[:, 0:1]) / safe
    return (ok & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)).any(axis=1)


def _move_np(pos, disp, segs, eps):
    n = pos.shape[0]
    p = pos.copy()
    m = disp.copy()
    first = pos.copy()
    normals = np.zeros((n, MAX_SLIDES, 2))
    n_hits = np.zeros(n, dtype=np.int64)
    if segs.shape[0] == 0:
        return p + m, normals, n_hits
    ax, ay = segs[:, 0], segs[:, 1]
    ex, ey = segs[:, 2] - ax, segs[:, 3] - ay
    el = np.sqrt(ex * ex + ey * ey)
    active = np.ones(n, dtype=bool)
    for it in range(MAX_SLIDES):
        active &= (m[:, 0] != 0.0) | (m[:, 1] != 0.0)
        if not active.any():
            break
        denom = m[:, 0:1] * ey - m[:, 1:2] * ex
        ok = np.abs(denom) >= PARALLEL_TOL
        safe = np.where(ok, denom, 1.0)
        wx = ax[None, :] - p[:, 0:1]
        wy = ay[None, :] - p[:, 1:2]
        t = (wx * ey - wy * ex) / safe
        u = (wx * m[:, 1:2] - wy * m[:, 0:1]) / safe
        t_max = 1.0 + eps / np.maximum(np.hypot(m[:, 0], m[:, 1]), 1e-300)
        hit = ok & (t >= 0) & (t <= t_max[:, None]) & (u >= 0) & (u <= 1)
        t = np.where(hit, t, np.inf)
        s = np.argmin(t, axis=1)
        tb = t[np.arange(n), s]
        has_hit = active & np.isfinite(tb)
        free = active & ~has_hit
        p[free] += m[free]
        m[free] = 0.0
        active &= has_hit
        if not has_hit.any():
            break
        idx = np.nonzero(has_hit)[0]
        sj = s[idx]
        nx = -ey[sj] / el[sj]
        ny = ex[sj] / el[sj]
        flip = nx * m[idx, 0] + ny * m[idx, 1] > 0.0
        nx = np.where(flip, -nx, nx)
        ny = np.where(flip, -ny, ny)
        tt = tb[idx]
        hx = p[idx, 0] + tt * m[idx, 0]
        hy = p[idx, 1] + tt * m[idx, 1]
        p[idx, 0] = hx + eps * nx
        p[idx, 1] = hy + eps * ny
        rest = np.maximum(1.0 - tt, 0.0)
        rx = rest * m[idx, 0]
        ry = rest * m[idx, 1]
        dn = rx * nx + ry * ny
        into = dn < 0.0
        rx = np.where(into, rx - dn * nx, rx)
        ry = np.where(into, ry - dn * ny, ry)
        m[idx, 0] = rx
        m[idx, 1] = ry
        k = n_hits[idx]
        normals[idx, k, 0] = nx
        normals[idx, k, 1] = ny
        n_hits[idx] += 1
        if it == 0:
            first[idx] = p[idx]
        if it == MAX_SLIDES - 1:
            m[idx] = 0.0
    touched = n_hits > 0
    if touched.any():
        idx = np.nonzero(touched)[0]
        bad = _crosses_any_np(pos[idx], p[idx], segs)
        p[idx[bad]] = first[idx[bad]]
    return p, normals, n_hits


def move_with_walls(pos: np.ndarray, disp: np.ndarray, segs: np.ndarray, eps: float):
    """Advance ``pos`` by ``disp`` without crossing any wall segment.

    On contact the robot stops ``eps`` off the wall along its normal and the
    remaining displacement slides along the wall (normal component removed);
    up to ``MAX_SLIDES`` contacts are resolved per step.

    Returns ``(new_pos, normals, n_hits)`` where ``normals[i, :n_hits[i]]`` are
    the unit wall normals (pointing away from the wall, toward the robot) met
    by robot ``i`` during the step.
    """
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    disp = np.ascontiguousarray(disp, dtype=np.float64)
    segs = np.ascontiguousarray(np.reshape(segs, (-1, 4)), dtype=np.float64)
    if _BACKEND == "numba":
        return _move_nb(pos, disp, segs, float(eps))
    return _move_np(pos, disp, segs, float(eps))


def segments_crossed(p: np.ndarray, q: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Boolean per row: does the closed segment p->q touch any wall segment."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    segs = np.reshape(np.asarray(segs, dtype=np.float64), (-1, 4))
    if segs.shape[0] == 0:
        return np.zeros(p.shape[0], dtype=bool)
    return _crosses_any_np(p, q, segs)
