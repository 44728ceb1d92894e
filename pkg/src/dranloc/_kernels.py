"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``DRANLOC_DISABLE_NUMBA`` is
unset (or set to ``0``/``false``). Both paths share signatures and agree to
floating point round-off; ``tests/test_kernels.py`` checks this and
``benchmarks/bench_kernels.py`` times them against each other.

Grid conventions (shared by every caller):
  * ``data`` is ``[H, W, D]`` float32, texel ``(x, y)`` at ``data[y, x]``.
  * sample coordinates are *grid* coordinates, clamped to ``[0, W-1]`` x
    ``[0, H-1]``; the derivative along a clamped axis is zero.
"""

import os
from types import SimpleNamespace

import numpy as np

_FLAG = os.environ.get("DRANLOC_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _cell(g, n):
    """Lower texel index, interpolation fraction and in-range mask per axis."""
    inside = (g >= 0.0) & (g <= n - 1)
    gc = np.clip(g, 0.0, n - 1)
    if n == 1:
        i0 = np.zeros(g.shape, dtype=np.int64)
        return i0, i0, np.zeros_like(gc), np.zeros(g.shape, dtype=bool)
    i0 = np.minimum(np.floor(gc).astype(np.int64), n - 2)
    return i0, i0 + 1, gc - i0, inside


def _np_bilinear_values(data, gx, gy):
    h, w, _ = data.shape
    x0, x1, fx, _ = _cell(np.asarray(gx, dtype=np.float64), w)
    y0, y1, fy, _ = _cell(np.asarray(gy, dtype=np.float64), h)
    f00 = data[y0, x0].astype(np.float64)
    f01 = data[y0, x1].astype(np.float64)
    f10 = data[y1, x0].astype(np.float64)
    f11 = data[y1, x1].astype(np.float64)
    fx = fx[:, None]
    fy = fy[:, None]
    top = f00 + fx * (f01 - f00)
    bot = f10 + fx * (f11 - f10)
    return top + fy * (bot - top)


def _np_bilinear_values_grads(data, gx, gy):
    h, w, _ = data.shape
    x0, x1, fx, inx = _cell(np.asarray(gx, dtype=np.float64), w)
    y0, y1, fy, iny = _cell(np.asarray(gy, dtype=np.float64), h)
    f00 = data[y0, x0].astype(np.float64)
    f01 = data[y0, x1].astype(np.float64)
    f10 = data[y1, x0].astype(np.float64)
    f11 = data[y1, x1].astype(np.float64)
    fx = fx[:, None]
    fy = fy[:, None]
    top = f00 + fx * (f01 - f00)
    bot = f10 + fx * (f11 - f10)
    vals = top + fy * (bot - top)
    grads = np.empty(vals.shape + (2,))
    grads[..., 0] = ((1.0 - fy) * (f01 - f00) + fy * (f11 - f10)) * inx[:, None]
    grads[..., 1] = (bot - top) * iny[:, None]
    return vals, grads


def _np_ratio_peaks(corr, width, radius):
    corr = np.asarray(corr)
    n_tex, n = corr.shape
    best = np.argmax(corr, axis=0)
    m1 = corr[best, np.arange(n)].astype(np.float64)
    xs = np.arange(n_tex) % width
    ys = np.arange(n_tex) // width
    bx = xs[best]
    by = ys[best]
    d2 = (xs[:, None] - bx[None, :]) ** 2 + (ys[:, None] - by[None, :]) ** 2
    outside = np.where(d2 > radius * radius, corr, -np.inf)
    m2 = outside.max(axis=0).astype(np.float64)
    return best.astype(np.int64), m1, m2


def _np_reprojection_errors(R, t, intr, points, pixels, z_min):
    pc = points @ R.T + t
    z = pc[:, 2]
    ok = z > z_min
    zs = np.where(ok, z, 1.0)
    u = intr[0] * pc[:, 0] / zs + intr[2]
    v = intr[1] * pc[:, 1] / zs + intr[3]
    err = np.hypot(u - pixels[:, 0], v - pixels[:, 1])
    return np.where(ok, err, np.inf)


numpy_impl = SimpleNamespace(
    name="numpy",
    bilinear_values=_np_bilinear_values,
    bilinear_values_grads=_np_bilinear_values_grads,
    ratio_peaks=_np_ratio_peaks,
    reprojection_errors=_np_reprojection_errors,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True, fastmath=False)

    @_jit
    def _nb_axis(g, n):
        if n == 1:
            return 0, 0, 0.0, 0.0
        inside = 1.0 if (g >= 0.0 and g <= n - 1) else 0.0
        gc = min(max(g, 0.0), n - 1.0)
        i0 = min(int(np.floor(gc)), n - 2)
        return i0, i0 + 1, gc - i0, inside

    @_jit
    def _nb_bilinear_values(data, gx, gy):
        h, w, d = data.shape
        n = gx.shape[0]
        out = np.empty((n, d))
        for i in range(n):
            x0, x1, fx, _ = _nb_axis(gx[i], w)
            y0, y1, fy, _ = _nb_axis(gy[i], h)
            for c in range(d):
                f00 = np.float64(data[y0, x0, c])
                f01 = np.float64(data[y0, x1, c])
                f10 = np.float64(data[y1, x0, c])
                f11 = np.float64(data[y1, x1, c])
                top = f00 + fx * (f01 - f00)
                bot = f10 + fx * (f11 - f10)
                out[i, c] = top + fy * (bot - top)
        return out

    @_jit
    def _nb_bilinear_values_grads(data, gx, gy):
        h, w, d = data.shape
        n = gx.shape[0]
        vals = np.empty((n, d))
        grads = np.empty((n, d, 2))
        for i in range(n):
            x0, x1, fx, inx = _nb_axis(gx[i], w)
            y0, y1, fy, iny = _nb_axis(gy[i], h)
            for c in range(d):
                f00 = np.float64(data[y0, x0, c])
                f01 = np.float64(data[y0, x1, c])
                f10 = np.float64(data[y1, x0, c])
                f11 = np.float64(data[y1, x1, c])
                top = f00 + fx * (f01 - f00)
                bot = f10 + fx * (f11 - f10)
                vals[i, c] = top + fy * (bot - top)
                grads[i, c, 0] = ((1.0 - fy) * (f01 - f00) + fy * (f11 - f10)) * inx
                grads[i, c, 1] = (bot - top) * iny
        return vals, grads

    @_jit
    def _nb_ratio_peaks(corr, width, radius):
        n_tex, n = corr.shape
        best = np.empty(n, dtype=np.int64)
        m1 = np.empty(n)
        m2 = np.empty(n)
        r2 = radius * radius
        for j in range(n):
            bi = 0
            bv = corr[0, j]
            for t in range(1, n_tex):
                if corr[t, j] > bv:
                    bv = corr[t, j]
                    bi = t
            bx = bi % width
            by = bi // width
            sv = -np.inf
            for t in range(n_tex):
                dx = t % width - bx
                dy = t // width - by
                if dx * dx + dy * dy > r2 and corr[t, j] > sv:
                    sv = corr[t, j]
            best[j] = bi
            m1[j] = bv
            m2[j] = sv
        return best, m1, m2

    @_jit
    def _nb_reprojection_errors(R, t, intr, points, pixels, z_min):
        n = points.shape[0]
        err = np.empty(n)
        for i in range(n):
            x = R[0, 0] * points[i, 0] + R[0, 1] * points[i, 1] + R[0, 2] * points[i, 2] + t[0]
            y = R[1, 0] * points[i, 0] + R[1, 1] * points[i, 1] + R[1, 2] * points[i, 2] + t[1]
            z = R[2, 0] * points[i, 0] + R[2, 1] * points[i, 1] + R[2, 2] * points[i, 2] + t[2]
            if z <= z_min:
                err[i] = np.inf
                continue
            du = intr[0] * x / z + intr[2] - pixels[i, 0]
            dv = intr[1] * y / z + intr[3] - pixels[i, 1]
            err[i] = np.sqrt(du * du + dv * dv)
        return err

    def _wrap_bilinear(fn):
        def call(data, gx, gy):
            return fn(np.ascontiguousarray(data), np.ascontiguousarray(gx, dtype=np.float64),
                      np.ascontiguousarray(gy, dtype=np.float64))
        return call

    numba_impl = SimpleNamespace(
        name="numba",
        bilinear_values=_wrap_bilinear(_nb_bilinear_values),
        bilinear_values_grads=_wrap_bilinear(_nb_bilinear_values_grads),
        ratio_peaks=lambda corr, width, radius: _nb_ratio_peaks(
            np.ascontiguousarray(corr), int(width), float(radius)),
        reprojection_errors=lambda R, t, intr, points, pixels, z_min: _nb_reprojection_errors(
            np.ascontiguousarray(R, dtype=np.float64), np.ascontiguousarray(t, dtype=np.float64),
            np.ascontiguousarray(intr, dtype=np.float64),
            np.ascontiguousarray(points, dtype=np.float64),
            np.ascontiguousarray(pixels, dtype=np.float64), float(z_min)),
    )
else:  # pragma: no cover
    numba_impl = None


IMPLEMENTATIONS = {"numpy": numpy_impl}
if numba_impl is not None:
    IMPLEMENTATIONS["numba"] = numba_impl

active = numba_impl if (numba_impl is not None and not _DISABLED) else numpy_impl
BACKEND = active.name

bilinear_values = active.bilinear_values
bilinear_values_grads = active.bilinear_values_grads
ratio_peaks = active.ratio_peaks
reprojection_errors = active.reprojection_errors
