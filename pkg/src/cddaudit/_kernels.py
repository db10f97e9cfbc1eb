"""Compiled stencil kernels for the constrained diffusion step.

Every field is viewed as a 3D array; axes of extent 1 contribute nothing to
the Laplacian under reflecting boundaries, so 1D and 2D inputs reuse the
same kernel. Each cell's update reads only ``src`` and writes only its own
``dst`` cell, so results do not depend on loop order.
"""

import numba
import numpy as np


@numba.njit(cache=True, fastmath=False)
def constrained_steps(w, buf, dt, nsteps, last_dt):
    """Advance ``w`` by ``nsteps`` steps of ``dt`` plus one of ``last_dt``.

    Per cell: ``inc = dt * lap(w)`` with zero-flux boundaries, then
    ``w += min(0, max(inc, -w))``. Returns the array holding the result
    (either ``w`` or ``buf``).
    """
    src = w
    dst = buf
    total = nsteps + (1 if last_dt > 0.0 else 0)
    for s in range(total):
        step = dt if s < nsteps else last_dt
        _step(src, dst, step)
        src, dst = dst, src
    return src


@numba.njit(cache=True, fastmath=False)
def _step(src, dst, dt):
    nz, ny, nx = src.shape
    for k in range(nz):
        km = k - 1 if k > 0 else 0
        kp = k + 1 if k < nz - 1 else nz - 1
        for j in range(ny):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < ny - 1 else ny - 1
            for i in range(nx):
                im = i - 1 if i > 0 else 0
                ip = i + 1 if i < nx - 1 else nx - 1
                c = src[k, j, i]
                lap = (
                    (src[km, j, i] - c)
                    + (src[kp, j, i] - c)
                    + (src[k, jm, i] - c)
                    + (src[k, jp, i] - c)
                    + (src[k, j, im] - c)
                    + (src[k, j, ip] - c)
                )
                inc = dt * lap
                if inc < -c:
                    inc = -c
                if inc > 0.0:
                    inc = 0.0
                dst[k, j, i] = c + inc


def as_volume(arr):
    """Float64 C-contiguous 3D view, padding leading axes with extent 1."""
    a = np.ascontiguousarray(arr, dtype=np.float64)
    while a.ndim < 3:
        a = a[np.newaxis]
    return a
