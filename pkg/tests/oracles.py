"""Independent reference computations used by the tests.

Each oracle solves its problem with a different method from the package
code: finite differences instead of finite elements, brute-force scans
instead of closed-form returns, polygon clipping instead of slice sums.
"""

import math

import numpy as np
from scipy.linalg import solve_banded


def fd_diffusion_1d(length, n, diffusivity, h_init, h_left, h_right, dt, n_steps):
    """Backward-Euler finite differences for dH/dt = D d2H/dx2 on [0, L]
    with fixed end heads.  Returns (x, H)."""
    x = np.linspace(0.0, length, n)
    dx = x[1] - x[0]
    H = np.full(n, float(h_init))
    H[0], H[-1] = h_left, h_right
    r = diffusivity * dt / dx ** 2
    m = n - 2
    ab = np.zeros((3, m))
    ab[0, 1:] = -r
    ab[1, :] = 1 + 2 * r
    ab[2, :-1] = -r
    for _ in range(n_steps):
        rhs = H[1:-1].copy()
        rhs[0] += r * h_left
        rhs[-1] += r * h_right
        H[1:-1] = solve_banded((1, 1), ab, rhs)
    return x, H


# -- plasticity ------------------------------------------------------------------

def _dev_split(s):
    """(I1, deviator) of Mandel stress vectors [sxx, syy, szz, sqrt(2) sxy]."""
    i1 = s[..., 0] + s[..., 1] + s[..., 2]
    dev = s.copy()
    dev[..., :3] -= i1[..., None] / 3.0
    return i1, dev


def _j2_norm(dev):
    return np.sqrt(0.5 * np.sum(dev * dev, axis=-1))


def dp_closest_point_scan(trial, alpha, k, bulk, shear, n_scan=4001):
    """Closest point on the cone ``alpha*I1 + sqrt(J2) = k`` in the
    energy norm.

    For a fixed I1 the nearest deviator is the radial projection of the
    trial deviator, so the search reduces to one dimension with distance
    ``dI1^2 / (9K) + d(sqrt J2)^2 / G``.  A coarse scan brackets the
    minimum, which is then pinned down by bisection on the sign of the
    distance derivative.
    """
    i1t, devt = _dev_split(np.asarray(trial, float))
    qt = _j2_norm(devt)

    def dist(i1):
        return (i1 - i1t) ** 2 / (9.0 * bulk) + (k - alpha * i1 - qt) ** 2 / shear

    def slope(i1):
        return 2 * (i1 - i1t) / (9.0 * bulk) - 2 * alpha * (k - alpha * i1 - qt) / shear

    if alpha == 0.0:
        i1 = i1t
    else:
        apex = k / alpha
        # a feasible point bounds how far I1 can move
        d0 = dist(min(i1t, apex))
        lo = min(i1t, apex) - math.sqrt(9.0 * bulk * d0) - 1.0
        grid = np.linspace(lo, apex, n_scan)
        j = int(np.argmin(dist(grid)))
        if j == n_scan - 1 and slope(apex) <= 0:
            i1 = apex
        else:
            a, b = grid[max(j - 1, 0)], grid[min(j + 1, n_scan - 1)]
            for _ in range(200):
                mid = 0.5 * (a + b)
                if mid in (a, b):
                    break
                if slope(mid) > 0:
                    b = mid
                else:
                    a = mid
            i1 = 0.5 * (a + b)
    q = k - alpha * i1
    dev = devt * (q / qt) if qt > 0 else devt * 0.0
    out = dev.copy()
    out[:3] += i1 / 3.0
    return out


# -- limit equilibrium --------------------------------------------------------------

def circular_segment_area_and_moment(surface, xc, yc, r, n=20001):
    """Area of the body between a ground polyline and a circle below it, and
    the x-moment of that area, by dense trapezoid integration."""
    s = np.asarray(surface, float)
    lo = max(xc - r, s[0, 0])
    hi = min(xc + r, s[-1, 0])
    x = np.linspace(lo, hi, n)
    top = np.interp(x, s[:, 0], s[:, 1])
    bot = yc - np.sqrt(np.maximum(r * r - (x - xc) ** 2, 0.0))
    depth = np.maximum(top - bot, 0.0)
    area = np.trapezoid(depth, x)
    moment = np.trapezoid(depth * (x - xc), x)
    return area, moment


def undrained_arc_fos(surface, xc, yc, r, cu, gamma, n=20001):
    """phi = 0 factor of safety: resisting c*R*arc over driving W*lever.

    The arc length is measured only where the circle lies under the ground,
    and the driving moment uses the dense-integration centroid.
    """
    s = np.asarray(surface, float)
    x = np.linspace(max(xc - r, s[0, 0]), min(xc + r, s[-1, 0]), n)
    top = np.interp(x, s[:, 0], s[:, 1])
    bot = yc - np.sqrt(np.maximum(r * r - (x - xc) ** 2, 0.0))
    inside = top > bot
    xs = x[inside]
    arc = r * (np.arcsin(np.clip((xs.max() - xc) / r, -1, 1))
               - np.arcsin(np.clip((xs.min() - xc) / r, -1, 1)))
    _, moment = circular_segment_area_and_moment(surface, xc, yc, r, n)
    return cu * r * arc / abs(gamma * moment)


def bishop_root_scan(W, alpha, b, c, tan_phi, u, lo=0.05, hi=20.0, n=200001):
    """Bishop's simplified equation solved by scanning F for the sign change
    of F - G(F), then bisecting."""
    W, alpha, b, c, tan_phi, u = map(np.asarray, (W, alpha, b, c, tan_phi, u))
    drive = float(np.sum(W * np.sin(alpha)))

    def resid(F):
        m = np.cos(alpha) + np.sin(alpha) * tan_phi / F
        return F - float(np.sum((c * b + (W - u * b) * tan_phi) / m)) / drive

    Fs = np.linspace(lo, hi, 2001)
    vals = np.array([resid(F) for F in Fs])
    idx = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    if not len(idx):
        raise ValueError("no root in scan range")
    a, z = Fs[idx[-1]], Fs[idx[-1] + 1]
    for _ in range(200):
        mid = 0.5 * (a + z)
        if np.sign(resid(mid)) == np.sign(resid(a)):
            a = mid
        else:
            z = mid
    return 0.5 * (a + z)
