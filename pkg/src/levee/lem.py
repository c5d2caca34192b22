"""Bishop simplified method of slices on circular slip surfaces.

Circles are evaluated in batches: every array below has a leading axis over
circles and a trailing axis over slices, so a full grid search is a handful
of numpy passes.  Moments are taken about the circle centre; the sliding
sense is whichever way the applied loads turn the body.

External river water above a submerged slope is treated as zero-strength
material: its weight is added to the slices it overlies and the horizontal
hydrostatic thrust on the vertical end faces of the water column enters the
moment balance, so a fully submerged slope gives the same factor of safety
as the same slope analysed with buoyant unit weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .materials import GAMMA_W, SoilMaterial
from .mesh import RIVER_FACE, CrossSectionGeometry, GeometryError

M_ALPHA_MIN = 0.2

# status codes of the batched evaluator
OK = 0
INVALID = 1
DEGENERATE = 2
MALPHA = 3
NOCONV = 4


class LemError(RuntimeError):
    pass


class InvalidCircle(LemError):
    pass


class DegenerateDriving(LemError):
    pass


class MAlphaGuard(LemError):
    pass


class NoConvergence(LemError):
    pass


class NoValidCircle(LemError):
    pass


_ERRORS = {INVALID: InvalidCircle, DEGENERATE: DegenerateDriving,
           MALPHA: MAlphaGuard, NOCONV: NoConvergence}


@dataclass(frozen=True)
class SlipCircle:
    xc: float
    yc: float
    r: float
    entry: tuple[float, float] | None = None
    exit: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        return {"xc": self.xc, "yc": self.yc, "r": self.r,
                "entry": list(self.entry) if self.entry else None,
                "exit": list(self.exit) if self.exit else None}

    def polyline(self, n: int = 100) -> np.ndarray:
        """Slip-surface points between entry and exit, for plotting."""
        x = np.linspace(self.entry[0], self.exit[0], n)
        y = self.yc - np.sqrt(np.maximum(self.r ** 2 - (x - self.xc) ** 2, 0.0))
        return np.column_stack([x, y])


@dataclass
class SliceDecomposition:
    circle: SlipCircle
    x: np.ndarray
    width: np.ndarray
    y_base: np.ndarray
    y_top: np.ndarray
    alpha: np.ndarray
    weight: np.ndarray
    pore_pressure: np.ndarray
    cohesion: np.ndarray
    tan_phi: np.ndarray
    stratum: np.ndarray
    driving_moment: float

    def to_records(self) -> list[dict]:
        return [{"x": float(x), "b": float(b), "y_base": float(yb), "alpha": float(a),
                 "W": float(w), "u": float(u), "c": float(c), "tan_phi": float(t),
                 "stratum": int(s)}
                for x, b, yb, a, w, u, c, t, s in zip(
                    self.x, self.width, self.y_base, self.alpha, self.weight,
                    self.pore_pressure, self.cohesion, self.tan_phi, self.stratum)]


@dataclass
class PhreaticLine:
    """Piecewise-linear water table, single valued in x."""

    points: np.ndarray
    rl: float
    gwl: float
    x_face: float

    def y(self, x):
        return np.interp(x, self.points[:, 0], self.points[:, 1])

    def pore_pressure(self, x, y, gamma_w: float = GAMMA_W):
        return gamma_w * np.maximum(self.y(x) - np.asarray(y, dtype=float), 0.0)


def river_is_left(geom: CrossSectionGeometry) -> bool:
    mids = [0.5 * (a[0] + b[0]) for a, b, t in geom.segments() if t == RIVER_FACE]
    if not mids:
        raise GeometryError("geometry has no RiverFace segments")
    anchor = geom.land_anchor_x
    if anchor is None:
        s = geom.surface()
        anchor = s[np.argmax(s[:, 1]), 0]
    return float(np.mean(mids)) < anchor


def _face_crossing(geom: CrossSectionGeometry, level: float) -> float:
    """x where the water level meets the river-side ground surface."""
    s = geom.surface()
    if not river_is_left(geom):
        s = s[::-1]
    # walk landward from the river edge; the first upward crossing is the face
    if s[0, 1] >= level:
        raise GeometryError(f"river level {level} is below the river edge of the section")
    for (x0, y0), (x1, y1) in zip(s[:-1], s[1:]):
        if y0 < level <= y1:
            return x0 + (level - y0) / (y1 - y0) * (x1 - x0)
    raise GeometryError(f"river level {level} does not meet the river-side surface")


def build_phreatic(rl: float, gwl: float, geom: CrossSectionGeometry) -> PhreaticLine:
    """Straight water table from the river face at ``rl`` to the land anchor at
    ``gwl``, horizontal beyond both anchors and clipped to the ground surface
    on the land side of the face."""
    if geom.land_anchor_x is None:
        raise GeometryError("geometry has no land_anchor_x")
    x0, y0, x1, y1 = geom.bounds()
    for name, lev in (("RL", rl), ("GWL", gwl)):
        if not y0 <= lev <= y1:
            raise GeometryError(f"{name}={lev} outside the section's vertical range")
    xf = _face_crossing(geom, rl)
    xa = float(geom.land_anchor_x)
    left = river_is_left(geom)
    if (xa - xf) * (1 if left else -1) <= 0:
        raise GeometryError("land anchor is not landward of the river face")
    ctrl_x = np.array(sorted([x0, xf, xa, x1]))
    ctrl_y = np.interp(ctrl_x, [min(xf, xa), max(xf, xa)], [rl, gwl] if left else [gwl, rl])
    s = geom.surface()
    xs = np.unique(np.concatenate([ctrl_x, s[:, 0]]))
    # add crossings of the line and the surface inside each interval
    line = np.interp(xs, ctrl_x, ctrl_y)
    surf = np.interp(xs, s[:, 0], s[:, 1])
    d = line - surf
    extra = []
    for i in range(len(xs) - 1):
        if d[i] * d[i + 1] < 0:
            t = d[i] / (d[i] - d[i + 1])
            extra.append(xs[i] + t * (xs[i + 1] - xs[i]))
    xs = np.unique(np.concatenate([xs, extra]))
    line = np.interp(xs, ctrl_x, ctrl_y)
    surf = np.interp(xs, s[:, 0], s[:, 1])
    landward = xs >= xf if left else xs <= xf
    y = np.where(landward, np.minimum(line, surf), line)
    return PhreaticLine(points=np.column_stack([xs, y]), rl=rl, gwl=gwl, x_face=xf)


# -- batched circle evaluation ------------------------------------------------

def _surface_intersections(surface: np.ndarray, xc, yc, r):
    """x of circle/surface crossings; returns (x_lo, x_hi, count)."""
    a = surface[:-1][None, :, :]
    b = surface[1:][None, :, :]
    d = b - a
    fx = a[..., 0] - xc[:, None]
    fy = a[..., 1] - yc[:, None]
    A = (d ** 2).sum(-1)
    B = 2.0 * (fx * d[..., 0] + fy * d[..., 1])
    C = fx ** 2 + fy ** 2 - (r ** 2)[:, None]
    disc = B ** 2 - 4 * A * C
    ok = disc > 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t1 = (-B - sq) / (2 * A)
    t2 = (-B + sq) / (2 * A)
    # half-open parameter range so shared vertices are counted once
    hit1 = ok & (t1 >= 0) & (t1 < 1)
    hit2 = ok & (t2 >= 0) & (t2 < 1)
    last = np.zeros_like(hit1)
    last[:, -1] = True
    hit1 |= ok & last & np.isclose(t1, 1.0)
    hit2 |= ok & last & np.isclose(t2, 1.0)
    x1 = a[..., 0] + t1 * d[..., 0]
    x2 = a[..., 0] + t2 * d[..., 0]
    xs = np.concatenate([np.where(hit1, x1, np.nan), np.where(hit2, x2, np.nan)], axis=1)
    count = np.isfinite(xs).sum(axis=1)
    x_lo = np.where(np.isfinite(xs), xs, np.inf).min(axis=1)
    x_hi = np.where(np.isfinite(xs), xs, -np.inf).max(axis=1)
    return x_lo, x_hi, count


def _overlap(lo, hi, a, b):
    return np.maximum(np.minimum(hi, b) - np.maximum(lo, a), 0.0)


@dataclass
class _Batch:
    status: np.ndarray
    fos: np.ndarray
    iterations: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x: np.ndarray
    b: np.ndarray
    yb: np.ndarray
    ys: np.ndarray
    sin_a: np.ndarray
    W: np.ndarray
    u: np.ndarray
    c: np.ndarray
    tphi: np.ndarray
    strat: np.ndarray
    moment: np.ndarray


def evaluate_circles(xc, yc, r, geom: CrossSectionGeometry, strata: list[SoilMaterial],
                     phreatic: PhreaticLine, rl: float, n_slices: int = 50,
                     gamma_w: float = GAMMA_W, tol: float = 1e-6, max_iter: int = 100,
                     min_depth: float = 0.0, toward_river: bool = False) -> _Batch:
    """Bishop factors of safety for a batch of circles.

    ``strata`` lists materials in the geometry's stratum order.  Circles whose
    maximum depth below the surface is under ``min_depth`` are rejected as
    invalid, as are circles whose loads turn them landward when
    ``toward_river`` is set.
    """
    xc = np.atleast_1d(np.asarray(xc, dtype=float))
    yc = np.atleast_1d(np.asarray(yc, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    xc, yc, r = np.broadcast_arrays(xc, yc, r)
    k = len(xc)
    surface = geom.surface()
    gx0, gy0, gx1, gy1 = geom.bounds()
    status = np.full(k, OK, dtype=int)

    x1, x2, count = _surface_intersections(surface, xc, yc, r)
    status[count != 2] = INVALID
    x1 = np.where(status == OK, x1, xc - 0.5 * r)
    x2 = np.where(status == OK, x2, xc + 0.5 * r)
    status[(x2 - x1) <= 1e-6] = INVALID
    # both crossings must lie on the lower half of the circle
    for xe in (x1, x2):
        ye_arc = yc - np.sqrt(np.maximum(r ** 2 - (xe - xc) ** 2, 0.0))
        ye_surf = np.interp(xe, surface[:, 0], surface[:, 1])
        status[np.abs(ye_arc - ye_surf) > 1e-6 * np.maximum(r, 1.0)] = INVALID

    frac = (np.arange(n_slices) + 0.5) / n_slices
    b = ((x2 - x1) / n_slices)[:, None] * np.ones(n_slices)
    x = x1[:, None] + (x2 - x1)[:, None] * frac[None, :]
    dx = x - xc[:, None]
    root = np.sqrt(np.maximum(r[:, None] ** 2 - dx ** 2, 0.0))
    yb = yc[:, None] - root
    ys = np.interp(x, surface[:, 0], surface[:, 1])
    depth = ys - yb
    # arc must lie below the ground between the crossings and inside the section
    arc_below = (depth > -1e-9).all(axis=1)
    status[~arc_below] = INVALID
    status[(yb < gy0).any(axis=1) | (x1 < gx0) | (x2 > gx1)] = INVALID
    status[depth.max(axis=1) < max(min_depth, 1e-9)] = INVALID
    # the arc must be the lower half: base below the centre everywhere
    status[(yb >= yc[:, None]).any(axis=1)] = INVALID

    n_layers = len(strata)
    bounds = [np.full_like(x, np.inf)]
    for line in geom.interfaces:
        bounds.append(np.interp(x, line[:, 0], line[:, 1]))
    bounds.append(np.full_like(x, -np.inf))
    yphr = phreatic.y(x)
    W = np.zeros_like(x)
    for j, mat in enumerate(strata[:n_layers]):
        top, bot = bounds[j], bounds[j + 1]
        wet = _overlap(yb, np.minimum(ys, np.maximum(yphr, yb)), bot, top)
        dry = _overlap(np.maximum(yb, np.minimum(yphr, ys)), ys, bot, top)
        W += (mat.gamma_wet * wet + mat.gamma_dry * dry) * b
    submerged = ys < rl
    water_col = np.where(submerged, rl - ys, 0.0)
    W += gamma_w * water_col * b
    head = np.maximum(yphr - yb, 0.0)
    head = np.where(submerged, np.maximum(head, rl - yb), head)
    u = gamma_w * head

    strat = geom.stratum_at(x, yb)
    strat = np.clip(strat, 0, n_layers - 1)
    coh = np.array([m.cohesion for m in strata])[strat]
    tphi = np.array([m.tan_phi for m in strata])[strat]

    # torques about the centre (z-component, counterclockwise positive)
    torque = -(W * dx).sum(axis=1)
    ys1 = np.interp(x1, surface[:, 0], surface[:, 1])
    ys2 = np.interp(x2, surface[:, 0], surface[:, 1])
    for xe, ye, sign in ((x1, ys1, 1.0), (x2, ys2, -1.0)):
        hw = np.maximum(rl - ye, 0.0)
        thrust = 0.5 * gamma_w * hw ** 2
        yp = ye + hw / 3.0
        torque += -(yp - yc) * sign * thrust
    sense = np.where(torque < 0, -1.0, 1.0)
    moment = np.abs(torque)
    if toward_river:
        # river on the left slides clockwise (negative torque)
        river_sense = -1.0 if river_is_left(geom) else 1.0
        status[(status == OK) & (sense != river_sense)] = INVALID
    status[(status == OK) & (moment <= 1e-9 * np.maximum((W * r[:, None]).sum(axis=1), 1e-300))] \
        = DEGENERATE

    sin_a = -sense[:, None] * dx / r[:, None]
    cos_a = np.sqrt(np.maximum(1.0 - sin_a ** 2, 0.0))
    normal = np.maximum(W - u * b, 0.0)
    num_c = coh * b
    num_f = normal * tphi
    fos = np.ones(k)
    iters = np.zeros(k, dtype=int)
    active = status == OK
    safe_moment = np.where(moment > 0, moment, 1.0)
    for it in range(1, max_iter + 1):
        m_alpha = cos_a + sin_a * tphi / fos[:, None]
        bad = active & (m_alpha < M_ALPHA_MIN).any(axis=1)
        status[bad] = MALPHA
        active &= ~bad
        if not active.any():
            break
        m_safe = np.where(m_alpha > 0, m_alpha, 1.0)
        new = ((num_c + num_f) / m_safe).sum(axis=1) * r / safe_moment
        delta = np.abs(new - fos)
        fos = np.where(active, new, fos)
        iters = np.where(active, it, iters)
        done = active & (delta < tol)
        active &= ~done
        if not active.any():
            break
    else:
        pass
    status[active] = NOCONV
    # final guard at the converged value
    m_alpha = cos_a + sin_a * tphi / fos[:, None]
    status[(status == OK) & (m_alpha < M_ALPHA_MIN).any(axis=1)] = MALPHA
    fos = np.where(status == OK, fos, np.nan)
    return _Batch(status=status, fos=fos, iterations=iters, x1=x1, x2=x2, x=x, b=b, yb=yb,
                  ys=ys, sin_a=sin_a, W=W, u=u, c=coh, tphi=tphi, strat=strat, moment=moment)


def _strata_list(geom, strata) -> list[SoilMaterial]:
    if isinstance(strata, dict):
        try:
            return [strata[name] for name in geom.strata]
        except KeyError as exc:
            raise GeometryError(f"no material for stratum {exc}") from None
    return list(strata)


def analyze_circle(circle: SlipCircle, geom: CrossSectionGeometry, strata, phreatic: PhreaticLine,
                   rl: float, n_slices: int = 50, gamma_w: float = GAMMA_W, tol: float = 1e-6,
                   max_iter: int = 100) -> tuple[float, SliceDecomposition]:
    """FoS and slice table for one circle; raises on rejected circles."""
    if n_slices < 10:
        raise ValueError("n_slices must be >= 10")
    mats = _strata_list(geom, strata)
    res = evaluate_circles([circle.xc], [circle.yc], [circle.r], geom, mats, phreatic, rl,
                           n_slices=n_slices, gamma_w=gamma_w, tol=tol, max_iter=max_iter)
    st = int(res.status[0])
    if st != OK:
        raise _ERRORS[st](f"circle ({circle.xc}, {circle.yc}, R={circle.r}) rejected")
    surface = geom.surface()
    x1, x2 = float(res.x1[0]), float(res.x2[0])
    full = SlipCircle(circle.xc, circle.yc, circle.r,
                      entry=(x1, float(np.interp(x1, surface[:, 0], surface[:, 1]))),
                      exit=(x2, float(np.interp(x2, surface[:, 0], surface[:, 1]))))
    dec = SliceDecomposition(
        circle=full, x=res.x[0], width=res.b[0], y_base=res.yb[0], y_top=res.ys[0],
        alpha=np.arcsin(np.clip(res.sin_a[0], -1, 1)), weight=res.W[0],
        pore_pressure=res.u[0], cohesion=res.c[0], tan_phi=res.tphi[0], stratum=res.strat[0],
        driving_moment=float(res.moment[0]))
    return float(res.fos[0]), dec


def bishop_fos(circle: SlipCircle, geom: CrossSectionGeometry, strata, phreatic: PhreaticLine,
               rl: float, n_slices: int = 50, **kw) -> float:
    """Bishop simplified factor of safety of one circle."""
    return analyze_circle(circle, geom, strata, phreatic, rl, n_slices=n_slices, **kw)[0]


@dataclass(frozen=True)
class SearchGrid:
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    r_range: tuple[float, float]
    nx: int = 40
    ny: int = 40
    nr: int = 30

    def axes(self):
        return (np.linspace(*self.x_range, self.nx), np.linspace(*self.y_range, self.ny),
                np.linspace(*self.r_range, self.nr))

    def to_dict(self) -> dict:
        return {"x_range": list(self.x_range), "y_range": list(self.y_range),
                "r_range": list(self.r_range), "nx": self.nx, "ny": self.ny, "nr": self.nr}


@dataclass
class SearchResult:
    circle: SlipCircle
    fos: float
    slices: SliceDecomposition
    n_evaluated: int
    n_valid: int


def _argmin_tiebreak(fos, xc, yc, r) -> int:
    best = np.nanmin(fos)
    cand = np.flatnonzero(fos == best)
    order = np.lexsort((xc[cand], yc[cand], r[cand]))
    return int(cand[order[0]])


def search_critical(geom: CrossSectionGeometry, strata, phreatic: PhreaticLine, rl: float,
                    grid: SearchGrid, n_slices: int = 50, refine: int = 2,
                    gamma_w: float = GAMMA_W, min_depth: float = 0.0,
                    toward_river: bool = True, chunk: int = 20000) -> SearchResult:
    """Exhaustive grid search for the critical circle, then ``refine`` rounds of
    halved spacing around the incumbent.

    Equal minima are broken by smallest radius, then lowest centre.
    """
    mats = _strata_list(geom, strata)
    gx, gy, gr = grid.axes()
    XC, YC, R = (a.ravel() for a in np.meshgrid(gx, gy, gr, indexing="ij"))

    def run(xc, yc, r):
        out = np.full(len(xc), np.nan)
        for s in range(0, len(xc), chunk):
            sl = slice(s, s + chunk)
            out[sl] = evaluate_circles(xc[sl], yc[sl], r[sl], geom, mats, phreatic, rl,
                                       n_slices=n_slices, gamma_w=gamma_w,
                                       min_depth=min_depth, toward_river=toward_river).fos
        return out

    fos = run(XC, YC, R)
    n_eval = len(fos)
    n_valid = int(np.isfinite(fos).sum())
    if n_valid == 0:
        raise NoValidCircle("no admissible slip circle in the search grid")
    i = _argmin_tiebreak(fos, XC, YC, R)
    best = (XC[i], YC[i], R[i], fos[i])
    step = np.array([_spacing(gx), _spacing(gy), _spacing(gr)])
    for _ in range(refine):
        step = step / 2.0
        offs = np.array([-1.0, 0.0, 1.0])
        dx, dy, dr = (a.ravel() for a in np.meshgrid(offs, offs, offs, indexing="ij"))
        xc = best[0] + dx * step[0]
        yc = best[1] + dy * step[1]
        r = best[2] + dr * step[2]
        f = run(xc, yc, r)
        n_eval += len(f)
        n_valid += int(np.isfinite(f).sum())
        allx = np.concatenate([[best[0]], xc])
        ally = np.concatenate([[best[1]], yc])
        allr = np.concatenate([[best[2]], r])
        allf = np.concatenate([[best[3]], f])
        j = _argmin_tiebreak(allf, allx, ally, allr)
        best = (allx[j], ally[j], allr[j], allf[j])
    fos_best, dec = analyze_circle(SlipCircle(*best[:3]), geom, mats, phreatic, rl,
                                   n_slices=n_slices, gamma_w=gamma_w)
    return SearchResult(circle=dec.circle, fos=fos_best, slices=dec, n_evaluated=n_eval,
                        n_valid=n_valid)


def _spacing(a: np.ndarray) -> float:
    return float(a[1] - a[0]) if len(a) > 1 else 0.0


def default_search_grid(geom: CrossSectionGeometry, nx: int = 40, ny: int = 40,
                        nr: int = 30) -> SearchGrid:
    """Centres from the riverward edge to just past the land anchor and up to
    three section heights above the crest; radii up to four heights plus 3 m."""
    s = geom.surface()
    height = float(s[:, 1].max() - s[:, 1].min())
    x_hi = geom.land_anchor_x + 2.0 if geom.land_anchor_x is not None else float(s[:, 0].max())
    return SearchGrid((float(s[:, 0].min()), x_hi),
                      (float(s[:, 1].min()), float(s[:, 1].max()) + 3.0 * height),
                      (1.0, 4.0 * height + 3.0), nx, ny, nr)
