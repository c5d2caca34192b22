"""Transient variably saturated flow (mixed-form Richards equation) on the
cross-section mesh.

State is the nodal gauge pore pressure p [kPa].  Time is in seconds and
conductivities are given in m/day, converted internally.  The discrete
scheme is backward Euler in the mass-conservative mixed form with a
modified Picard linearisation: water content is expanded with the
moisture capacity about the current iterate, conductivity is lagged.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fem import QUAD6, Assembler, element_geometry, lagrange_space
from .materials import (GAMMA_W, SoilMaterial, effective_saturation, moisture_capacity,
                        relative_permeability_p, water_content)
from .mesh import IMPERVIOUS, LAND_FACE, RIVER_FACE, Mesh

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0
INITIAL_SUCTION = -5.0     # kPa above the phreatic line in the initial guess
ACTIVE_SET_PASSES = 12    # strict seepage face: Picard passes before the active set freezes
DAMPING_AFTER = 20        # Picard passes in a time step before updates are halved


class TimeOutOfRange(ValueError):
    pass


class NonlinearDivergence(RuntimeError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class StepFailure(RuntimeError):
    pass


# -- boundary data -------------------------------------------------------------

@dataclass
class TideSeries:
    """River level samples (time in s, level in m OD), linearly interpolated."""

    times: np.ndarray
    levels: np.ndarray
    epoch: datetime | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.levels = np.asarray(self.levels, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.levels.shape or len(self.times) == 0:
            raise ValueError("tide series needs matching 1D time and level arrays")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("tide times must be strictly increasing")
        if not np.all(np.isfinite(self.levels)):
            raise ValueError("tide levels must be finite")

    @property
    def window(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def level(self, t):
        t = np.asarray(t, dtype=float)
        lo, hi = self.window
        eps = 1e-9 * max(1.0, abs(hi))
        if np.any(t < lo - eps) or np.any(t > hi + eps):
            raise TimeOutOfRange(f"time {t} outside tide window [{lo}, {hi}]")
        out = np.interp(t, self.times, self.levels)
        return float(out) if out.ndim == 0 else out

    @classmethod
    def constant(cls, level: float, t0: float = 0.0, t1: float = 1e12) -> "TideSeries":
        return cls(np.array([t0, t1]), np.array([level, level]))

    @classmethod
    def sinusoid(cls, mean: float, amplitude: float, period: float, t0: float, t1: float,
                 dt: float = 300.0, phase: float = 0.0) -> "TideSeries":
        t = np.arange(t0, t1 + 0.5 * dt, dt)
        return cls(t, mean + amplitude * np.sin(2 * np.pi * (t - t0) / period + phase))

    def to_timestamps(self) -> list[str]:
        epoch = self.epoch or datetime(1970, 1, 1, tzinfo=timezone.utc)
        return [datetime.fromtimestamp(epoch.timestamp() + s, tz=timezone.utc)
                .isoformat().replace("+00:00", "Z") for s in self.times]


def parse_time(text: str) -> datetime:
    t = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    return t if t.tzinfo else t.replace(tzinfo=timezone.utc)


def load_tide_csv(path) -> TideSeries:
    """Read ``time_iso8601,level_m_od`` rows; times become seconds since the
    first sample, which is kept as ``epoch``."""
    stamps, levels = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"time_iso8601", "level_m_od"} - set(reader.fieldnames):
            raise ValueError(f"{path}: expected header time_iso8601,level_m_od")
        for lineno, row in enumerate(reader, start=2):
            try:
                stamps.append(parse_time(row["time_iso8601"]))
                levels.append(float(row["level_m_od"]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not stamps:
        raise ValueError(f"{path}: no samples")
    epoch = stamps[0]
    secs = [(s - epoch).total_seconds() for s in stamps]
    return TideSeries(np.array(secs), np.array(levels), epoch=epoch)


def save_tide_csv(series: TideSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_iso8601", "level_m_od"])
        for stamp, lev in zip(series.to_timestamps(), series.levels):
            w.writerow([stamp, repr(float(lev))])


@dataclass
class HydraulicBC:
    """River level history plus fixed land-side heads per stratum."""

    river: TideSeries
    land_heads: dict[str, float]
    gamma_w: float = GAMMA_W

    def __post_init__(self):
        bad = {k: v for k, v in self.land_heads.items() if not np.isfinite(v)}
        if bad:
            raise ValueError(f"land heads must be finite: {bad}")

    def river_level(self, t: float) -> float:
        return self.river.level(t)

    def frozen(self, t: float) -> "HydraulicBC":
        return HydraulicBC(TideSeries.constant(self.river_level(t)), dict(self.land_heads),
                           self.gamma_w)


# -- fields -------------------------------------------------------------------

@dataclass
class PressureField:
    time: float
    p: np.ndarray                       # nodal pressure, kPa
    saturation: np.ndarray              # per cell, at the centroid
    kr: np.ndarray
    flux: np.ndarray                    # (cells, 2), m/day
    info: dict = field(default_factory=dict)


@dataclass
class DirichletSet:
    nodes: np.ndarray
    values: np.ndarray


def _hydrostatic(level, y, gamma_w):
    return np.where(y <= level, gamma_w * (level - y), 0.0)


class SeepageModel:
    """Discrete Richards operator on one mesh and material set."""

    def __init__(self, mesh: Mesh, materials: dict[str, SoilMaterial] | list,
                 gamma_w: float = GAMMA_W, order: int = 2, strict_seepage_face: bool = False,
                 porosity_saturated: float = 0.4):
        self.mesh = mesh
        mats = materials if isinstance(materials, dict) else {m.name: m for m in materials}
        missing = [s for s in mesh.strata if s not in mats]
        if missing:
            raise ValueError(f"no material for strata {missing}")
        self.materials = [mats[s] for s in mesh.strata]
        self.gamma_w = gamma_w
        self.strict_seepage_face = strict_seepage_face
        self.porosity_saturated = porosity_saturated
        self.space = lagrange_space(mesh, order)
        self.geo = element_geometry(self.space, QUAD6)
        self.asm = Assembler(self.space.cells, self.space.n)
        self.stratum = np.asarray(mesh.stratum)
        self._groups = [np.nonzero(self.stratum == k)[0] for k in range(len(self.materials))]
        self.k_s = np.array([m.hydraulic_conductivity for m in self.materials])[self.stratum] / SECONDS_PER_DAY
        self.storage = np.array([m.storage for m in self.materials])[self.stratum]
        # Dirichlet faces keep the corners they share with no-flux edges
        self.river_nodes = self.space.boundary_nodes(RIVER_FACE, yield_to=(IMPERVIOUS,))
        self.land_nodes = self.space.boundary_nodes(LAND_FACE, yield_to=(IMPERVIOUS,))
        self._land_stratum = self._node_strata(self.land_nodes, LAND_FACE)
        geo = self.geo
        # constant parts of the element operators
        self._NN = np.einsum("qa,qb->qab", geo.N, geo.N)                  # (q,k,k)
        self._DD = np.einsum("mqak,mqbk->mqab", geo.dN, geo.dN)           # (M,q,k,k)
        self.volume = float(geo.w.sum())
        self._lu_cache = None

    # -- closures -------------------------------------------------------------
    def _node_strata(self, nodes, tag):
        """Stratum of the boundary element owning each boundary node."""
        sp_ = self.space
        lookup = {}
        for (a, b), t in zip(sp_.mesh.boundary_edges, sp_.mesh.boundary_tags):
            if t != tag:
                continue
            edge = (min(a, b), max(a, b))
            # owning triangle: the one containing both vertices
            lookup.setdefault(int(a), edge)
            lookup.setdefault(int(b), edge)
            mid = sp_.edge_mid[edge]
            if mid >= 0:
                lookup[int(mid)] = edge
        tri_of_edge = {}
        for i, tri in enumerate(sp_.mesh.triangles):
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                tri_of_edge.setdefault((min(a, b), max(a, b)), i)
        return np.array([self.stratum[tri_of_edge[lookup[int(n)]]] for n in nodes], dtype=int)

    def closures(self, pq: np.ndarray):
        """theta, Se, C, kr at quadrature-point pressures (M, q)."""
        theta = np.empty_like(pq)
        se = np.empty_like(pq)
        cap = np.empty_like(pq)
        kr = np.empty_like(pq)
        for k, idx in enumerate(self._groups):
            mat = self.materials[k]
            v = pq[idx]
            theta[idx] = water_content(v, mat.vg, self.gamma_w, self.porosity_saturated)
            se[idx] = effective_saturation(v, mat.vg, self.gamma_w)
            cap[idx] = moisture_capacity(v, mat.vg, self.gamma_w)
            kr[idx] = relative_permeability_p(v, mat.vg, self.gamma_w)
        return theta, se, cap, kr

    def at_qp(self, p: np.ndarray) -> np.ndarray:
        return np.einsum("qa,ma->mq", self.geo.N, p[self.space.cells])

    # -- boundary conditions ---------------------------------------------------
    def apply_bcs(self, bc: HydraulicBC, t: float) -> DirichletSet:
        """Dirichlet nodes and values at time ``t``."""
        level = bc.river_level(t)
        y = self.space.nodes[:, 1]
        rn = self.river_nodes
        vals_r = _hydrostatic(level, y[rn], bc.gamma_w)
        names = self.mesh.strata
        heads = np.array([bc.land_heads[names[s]] for s in self._land_stratum], dtype=float)
        ln = self.land_nodes
        vals_l = _hydrostatic(heads, y[ln], bc.gamma_w)
        nodes = np.concatenate([rn, ln])
        vals = np.concatenate([vals_r, vals_l])
        nodes, first = np.unique(nodes, return_index=True)
        return DirichletSet(nodes, vals[first])

    def _strict_face(self, dset: DirichletSet, bc: HydraulicBC, t: float, p: np.ndarray,
                     reaction: np.ndarray | None, active: np.ndarray | None = None,
                     frozen: bool = False) -> tuple[DirichletSet, np.ndarray]:
        """Seepage-face variant: dry river-face nodes keep p = 0 only where
        water leaves the domain.

        ``active`` is the previous pass's mask over ``dset.nodes``.  An active
        dry node is released when its reaction turns to inflow; a released
        node returns once its pressure becomes positive.  With ``frozen`` the
        mask is reused unchanged so that Picard can settle.
        """
        level = bc.river_level(t)
        y = self.space.nodes[dset.nodes, 1]
        dry = (y > level) & np.isin(dset.nodes, self.river_nodes)
        if active is None:
            active = np.ones(len(dset.nodes), dtype=bool)
        elif not frozen:
            out = reaction[dset.nodes] <= 0 if reaction is not None else active
            active = np.where(active, out, p[dset.nodes] > 0)
        keep = ~dry | active
        return DirichletSet(dset.nodes[keep], dset.values[keep]), active

    # -- operators -------------------------------------------------------------
    def _conductivity_terms(self, kr):
        geo = self.geo
        coef = geo.w * (self.k_s[:, None] * kr) / self.gamma_w           # (M,q)
        A = np.einsum("mq,mqab->mab", coef, self._DD)
        g = np.einsum("mq,mqa->ma", coef * self.gamma_w, geo.dN[..., 1])
        return A, g

    def flux_cells(self, p: np.ndarray):
        """Darcy flux at cell centroids (m/day) plus centroid Se and kr."""
        from .fem import p1_dshape, p2_dshape

        ctr = np.array([1 / 3]), np.array([1 / 3])
        dref = (p2_dshape if self.space.order == 2 else p1_dshape)(*ctr)[0]
        corners = self.space.nodes[self.space.cells[:, :3]]
        J = np.stack([corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]], axis=2)
        inv = np.linalg.inv(J)
        dN = np.einsum("aj,mjk->mak", dref, inv)
        grad = np.einsum("mak,ma->mk", dN, p[self.space.cells])
        if self.space.order == 2:
            from .fem import p2_shape
            Nc = p2_shape(ctr[0], ctr[1])[0]
        else:
            Nc = np.full(3, 1 / 3)
        pc = p[self.space.cells] @ Nc
        _, se, _, kr = self.closures(pc[:, None])
        se, kr = se[:, 0], kr[:, 0]
        kday = self.k_s * SECONDS_PER_DAY * kr / self.gamma_w
        q = -kday[:, None] * (grad + np.array([0.0, self.gamma_w]))
        return q, se, kr

    def make_field(self, t: float, p: np.ndarray, **info) -> PressureField:
        q, se, kr = self.flux_cells(p)
        return PressureField(time=t, p=p.copy(), saturation=se, kr=kr, flux=q, info=info)

    def water_storage(self, p: np.ndarray) -> float:
        theta, *_ = self.closures(self.at_qp(p))
        return float((self.geo.w * theta).sum())

    # -- solves ----------------------------------------------------------------
    def _solve(self, K: sp.csr_matrix, rhs: np.ndarray, dset: DirichletSet) -> np.ndarray:
        """Solve K dx = rhs with dx fixed at the Dirichlet nodes."""
        n = K.shape[0]
        free = np.ones(n, dtype=bool)
        free[dset.nodes] = False
        dx = np.zeros(n)
        dx[dset.nodes] = dset.values
        Kf = K[free]
        b = rhs[free] - Kf[:, dset.nodes] @ dset.values
        dx[free] = splu(Kf[:, free].tocsc()).solve(b)
        return dx

    def initial_guess(self, bc: HydraulicBC, t: float = 0.0) -> np.ndarray:
        """-5 kPa above a straight phreatic line between the river level and
        the land-side head, hydrostatic below."""
        x, y = self.space.nodes[:, 0], self.space.nodes[:, 1]
        level = bc.river_level(t)
        xr = x[self.river_nodes].mean() if len(self.river_nodes) else x.min()
        xl = x[self.land_nodes].mean() if len(self.land_nodes) else x.max()
        hl = max(bc.land_heads.values()) if bc.land_heads else level
        if abs(xl - xr) < 1e-12:
            wt = np.full_like(x, level)
        else:
            s = np.clip((x - xr) / (xl - xr), 0.0, 1.0)
            wt = level + s * (hl - level)
        return np.where(y <= wt, bc.gamma_w * (wt - y), INITIAL_SUCTION)

    def steady_state(self, bc: HydraulicBC, t: float = 0.0, p0: np.ndarray | None = None,
                     tol: float = 1e-8, max_iter: int = 200, relax: float = 1.0) -> PressureField:
        """Stationary solution by Picard iteration on the conductivity.

        When plain Picard stalls it is retried with half steps from the same
        start, and then pseudo-transient continuation takes over.
        """
        if bc.gamma_w != self.gamma_w:
            raise ValueError("boundary and model unit weights differ")
        p = self.initial_guess(bc, t) if p0 is None else np.array(p0, dtype=float)
        base = self.apply_bcs(bc, t)
        p[base.nodes] = base.values
        history = []
        field_, last = self._picard(bc, t, base, p, tol, max_iter, relax, history)
        if field_ is None and relax > 0.5:
            log.info("steady Picard stalled (res %.2e); retrying with relaxation 0.5", history[-1])
            field_, last = self._picard(bc, t, base, p, tol, 2 * max_iter, 0.5, history)
        if field_ is not None:
            return field_
        log.info("steady Picard stalled (res %.2e); pseudo-transient continuation", history[-1])
        return self._pseudo_transient(bc, t, last, tol, history)

    def _picard(self, bc, t, base, p, tol, max_iter, relax, history):
        p = p.copy()
        active = None
        for it in range(max_iter):
            _, _, _, kr = self.closures(self.at_qp(p))
            Ae, ge = self._conductivity_terms(kr)
            A = self.asm.matrix(Ae)
            g = self.asm.vector(ge)
            r = A @ p + g
            dset = base
            if self.strict_seepage_face:
                dset, active = self._strict_face(base, bc, t, p, r, active,
                                                 frozen=it >= ACTIVE_SET_PASSES)
            free = np.ones(self.space.n, dtype=bool)
            free[dset.nodes] = False
            scale = np.abs(g).sum() + np.abs(A @ p).sum() + 1e-300
            res = np.linalg.norm(r[free], 1) / scale
            history.append(res)
            if res < tol and (not self.strict_seepage_face or it > 0):
                return self.make_field(t, p, iterations=len(history) - 1, residual=res), p
            if not np.isfinite(res):
                break
            step = DirichletSet(dset.nodes, dset.values - p[dset.nodes])
            dp = self._solve(A, -r, step)
            p = p + (relax * dp if relax != 1.0 else dp)
        return None, p

    def _pseudo_transient(self, bc, t, p, tol, history):
        frozen = bc.frozen(t)
        state = self.make_field(t, p)
        dt = 3600.0
        for _ in range(400):
            try:
                state = self.step(state, dt, frozen, t, time_shift=False)
            except NonlinearDivergence:
                dt *= 0.5
                continue
            dt = min(dt * 2.0, 1e9)
            res = self.stationary_residual(state.p, frozen, t)
            history.append(res)
            if res < tol:
                state.info.update(residual=res, iterations=len(history))
                state.time = t
                return state
        raise NonlinearDivergence("steady state did not converge", history)

    def stationary_residual(self, p: np.ndarray, bc: HydraulicBC, t: float) -> float:
        dset = self.apply_bcs(bc, t)
        _, _, _, kr = self.closures(self.at_qp(p))
        Ae, ge = self._conductivity_terms(kr)
        A = self.asm.matrix(Ae)
        g = self.asm.vector(ge)
        r = A @ p + g
        free = np.ones(self.space.n, dtype=bool)
        free[dset.nodes] = False
        if self.strict_seepage_face:
            # a dry face node may hold p = 0 only while it drains
            y = self.space.nodes[dset.nodes, 1]
            dry = (y > bc.river_level(t)) & np.isin(dset.nodes, self.river_nodes)
            free[dset.nodes[dry & (r[dset.nodes] > 0)]] = True
        return float(np.linalg.norm(r[free], 1) / (np.abs(g).sum() + np.abs(A @ p).sum() + 1e-300))

    def step(self, state: PressureField, dt: float, bc: HydraulicBC, t_next: float,
             tol: float = 1e-4, max_iter: int = 50, time_shift: bool = True) -> PressureField:
        """One backward-Euler step to ``t_next``.

        The returned field's ``info`` holds the iteration count and the mass
        balance: storage change, net boundary inflow (both m^3 per metre run)
        and their mismatch.
        """
        if not dt > 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        geo = self.geo
        pn = state.p
        pqn = self.at_qp(pn)
        theta_n, *_ = self.closures(pqn)
        base = self.apply_bcs(bc, t_next)
        p = pn.copy()
        p[base.nodes] = base.values
        history = []
        active = None
        free = np.ones(self.space.n, dtype=bool)
        for it in range(1, max_iter + 1):
            pq = self.at_qp(p)
            theta, se, cap, kr = self.closures(pq)
            Ae, ge = self._conductivity_terms(kr)
            store = se * self.storage[:, None]
            mcoef = geo.w * (cap + store) / dt
            Me = np.einsum("mq,qab->mab", mcoef, self._NN)
            rq = geo.w * ((theta - theta_n) + store * (pq - pqn)) / dt
            re = np.einsum("mq,qa->ma", rq, geo.N) + np.einsum("mab,mb->ma", Ae, p[self.space.cells]) + ge
            r = self.asm.vector(re)
            K = self.asm.matrix(Me + Ae)
            dset = base
            if self.strict_seepage_face:
                dset, active = self._strict_face(base, bc, t_next, p, r, active,
                                                 frozen=it > ACTIVE_SET_PASSES)
            step = DirichletSet(dset.nodes, dset.values - p[dset.nodes])
            if not np.all(np.isfinite(r)):
                raise NonlinearDivergence("non-finite residual", history)
            dp = self._solve(K, -r, step)
            if it > DAMPING_AFTER:
                dp *= 0.5               # break Picard cycles near p = 0
            p = p + dp
            change = float(np.max(np.abs(dp)))
            history.append(change)
            if change < tol:
                free[:] = True
                free[dset.nodes] = False
                balance = self._balance(p, pn, theta_n, pqn, dt, dset)
                if abs(balance["error"]) <= 1e-7 * balance["water"] or it == max_iter:
                    break
        else:
            raise NonlinearDivergence(
                f"Picard did not converge in {max_iter} iterations (last change {history[-1]:.3e} kPa)",
                history)
        if history[-1] >= tol:
            raise NonlinearDivergence("Picard did not converge", history)
        return self.make_field(t_next if time_shift else state.time, p, iterations=len(history),
                               history=history, **balance)

    def _balance(self, p, pn, theta_n, pqn, dt, dset):
        """Water balance of a converged step, from the nodal residual."""
        geo = self.geo
        pq = self.at_qp(p)
        theta, se, _, kr = self.closures(pq)
        storage = float((geo.w * ((theta - theta_n) + se * self.storage[:, None] * (pq - pqn))).sum())
        Ae, ge = self._conductivity_terms(kr)
        rq = geo.w * ((theta - theta_n) + se * self.storage[:, None] * (pq - pqn)) / dt
        re = np.einsum("mq,qa->ma", rq, geo.N) + np.einsum("mab,mb->ma", Ae, p[self.space.cells]) + ge
        r = self.asm.vector(re)
        inflow = float(r[dset.nodes].sum()) * dt       # Dirichlet reactions supply the water
        water = float((geo.w * theta).sum())
        return {"storage_change": storage, "boundary_inflow": inflow,
                "error": storage - inflow, "water": water}

    # -- tidal driver ----------------------------------------------------------
    def sensor_locator(self, sensors: dict[str, tuple[float, float]]):
        out = {}
        for sid, (x, y) in sensors.items():
            tri, N = self.space.shape_at(x, y)
            out[sid] = (self.space.cells[tri], N, float(y))
        return out

    def run_tidal(self, bc: HydraulicBC, t0: float, t1: float, dt: float = 600.0,
                  sensors: dict[str, tuple[float, float]] | None = None,
                  initial: PressureField | None = None, snapshot_every: int = 0,
                  callback=None) -> "TidalRun":
        """March from ``t0`` to ``t1`` with step ``dt``, halving on divergence
        down to dt/64.  Sensor values are sampled at every accepted step."""
        if not t1 > t0:
            raise ValueError("t1 must exceed t0")
        if not dt > 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        bc.river_level(t0)
        bc.river_level(t1)
        state = initial if initial is not None else self.steady_state(bc, t0)
        state.time = t0
        loc = self.sensor_locator(sensors or {})
        run = TidalRun(sensor_ids=list(loc))
        run.record(state, loc, self.gamma_w)
        run.snapshots.append(state)
        dt_min = dt / 64.0
        t = t0
        n_steps = 0
        while t < t1 - 1e-9 * dt:
            target = min(t + dt, t1)
            h = target - t
            while True:
                try:
                    state = self._advance(state, t, target, h, bc)
                    break
                except NonlinearDivergence as exc:
                    h *= 0.5
                    if h < dt_min * (1 - 1e-12):
                        raise StepFailure(f"step failed at t={t} even with dt={2 * h}") from exc
                    log.info("halving dt to %g s at t=%g", h, t)
            t = target
            n_steps += 1
            run.max_balance_error = max(run.max_balance_error, state.info.get("rel_error", 0.0))
            run.record(state, loc, self.gamma_w)
            if snapshot_every and n_steps % snapshot_every == 0:
                run.snapshots.append(state)
            if callback is not None:
                callback(state)
        if run.snapshots[-1] is not state:
            run.snapshots.append(state)
        run.final = state
        return run

    def _advance(self, state, t, target, h, bc):
        """Cover [t, target] with substeps of length h."""
        n = max(1, int(round((target - t) / h)))
        cur = state
        for k in range(1, n + 1):
            tn = t + (target - t) * k / n
            cur = self.step(cur, (target - t) / n, bc, tn)
            cur.info["rel_error"] = abs(cur.info["error"]) / max(cur.info["water"], 1e-300)
        return cur


@dataclass
class TidalRun:
    sensor_ids: list
    times: list = field(default_factory=list)
    values: dict = field(default_factory=dict)     # id -> list of p (kPa)
    snapshots: list = field(default_factory=list)
    final: PressureField | None = None
    max_balance_error: float = 0.0
    _elev: dict = field(default_factory=dict)

    def record(self, state: PressureField, loc, gamma_w):
        self.times.append(state.time)
        for sid, (nodes, N, y) in loc.items():
            self.values.setdefault(sid, []).append(float(N @ state.p[nodes]))
            self._elev[sid] = (y, gamma_w)

    def series(self, sid: str, unit: str = "kPa") -> np.ndarray:
        v = np.asarray(self.values[sid])
        if unit == "kPa":
            return v
        if unit == "mbar":
            return v * 10.0
        if unit == "head":
            y, gw = self._elev[sid]
            return y + v / gw
        raise ValueError(f"unknown unit {unit!r}")

    def rows(self):
        """(time, id, p_kPa, p_mbar, head_m) records in time order."""
        for i, t in enumerate(self.times):
            for sid in self.sensor_ids:
                p = self.values[sid][i]
                y, gw = self._elev[sid]
                yield t, sid, p, p * 10.0, y + p / gw

    def write_csv(self, path, epoch: datetime | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "point_id", "p_kPa", "p_mbar", "head_m"])
            for t, sid, p, pm, hd in self.rows():
                stamp = (datetime.fromtimestamp(epoch.timestamp() + t, tz=timezone.utc).isoformat()
                         .replace("+00:00", "Z") if epoch else f"{t:.17g}")
                w.writerow([stamp, sid, f"{p:.17g}", f"{pm:.17g}", f"{hd:.17g}"])


def write_vtk(path, space, point_data: dict, cell_data: dict, title: str = "levee") -> None:
    """Legacy ASCII VTK unstructured grid (quadratic triangles when P2)."""
    nodes = space.nodes
    cells = space.cells
    k = cells.shape[1]
    vtk_type = 22 if k == 6 else 5
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(nodes)} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in nodes]
    lines.append(f"CELLS {len(cells)} {len(cells) * (k + 1)}")
    lines += [f"{k} " + " ".join(map(str, c)) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(vtk_type)] * len(cells)

    def block(name, arr):
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 2:
            vec = np.hstack([arr, np.zeros((len(arr), 3 - arr.shape[1]))]) if arr.shape[1] < 3 else arr
            return [f"VECTORS {name} double"] + [" ".join(f"{v:.17g}" for v in row) for row in vec]
        return [f"SCALARS {name} double 1", "LOOKUP_TABLE default"] + [f"{v:.17g}" for v in arr]

    if point_data:
        lines.append(f"POINT_DATA {len(nodes)}")
        for name, arr in point_data.items():
            lines += block(name, arr)
    if cell_data:
        lines.append(f"CELL_DATA {len(cells)}")
        for name, arr in cell_data.items():
            lines += block(name, arr)
    Path(path).write_text("\n".join(lines) + "\n")


def write_pressure_vtk(path, model: SeepageModel, state: PressureField) -> None:
    write_vtk(path, model.space, {"pressure_kPa": state.p},
              {"saturation": state.saturation, "flux_x": state.flux[:, 0],
               "flux_y": state.flux[:, 1]}, title=f"pressure t={state.time:.17g}")
