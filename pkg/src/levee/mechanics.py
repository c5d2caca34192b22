"""Plane-strain elastic perfectly plastic FEM with a Drucker-Prager yield
surface and associated flow.

Stress and strain use Mandel vectors [xx, yy, zz, sqrt(2) xy]; tension is
positive.  The unknowns solved for are effective stresses; pore pressure
enters as a volume load through the effective stress principle
sigma = sigma_eff - p I, with suction ignored (p clamped at zero).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fem import QUAD3, Assembler, element_geometry, lagrange_space
from .materials import GAMMA_W, SoilMaterial, drucker_prager_params, scale_strength
from .mesh import RIVER_FACE, Mesh

log = logging.getLogger(__name__)

SQ2 = np.sqrt(2.0)
M_VEC = np.array([1.0, 1.0, 1.0, 0.0])
I_DEV = np.eye(4) - np.outer(M_VEC, M_VEC) / 3.0
APEX_STIFFNESS = 1e-6


class NonConvergence(RuntimeError):
    def __init__(self, message, increment=None, history=()):
        super().__init__(message)
        self.increment = increment
        self.history = list(history)


# -- constitutive update -------------------------------------------------------

def invariants(stress):
    """(I1, sqrt(J2), deviator) for Mandel stress arrays (..., 4)."""
    i1 = stress[..., :3].sum(-1)
    s = stress - i1[..., None] / 3.0 * M_VEC
    return i1, np.sqrt(0.5 * (s * s).sum(-1)), s


def yield_function(stress, alpha, k):
    i1, q, _ = invariants(stress)
    return alpha * i1 + q - k


def elastic_matrix(K, G):
    """Isotropic stiffness in Mandel form, broadcast over K, G arrays."""
    K = np.asarray(K, dtype=float)[..., None, None]
    G = np.asarray(G, dtype=float)[..., None, None]
    return K * np.outer(M_VEC, M_VEC) + 2.0 * G * I_DEV


@dataclass
class ReturnResult:
    stress: np.ndarray
    dplastic: np.ndarray
    dlambda: np.ndarray
    tangent: np.ndarray | None
    apex: np.ndarray


def return_map(trial, alpha, k, K, G, tangent: bool = True) -> ReturnResult:
    """Closest-point projection onto F = alpha I1 + sqrt(J2) - k.

    Inputs broadcast over leading dimensions.  Returns the admissible
    stress, the plastic strain increment, the multiplier and (optionally)
    the consistent tangent.  States past the cone tip return to the apex
    I1 = k/alpha.
    """
    trial = np.asarray(trial, dtype=float)
    shape = trial.shape[:-1]
    trial = trial.reshape(-1, 4)
    P = len(trial)

    def flat(v):
        return np.broadcast_to(np.asarray(v, dtype=float), shape).reshape(P)

    alpha, k, K, G = flat(alpha), flat(k), flat(K), flat(G)
    i1, q, s = invariants(trial)
    f = alpha * i1 + q - k
    plastic = f > 0.0
    denom = 9.0 * K * alpha ** 2 + G
    dl = np.where(plastic, f / denom, 0.0)
    apex = plastic & (q - G * dl < 0.0) & (alpha > 0.0)
    cone = plastic & ~apex
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(cone, 1.0 - G * dl / q, 1.0)
        i1_new = np.where(cone, i1 - 9.0 * K * alpha * dl, i1)
        i1_new = np.where(apex, k / np.where(alpha > 0, alpha, 1.0), i1_new)
    scale = np.where(apex, 0.0, scale)
    s_new = s * scale[:, None]
    stress = np.where(plastic[:, None], s_new + (i1_new / 3.0)[:, None] * M_VEC, trial)
    dp = (s - s_new) / (2.0 * G[:, None]) + ((i1 - i1_new) / (9.0 * K))[:, None] * M_VEC
    dl = np.where(apex, np.sqrt(np.maximum((dp * dp).sum(-1), 0.0)), dl)
    Dt = None
    if tangent:
        Dt = elastic_matrix(K, G).copy()
        if np.any(cone):
            Kc, Gc, ac, qc, dlc = K[cone], G[cone], alpha[cone], q[cone], dl[cone]
            N = s[cone] / (SQ2 * qc)[:, None]
            a = 3.0 * (Kc * ac)[:, None] * M_VEC + SQ2 * Gc[:, None] * N
            corr = (2.0 * Gc * Gc * dlc / qc)[:, None, None] * (I_DEV - N[:, :, None] * N[:, None, :])
            corr += a[:, :, None] * a[:, None, :] / denom[cone][:, None, None]
            Dt[cone] -= corr
        if np.any(apex):
            Dt[apex] *= APEX_STIFFNESS
        Dt = Dt.reshape(shape + (4, 4))
    stress, dp, dl, apex = (stress.reshape(shape + (4,)), dp.reshape(shape + (4,)),
                            dl.reshape(shape), apex.reshape(shape))
    return ReturnResult(stress=stress, dplastic=dp, dlambda=dl, tangent=Dt, apex=apex)


# -- state --------------------------------------------------------------------

@dataclass
class StressState:
    u: np.ndarray               # (2n,) displacements, interleaved ux, uy
    stress: np.ndarray          # (M, q, 4) effective stress, Mandel
    plastic: np.ndarray         # (M, q, 4) accumulated plastic strain
    eqps: np.ndarray            # (M, q) equivalent plastic strain
    stage: str = ""
    meta: dict = field(default_factory=dict)

    def copy(self) -> "StressState":
        return StressState(self.u.copy(), self.stress.copy(), self.plastic.copy(),
                           self.eqps.copy(), self.stage, dict(self.meta))

    def displacement(self) -> np.ndarray:
        return self.u.reshape(-1, 2)

    def cell_eqps(self) -> np.ndarray:
        return self.eqps.mean(axis=1)


@dataclass
class Strength:
    alpha: np.ndarray      # per element
    k: np.ndarray


class MechanicsModel:
    """Assembled plane-strain problem on one mesh."""

    def __init__(self, mesh: Mesh, materials: dict[str, SoilMaterial] | list,
                 gamma_w: float = GAMMA_W):
        self.mesh = mesh
        mats = materials if isinstance(materials, dict) else {m.name: m for m in materials}
        missing = [s for s in mesh.strata if s not in mats]
        if missing:
            raise ValueError(f"no material for strata {missing}")
        self.materials = [mats[s] for s in mesh.strata]
        self.gamma_w = gamma_w
        self.space = lagrange_space(mesh, 2)
        self.geo = element_geometry(self.space, QUAD3)
        self.stratum = np.asarray(mesh.stratum)
        n = self.space.n
        self.ndof = 2 * n
        cells = self.space.cells
        self.edofs = np.stack([2 * cells, 2 * cells + 1], axis=-1).reshape(len(cells), -1)
        self.asm = Assembler(self.edofs, self.ndof)
        self.B = self._strain_operator()                   # (M, q, 4, 12)
        self.fixed = self._fixed_dofs()
        self.free = np.setdiff1d(np.arange(self.ndof), self.fixed)
        self.river_edges = self.space.boundary_edges3(RIVER_FACE)

    # -- discretisation ------------------------------------------------------
    def _strain_operator(self):
        dN = self.geo.dN
        M, q, k, _ = dN.shape
        B = np.zeros((M, q, 4, 2 * k))
        B[:, :, 0, 0::2] = dN[..., 0]
        B[:, :, 1, 1::2] = dN[..., 1]
        B[:, :, 3, 0::2] = dN[..., 1] / SQ2
        B[:, :, 3, 1::2] = dN[..., 0] / SQ2
        return B

    def _fixed_dofs(self):
        """Rollers on the outermost vertical sides, full fixity on the base."""
        nodes = self.space.nodes
        xmin, ymin = nodes.min(axis=0)
        xmax = nodes[:, 0].max()
        span = max(xmax - xmin, 1.0)
        tol = 1e-9 * span
        fixed = set()
        for (a, b) in self.mesh.boundary_edges:
            mid = self.space.edge_mid[(min(a, b), max(a, b))]
            ids = (int(a), int(b), int(mid))
            xs, ys = nodes[list(ids), 0], nodes[list(ids), 1]
            if np.all(np.abs(ys - ymin) < tol):
                for i in ids:
                    fixed.update((2 * i, 2 * i + 1))
            elif np.all(np.abs(xs - xmin) < tol) or np.all(np.abs(xs - xmax) < tol):
                for i in ids:
                    fixed.add(2 * i)
        return np.array(sorted(fixed), dtype=np.int64)

    def elastic_arrays(self, undrained: bool):
        E, nu = np.array([m.elastic_moduli(undrained) for m in self.materials]).T
        K = E / (3.0 * (1.0 - 2.0 * nu))
        G = E / (2.0 * (1.0 + nu))
        return K[self.stratum], G[self.stratum]

    def strength(self, factor: float = 1.0) -> Strength:
        mats = [scale_strength(m, factor) if factor != 1.0 else m for m in self.materials]
        dp = [drucker_prager_params(m.cohesion, m.friction_angle) for m in mats]
        return Strength(alpha=np.array([d.alpha_dp for d in dp])[self.stratum],
                        k=np.array([d.f_dp for d in dp])[self.stratum])

    def pressure_at_qp(self, p_nodal: np.ndarray) -> np.ndarray:
        return np.einsum("qa,ma->mq", self.geo.N, p_nodal[self.space.cells])

    # -- loads ---------------------------------------------------------------
    def gravity_load(self, p_nodal: np.ndarray | None) -> np.ndarray:
        """Body force from unit weights: wet where p >= 0, dry above."""
        wet = np.array([m.gamma_wet for m in self.materials])[self.stratum][:, None]
        dry = np.array([m.gamma_dry for m in self.materials])[self.stratum][:, None]
        if p_nodal is None:
            gam = np.broadcast_to(wet, self.geo.w.shape)
        else:
            gam = np.where(self.pressure_at_qp(p_nodal) >= 0.0, wet, dry)
        fe = np.zeros((len(self.space.cells), 12))
        fe[:, 1::2] = -np.einsum("mq,qa->ma", self.geo.w * gam, self.geo.N)
        return self.asm.vector(fe)

    def pore_load(self, p_nodal: np.ndarray | None) -> np.ndarray:
        """Equivalent nodal force of the (suction-free) pore pressure field."""
        if p_nodal is None:
            return np.zeros(self.ndof)
        pq = np.maximum(self.pressure_at_qp(p_nodal), 0.0)
        fe = np.einsum("mq,mqia,i->ma", self.geo.w * pq, self.B, M_VEC)
        return self.asm.vector(fe)

    def face_traction(self, level: float | None) -> np.ndarray:
        """Hydrostatic water pressure on the river face for river ``level``."""
        f = np.zeros(self.ndof)
        if level is None or len(self.river_edges) == 0:
            return f
        nodes = self.space.nodes
        g, w = np.polynomial.legendre.leggauss(3)
        for a, b, mid in self.river_edges:
            pa, pb = nodes[a], nodes[b]
            d = pb - pa
            length = np.hypot(*d)
            normal = np.array([d[1], -d[0]]) / length
            ya, yb = pa[1], pb[1]
            cuts = [0.0, 1.0]
            if (ya - level) * (yb - level) < 0:
                cuts.insert(1, (level - ya) / (yb - ya))
            for s0, s1 in zip(cuts[:-1], cuts[1:]):
                s = s0 + (s1 - s0) * (g + 1) / 2
                ws = w * (s1 - s0) / 2 * length
                y = ya + s * (yb - ya)
                pw = self.gamma_w * np.maximum(level - y, 0.0)
                shape = np.stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)])
                for node, nv in zip((a, b, mid), shape):
                    val = -(ws * pw * nv).sum()
                    f[2 * node] += val * normal[0]
                    f[2 * node + 1] += val * normal[1]
        return f

    def external_load(self, p_nodal, level, gravity_p=None) -> np.ndarray:
        gp = p_nodal if gravity_p is None else gravity_p
        return self.gravity_load(gp) + self.pore_load(p_nodal) + self.face_traction(level)

    # -- element kernels -------------------------------------------------------
    def internal_force(self, stress) -> np.ndarray:
        fe = np.einsum("mq,mqia,mqi->ma", self.geo.w, self.B, stress)
        return self.asm.vector(fe)

    def tangent_matrix(self, Dt) -> sp.csr_matrix:
        ke = np.einsum("mq,mqia,mqij,mqjb->mab", self.geo.w, self.B, Dt, self.B, optimize=True)
        return self.asm.matrix(ke)

    def strain(self, u) -> np.ndarray:
        return np.einsum("mqia,ma->mqi", self.B, u[self.edofs])

    def _solve_free(self, K, r):
        Kf = K[self.free][:, self.free].tocsc()
        out = np.zeros(self.ndof)
        out[self.free] = splu(Kf).solve(r[self.free])
        return out

    def elastic_solution(self, load: np.ndarray, undrained: bool = False) -> np.ndarray:
        K, G = self.elastic_arrays(undrained)
        D = np.broadcast_to(elastic_matrix(K, G)[:, None], self.geo.w.shape + (4, 4))
        return self._solve_free(self.tangent_matrix(D), load)

    def zero_state(self) -> StressState:
        M, q = self.geo.w.shape
        return StressState(np.zeros(self.ndof), np.zeros((M, q, 4)), np.zeros((M, q, 4)),
                           np.zeros((M, q)))

    # -- incremental driver -----------------------------------------------------
    def solve_path(self, state: StressState, f_start: np.ndarray, f_end: np.ndarray,
                   strength_start: Strength, strength_end: Strength, undrained: bool,
                   n_steps: int, tol: float = 1e-8, max_iter: int = 200, max_depth: int = 4,
                   diverge_norm: float | None = None, stage: str = "") -> StressState:
        """Follow a linear path in load and strength from the given state.

        Each of ``n_steps`` increments is solved by Newton with the consistent
        tangent; a failing increment is split in two, at most ``max_depth``
        times, before NonConvergence is raised.
        """
        K, G = self.elastic_arrays(undrained)
        Kq = np.broadcast_to(K[:, None], self.geo.w.shape)
        Gq = np.broadcast_to(G[:, None], self.geo.w.shape)
        D = elastic_matrix(Kq, Gq)
        ref = max(np.linalg.norm(f_end[self.free]), np.linalg.norm(f_start[self.free]), 1e-12)
        log_iters = []

        def params(s):
            a = strength_start.alpha + s * (strength_end.alpha - strength_start.alpha)
            k = strength_start.k + s * (strength_end.k - strength_start.k)
            return np.broadcast_to(a[:, None], Kq.shape), np.broadcast_to(k[:, None], Kq.shape)

        def newton(st: StressState, s1: float):
            f = f_start + s1 * (f_end - f_start)
            alpha, k = params(s1)
            du = np.zeros(self.ndof)
            hist = []
            for it in range(max_iter + 1):
                trial = st.stress + np.einsum("mqij,mqj->mqi", D, self.strain(du))
                rm = return_map(trial, alpha, k, Kq, Gq, tangent=True)
                r = f - self.internal_force(rm.stress)
                res = np.linalg.norm(r[self.free]) / ref
                hist.append(res)
                if not np.isfinite(res):
                    break
                if res <= tol:
                    new = StressState(st.u + du, rm.stress, st.plastic + rm.dplastic,
                                      st.eqps + np.sqrt(2.0 / 3.0 * (rm.dplastic ** 2).sum(-1)),
                                      stage, dict(st.meta))
                    return new, it, hist
                if it == max_iter:
                    break
                delta = self._solve_free(self.tangent_matrix(rm.tangent), r)
                du = du + self._line_search(st.stress, D, du, delta, f, alpha, k, Kq, Gq, res * ref)
                if diverge_norm is not None and np.linalg.norm(st.u + du - state.u) > 100.0 * diverge_norm:
                    hist.append(np.inf)
                    break
            return None, len(hist) - 1, hist

        def advance(st, s0, s1, depth):
            new, its, hist = newton(st, s1)
            log_iters.append({"from": s0, "to": s1, "iterations": its, "converged": new is not None})
            if new is not None:
                return new
            if depth >= max_depth:
                raise NonConvergence(f"Newton failed on load step ({s0:.4g}, {s1:.4g}]",
                                     increment=(s0, s1), history=hist)
            mid = 0.5 * (s0 + s1)
            st = advance(st, s0, mid, depth + 1)
            return advance(st, mid, s1, depth + 1)

        cur = state
        try:
            for i in range(n_steps):
                cur = advance(cur, i / n_steps, (i + 1) / n_steps, 0)
        except NonConvergence as exc:
            exc.log = log_iters
            raise
        cur.meta = dict(cur.meta, steps=log_iters, iterations=sum(x["iterations"] for x in log_iters))
        return cur

    def _line_search(self, stress0, D, du, delta, f, alpha, k, Kq, Gq, r0, max_cuts=6):
        """Backtrack on the residual norm; full step when it already helps."""
        eta = 1.0
        for _ in range(max_cuts):
            trial = stress0 + np.einsum("mqij,mqj->mqi", D, self.strain(du + eta * delta))
            sig = return_map(trial, alpha, k, Kq, Gq, tangent=False).stress
            r = np.linalg.norm((f - self.internal_force(sig))[self.free])
            if np.isfinite(r) and r < r0:
                return eta * delta
            eta *= 0.5
        return eta * 2.0 * delta

    # -- the two loading stages -------------------------------------------------
    def gravity_settlement(self, p_nodal: np.ndarray | None, river_level: float | None,
                           n_increments: int = 10, strength_factor: float = 1.0,
                           tol: float = 1e-8) -> StressState:
        """Stage 1: gravity, buoyancy and face water load ramped from zero on a
        stress-free domain with drained moduli."""
        if n_increments < 10:
            raise ValueError("stage 1 needs at least 10 load increments")
        f = self.external_load(p_nodal, river_level)
        st = self.strength(strength_factor)
        try:
            out = self.solve_path(self.zero_state(), np.zeros_like(f), f, st, st, undrained=False,
                                  n_steps=n_increments, tol=tol, stage="gravity")
        except NonConvergence as exc:
            raise NonConvergence(f"gravity stage failed: {exc}", increment=exc.increment,
                                 history=exc.history) from exc
        out.meta.update(p=None if p_nodal is None else p_nodal.copy(), level=river_level,
                        gravity_p=None if p_nodal is None else p_nodal.copy(),
                        strength_factor=strength_factor)
        return out

    def tidal_increment(self, prestress: StressState, p_old, p_new, h_old, h_new,
                        strength_factor: float = 1.0, n_steps: int = 4, tol: float = 1e-8,
                        max_iter: int = 200, undrained: bool = True,
                        base_factor: float | None = None) -> StressState:
        """Stage 2: apply the change in pore pressure and river load, with
        clays switched to undrained moduli, optionally while reducing strength
        from ``base_factor`` (the prestress strength) to ``strength_factor``.
        """
        gp = prestress.meta.get("gravity_p", p_old)
        f_old = self.external_load(p_old, h_old, gravity_p=gp)
        f_new = self.external_load(p_new, h_new, gravity_p=gp)
        bf = prestress.meta.get("strength_factor", 1.0) if base_factor is None else base_factor
        s0 = self.strength(bf)
        s1 = self.strength(strength_factor)
        ref = self._elastic_reference(f_new)
        out = self.solve_path(prestress.copy(), f_old, f_new, s0, s1, undrained=undrained,
                              n_steps=n_steps, tol=tol, max_iter=max_iter,
                              diverge_norm=ref, stage="tidal")
        out.meta.update(p=None if p_new is None else np.array(p_new), level=h_new,
                        gravity_p=gp, strength_factor=strength_factor)
        return out

    def _elastic_reference(self, f):
        key = id(f)
        if getattr(self, "_el_ref_key", None) is None or not np.array_equal(self._el_ref_f, f):
            self._el_ref_f = f.copy()
            self._el_ref = float(np.linalg.norm(self.elastic_solution(f, undrained=True)))
            self._el_ref_key = key
        return self._el_ref

    # -- diagnostics -------------------------------------------------------------
    def equilibrium_error(self, state: StressState, p_nodal, level, gravity_p=None) -> float:
        f = self.external_load(p_nodal, level, gravity_p)
        r = f - self.internal_force(state.stress)
        return float(np.linalg.norm(r[self.free]) / max(np.linalg.norm(f[self.free]), 1e-300))

    def max_yield_ratio(self, state: StressState, strength_factor: float = 1.0) -> float:
        """Largest mobilised strength sqrt(J2) / (k - alpha*I1); 1 on the cone."""
        st = self.strength(strength_factor)
        i1, q, _ = invariants(state.stress)
        cap = st.k[:, None] - st.alpha[:, None] * i1
        ratio = np.where(cap > 0, q / np.where(cap > 0, cap, 1.0), np.inf)
        return float(ratio.max())


def write_mechanics_vtk(path, model: MechanicsModel, state: StressState,
                        pressure: np.ndarray | None = None, scale: float = 1.0) -> None:
    from .seepage import write_vtk

    point = {"displacement": state.displacement() * scale}
    if pressure is not None:
        point["pressure_kPa"] = pressure
    write_vtk(path, model.space, point, {"eff_plastic_strain": state.cell_eqps()},
              title=f"mechanics {state.stage}")
