"""Soil constitutive closures shared by the seepage, mechanics and LEM solvers.

Units throughout: pressure and stress in kPa, unit weights in kN/m^3,
conductivity in m/day, moduli in MPa (as tabulated) and lengths in metres.
Pressures are gauge values, negative in the vadose zone.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

GAMMA_W = 9.81
GAMMA_W_ROUNDED = 10.0
UNDRAINED_NU = 0.49


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class VanGenuchtenParams:
    alpha: float
    n: float
    theta_s: float
    theta_r: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise MaterialError(f"van Genuchten alpha must be > 0, got {self.alpha}")
        if not self.n > 1:
            raise MaterialError(f"van Genuchten n must be > 1, got {self.n}")
        if not 0 <= self.theta_r < self.theta_s <= 1:
            raise MaterialError(
                f"need 0 <= theta_r < theta_s <= 1, got {self.theta_r}, {self.theta_s}")

    @property
    def m(self) -> float:
        return 1.0 - 1.0 / self.n


@dataclass(frozen=True)
class DruckerPragerParams:
    alpha_dp: float
    f_dp: float


@dataclass(frozen=True)
class SoilMaterial:
    """One stratum of the cross-section.

    ``vg`` is None for strata that never desaturate; those get Se = kr = 1
    and zero moisture capacity.  ``density_dry``/``density_wet`` are unit
    weights; when one is missing the other is used everywhere.
    """

    name: str
    hydraulic_conductivity: float
    density_wet: float | None
    E_drained: float
    nu_drained: float
    cohesion: float
    friction_angle: float
    vg: VanGenuchtenParams | None = None
    density_dry: float | None = None
    E_undrained: float | None = None
    nu_undrained: float | None = None
    undrained: bool = field(default=False)

    def __post_init__(self):
        problems = []
        if not self.hydraulic_conductivity > 0:
            problems.append("hydraulic_conductivity must be > 0")
        if not 0 < self.nu_drained < 0.5:
            problems.append("nu_drained must be in (0, 0.5)")
        if self.nu_undrained is not None and not 0 < self.nu_undrained < 0.5:
            problems.append("nu_undrained must be in (0, 0.5)")
        if not self.E_drained > 0:
            problems.append("E_drained must be > 0")
        if self.E_undrained is not None and not self.E_undrained > 0:
            problems.append("E_undrained must be > 0")
        if self.cohesion < 0:
            problems.append("cohesion must be >= 0")
        if not 0 <= self.friction_angle < 90:
            problems.append("friction_angle must be in [0, 90)")
        if self.density_wet is None and self.density_dry is None:
            problems.append("at least one of density_dry/density_wet is required")
        if problems:
            raise MaterialError(f"{self.name}: " + "; ".join(problems))

    @property
    def saturated_only(self) -> bool:
        return self.vg is None

    @property
    def gamma_wet(self) -> float:
        return self.density_wet if self.density_wet is not None else self.density_dry

    @property
    def gamma_dry(self) -> float:
        return self.density_dry if self.density_dry is not None else self.density_wet

    @property
    def bulk_modulus(self) -> float:
        """Drained skeleton bulk modulus in kPa."""
        return 1000.0 * self.E_drained / (3.0 * (1.0 - 2.0 * self.nu_drained))

    @property
    def storage(self) -> float:
        """Specific storage 1/K_bulk in 1/kPa."""
        return 1.0 / self.bulk_modulus

    @property
    def tan_phi(self) -> float:
        return math.tan(math.radians(self.friction_angle))

    def undrained_moduli(self) -> tuple[float, float]:
        """(E_u in MPa, nu_u), preferring tabulated values over the transform."""
        if self.E_undrained is not None:
            nu_u = self.nu_undrained if self.nu_undrained is not None else UNDRAINED_NU
            return self.E_undrained, nu_u
        return undrained_transform(self.E_drained, self.nu_drained)

    def elastic_moduli(self, undrained: bool = False) -> tuple[float, float]:
        """(E in kPa, nu) for the requested drainage state.

        Only strata flagged ``undrained`` switch moduli; the flag marks the
        clays in the reference material table.
        """
        if undrained and self.undrained:
            E, nu = self.undrained_moduli()
        else:
            E, nu = self.E_drained, self.nu_drained
        return 1000.0 * E, nu

    def drucker_prager(self) -> DruckerPragerParams:
        return drucker_prager_params(self.cohesion, self.friction_angle)


def effective_saturation(p, vg: VanGenuchtenParams | None, gamma_w: float = GAMMA_W):
    """Effective saturation Se(p) of the van Genuchten curve.

    Se = 1 for p >= 0; otherwise [1 + (alpha*h)^n]^-m with suction head
    h = -p/gamma_w in metres.
    """
    p = np.asarray(p, dtype=float)
    if vg is None:
        return np.ones_like(p)
    h = np.maximum(-p, 0.0) / gamma_w
    return (1.0 + (vg.alpha * h) ** vg.n) ** (-vg.m)


def water_content(p, vg: VanGenuchtenParams | None, gamma_w: float = GAMMA_W,
                  porosity: float = 0.4):
    """Volumetric water content theta(p); ``porosity`` is used when vg is None."""
    if vg is None:
        return np.full_like(np.asarray(p, dtype=float), porosity)
    se = effective_saturation(p, vg, gamma_w)
    return vg.theta_r + se * (vg.theta_s - vg.theta_r)


def relative_permeability(se, vg: VanGenuchtenParams | None):
    """Mualem relative permeability kr(Se).

    Raises
    ------
    MaterialError
        If any Se is not positive.
    """
    se = np.asarray(se, dtype=float)
    if vg is None:
        return np.ones_like(se)
    if np.any(se <= 0):
        raise MaterialError("relative permeability undefined for Se <= 0")
    se = np.minimum(se, 1.0)
    m = vg.m
    return np.sqrt(se) * (1.0 - (1.0 - se ** (1.0 / m)) ** m) ** 2


def relative_permeability_p(p, vg: VanGenuchtenParams | None, gamma_w: float = GAMMA_W,
                            kr_min: float = 1e-12):
    """kr as a function of pressure, floored at ``kr_min`` so deep suction
    never yields a singular conductivity matrix."""
    if vg is None:
        return np.ones_like(np.asarray(p, dtype=float))
    se = effective_saturation(p, vg, gamma_w)
    se = np.maximum(se, 1e-300)
    return np.maximum(relative_permeability(se, vg), kr_min)


def moisture_capacity(p, vg: VanGenuchtenParams | None, gamma_w: float = GAMMA_W):
    """Specific moisture capacity C = d(theta)/dp in 1/kPa (zero when saturated)."""
    p = np.asarray(p, dtype=float)
    if vg is None:
        return np.zeros_like(p)
    h = np.maximum(-p, 0.0) / gamma_w
    ah = vg.alpha * h
    m, n = vg.m, vg.n
    c = ((vg.theta_s - vg.theta_r) * m * n * vg.alpha * ah ** (n - 1.0)
         * (1.0 + ah ** n) ** (-m - 1.0) / gamma_w)
    return np.where(p < 0.0, c, 0.0)


def drucker_prager_params(cohesion: float, friction_angle: float) -> DruckerPragerParams:
    """Plane-strain matched Drucker-Prager constants from (c, phi).

    alpha = tan(phi)/sqrt(9 + 12 tan^2 phi), F_DP = 3c/sqrt(9 + 12 tan^2 phi).
    """
    if cohesion < 0 or not 0 <= friction_angle < 90:
        raise MaterialError(f"invalid strength c={cohesion}, phi={friction_angle}")
    t = math.tan(math.radians(friction_angle))
    root = math.sqrt(9.0 + 12.0 * t * t)
    return DruckerPragerParams(alpha_dp=t / root, f_dp=3.0 * cohesion / root)


def undrained_transform(E: float, nu: float) -> tuple[float, float]:
    """Undrained (E_u, nu_u) with nu_u = 0.49 and the shear modulus preserved."""
    if not 0 < nu < 0.5:
        raise MaterialError(f"Poisson ratio must be in (0, 0.5), got {nu}")
    return E * (1.0 + UNDRAINED_NU) / (1.0 + nu), UNDRAINED_NU


def scale_strength(material: SoilMaterial, factor: float) -> SoilMaterial:
    """Divide cohesion and tan(phi) by ``factor``."""
    if not factor > 0:
        raise MaterialError(f"strength factor must be > 0, got {factor}")
    phi = math.degrees(math.atan(material.tan_phi / factor))
    return replace(material, cohesion=material.cohesion / factor, friction_angle=phi)


# -- material table files -----------------------------------------------------

def material_to_dict(mat: SoilMaterial) -> dict:
    d = asdict(mat)
    d["storage"] = mat.storage
    return d


def material_from_dict(d: dict) -> SoilMaterial:
    d = dict(d)
    d.pop("storage", None)
    vg = d.pop("vg", None)
    if vg is not None:
        vg = VanGenuchtenParams(**vg)
    return SoilMaterial(vg=vg, **d)


def load_materials(path) -> dict[str, SoilMaterial]:
    """Read a material table file into an ordered ``{name: SoilMaterial}``."""
    records = json.loads(Path(path).read_text())
    if isinstance(records, dict):
        records = records["materials"]
    mats = [material_from_dict(r) for r in records]
    return {m.name: m for m in mats}


def save_materials(materials, path) -> None:
    mats = materials.values() if isinstance(materials, dict) else materials
    Path(path).write_text(json.dumps([material_to_dict(m) for m in mats], indent=2) + "\n")


def materials_hash(materials: dict[str, SoilMaterial]) -> str:
    import hashlib

    payload = json.dumps([material_to_dict(m) for m in materials.values()], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]
