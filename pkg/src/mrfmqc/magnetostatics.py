"""Fields, gradients and forces for a magnetized sphere above a line of atoms.

The probe sphere sits with its centre at the origin; the target atom is on the
+z axis at ``z = R + d`` and the chain runs along x with spacing ``a``.
Everything is SI internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import MU0_OVER_4PI, MU_B


@dataclass(frozen=True)
class DeviceGeometry:
    """Probe/chain geometry plus the environment the chain lives in."""

    probe_radius_m: float
    probe_gap_m: float
    atom_spacing_m: float
    probe_magnetization_T: float  # mu0*M
    external_field_T: float
    temperature_K: float
    chain_length: int = 1

    def __post_init__(self):
        for name in ("probe_radius_m", "probe_gap_m", "atom_spacing_m",
                     "external_field_T", "temperature_K"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive, got {value!r}")
        if self.probe_magnetization_T < 0:
            raise ValueError("probe_magnetization_T must be >= 0")
        if int(self.chain_length) != self.chain_length or self.chain_length < 1:
            raise ValueError(f"chain_length must be an integer >= 1, got {self.chain_length!r}")

    @property
    def target_z(self) -> float:
        """Axial coordinate of the atom directly under the probe."""
        return self.probe_radius_m + self.probe_gap_m

    @property
    def moment_prefactor(self) -> float:
        """mu0*m/(4*pi) for the sphere, in T*m^3."""
        # m = (4/3) pi R^3 M  ->  mu0 m / 4pi = mu0 M R^3 / 3
        return self.probe_magnetization_T * self.probe_radius_m**3 / 3.0

    def replace(self, **changes) -> "DeviceGeometry":
        fields = {**self.__dict__, **changes}
        return DeviceGeometry(**fields)


@dataclass(frozen=True)
class FieldVector:
    bx_T: float
    by_T: float
    bz_T: float

    def __post_init__(self):
        if not all(np.isfinite((self.bx_T, self.by_T, self.bz_T))):
            raise ValueError("field components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.bx_T, self.by_T, self.bz_T])


def probe_field(geom: DeviceGeometry, offset) -> FieldVector:
    """Dipole field of the probe sphere at ``offset`` (metres, from its centre)."""
    r_vec = np.asarray(offset, dtype=float)
    if r_vec.shape != (3,):
        raise ValueError("offset must be a 3-vector")
    r = float(np.linalg.norm(r_vec))
    if r <= geom.probe_radius_m:
        raise ValueError(
            f"point at distance {r:.3e} m lies inside the probe sphere (R={geom.probe_radius_m:.3e} m)")
    n = r_vec / r
    m_hat = np.array([0.0, 0.0, 1.0])
    b = geom.moment_prefactor * (3.0 * n * n[2] - m_hat) / r**3
    return FieldVector(*(float(c) for c in b))


def probe_field_z_at_site(geom: DeviceGeometry, lateral_offset_m: float) -> float:
    """z-field at a chain atom displaced laterally by ``lateral_offset_m`` from the target."""
    z = geom.target_z
    r2 = z * z + lateral_offset_m * lateral_offset_m
    r = np.sqrt(r2)
    return float(geom.moment_prefactor * (3.0 * z * z / r2 - 1.0) / r**3)


def probe_field_gradient_z(geom: DeviceGeometry, z: float | None = None) -> float:
    """On-axis dB_z/dz, T/m."""
    z = geom.target_z if z is None else z
    if z <= geom.probe_radius_m:
        raise ValueError("z must lie outside the probe sphere")
    bz = 2.0 * geom.moment_prefactor / z**3
    return -3.0 * bz / z


def force_on_electron(geom: DeviceGeometry, z: float | None = None, spin_sign: int = 1) -> float:
    """Axial force on an electron moment pointing along ``spin_sign`` * z.

    The reaction on the probe (and therefore on the cantilever) is the negative
    of this value.
    """
    if spin_sign not in (1, -1):
        raise ValueError("spin_sign must be +1 or -1")
    return spin_sign * MU_B * probe_field_gradient_z(geom, z)


def chain_dipole_field(electrons, site: int, spacing_m: float, *, exclude_nearest: bool = False) -> float:
    """z-field at ``site`` from every other electron moment on the line.

    ``electrons`` holds one bit per site: 0 for a moment along +z (ground),
    1 for a flipped moment. Moments perpendicular to the chain produce
    ``-mu0 mu/(4 pi r^3)`` on the line, so ground-state neighbours lower B_z.
    """
    bits = np.asarray(electrons, dtype=int)
    n = bits.size
    if not 0 <= site < n:
        raise IndexError(f"site {site} outside chain of length {n}")
    dist = np.abs(np.arange(n) - site)
    mask = dist > (1 if exclude_nearest else 0)
    signs = 1 - 2 * bits[mask]
    return float(-MU0_OVER_4PI * MU_B / spacing_m**3 * np.sum(signs / dist[mask] ** 3.0))


def dipole_field_matrix(n: int, spacing_m: float) -> np.ndarray:
    """Coupling matrix ``C`` with B_dip = C @ (1 - 2*bits) for a chain of length n."""
    idx = np.arange(n)
    dist = np.abs(idx[:, None] - idx[None, :]).astype(float)
    with np.errstate(divide="ignore"):
        c = np.where(dist > 0, -MU0_OVER_4PI * MU_B / (spacing_m * np.maximum(dist, 1)) ** 3, 0.0)
    return c


def nearest_neighbor_dipole_field(spacing_m: float) -> float:
    """Field from two aligned ground-state neighbours of an inner atom."""
    return -2.0 * MU0_OVER_4PI * MU_B / spacing_m**3
