"""Resonance frequencies of the electron-nuclear pair and of Ising chains.

All frequencies are in Hz (not rad/s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import GAMMA_E, GAMMA_N_PROTON, K_B, MU_B
from .magnetostatics import (
    DeviceGeometry,
    chain_dipole_field,
    nearest_neighbor_dipole_field,
    probe_field_z_at_site,
)

# atomic hydrogen: ESR lines split by 1420 MHz, half of it is the hyperfine frequency
DEFAULT_HYPERFINE_HZ = 7.1e8


@dataclass(frozen=True)
class SpinSpecies:
    gamma_e_Hz_per_T: float = GAMMA_E
    gamma_n_Hz_per_T: float = GAMMA_N_PROTON
    hyperfine_Hz: float = DEFAULT_HYPERFINE_HZ

    def __post_init__(self):
        if self.gamma_e_Hz_per_T <= 0 or self.gamma_n_Hz_per_T <= 0:
            raise ValueError("gyromagnetic ratios must be positive")
        if self.hyperfine_Hz < 0:
            raise ValueError("hyperfine_Hz must be >= 0")


@dataclass(frozen=True)
class TransitionTable:
    f_e_Hz: float
    f_n_Hz: float
    f_e0_Hz: float
    f_e1_Hz: float
    f_n0_Hz: float
    f_n1_Hz: float


def transition_table(species: SpinSpecies, b_local_T: float) -> TransitionTable:
    """ESR/NMR lines of one paramagnetic atom in a local field."""
    if not b_local_T > 0:
        raise ValueError(f"local field must be positive, got {b_local_T!r}")
    f_e = species.gamma_e_Hz_per_T * b_local_T
    f_n = species.gamma_n_Hz_per_T * b_local_T
    hf = species.hyperfine_Hz
    return TransitionTable(f_e, f_n, f_e + hf, f_e - hf, f_n + hf, hf - f_n)


def esr_measurement_frequency(species: SpinSpecies, geom: DeviceGeometry) -> float:
    """Carrier of the electron pi-pulse train used for readout and CN steps."""
    b_probe = probe_field_z_at_site(geom, 0.0)
    table = transition_table(species, geom.external_field_T)
    return table.f_e0_Hz + species.gamma_e_Hz_per_T * b_probe


def far_dipole_field(geom: DeviceGeometry, site: int, electrons=None) -> float:
    """Dipole field at ``site`` from everything except the two nearest neighbours."""
    n = geom.chain_length
    electrons = np.zeros(n, dtype=int) if electrons is None else electrons
    return chain_dipole_field(electrons, site, geom.atom_spacing_m, exclude_nearest=True)


def nmr_target_frequencies(species: SpinSpecies, geom: DeviceGeometry, target: int,
                           control: int, far_field_T: float | None = None) -> dict:
    """NMR line of a target nucleus with the control-side electron flipped or not.

    The probe is parked over the target. ``f_control_off`` is the line when the
    control electron stayed in its ground state (control nucleus excited);
    ``f_control_on`` is the line after the control electron was flipped.
    """
    n = geom.chain_length
    if not (0 <= target < n and 0 <= control < n) or abs(target - control) != 1:
        raise ValueError(f"sites {control} and {target} are not neighbours in a chain of {n}")
    b_probe = probe_field_z_at_site(geom, 0.0)
    far = far_dipole_field(geom, target) if far_field_T is None else far_field_T
    ground = np.zeros(n, dtype=int)
    flipped = ground.copy()
    flipped[control] = 1
    a = geom.atom_spacing_m
    near_off = chain_dipole_field(ground, target, a) - chain_dipole_field(ground, target, a, exclude_nearest=True)
    near_on = chain_dipole_field(flipped, target, a) - chain_dipole_field(flipped, target, a, exclude_nearest=True)
    table = transition_table(species, geom.external_field_T)
    g = species.gamma_n_Hz_per_T
    off = table.f_n0_Hz + g * (b_probe + near_off + far)
    on = table.f_n0_Hz + g * (b_probe + near_on + far)
    return {"f_control_on": on, "f_control_off": off, "gap": abs(on - off)}


def cn_gap_hz(species: SpinSpecies, geom: DeviceGeometry) -> float:
    """NMR gap that separates the two control branches of the CN step."""
    return species.gamma_n_Hz_per_T * abs(nearest_neighbor_dipole_field(geom.atom_spacing_m))


@dataclass(frozen=True)
class IsingChainSpec:
    """Diagonal Ising chain: bare lines, nearest-neighbour couplings, optional gammas.

    ``gammas_Hz_per_T`` is only needed to translate a probe field into per-site
    frequency shifts.
    """

    base_frequencies_Hz: tuple
    couplings_Hz: tuple
    gammas_Hz_per_T: tuple | None = None
    theta0_rad: float = field(default=math.acos(1 / math.sqrt(3)))

    def __post_init__(self):
        object.__setattr__(self, "base_frequencies_Hz", tuple(float(f) for f in self.base_frequencies_Hz))
        object.__setattr__(self, "couplings_Hz", tuple(float(j) for j in self.couplings_Hz))
        if self.gammas_Hz_per_T is not None:
            object.__setattr__(self, "gammas_Hz_per_T", tuple(float(g) for g in self.gammas_Hz_per_T))
            if len(self.gammas_Hz_per_T) != self.size:
                raise ValueError("gammas_Hz_per_T must have one entry per site")
        if len(self.couplings_Hz) != self.size - 1:
            raise ValueError(f"need {self.size - 1} couplings for {self.size} sites, got {len(self.couplings_Hz)}")

    @property
    def size(self) -> int:
        return len(self.base_frequencies_Hz)

    @classmethod
    def from_gammas(cls, gammas, couplings, b0_T: float) -> "IsingChainSpec":
        gammas = tuple(gammas)
        return cls(tuple(g * b0_T for g in gammas), tuple(couplings), gammas)

    def probe_shifts(self, geom: DeviceGeometry, probe_site: int | None) -> np.ndarray:
        """Per-site line shift from a probe parked over ``probe_site`` (zeros if parked away)."""
        shifts = np.zeros(self.size)
        if probe_site is None or self.gammas_Hz_per_T is None:
            return shifts
        for k in range(self.size):
            shifts[k] = self.gammas_Hz_per_T[k] * probe_field_z_at_site(geom, (k - probe_site) * geom.atom_spacing_m)
        return shifts


def ising_resonance(spec: IsingChainSpec, k: int, left_state: int | None = None,
                    right_state: int | None = None, probe_shift_Hz: float = 0.0) -> float:
    """Line of spin ``k`` given the z-states (0 ground, 1 excited) of its neighbours."""
    if not 0 <= k < spec.size:
        raise IndexError(f"site {k} outside Ising chain of {spec.size}")
    f = spec.base_frequencies_Hz[k] + probe_shift_Hz
    if k > 0:
        if left_state not in (0, 1):
            raise ValueError("left neighbour state must be 0 or 1")
        f += (1 - 2 * left_state) * spec.couplings_Hz[k - 1]
    if k < spec.size - 1:
        if right_state not in (0, 1):
            raise ValueError("right neighbour state must be 0 or 1")
        f += (1 - 2 * right_state) * spec.couplings_Hz[k]
    return f


def thermal_excited_probability(b0_T: float, temperature_K: float) -> float:
    """Boltzmann weight of the upper electron level."""
    if not temperature_K > 0:
        raise ValueError("temperature must be positive")
    return math.exp(-2.0 * MU_B * b0_T / (K_B * temperature_K))
