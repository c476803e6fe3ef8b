"""Bundled device description and the parameter set used throughout the paper."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .cantilever import CantileverParams
from .constants import ANGSTROM
from .magnetostatics import DeviceGeometry
from .spectroscopy import SpinSpecies

DEFAULT_MARGIN = 4.0


@dataclass(frozen=True)
class RabiSelection:
    """Rabi frequencies (Hz). ``None`` entries are chosen by the compiler."""

    electron_Hz: float = 1e8
    nuclear_Hz: float = 1e5
    cn_nuclear_Hz: float | None = None
    ising_rotation_Hz: float | None = None
    ising_cn_Hz: float | None = None
    # lower electron / rotation Rabi frequencies onto the nearest 2*pi*k point
    snap_2pik: bool = True


@dataclass(frozen=True)
class Device:
    geom: DeviceGeometry
    species: SpinSpecies = field(default_factory=SpinSpecies)
    cantilever: CantileverParams = field(default_factory=CantileverParams)
    rabi: RabiSelection = field(default_factory=RabiSelection)
    electron_lifetime_s: float = 1.0
    noise: str = "thermal"
    readout_window_tau: float = 4.0
    move_latency_s: float = 0.0

    def __post_init__(self):
        if self.noise not in ("thermal", "none"):
            raise ValueError(f"unknown noise model {self.noise!r}")
        if self.readout_window_tau <= 0:
            raise ValueError("readout_window_tau must be positive")
        if self.move_latency_s < 0:
            raise ValueError("move_latency_s must be >= 0")

    def with_chain_length(self, n: int) -> "Device":
        return replace(self, geom=self.geom.replace(chain_length=n))


def paper_geometry(chain_length: int = 1000) -> DeviceGeometry:
    return DeviceGeometry(
        probe_radius_m=50 * ANGSTROM,
        probe_gap_m=100 * ANGSTROM,
        atom_spacing_m=50 * ANGSTROM,
        probe_magnetization_T=2.2,
        external_field_T=10.0,
        temperature_K=1.0,
        chain_length=chain_length,
    )


def paper_device(chain_length: int = 1000, **overrides) -> Device:
    return Device(paper_geometry(chain_length), **overrides)
