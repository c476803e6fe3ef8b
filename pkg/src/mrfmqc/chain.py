"""Nuclear-spin chain state and its evolution under frequency-selective pulses.

Nuclear spins are kept as a 2**N amplitude vector. Electron spins are
classical bits, but they may depend on the nuclear basis state (an electron
pulse tuned to the |0_n> hyperfine line flips the electron only in those
branches). The state therefore stores one amplitude vector per electron
configuration; in the usual case there is exactly one.

Basis ordering: site 0 is the most significant bit, so the vector matches
``np.kron(site0, site1, ...)``. Electron configurations use the same ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .magnetostatics import DeviceGeometry, dipole_field_matrix, probe_field_z_at_site
from .spectroscopy import IsingChainSpec, SpinSpecies

MAX_SITES = 24
# dense propagators for coupled (Ising) chains in stochastic mode
MAX_COUPLED_SITES = 10
NORM_TOL = 1e-10

ELECTRON = "electron"
NUCLEAR = "nuclear"


def site_bits(n: int, k: int) -> np.ndarray:
    """Value of site ``k`` in every basis index of an ``n``-site register."""
    return (np.arange(1 << n) >> (n - 1 - k)) & 1


def bits_to_index(bits) -> int:
    index = 0
    for b in bits:
        index = (index << 1) | int(b)
    return index


def index_to_bits(index: int, n: int) -> tuple:
    return tuple((index >> (n - 1 - k)) & 1 for k in range(n))


def bitstring(index: int, n: int) -> str:
    return "".join(str(b) for b in index_to_bits(index, n))


@dataclass(frozen=True)
class PulseSpec:
    """Rectangular pulse. ``phase_rad`` sets the rotation axis in the rotating-frame xy plane."""

    carrier_Hz: float
    rabi_Hz: float
    duration_s: float
    target_kind: str = NUCLEAR
    nominal_angle: float = math.pi
    phase_rad: float = 0.0

    def __post_init__(self):
        if self.rabi_Hz <= 0:
            raise ValueError("rabi_Hz must be positive")
        if self.duration_s < 0:
            raise ValueError("duration_s must be >= 0")
        if self.target_kind not in (ELECTRON, NUCLEAR):
            raise ValueError(f"unknown target kind {self.target_kind!r}")

    @classmethod
    def rotation(cls, carrier_Hz, rabi_Hz, angle=math.pi, kind=NUCLEAR, phase_rad=0.0) -> "PulseSpec":
        """Resonant rotation by ``angle``; negative angles turn about the opposite axis."""
        if angle < 0:
            phase_rad += math.pi
        return cls(carrier_Hz, rabi_Hz, abs(angle) / (2 * math.pi * rabi_Hz), kind, angle, phase_rad)

    @property
    def angle(self) -> float:
        return 2 * math.pi * self.rabi_Hz * self.duration_s


class ChainState:
    """Amplitudes per electron configuration plus the probe position."""

    def __init__(self, n_sites: int, branches: dict, probe_site: int | None = None):
        if not 1 <= n_sites <= MAX_SITES:
            raise ValueError(f"chain length must be in 1..{MAX_SITES}, got {n_sites}")
        if probe_site is not None and not 0 <= probe_site < n_sites:
            raise ValueError(f"probe site {probe_site} outside chain")
        self.n = n_sites
        self.branches = {int(e): np.asarray(v, dtype=complex) for e, v in branches.items()}
        self.probe_site = probe_site
        for vec in self.branches.values():
            if vec.shape != (1 << n_sites,):
                raise ValueError("branch vector has the wrong dimension")

    # construction -----------------------------------------------------------
    @classmethod
    def basis(cls, bits, electrons=None, probe_site=None) -> "ChainState":
        if isinstance(bits, str):
            bits = [int(c) for c in bits]
        bits = list(bits)
        n = len(bits)
        vec = np.zeros(1 << n, dtype=complex)
        vec[bits_to_index(bits)] = 1.0
        e = 0 if electrons is None else bits_to_index(electrons)
        return cls(n, {e: vec}, probe_site)

    @classmethod
    def from_amplitudes(cls, amplitudes, electrons=None, probe_site=None) -> "ChainState":
        vec = np.asarray(amplitudes, dtype=complex)
        n = int(round(math.log2(vec.size)))
        if 1 << n != vec.size:
            raise ValueError("amplitude vector length must be a power of two")
        norm = np.linalg.norm(vec)
        if abs(norm - 1) > NORM_TOL:
            raise ValueError(f"amplitudes must be normalised (norm {norm})")
        e = 0 if electrons is None else bits_to_index(electrons)
        return cls(n, {e: vec}, probe_site)

    @classmethod
    def product(cls, site_states, probe_site=None) -> "ChainState":
        vec = np.array([1.0 + 0j])
        for s in site_states:
            s = np.asarray(s, dtype=complex)
            vec = np.kron(vec, s / np.linalg.norm(s))
        return cls.from_amplitudes(vec, probe_site=probe_site)

    @classmethod
    def from_label(cls, label: str, probe_site=None) -> "ChainState":
        """Product state from a string over ``0 1 + -``."""
        table = {"0": (1, 0), "1": (0, 1), "+": (1, 1), "-": (1, -1)}
        try:
            return cls.product([table[c] for c in label], probe_site)
        except KeyError as exc:
            raise ValueError(f"unknown site label {exc.args[0]!r} in {label!r}") from None

    def copy(self) -> "ChainState":
        return ChainState(self.n, {e: v.copy() for e, v in self.branches.items()}, self.probe_site)

    # queries ----------------------------------------------------------------
    def norm(self) -> float:
        return float(math.sqrt(sum(np.vdot(v, v).real for v in self.branches.values())))

    def prune(self, tol: float = 1e-15) -> None:
        for e in [e for e, v in self.branches.items() if np.vdot(v, v).real <= tol]:
            if len(self.branches) > 1:
                del self.branches[e]

    def electron_register(self) -> tuple:
        """The electron bits, if they are the same in every branch."""
        self.prune()
        if len(self.branches) != 1:
            raise ValueError("electron register depends on the nuclear state")
        return index_to_bits(next(iter(self.branches)), self.n)

    def nuclear_amplitudes(self) -> np.ndarray:
        """Amplitude vector, valid when the electron register is definite."""
        self.electron_register()
        return next(iter(self.branches.values())).copy()

    def probabilities(self) -> np.ndarray:
        return sum(np.abs(v) ** 2 for v in self.branches.values())

    def site_probability(self, site: int, value: int = 0) -> float:
        return float(np.sum(self.probabilities()[site_bits(self.n, site) == value]))

    def z_expectation(self, site: int) -> float:
        """<2 I^z> of one site, +1 for ground."""
        p0 = self.site_probability(site, 0)
        return 2 * p0 - 1

    def snapshot(self, tol: float = 1e-14) -> list:
        """JSON-ready records: one per non-negligible amplitude."""
        records = []
        for e in sorted(self.branches):
            vec = self.branches[e]
            for idx in np.flatnonzero(np.abs(vec) > tol):
                records.append({
                    "basis": int(idx),
                    "bits": bitstring(int(idx), self.n),
                    "electrons": bitstring(e, self.n),
                    "re": float(vec[idx].real),
                    "im": float(vec[idx].imag),
                })
        return records

    def check_norm(self) -> None:
        if abs(self.norm() - 1) > NORM_TOL:
            raise AssertionError(f"state norm drifted to {self.norm()!r}")


# two-level physics -------------------------------------------------------------

def flip_probability(detuning_Hz, rabi_Hz, duration_s):
    """Rabi formula for the |0> -> |1> probability of a detuned rectangular pulse."""
    detuning_Hz = np.asarray(detuning_Hz, dtype=float)
    omega2 = rabi_Hz**2 + detuning_Hz**2
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(omega2 > 0, rabi_Hz**2 / omega2 * np.sin(np.pi * np.sqrt(omega2) * duration_s) ** 2, 0.0)
    return p


def rabi_unitary(detuning_Hz, rabi_Hz: float, duration_s: float, phase_rad: float = 0.0):
    """Rotating-frame propagator for H = -(delta/2) sz + (f_R/2)(cos(phi) sx + sin(phi) sy).

    Frequencies in Hz; time evolution is exp(-2 pi i H t). Vectorised over
    ``detuning_Hz``; returns the four matrix elements (u00, u01, u10, u11).
    """
    delta = np.asarray(detuning_Hz, dtype=float)
    omega = np.sqrt(rabi_Hz**2 + delta**2)
    a = np.pi * omega * duration_s
    c = np.cos(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        s_over = np.where(omega > 0, np.sin(a) / np.where(omega > 0, omega, 1.0), 0.0)
    nx = rabi_Hz * math.cos(phase_rad) * s_over
    ny = rabi_Hz * math.sin(phase_rad) * s_over
    nz = -delta * s_over
    u00 = c - 1j * nz
    u11 = c + 1j * nz
    u01 = -1j * (nx - 1j * ny)
    u10 = -1j * (nx + 1j * ny)
    return u00, u01, u10, u11


def ideal_addressed(detuning_Hz, rabi_Hz: float):
    """Threshold rule: a site counts as addressed if a pi-pulse would flip it with P > 1/2."""
    return flip_probability(detuning_Hz, rabi_Hz, 1.0 / (2.0 * rabi_Hz)) > 0.5


# resonance models -------------------------------------------------------------

ResonanceMap = Callable[[int], np.ndarray]


class SingleSpinModel:
    """Line positions of a chain of paramagnetic atoms under the probe.

    For an electron configuration ``e`` the ESR line of site k is
    gamma_e*B_loc + f_hf*(1 - 2 n_k), and the NMR line is f_hf + gamma_n*B_loc
    (electron ground) or f_hf - gamma_n*B_loc (electron flipped), with
    B_loc = B0 + probe field + dipole field of every other electron.
    """

    def __init__(self, geom: DeviceGeometry, species: SpinSpecies, n_sites: int | None = None):
        self.geom = geom
        self.species = species
        self.n = geom.chain_length if n_sites is None else n_sites
        self._dipole = dipole_field_matrix(self.n, geom.atom_spacing_m)
        self._probe_cache: dict = {}

    def probe_fields(self, probe_site: int | None) -> np.ndarray:
        if probe_site not in self._probe_cache:
            b = np.zeros(self.n)
            if probe_site is not None:
                a = self.geom.atom_spacing_m
                b = np.array([probe_field_z_at_site(self.geom, (k - probe_site) * a) for k in range(self.n)])
            self._probe_cache[probe_site] = b
        return self._probe_cache[probe_site]

    def local_fields(self, probe_site: int | None, electrons: int) -> np.ndarray:
        e_bits = np.array(index_to_bits(electrons, self.n))
        return self.geom.external_field_T + self.probe_fields(probe_site) + self._dipole @ (1 - 2 * e_bits)

    def electron_lines(self, probe_site: int | None, electrons: int) -> np.ndarray:
        b = self.local_fields(probe_site, electrons)
        hf = self.species.hyperfine_Hz
        lines = np.empty((self.n, 1 << self.n))
        for k in range(self.n):
            lines[k] = self.species.gamma_e_Hz_per_T * b[k] + hf * (1 - 2 * site_bits(self.n, k))
        return lines

    def nuclear_lines(self, probe_site: int | None, electrons: int) -> np.ndarray:
        b = self.local_fields(probe_site, electrons)
        e_bits = np.array(index_to_bits(electrons, self.n))
        sign = 1 - 2 * e_bits
        return (self.species.hyperfine_Hz + sign * self.species.gamma_n_Hz_per_T * b)[:, None]

    def resonance(self, kind: str, probe_site: int | None) -> ResonanceMap:
        if kind == ELECTRON:
            return lambda e: self.electron_lines(probe_site, e)
        if kind == NUCLEAR:
            return lambda e: self.nuclear_lines(probe_site, e)
        raise ValueError(f"unknown pulse kind {kind!r}")


class IsingModel:
    """Line positions of a diagonal Ising chain; only nuclear pulses exist here."""

    def __init__(self, spec: IsingChainSpec, geom: DeviceGeometry | None = None):
        self.spec = spec
        self.geom = geom
        self.n = spec.size

    def lines(self, probe_site: int | None) -> np.ndarray:
        n = self.n
        shifts = self.spec.probe_shifts(self.geom, probe_site) if self.geom is not None else np.zeros(n)
        lines = np.empty((n, 1 << n))
        for k in range(n):
            f = np.full(1 << n, self.spec.base_frequencies_Hz[k] + shifts[k])
            if k > 0:
                f += (1 - 2 * site_bits(n, k - 1)) * self.spec.couplings_Hz[k - 1]
            if k < n - 1:
                f += (1 - 2 * site_bits(n, k + 1)) * self.spec.couplings_Hz[k]
            lines[k] = f
        return lines

    def resonance(self, kind: str, probe_site: int | None) -> ResonanceMap:
        if kind != NUCLEAR:
            raise ValueError("Ising chains have no electron transitions (mode mismatch)")
        lines = self.lines(probe_site)
        return lambda e: lines

    def propagator(self, pulse: PulseSpec, probe_site: int | None) -> np.ndarray:
        """Exact rotating-frame propagator of one pulse on the whole coupled chain."""
        n = self.n
        if n > MAX_COUPLED_SITES:
            raise ValueError(f"exact Ising propagators support up to {MAX_COUPLED_SITES} sites, got {n}")
        shifts = self.spec.probe_shifts(self.geom, probe_site) if self.geom is not None else np.zeros(n)
        s = np.array([1 - 2 * site_bits(n, k) for k in range(n)], dtype=float)
        nu = np.asarray(self.spec.base_frequencies_Hz) + shifts - pulse.carrier_Hz
        diag = -0.5 * (nu @ s) - 0.5 * sum(self.spec.couplings_Hz[k] * s[k] * s[k + 1] for k in range(n - 1))
        h = np.diag(diag).astype(complex)
        drive = 0.5 * pulse.rabi_Hz * np.exp(-1j * pulse.phase_rad)
        idx = np.arange(1 << n)
        for k in range(n):
            flip = idx ^ (1 << (n - 1 - k))
            upper = site_bits(n, k) == 0
            h[idx[upper], flip[upper]] += drive
            h[flip[upper], idx[upper]] += np.conj(drive)
        return expm(-2j * np.pi * pulse.duration_s * h)


def ising_evolution_frequencies(state: ChainState, model: IsingModel) -> np.ndarray:
    """Per-site lines; a 1-D map for basis states, per-basis-index otherwise."""
    if not isinstance(model, IsingModel):
        raise TypeError("Ising frequencies need an IsingModel (mode mismatch)")
    lines = model.lines(state.probe_site)
    probs = state.probabilities()
    support = np.flatnonzero(probs > 1e-14)
    if support.size == 1:
        return lines[:, support[0]].copy()
    return lines


def _as_map(resonance) -> ResonanceMap:
    if callable(resonance):
        return resonance
    arr = np.asarray(resonance, dtype=float)
    return lambda e: arr


# operations ---------------------------------------------------------------------

def apply_pulse(state: ChainState, pulse: PulseSpec, resonance, *, mode: str = "ideal",
                rng: np.random.Generator | None = None) -> ChainState:
    """Drive every site with one rectangular pulse and return the new state.

    ``resonance`` gives site transition frequencies for a given electron
    configuration: an array of shape (N,) or (N, 2**N), or a callable taking the
    electron configuration index. ``mode`` is ``"ideal"`` (thresholded: addressed
    sites get an exact on-resonance rotation, the rest nothing) or
    ``"stochastic"`` (exact detuned propagators for nuclei, sampled flips for
    electrons). Passing an :class:`IsingModel` uses the chain's own lines at
    the current probe position; in stochastic mode its coupled propagator is
    exact instead of site by site.
    """
    if mode not in ("ideal", "stochastic"):
        raise ValueError(f"unknown pulse mode {mode!r}")
    new = state.copy()
    if pulse.duration_s == 0:
        return new
    if isinstance(resonance, IsingModel):
        if mode == "stochastic":
            u = resonance.propagator(pulse, state.probe_site)
            new.branches = {e: u @ vec for e, vec in new.branches.items()}
            return new
        resonance = resonance.resonance(pulse.target_kind, state.probe_site)
    res_map = _as_map(resonance)
    if pulse.target_kind == NUCLEAR:
        for e, vec in new.branches.items():
            lines = _checked_lines(res_map(e), state.n)
            for k in range(state.n):
                _rotate_site(vec, state.n, k, lines[k] - pulse.carrier_Hz, pulse, mode)
    else:
        if mode == "stochastic" and rng is None:
            raise ValueError("stochastic electron pulses need an rng")
        draws = rng.random(state.n) if mode == "stochastic" else None
        out: dict = {}
        for e, vec in new.branches.items():
            lines = _checked_lines(res_map(e), state.n)
            p = flip_probability(lines - pulse.carrier_Hz, pulse.rabi_Hz, pulse.duration_s)
            flips = (p > 0.5) if mode == "ideal" else (draws[:, None] < p)
            weights = 1 << (state.n - 1 - np.arange(state.n))
            masks = (flips * weights[:, None]).sum(axis=0)
            for mask in np.unique(masks):
                sel = masks == mask
                tgt = e ^ int(mask)
                part = np.where(sel, vec, 0)
                out[tgt] = out[tgt] + part if tgt in out else part
        new.branches = out
        new.prune()
    return new


def _checked_lines(lines, n):
    lines = np.asarray(lines, dtype=float)
    if lines.shape[0] != n:
        raise KeyError(f"resonance map has {lines.shape[0]} entries for {n} sites")
    if lines.ndim == 1:
        lines = lines[:, None]
    return np.broadcast_to(lines, (n, 1 << n)) if lines.shape[1] == 1 else lines


def _rotate_site(vec, n, k, detuning, pulse, mode):
    stride = 1 << (n - 1 - k)
    view = vec.reshape(-1, 2, stride)
    delta = np.broadcast_to(detuning, (1 << n,)).reshape(-1, 2, stride)[:, 0, :]
    if mode == "ideal":
        hit = ideal_addressed(delta, pulse.rabi_Hz)
        if not np.any(hit):
            return
        u00, u01, u10, u11 = rabi_unitary(0.0, pulse.rabi_Hz, pulse.duration_s, pulse.phase_rad)
        a0 = view[:, 0, :].copy()
        a1 = view[:, 1, :].copy()
        view[:, 0, :] = np.where(hit, u00 * a0 + u01 * a1, a0)
        view[:, 1, :] = np.where(hit, u10 * a0 + u11 * a1, a1)
        return
    u00, u01, u10, u11 = rabi_unitary(delta, pulse.rabi_Hz, pulse.duration_s, pulse.phase_rad)
    a0 = view[:, 0, :].copy()
    a1 = view[:, 1, :].copy()
    view[:, 0, :] = u00 * a0 + u01 * a1
    view[:, 1, :] = u10 * a0 + u11 * a1


def apply_frame_shift(state: ChainState, site: int, angle: float) -> ChainState:
    """Virtual z-rotation exp(-i angle sz / 2) on one nucleus."""
    new = state.copy()
    phase = np.where(site_bits(state.n, site) == 0, np.exp(-0.5j * angle), np.exp(0.5j * angle))
    for vec in new.branches.values():
        vec *= phase
    return new


def project_measure(state: ChainState, site: int, rng: np.random.Generator):
    """Born-rule z-measurement of one nucleus; returns (outcome, collapsed state, probability)."""
    if not 0 <= site < state.n:
        raise IndexError(f"site {site} outside chain of {state.n}")
    p0 = min(max(state.site_probability(site, 0), 0.0), 1.0)
    outcome = 0 if rng.random() < p0 else 1
    prob = p0 if outcome == 0 else 1.0 - p0
    keep = site_bits(state.n, site) == outcome
    new = state.copy()
    scale = 1.0 / math.sqrt(prob)
    for e in new.branches:
        new.branches[e] = np.where(keep, new.branches[e], 0) * scale
    new.prune()
    return outcome, new, prob


def move_probe(state: ChainState, site: int | None) -> ChainState:
    if site is not None and not 0 <= site < state.n:
        raise IndexError(f"probe site {site} outside chain of {state.n}")
    new = state.copy()
    new.probe_site = site
    return new


__all__ = [
    "ChainState", "PulseSpec", "SingleSpinModel", "IsingModel", "apply_pulse", "apply_frame_shift",
    "project_measure", "move_probe", "flip_probability", "rabi_unitary", "ising_evolution_frequencies",
    "site_bits", "bits_to_index", "index_to_bits", "bitstring",
]
