"""End-to-end procedures: spin readout, chain polarization, CN gates, ensemble readout.

Readout model
-------------
A measurement collapses the site (Born rule), then runs an electron pi-pulse
train with period T_c/2 for a fixed readout window. If the nucleus is in
|0>, the train is resonant and the cantilever rings up under a square-wave
force; if it is in |1> the train is detuned by 2 f_hf and the cantilever only
shows Langevin noise at the device temperature. The decision statistic is
the lock-in in-phase amplitude over the window, compared with half of its
noise-free resonant value. Because the oscillator is linear, a noisy driven
trace is the noise-free driven trace plus a thermal trace, so the driven part
is computed once per device and reused.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cantilever import (
    ResponseTrace,
    first_crossing,
    inphase_amplitude,
    linear_functionals,
    rk4_step_matrices,
    simulate_response,
    thermal_inputs,
    thermal_rms,
)
from .chain import (
    NUCLEAR,
    ChainState,
    IsingModel,
    PulseSpec,
    SingleSpinModel,
    apply_frame_shift,
    apply_pulse,
    index_to_bits,
    move_probe,
    project_measure,
)
from .compiler import Circuit, FrameShift, InverseCN, MoveProbe, Pulse, Schedule, compile_circuit
from .device import Device
from .magnetostatics import force_on_electron
from .spectroscopy import IsingChainSpec

STEPS_PER_PERIOD = 100


class ProtocolError(ValueError):
    """A protocol precondition does not hold."""


@dataclass
class MeasurementRecord:
    site: int
    detected: bool
    elapsed_s: float
    final_amplitude_m: float
    pulse_count: int
    collapsed_outcome: int
    statistic_m: float = 0.0
    threshold_m: float = 0.0
    window_s: float = 0.0
    probability: float = 1.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class EnsembleReadout:
    column: int
    average_z_polarization: float
    chain_count: int
    standard_error: float = 0.0

    def __post_init__(self):
        if self.chain_count < 1:
            raise ProtocolError("empty ensemble")
        if abs(self.average_z_polarization) > 1 + 1e-12:
            raise ValueError("average polarization outside [-1, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


# readout ------------------------------------------------------------------------

class Readout:
    """Cached single-spin readout for one device.

    The resonant drive is computed once (noise free); each call adds a fresh
    seeded thermal trace.
    """

    def __init__(self, device: Device):
        self.device = device
        p = device.cantilever
        self.params = p
        self.dt = p.period_s / STEPS_PER_PERIOD
        periods = max(1, int(round(device.readout_window_tau * p.quality_factor / math.pi)))
        self.window_s = periods * p.period_s
        self.pulse_count = 2 * periods
        self.force_N = abs(force_on_electron(device.geom))
        self.temperature_K = device.geom.temperature_K
        self.z_rms = thermal_rms(p, self.temperature_K)
        self.level_m = math.sqrt(2.0) * self.z_rms
        self.drive = simulate_response(p, self.force_N, self.window_s, dt=self.dt)
        self.drive_statistic = inphase_amplitude(self.drive, p)
        self.threshold_m = 0.5 * self.drive_statistic
        crossing = first_crossing(self.drive, p, self.level_m)
        self.crossing_s = self.window_s if crossing is None else crossing

        self._kernels = None

    def _thermal_kernels(self):
        """Adjoint kernels for (lock-in statistic, x_end, v_end) of a thermal trace."""
        if self._kernels is None:
            p = self.params
            a, b = rk4_step_matrices(p, self.dt)
            t = self.drive.time_s
            n = t.size
            per = p.period_s / self.dt
            m = int(math.floor((n - 1) / per) * per)
            w = np.zeros((n, 2, 3))
            w[:m, 0, 0] = -2.0 * np.cos(p.omega * t[:m]) / m
            w[-1, 0, 1] = 1.0
            w[-1, 1, 2] = 1.0
            self._kernels = (a, b, *linear_functionals(a, b, w))
        return self._kernels

    def thermal(self, seed) -> ResponseTrace | None:
        if self.device.noise == "none" or self.z_rms == 0:
            return None
        return simulate_response(self.params, 0.0, self.window_s, dt=self.dt,
                                 temperature_K=self.temperature_K, seed=seed)

    def _thermal_values(self, seed) -> np.ndarray:
        """(statistic, x_end, v_end) of the thermal trace ``thermal(seed)`` without building it."""
        if self.device.noise == "none" or self.z_rms == 0:
            return np.zeros(3)
        a, b, kern, p0 = self._thermal_kernels()
        u, y0 = thermal_inputs(self.params, a, b, self.temperature_K, seed, kern.shape[0])
        return kern.T @ u + p0.T @ y0

    def run(self, outcome: int, seed, *, with_trace: bool = False) -> tuple:
        """(lock-in statistic, end-of-window amplitude, trace or None) for one readout."""
        driven = outcome == 0
        stat, x_end, v_end = self._thermal_values(seed)
        if driven:
            stat += self.drive_statistic
            x_end += self.drive.displacement_m[-1]
            v_end += self.drive.velocity_m_per_s[-1]
        final = float(math.hypot(x_end, v_end / self.params.omega))
        trace = None
        if with_trace:
            noise = self.thermal(seed)
            if noise is None:
                zero = np.zeros_like(self.drive.time_s)
                trace = self.drive if driven else ResponseTrace(self.drive.time_s, zero, zero, zero)
            else:
                trace = self.drive + noise if driven else noise
        return float(stat), final, trace

    def statistic(self, outcome: int, seed) -> float:
        return self.run(outcome, seed)[0]


_READOUT_CACHE: dict = {}


def readout_for(device: Device) -> Readout:
    key = (device.geom.replace(chain_length=1), device.species, device.cantilever,
           device.noise, device.readout_window_tau)
    if key not in _READOUT_CACHE:
        _READOUT_CACHE[key] = Readout(device)
    return _READOUT_CACHE[key]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def measure_nuclear_spin(device: Device, state: ChainState, site: int, seed,
                         *, return_trace: bool = False):
    """Read out one nucleus; returns ``(record, collapsed_state)`` (plus the trace if asked)."""
    if state.probe_site != site:
        raise ProtocolError(f"probe is at {state.probe_site}, not at site {site}")
    electrons = state.electron_register()
    if electrons[site] != 0:
        raise ProtocolError(f"electron at site {site} is not in its ground state")
    rng = _rng(seed)
    outcome, collapsed, prob = project_measure(state, site, rng)
    ro = readout_for(device)
    noise_seed = int(rng.integers(2**63))
    stat, final, trace = ro.run(outcome, noise_seed, with_trace=return_trace)
    detected = stat > ro.threshold_m
    record = MeasurementRecord(
        site=site, detected=bool(detected),
        elapsed_s=ro.crossing_s if outcome == 0 else ro.window_s,
        final_amplitude_m=final, pulse_count=ro.pulse_count, collapsed_outcome=int(outcome),
        statistic_m=float(stat), threshold_m=ro.threshold_m, window_s=ro.window_s, probability=float(prob))
    if return_trace:
        return record, collapsed, trace
    return record, collapsed


# schedule execution ---------------------------------------------------------------

def execute_schedule(schedule: Schedule, state: ChainState, device: Device,
                     ising_spec: IsingChainSpec | None = None, *, mode: str = "ideal", seed=None) -> ChainState:
    """Run a compiled schedule on a chain state."""
    if schedule.qubit_count != state.n:
        raise ProtocolError(f"schedule is for {schedule.qubit_count} qubits, state has {state.n}")
    if schedule.mode == "single_spin":
        model = SingleSpinModel(device.geom, device.species, state.n)
    elif ising_spec is not None:
        model = IsingModel(ising_spec, device.geom)
    else:
        raise ProtocolError("ising_array schedules need the Ising chain specification")
    rng = _rng(seed) if mode == "stochastic" else None
    for step in schedule.steps:
        if isinstance(step, MoveProbe):
            state = move_probe(state, step.site)
        elif isinstance(step, FrameShift):
            state = apply_frame_shift(state, step.site, step.angle)
        elif isinstance(step, Pulse):
            if step.probe_site != state.probe_site:
                raise ProtocolError(f"pulse assumes probe at {step.probe_site}, probe is at {state.probe_site}")
            res = model if isinstance(model, IsingModel) else model.resonance(step.spec.target_kind, state.probe_site)
            state = apply_pulse(state, step.spec, res, mode=mode, rng=rng)
        else:
            raise TypeError(f"unknown schedule step {step!r}")
    return state


def inverse_cn_gate(device: Device, state: ChainState, control: int, target: int, seed=None,
                    mode: str = "ideal") -> ChainState:
    """Three-step inverse CN: flip the target iff the control nucleus is |0>."""
    if abs(control - target) != 1 or not (0 <= control < state.n and 0 <= target < state.n):
        raise ProtocolError(f"sites {control} and {target} are not neighbours")
    if any(state.electron_register()):
        raise ProtocolError("inverse CN needs every electron in its ground state")
    sched = compile_circuit(Circuit(state.n, [InverseCN(control, target)]), "single_spin", device, check=False)
    return execute_schedule(sched, state, device, mode=mode, seed=seed)


# polarization ---------------------------------------------------------------------

@dataclass
class PolarizationResult:
    state: ChainState
    records: list = field(default_factory=list)
    corrective_pulses: int = 0
    electron_pulses: int = 0


def polarize_chain(device: Device, state: ChainState, seed, *, confirmations: int = 2,
                   max_attempts: int = 50) -> PolarizationResult:
    """Drive every nucleus to |0> by measurement and conditional nuclear pi pulses.

    A site is accepted once ``confirmations`` consecutive readouts detect it;
    any non-detection triggers a corrective pulse, so a missed |0> is flipped
    and then flipped back on the next round.
    """
    if any(state.electron_register()):
        raise ProtocolError("polarization needs every electron in its ground state")
    rng = _rng(seed)
    model = SingleSpinModel(device.geom, device.species, state.n)
    result = PolarizationResult(state)
    for site in range(state.n):
        state = move_probe(state, site)
        carrier = model.nuclear_lines(site, 0)[site, 0]
        pulse = PulseSpec.rotation(carrier, device.rabi.nuclear_Hz, math.pi, NUCLEAR)
        streak = 0
        for _ in range(max_attempts):
            record, state = measure_nuclear_spin(device, state, site, rng)
            result.records.append(record)
            result.electron_pulses += record.pulse_count
            if record.detected:
                streak += 1
                if streak >= confirmations:
                    break
            else:
                streak = 0
                state = apply_pulse(state, pulse, model.resonance(NUCLEAR, site))
                result.corrective_pulses += 1
        else:
            raise ProtocolError(f"site {site} did not settle after {max_attempts} readouts")
    result.state = move_probe(state, None)
    return result


# ensembles ------------------------------------------------------------------------

def sample_initial_states(n_sites: int, p_ground, count: int, seed) -> np.ndarray:
    """Basis indices for ``count`` chains with independent sites, P(site k = 0) = p_ground[k]."""
    p = np.broadcast_to(np.asarray(p_ground, dtype=float), (n_sites,))
    if np.any((p < 0) | (p > 1)):
        raise ValueError("ground-state probabilities must lie in [0, 1]")
    bits = (_rng(seed).random((count, n_sites)) >= p).astype(np.int64)
    weights = 1 << (n_sites - 1 - np.arange(n_sites))
    return bits @ weights


def ensemble_column_readout(states, column: int, *, weights=None, sampling: str = "expectation",
                            seed=None) -> EnsembleReadout:
    """Mean of 2<I^z> at ``column`` over a list of chains.

    ``weights`` gives the number of chains each state stands for (identical
    chains can be grouped). ``sampling="projective"`` replaces each chain's
    expectation by a seeded +-1 outcome.
    """
    states = list(states)
    if not states:
        raise ProtocolError("empty ensemble")
    w = np.ones(len(states), dtype=np.int64) if weights is None else np.asarray(weights, dtype=np.int64)
    total = int(w.sum())
    if total < 1:
        raise ProtocolError("empty ensemble")
    z = np.array([s.z_expectation(column) for s in states])
    if sampling == "expectation":
        mean = float(np.dot(w, z) / total)
        var = float(np.dot(w, (1 - z * z)) / total)
    elif sampling == "projective":
        rng = _rng(seed)
        ups = np.array([rng.binomial(int(c), (1 + zi) / 2) for c, zi in zip(w, z)])
        mean = float((2 * ups.sum() - total) / total)
        var = 1 - mean * mean
    else:
        raise ValueError(f"unknown sampling {sampling!r}")
    mean = min(1.0, max(-1.0, mean))
    return EnsembleReadout(column, mean, total, math.sqrt(max(var, 0.0) / total))


def run_ensemble(schedule: Schedule, device: Device, p_ground, count: int, seed, column: int,
                 ising_spec: IsingChainSpec | None = None, *, sampling: str = "projective") -> EnsembleReadout:
    """Statistical ensemble: sample basis-state chains, evolve each distinct one once, read a column."""
    rng = _rng(seed)
    n = schedule.qubit_count
    idx = sample_initial_states(n, p_ground, count, rng)
    uniq, counts = np.unique(idx, return_counts=True)
    finals = [execute_schedule(schedule, ChainState.basis(index_to_bits(int(i), n)), device, ising_spec)
              for i in uniq]
    return ensemble_column_readout(finals, column, weights=counts, sampling=sampling, seed=rng)


__all__ = [
    "EnsembleReadout", "MeasurementRecord", "PolarizationResult", "ProtocolError", "Readout",
    "ensemble_column_readout", "execute_schedule", "inverse_cn_gate", "measure_nuclear_spin",
    "polarize_chain", "readout_for", "run_ensemble", "sample_initial_states",
]
