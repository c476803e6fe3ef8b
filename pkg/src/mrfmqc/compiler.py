"""Compile rotation / inverse-CN circuits into timed probe-move and pulse schedules.

Two targets are supported:

``single_spin``
    A chain of paramagnetic atoms addressed one at a time by the probe. An
    inverse-CN gate is the electron / nuclear / electron three-step sequence,
    and carriers come from :class:`~mrfmqc.chain.SingleSpinModel`.
``ising_array``
    A diagonal Ising chain whose lines depend on the neighbours' z-states; a
    (inverse-)CN is one pulse per state of the target's other neighbour.

Rectangular pulses rotate about the rotating-frame x axis. Resonant pi pulses
implement ``-iX``, so controlled flips pick up a branch phase; the compiler
cancels it with a zero-duration frame shift (virtual z rotation) on the control.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .cantilever import thermal_rms, field_jitter
from .chain import ELECTRON, NUCLEAR, IsingModel, PulseSpec, SingleSpinModel, bits_to_index, flip_probability
from .device import DEFAULT_MARGIN, Device
from .spectroscopy import IsingChainSpec

MODES = ("single_spin", "ising_array")


class CompileError(ValueError):
    """The circuit cannot be compiled for the given device."""


def rabi_2pik(detuning_Hz: float, k: int = 1) -> float:
    """Rabi frequency whose resonant pi pulse is a full 2*pi*k turn at ``detuning_Hz``."""
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    if not detuning_Hz > 0:
        raise ValueError("2pi k method needs a nonzero detuning")
    return detuning_Hz / math.sqrt(4 * k * k - 1)


def snap_2pik(requested_Hz: float, detuning_Hz: float, angle: float = math.pi) -> float:
    """Largest Rabi frequency <= ``requested_Hz`` that turns a line at ``detuning_Hz`` by 2*pi*k.

    For a pulse of rotation angle ``angle`` the condition is
    sqrt(f_R^2 + delta^2) * angle / (2 pi f_R) = k. Requests at or above the
    detuning are returned unchanged (no selective choice exists there).
    """
    angle = abs(angle)
    if angle == 0 or not 0 < requested_Hz < detuning_Hz:
        return requested_Hz
    k = 1
    while True:
        ratio = 2 * math.pi * k / angle
        if ratio > 1:
            f_r = detuning_Hz / math.sqrt(ratio * ratio - 1)
            if f_r <= requested_Hz:
                return f_r
        k += 1


ISING_LEAK_TOL = 1e-4


def quiet_rabi(detunings_Hz, upper_Hz: float, tol: float = ISING_LEAK_TOL, samples: int = 20000) -> float:
    """Largest pi-pulse Rabi frequency below ``upper_Hz`` flipping no line at ``detunings_Hz`` by more than ``tol``."""
    d = np.abs(np.asarray(detunings_Hz, dtype=float))[:, None]
    if d.size == 0:
        return upper_Hz

    def worst(f):
        return np.max(flip_probability(d, f, 0.5 / f), axis=0) - tol

    grid = np.geomspace(upper_Hz, upper_Hz * 1e-4, samples, endpoint=False)
    ok = np.flatnonzero(worst(grid[None, :]) <= 0)
    if ok.size == 0:
        raise CompileError(f"no Rabi frequency below {upper_Hz:g} Hz keeps off-target flips under {tol:g}")
    i = ok[0]
    if i == 0:
        return float(grid[0])
    return float(brentq(lambda f: worst(np.array([[f]]))[0], grid[i], grid[i - 1], xtol=1e-12 * upper_Hz))


# circuits -----------------------------------------------------------------------

@dataclass(frozen=True)
class RotX:
    site: int
    angle: float


@dataclass(frozen=True)
class InverseCN:
    """Target flips when the control is in the ground state."""

    control: int
    target: int


@dataclass(frozen=True)
class CN:
    """Target flips when the control is excited."""

    control: int
    target: int


_GATE_NAMES = {RotX: "rotx", InverseCN: "icn", CN: "cn"}


@dataclass
class Circuit:
    qubit_count: int
    gates: list = field(default_factory=list)

    def __post_init__(self):
        if self.qubit_count < 1:
            raise ValueError("qubit_count must be >= 1")
        for gate in self.gates:
            self._check(gate)

    def _check(self, gate):
        n = self.qubit_count
        if isinstance(gate, RotX):
            sites = (gate.site,)
        elif isinstance(gate, (InverseCN, CN)):
            sites = (gate.control, gate.target)
            if abs(gate.control - gate.target) != 1:
                raise CompileError(f"{_GATE_NAMES[type(gate)]} {gate.control} {gate.target}: "
                                   "operands must be nearest neighbours")
        else:
            raise TypeError(f"unsupported gate {gate!r}")
        for s in sites:
            if not 0 <= s < n:
                raise ValueError(f"site {s} outside {n}-qubit circuit")

    def append(self, gate) -> "Circuit":
        self._check(gate)
        self.gates.append(gate)
        return self

    def to_text(self) -> str:
        lines = [f"qubits {self.qubit_count}"]
        for g in self.gates:
            if isinstance(g, RotX):
                lines.append(f"rotx {g.site} {g.angle!r}")
            else:
                lines.append(f"{_GATE_NAMES[type(g)]} {g.control} {g.target}")
        return "\n".join(lines) + "\n"


def parse_circuit(text: str, qubit_count: int | None = None) -> Circuit:
    """Read the line format ``rotx <site> <angle_rad>`` / ``icn <c> <t>`` / ``cn <c> <t>``.

    ``#`` starts a comment; an optional ``qubits <n>`` line fixes the width,
    otherwise ``qubit_count`` or the highest referenced site is used. Angles
    accept ``pi`` expressions such as ``pi/2``.
    """
    gates = []
    declared = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        op = parts[0].lower()
        try:
            if op == "qubits" and len(parts) == 2:
                declared = int(parts[1])
            elif op == "rotx" and len(parts) == 3:
                gates.append(RotX(int(parts[1]), _parse_angle(parts[2])))
            elif op in ("icn", "cn") and len(parts) == 3:
                cls = InverseCN if op == "icn" else CN
                gates.append(cls(int(parts[1]), int(parts[2])))
            else:
                raise ValueError(f"cannot parse {line!r}")
        except ValueError as exc:
            raise ValueError(f"circuit line {lineno}: {exc}") from None
    n = declared or qubit_count
    if n is None:
        sites = [s for g in gates for s in ((g.site,) if isinstance(g, RotX) else (g.control, g.target))]
        n = max(sites) + 1 if sites else 1
    return Circuit(n, gates)


def _parse_angle(token: str) -> float:
    t = token.lower().replace(" ", "")
    if "pi" not in t:
        return float(t)
    num, _, den = t.partition("/")
    c = num.replace("*", "").replace("pi", "")
    coeff = {"": 1.0, "+": 1.0, "-": -1.0}[c] if c in ("", "+", "-") else float(c)
    value = coeff * math.pi
    return value / float(den) if den else value


# schedules ----------------------------------------------------------------------

@dataclass(frozen=True)
class MoveProbe:
    site: int | None  # None parks the probe away from the chain


@dataclass(frozen=True)
class Pulse:
    spec: PulseSpec
    site: int
    probe_site: int | None
    role: str
    transition: str
    gate: int = -1
    control: int | None = None


@dataclass(frozen=True)
class FrameShift:
    site: int
    angle: float
    gate: int = -1


@dataclass
class Schedule:
    mode: str
    qubit_count: int
    steps: list = field(default_factory=list)
    move_latency_s: float = 0.0

    @property
    def pulses(self) -> list:
        return [s for s in self.steps if isinstance(s, Pulse)]

    @property
    def total_duration_s(self) -> float:
        moves = sum(1 for s in self.steps if isinstance(s, MoveProbe))
        return sum(p.spec.duration_s for p in self.pulses) + moves * self.move_latency_s

    def counts(self) -> dict:
        out = {"move": 0, "electron": 0, "nuclear": 0, "frame": 0}
        for s in self.steps:
            if isinstance(s, MoveProbe):
                out["move"] += 1
            elif isinstance(s, FrameShift):
                out["frame"] += 1
            else:
                out[s.spec.target_kind] += 1
        return out

    def to_dict(self) -> dict:
        steps = []
        for s in self.steps:
            if isinstance(s, MoveProbe):
                steps.append({"kind": "move", "site": s.site})
            elif isinstance(s, FrameShift):
                steps.append({"kind": "frame", "site": s.site, "angle_rad": s.angle, "gate": s.gate})
            else:
                steps.append({
                    "kind": "pulse", "site": s.site, "target_kind": s.spec.target_kind,
                    "frequency_Hz": s.spec.carrier_Hz, "rabi_Hz": s.spec.rabi_Hz,
                    "duration_s": s.spec.duration_s, "angle_rad": s.spec.nominal_angle,
                    "phase_rad": s.spec.phase_rad, "probe_site": s.probe_site, "role": s.role,
                    "control": s.control, "gate": s.gate, "transition": s.transition,
                })
        return {"mode": self.mode, "qubit_count": self.qubit_count,
                "move_latency_s": self.move_latency_s,
                "total_duration_s": self.total_duration_s, "steps": steps}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Schedule":
        steps = []
        for s in data["steps"]:
            kind = s["kind"]
            if kind == "move":
                steps.append(MoveProbe(s["site"]))
            elif kind == "frame":
                steps.append(FrameShift(s["site"], s["angle_rad"], s.get("gate", -1)))
            elif kind == "pulse":
                spec = PulseSpec(s["frequency_Hz"], s["rabi_Hz"], s["duration_s"], s["target_kind"],
                                 s.get("angle_rad", math.pi), s.get("phase_rad", 0.0))
                steps.append(Pulse(spec, s["site"], s.get("probe_site"), s["role"],
                                   s.get("transition", ""), s.get("gate", -1), s.get("control")))
            else:
                raise ValueError(f"unknown step kind {kind!r}")
        return cls(data["mode"], data["qubit_count"], steps, data.get("move_latency_s", 0.0))


# compilation ----------------------------------------------------------------------

def compile_circuit(circuit: Circuit, mode: str, device: Device, ising_spec: IsingChainSpec | None = None,
                    *, margin: float = DEFAULT_MARGIN, check: bool = True) -> Schedule:
    """Lower ``circuit`` to a :class:`Schedule`.

    With ``check`` the result is run through :func:`verify_schedule` and any
    violated window raises :class:`CompileError` naming the inequality.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    sched = Schedule(mode, circuit.qubit_count, move_latency_s=device.move_latency_s)
    if mode == "single_spin":
        _SingleSpinLowering(device, circuit.qubit_count, margin).lower(circuit, sched)
    else:
        if ising_spec is None:
            raise CompileError("ising_array mode needs an Ising chain specification")
        if ising_spec.size != circuit.qubit_count:
            raise CompileError(f"circuit has {circuit.qubit_count} qubits but the Ising chain has {ising_spec.size}")
        _IsingLowering(device, ising_spec).lower(circuit, sched)
    if check:
        report = verify_schedule(sched, device, ising_spec, margin=margin)
        if not report.ok:
            raise CompileError("no feasible Rabi window:\n" + "\n".join(report.violations()))
    return sched


class _SingleSpinLowering:
    def __init__(self, device: Device, n: int, margin: float = DEFAULT_MARGIN):
        self.device = device
        self.model = SingleSpinModel(device.geom, device.species, n)
        self.n = n
        self.margin = margin

    def lower(self, circuit: Circuit, sched: Schedule) -> None:
        for idx, gate in enumerate(circuit.gates):
            if isinstance(gate, RotX):
                self._rotx(sched, idx, gate.site, gate.angle)
            elif isinstance(gate, InverseCN):
                self._inverse_cn(sched, idx, gate.control, gate.target)
            else:
                # the excited-nucleus ESR line sits close to a third neighbour's line,
                # so CN is conjugated onto the ground-state line by nuclear pi pulses
                self._rotx(sched, idx, gate.control, math.pi)
                self._inverse_cn(sched, idx, gate.control, gate.target)
                self._rotx(sched, idx, gate.control, math.pi)

    def _rotx(self, sched, idx, site, angle):
        lines = self.model.nuclear_lines(site, 0)[:, 0]
        carrier = lines[site]
        rabi = self.device.rabi.nuclear_Hz
        if self.device.rabi.snap_2pik and self.n > 1:
            rabi = snap_2pik(rabi, float(np.min(np.abs(np.delete(lines, site) - carrier))), angle)
        sched.steps.append(MoveProbe(site))
        spec = PulseSpec.rotation(carrier, rabi, angle, NUCLEAR)
        sched.steps.append(Pulse(spec, site, site, "rotx", f"NMR site {site}", idx))

    def _inverse_cn(self, sched, idx, control, target):
        """Flip ``target`` when the control nucleus is in the ground state."""
        m = self.model
        rabi = self.device.rabi
        e_lines = m.electron_lines(control, 0)
        f_e = float(e_lines[control, 0])
        f_eR = rabi.electron_Hz
        if rabi.snap_2pik:
            unwanted = np.abs(np.unique(e_lines) - f_e)
            nearest = float(np.min(unwanted[unwanted > 1e-6]))
            if f_eR < nearest:
                f_eR = snap_2pik(min(f_eR, nearest / self.margin), nearest)
        e_spec = PulseSpec.rotation(f_e, f_eR, math.pi, ELECTRON)
        flipped = bits_to_index([1 if k == control else 0 for k in range(self.n)])
        f_on = m.nuclear_lines(target, flipped)[target, 0]
        f_off = m.nuclear_lines(target, 0)[target, 0]
        f_n_rabi = rabi.cn_nuclear_Hz or rabi_2pik(abs(f_on - f_off), 1)
        n_spec = PulseSpec.rotation(f_on, f_n_rabi, math.pi, NUCLEAR)
        label = f"ESR site {control} (nucleus |0>)"
        sched.steps += [
            MoveProbe(control),
            Pulse(e_spec, control, control, "cn_electron", label, idx),
            MoveProbe(target),
            Pulse(n_spec, target, target, "cn_nuclear", f"NMR site {target}, electron {control} flipped",
                  idx, control),
            MoveProbe(control),
            Pulse(e_spec, control, control, "cn_electron", label, idx),
            FrameShift(control, -math.pi / 2, idx),
        ]


def _index_with(n, site, value):
    return bits_to_index([value if k == site else 0 for k in range(n)])


class _IsingLowering:
    def __init__(self, device: Device, spec: IsingChainSpec):
        self.device = device
        self.spec = spec
        self.model = IsingModel(spec, device.geom)
        self.n = spec.size

    def lower(self, circuit: Circuit, sched: Schedule) -> None:
        for idx, gate in enumerate(circuit.gates):
            sched.steps.append(MoveProbe(gate.site if isinstance(gate, RotX) else gate.target))
            if isinstance(gate, RotX):
                self._rotx(sched, idx, gate.site, gate.angle)
            else:
                self._controlled(sched, idx, gate.control, gate.target, 0 if isinstance(gate, InverseCN) else 1)

    def _rotx(self, sched, idx, site, angle):
        lines = self.model.lines(site)
        center = float(self.spec.base_frequencies_Hz[site] + self.spec.probe_shifts(self.device.geom, site)[site])
        rabi = self.device.rabi.ising_rotation_Hz
        if rabi is None:
            spread = float(np.max(np.abs(lines[site] - center)))
            others = _other_site_lines(lines, site)
            sep = float(np.min(np.abs(others - center))) if others.size else 1e3 * max(spread, 1.0)
            rabi = math.sqrt(max(spread, sep / 1e6) * sep)
        spec = PulseSpec.rotation(center, rabi, angle, NUCLEAR)
        sched.steps.append(Pulse(spec, site, site, "ising_rotx", f"site {site}, all neighbour states", idx))

    def _controlled(self, sched, idx, control, target, branch):
        lines = self.model.lines(target)
        n = self.n
        other = target + (target - control)
        others = [None] if not 0 <= other < n else [0, 1]
        carriers = []
        for o in others:
            bits = [0] * n
            bits[control] = branch
            if o is not None:
                bits[other] = o
            carriers.append((o, float(lines[target, bits_to_index(bits)])))
        couplings = [abs(self.spec.couplings_Hz[min(target, s)]) for s in (target - 1, target + 1) if 0 <= s < n]
        j_min = min(couplings)
        all_lines = np.unique(lines)
        rabi = self.device.rabi.ising_cn_Hz
        for o, f in carriers:
            unwanted = all_lines[np.abs(all_lines - f) > 1e-9] - f
            f_r = rabi if rabi is not None else quiet_rabi(unwanted, j_min)
            spec = PulseSpec.rotation(f, f_r, math.pi, NUCLEAR)
            desc = f"site {target}, control {control}={branch}" + ("" if o is None else f", site {other}={o}")
            sched.steps.append(Pulse(spec, target, target, "ising_cn", desc, idx, control))
        sched.steps.append(FrameShift(control, -math.pi / 2 if branch == 0 else math.pi / 2, idx))


def _other_site_lines(lines: np.ndarray, site: int) -> np.ndarray:
    return np.unique(np.delete(lines, site, axis=0))


# verification ---------------------------------------------------------------------

@dataclass(frozen=True)
class WindowCheck:
    name: str
    relation: str
    lhs: float
    rhs: float
    required: float
    passed: bool

    @property
    def ratio(self) -> float:
        return self.rhs / self.lhs if self.lhs > 0 else math.inf

    def to_dict(self) -> dict:
        return {"name": self.name, "relation": self.relation, "lhs": self.lhs, "rhs": self.rhs,
                "ratio": self.ratio, "required_ratio": self.required, "pass": self.passed}


def _window(name, relation, lhs, rhs, required):
    lhs, rhs = float(lhs), float(rhs)
    passed = rhs >= required * lhs if required > 1 else lhs < rhs
    return WindowCheck(name, relation, lhs, rhs, required, bool(passed))


@dataclass
class PulseReport:
    step: int
    site: int
    role: str
    frequency_Hz: float
    rabi_Hz: float
    checks: list
    worst_leak: float
    worst_leak_detuning_Hz: float | None

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"step": self.step, "site": self.site, "role": self.role, "frequency_Hz": self.frequency_Hz,
                "rabi_Hz": self.rabi_Hz, "worst_off_target_flip": self.worst_leak,
                "worst_off_target_detuning_Hz": self.worst_leak_detuning_Hz, "pass": self.ok,
                "checks": [c.to_dict() for c in self.checks]}


@dataclass
class ScheduleReport:
    entries: list = field(default_factory=list)
    margin: float = DEFAULT_MARGIN

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)

    def violations(self) -> list:
        out = []
        for e in self.entries:
            for c in e.checks:
                if not c.passed:
                    need = f" (needs ratio >= {c.required:g}, got {c.ratio:.3g})" if c.required > 1 else ""
                    out.append(f"step {e.step} ({e.role}, site {e.site}): {c.name}: {c.relation} violated: "
                               f"{c.lhs:.4g} vs {c.rhs:.4g}{need}")
        return out

    def to_dict(self) -> dict:
        return {"pass": self.ok, "margin": self.margin, "pulses": [e.to_dict() for e in self.entries]}


def verify_schedule(schedule: Schedule, device: Device, ising_spec: IsingChainSpec | None = None,
                    *, margin: float = DEFAULT_MARGIN) -> ScheduleReport:
    """Check each pulse's Rabi frequency against its selectivity window.

    Hard bounds use ratio 1, order-of-magnitude separations use ``margin``.
    The off-target figure is the largest Rabi-formula flip probability over
    every line the pulse is not meant to drive.
    """
    report = ScheduleReport(margin=margin)
    if not schedule.steps:
        return report
    n = schedule.qubit_count
    single = SingleSpinModel(device.geom, device.species, n) if schedule.mode == "single_spin" else None
    ising = None
    if schedule.mode == "ising_array":
        if ising_spec is None:
            raise ValueError("ising_array schedules need the Ising chain specification")
        ising = IsingModel(ising_spec, device.geom)
    jitter = None
    for i, step in enumerate(schedule.steps):
        if not isinstance(step, Pulse):
            continue
        spec = step.spec
        f = spec.carrier_Hz
        checks = []
        if step.role == "cn_electron":
            if jitter is None:
                z_thr = math.sqrt(2.0) * thermal_rms(device.cantilever, device.geom.temperature_K)
                jitter = field_jitter(device.geom, z_thr, device.species.gamma_e_Hz_per_T)["df_e_Hz"]
            lines = single.electron_lines(step.probe_site, 0)
            own = np.unique(lines[step.site])
            others = np.unique(np.delete(lines, step.site, axis=0))
            sel = float(np.min(np.abs(others - f))) if others.size else math.inf
            checks += [
                _window("jitter", "df_e << f_eR", jitter, spec.rabi_Hz, margin),
                _window("selectivity", "f_eR << df'_e", spec.rabi_Hz, sel, margin),
                _window("hyperfine", "f_eR < 2 f_hf", spec.rabi_Hz, 2 * device.species.hyperfine_Hz, 1),
            ]
            unwanted = np.concatenate([own[np.abs(own - f) > 1e-6], others])
        elif step.role in ("rotx", "cn_nuclear"):
            e = 0 if step.control is None else _index_with(n, step.control, 1)
            lines = single.nuclear_lines(step.probe_site, e)[:, 0]
            others = np.delete(lines, step.site)
            sel = float(np.min(np.abs(others - f))) if others.size else math.inf
            checks.append(_window("addressing", "f_nR < df'_n", spec.rabi_Hz, sel, 1))
            unwanted = others
            if step.role == "cn_nuclear":
                off = single.nuclear_lines(step.probe_site, 0)[step.site, 0]
                checks.append(_window("cn_gap", "f_nR < CN gap", spec.rabi_Hz, abs(off - f), 1))
                unwanted = np.append(unwanted, off)
        elif step.role == "ising_rotx":
            lines = ising.lines(step.probe_site)
            spread = float(np.max(np.abs(lines[step.site] - f)))
            others = _other_site_lines(lines, step.site)
            sel = float(np.min(np.abs(others - f))) if others.size else math.inf
            if spread > 0:
                checks.append(_window("coupling", "J << f_R", spread, spec.rabi_Hz, margin))
            checks.append(_window("selectivity", "f_R << probe shift", spec.rabi_Hz, sel, margin))
            unwanted = others
        elif step.role == "ising_cn":
            lines = ising.lines(step.probe_site)
            t = step.site
            couplings = [abs(ising_spec.couplings_Hz[min(t, s)]) for s in (t - 1, t + 1) if 0 <= s < n]
            checks.append(_window("cn_coupling", "f_R < J", spec.rabi_Hz, min(couplings), 1))
            own = np.unique(lines[t])
            unwanted = np.concatenate([own[np.abs(own - f) > 1e-9], _other_site_lines(lines, t)])
        else:
            raise ValueError(f"unknown pulse role {step.role!r}")
        if unwanted.size:
            leaks = flip_probability(unwanted - f, spec.rabi_Hz, spec.duration_s)
            j = int(np.argmax(leaks))
            worst, worst_d = float(leaks[j]), float(unwanted[j] - f)
        else:
            worst, worst_d = 0.0, None
        report.entries.append(PulseReport(i, step.site, step.role, f, spec.rabi_Hz, checks, worst, worst_d))
    return report


__all__ = [
    "CN", "Circuit", "CompileError", "FrameShift", "InverseCN", "MoveProbe", "Pulse", "RotX", "Schedule",
    "ScheduleReport", "compile_circuit", "parse_circuit", "quiet_rabi", "rabi_2pik", "snap_2pik", "verify_schedule",
]
