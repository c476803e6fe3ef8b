"""TOML run configuration.

Sections mirror the library types: ``[geometry]``, ``[species]``,
``[cantilever]``, ``[rabi]``, ``[device]``, ``[run]``, ``[state]``,
``[ising]``, ``[ensemble]``, ``[measure]``. Lengths accept a unit suffix
(``"50 A"``, ``"5e-9 m"``, ``"5 nm"``); bare numbers are metres. Unknown
sections or keys are rejected.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .cantilever import CantileverParams
from .device import DEFAULT_MARGIN, Device, RabiSelection
from .magnetostatics import DeviceGeometry
from .spectroscopy import IsingChainSpec, SpinSpecies
from .validator import DEFAULT_EXCITATION_BOUND

MODES = ("single_spin", "ising_array", "statistical_ensemble")

_LENGTH_UNITS = {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6, "nm": 1e-9, "a": 1e-10, "å": 1e-10,
                 "angstrom": 1e-10}
_LENGTH_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*([A-Za-zÅå]+)\s*$")

# section -> {key: kind}; kind is "length", "float", "int", "bool", "str", "floats" or "label"
SCHEMA = {
    "geometry": {"probe_radius": "length", "probe_gap": "length", "atom_spacing": "length",
                 "probe_magnetization_T": "float", "external_field_T": "float", "temperature_K": "float",
                 "chain_length": "int"},
    "species": {"gamma_e_Hz_per_T": "float", "gamma_n_Hz_per_T": "float", "hyperfine_Hz": "float"},
    "cantilever": {"spring_constant_N_per_m": "float", "resonance_Hz": "float", "quality_factor": "float",
                   "reference_thermal_amplitude": "length", "reference_temperature_K": "float"},
    "rabi": {"electron_Hz": "float", "nuclear_Hz": "float", "cn_nuclear_Hz": "float",
             "ising_rotation_Hz": "float", "ising_cn_Hz": "float", "snap_2pik": "bool"},
    "device": {"electron_lifetime_s": "float", "noise": "str", "readout_window_tau": "float",
               "move_latency_s": "float"},
    "run": {"mode": "str", "seed": "int", "margin": "float", "excitation_bound": "float",
            "pulse_mode": "str"},
    "state": {"initial": "label"},
    "ising": {"gammas_Hz_per_T": "floats", "couplings_Hz": "floats", "base_frequencies_Hz": "floats",
              "field_T": "float"},
    "ensemble": {"chains": "int", "p_ground": "floats", "column": "int", "sampling": "str"},
    "measure": {"site": "int", "repeats": "int"},
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def parse_length(value) -> float:
    if isinstance(value, bool):
        raise ValueError("expected a length")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _LENGTH_RE.match(value)
        if m and m.group(2).lower() in _LENGTH_UNITS:
            return float(m.group(1)) * _LENGTH_UNITS[m.group(2).lower()]
        try:
            return float(value)
        except ValueError:
            pass
    raise ValueError(f"cannot read {value!r} as a length (use e.g. '50 A' or '5e-9 m')")


def _coerce(kind, value):
    if kind == "length":
        return parse_length(value)
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"expected a number, got {value!r}")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"expected an integer, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ValueError(f"expected true/false, got {value!r}")
        return value
    if kind in ("str", "label"):
        if not isinstance(value, str):
            raise ValueError(f"expected a string, got {value!r}")
        if kind == "label" and (not value or set(value) - set("01+-")):
            raise ValueError(f"state label must use 0 1 + - only, got {value!r}")
        return value
    if kind == "floats":
        items = value if isinstance(value, list) else [value]
        return [_coerce("float", v) for v in items]
    raise AssertionError(kind)


def _check_keys(raw: dict) -> dict:
    out = {}
    for section, body in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"[{section}]: unknown section")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}]: expected a table")
        out[section] = {}
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"[{section}] {key}: unknown key")
            try:
                out[section][key] = _coerce(SCHEMA[section][key], value)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
    return out


@dataclass
class RunConfig:
    device: Device
    mode: str = "single_spin"
    seed: int = 0
    margin: float = DEFAULT_MARGIN
    excitation_bound: float = DEFAULT_EXCITATION_BOUND
    pulse_mode: str = "ideal"
    initial_state: str | None = None
    ising: IsingChainSpec | None = None
    ensemble_chains: int = 1000
    ensemble_p_ground: list = field(default_factory=lambda: [1.0])
    ensemble_column: int | None = None
    ensemble_sampling: str = "projective"
    measure_site: int = 0
    measure_repeats: int = 1
    raw: dict = field(default_factory=dict, repr=False)


def build_config(raw: dict) -> RunConfig:
    """Turn a parsed TOML mapping into a :class:`RunConfig`."""
    data = _check_keys(raw)
    sec = lambda name: data.get(name, {})  # noqa: E731

    def build(section, fn):
        try:
            return fn(sec(section))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from None

    geom = build("geometry", lambda g: DeviceGeometry(
        probe_radius_m=_required(g, "geometry", "probe_radius"),
        probe_gap_m=_required(g, "geometry", "probe_gap"),
        atom_spacing_m=_required(g, "geometry", "atom_spacing"),
        probe_magnetization_T=_required(g, "geometry", "probe_magnetization_T"),
        external_field_T=_required(g, "geometry", "external_field_T"),
        temperature_K=_required(g, "geometry", "temperature_K"),
        chain_length=g.get("chain_length", 1)))
    species = build("species", lambda s: SpinSpecies(**s))
    cant = build("cantilever", lambda c: CantileverParams(**{
        ("reference_thermal_amplitude_m" if k == "reference_thermal_amplitude" else k): v for k, v in c.items()}))
    rabi = build("rabi", lambda r: RabiSelection(**r))
    device = build("device", lambda d: Device(geom, species, cant, rabi, **d))
    run = sec("run")
    mode = run.get("mode", "single_spin")
    if mode not in MODES:
        raise ConfigError(f"[run] mode: expected one of {', '.join(MODES)}, got {mode!r}")
    pulse_mode = run.get("pulse_mode", "ideal")
    if pulse_mode not in ("ideal", "stochastic"):
        raise ConfigError(f"[run] pulse_mode: expected ideal or stochastic, got {pulse_mode!r}")
    margin = run.get("margin", DEFAULT_MARGIN)
    if margin < 1:
        raise ConfigError("[run] margin: must be >= 1")
    ising = build("ising", lambda i: _ising(i, geom)) if "ising" in data else None
    ens = sec("ensemble")
    sampling = ens.get("sampling", "projective")
    if sampling not in ("projective", "expectation"):
        raise ConfigError(f"[ensemble] sampling: expected projective or expectation, got {sampling!r}")
    if ens.get("chains", 1) < 1:
        raise ConfigError("[ensemble] chains: must be >= 1")
    p_ground = ens.get("p_ground", [1.0])
    if any(not 0 <= p <= 1 for p in p_ground):
        raise ConfigError("[ensemble] p_ground: probabilities must lie in [0, 1]")
    meas = sec("measure")
    if meas.get("repeats", 1) < 1:
        raise ConfigError("[measure] repeats: must be >= 1")
    return RunConfig(
        device=device, mode=mode, seed=run.get("seed", 0), margin=margin,
        excitation_bound=run.get("excitation_bound", DEFAULT_EXCITATION_BOUND), pulse_mode=pulse_mode,
        initial_state=sec("state").get("initial"), ising=ising,
        ensemble_chains=ens.get("chains", 1000), ensemble_p_ground=p_ground,
        ensemble_column=ens.get("column"), ensemble_sampling=sampling,
        measure_site=meas.get("site", 0), measure_repeats=meas.get("repeats", 1), raw=copy.deepcopy(raw))


def _required(section: dict, name: str, key: str):
    if key not in section:
        raise ConfigError(f"[{name}] {key}: missing required key")
    return section[key]


def _ising(i: dict, geom: DeviceGeometry) -> IsingChainSpec:
    couplings = _required(i, "ising", "couplings_Hz")
    if "base_frequencies_Hz" in i:
        return IsingChainSpec(i["base_frequencies_Hz"], couplings, i.get("gammas_Hz_per_T"))
    gammas = _required(i, "ising", "gammas_Hz_per_T")
    return IsingChainSpec.from_gammas(gammas, couplings, i.get("field_T", geom.external_field_T))


def load_config(path=None) -> RunConfig:
    """Read a TOML file; ``None`` loads the bundled paper parameter set."""
    try:
        if path is None:
            text = resources.files("mrfmqc").joinpath("data/paper.toml").read_text()
        else:
            text = Path(path).read_text()
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return build_config(raw)


def with_override(raw: dict, dotted: str, value) -> dict:
    """Copy of ``raw`` with ``section.key`` set to ``value`` (checked against the schema)."""
    section, _, key = dotted.partition(".")
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(f"unknown parameter {dotted!r}")
    out = copy.deepcopy(raw)
    out.setdefault(section, {})[key] = value
    return out


__all__ = ["ConfigError", "RunConfig", "SCHEMA", "build_config", "load_config", "parse_length", "with_override"]
