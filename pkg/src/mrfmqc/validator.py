"""Feasibility checks for a full device design and the paper-number regression table."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

from .cantilever import (
    DetectionUnreachable,
    detection_time,
    field_jitter,
    ring_up_time,
    stationary_amplitude,
    thermal_rms,
)
from .compiler import rabi_2pik
from .device import DEFAULT_MARGIN, Device, paper_device
from .magnetostatics import force_on_electron, nearest_neighbor_dipole_field, probe_field_z_at_site
from .spectroscopy import far_dipole_field, thermal_excited_probability

DEFAULT_EXCITATION_BOUND = 1e-4


@dataclass(frozen=True)
class Check:
    """``lhs <relation> rhs``; margin checks pass when rhs >= required * lhs."""

    name: str
    relation: str
    lhs: float
    rhs: float
    required: float
    strict: bool
    values: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        if self.lhs == 0:
            return math.inf
        return self.rhs / self.lhs

    @property
    def passed(self) -> bool:
        if not (math.isfinite(self.lhs) and self.rhs == self.rhs):
            return False
        if self.strict:
            return self.lhs < self.rhs
        return self.rhs >= self.required * self.lhs

    def to_dict(self) -> dict:
        ratio = self.ratio
        return {"name": self.name, "relation": self.relation, "lhs": self.lhs, "rhs": self.rhs,
                "ratio": ratio if math.isfinite(ratio) else None,
                "required_ratio": 1.0 if self.strict else self.required,
                "strict": self.strict, "pass": self.passed,
                "values": {k: (v if math.isfinite(v) else None) for k, v in self.values.items()}}


@dataclass
class DesignReport:
    checks: list
    margin: float
    derived: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self) -> list:
        return [c.name for c in self.checks if not c.passed]

    @property
    def electron_window_Hz(self) -> tuple:
        return tuple(self.derived["electron_window_Hz"])

    def to_dict(self) -> dict:
        derived = {k: (v if not isinstance(v, float) or math.isfinite(v) else None)
                   for k, v in self.derived.items()}
        return {"pass": self.ok, "margin": self.margin, "failed": self.failed(),
                "checks": [c.to_dict() for c in self.checks], "derived": derived}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        rows = [("check", "relation", "lhs", "rhs", "ratio", "need", "result")]
        for c in self.checks:
            rows.append((c.name, c.relation, f"{c.lhs:.4g}", f"{c.rhs:.4g}", f"{c.ratio:.4g}",
                         "> 1" if c.strict else f">= {c.required:g}", "pass" if c.passed else "FAIL"))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        lo, hi = self.electron_window_Hz
        lines.append("")
        lines.append(f"electron Rabi window: {lo / 1e6:.4g} MHz << f_eR << {hi / 1e6:.4g} MHz")
        lines.append(f"overall: {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(lines) + "\n"


def derived_quantities(device: Device) -> dict:
    """Every intermediate the checks and the regression table rely on."""
    g, sp, cant = device.geom, device.species, device.cantilever
    b_fz = probe_field_z_at_site(g, 0.0)
    b_fz_nb = probe_field_z_at_site(g, g.atom_spacing_m)
    force = abs(force_on_electron(g))
    z_rms = thermal_rms(cant, g.temperature_K)
    z_thr = math.sqrt(2.0) * z_rms
    jitter = field_jitter(g, z_thr, sp.gamma_e_Hz_per_T)
    try:
        tau_m = detection_time(cant, force, g.temperature_K)
    except DetectionUnreachable:
        tau_m = math.inf
    b_dz = nearest_neighbor_dipole_field(g.atom_spacing_m)
    center = g.chain_length // 2
    b_dz_far = far_dipole_field(g, center) if g.chain_length > 3 else 0.0
    gap = sp.gamma_n_Hz_per_T * abs(b_dz)
    cn_rabi = device.rabi.cn_nuclear_Hz or rabi_2pik(gap, 1)
    d_fe_nb = sp.gamma_e_Hz_per_T * (b_fz - b_fz_nb)
    return {
        "B_Fz_T": b_fz,
        "B_Fz_neighbor_T": b_fz_nb,
        "esr_shift_Hz": sp.gamma_e_Hz_per_T * b_fz,
        "delta_f_e_neighbor_Hz": d_fe_nb,
        "delta_f_n_neighbor_Hz": sp.gamma_n_Hz_per_T * (b_fz - b_fz_nb),
        "nmr_shift_Hz": sp.gamma_n_Hz_per_T * b_fz,
        "nmr_shift_neighbor_Hz": sp.gamma_n_Hz_per_T * b_fz_nb,
        "force_N": force,
        "z_c_m": stationary_amplitude(force, cant),
        "tau_c_s": ring_up_time(cant),
        "z_rms_m": z_rms,
        "z_threshold_m": z_thr,
        "tau_m_s": tau_m,
        "delta_B_z_T": jitter["dB_T"],
        "delta_f_e_Hz": jitter["df_e_Hz"],
        "B_dz_T": b_dz,
        "B_dz_far_T": b_dz_far,
        "far_ratio": b_dz_far / b_dz,
        "dipole_esr_shift_Hz": sp.gamma_e_Hz_per_T * abs(b_dz + b_dz_far),
        "far_nmr_shift_Hz": sp.gamma_n_Hz_per_T * abs(b_dz_far),
        "cn_gap_Hz": gap,
        "cn_rabi_Hz": cn_rabi,
        "thermal_excitation": thermal_excited_probability(g.external_field_T, g.temperature_K),
        "f_e_Hz": sp.gamma_e_Hz_per_T * g.external_field_T,
        "f_n_Hz": sp.gamma_n_Hz_per_T * g.external_field_T,
        "electron_window_Hz": [jitter["df_e_Hz"], min(d_fe_nb, 2 * sp.hyperfine_Hz)],
    }


def validate(device: Device, *, margin: float = DEFAULT_MARGIN,
             excitation_bound: float = DEFAULT_EXCITATION_BOUND) -> DesignReport:
    """Evaluate every feasibility inequality; "much less than" uses ``margin``."""
    if margin < 1:
        raise ValueError("margin must be >= 1")
    q = derived_quantities(device)
    rabi = device.rabi
    sp = device.species
    f_eR, f_nR = rabi.electron_Hz, rabi.nuclear_Hz
    hf = sp.hyperfine_Hz
    m = margin

    def soft(name, rel, lhs, rhs, **values):
        return Check(name, rel, float(lhs), float(rhs), m, False, values)

    def hard(name, rel, lhs, rhs, **values):
        return Check(name, rel, float(lhs), float(rhs), 1.0, True, values)

    checks = [
        soft("jitter_floor", "df_e << f_eR", q["delta_f_e_Hz"], f_eR,
             delta_B_z_T=q["delta_B_z_T"], z_threshold_m=q["z_threshold_m"]),
        soft("electron_selectivity", "f_eR << df'_e", f_eR, q["delta_f_e_neighbor_Hz"],
             B_Fz_T=q["B_Fz_T"], B_Fz_neighbor_T=q["B_Fz_neighbor_T"]),
        hard("hyperfine_splitting", "f_eR < 2 f_hf", f_eR, 2 * hf),
        soft("hyperfine_vs_jitter", "df_e << f_hf", q["delta_f_e_Hz"], hf),
        hard("nuclear_addressing", "f_nR < df'_n", f_nR, q["delta_f_n_neighbor_Hz"]),
        hard("cn_gap", "f_nR(CN) < CN gap", q["cn_rabi_Hz"], q["cn_gap_Hz"]),
        hard("electron_lifetime", "tau_m < lifetime", q["tau_m_s"], device.electron_lifetime_s,
             tau_c_s=q["tau_c_s"], z_c_m=q["z_c_m"]),
        hard("thermal_excitation", "P_excited < bound", q["thermal_excitation"], excitation_bound),
        soft("dipole_esr_shift", "dipole ESR shift << f_eR", q["dipole_esr_shift_Hz"], f_eR,
             B_dz_T=q["B_dz_T"], B_dz_far_T=q["B_dz_far_T"]),
        soft("cantilever_vs_rabi", "f_c << f_eR", device.cantilever.resonance_Hz, f_eR),
        hard("hyperfine_vs_nmr", "f_n < f_hf", q["f_n_Hz"], hf),
    ]
    return DesignReport(checks, margin, q)


def adiabatic_inversion_check(f_c_Hz: float, sweep_rate_T_per_s: float, b1_T: float, f_eR_Hz: float,
                              margin: float = DEFAULT_MARGIN) -> dict:
    """f_c << |dB_eff/dt| / (2 pi B_1) << f_eR with both ratios reported."""
    for name, v in (("f_c_Hz", f_c_Hz), ("sweep_rate_T_per_s", sweep_rate_T_per_s),
                    ("b1_T", b1_T), ("f_eR_Hz", f_eR_Hz)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    middle = abs(sweep_rate_T_per_s) / (2 * math.pi * b1_T)
    left = middle / f_c_Hz
    right = f_eR_Hz / middle
    return {"middle_Hz": middle, "left_ratio": left, "right_ratio": right,
            "left_pass": left >= margin, "right_pass": right >= margin,
            "pass": left >= margin and right >= margin}


# regression table -----------------------------------------------------------------

@dataclass(frozen=True)
class TableRow:
    quantity: str
    unit: str
    computed: float
    paper_value: float
    flagged: bool = False
    note: str = ""

    @property
    def relative_difference(self) -> float:
        return (self.computed - self.paper_value) / abs(self.paper_value)


_NEIGHBOR_NOTE = "neighbour-field value in the source does not follow from its own formula"


def reproduce_paper_table() -> list:
    """Computed values next to the published ones, at the published parameter set."""
    dev = paper_device(1000)
    q = derived_quantities(dev)
    f_eR = dev.rabi.electron_Hz
    rows = [
        TableRow("B_Fz", "T", q["B_Fz_T"], 5.4e-2),
        TableRow("ESR shift gamma_e*B_Fz", "Hz", q["esr_shift_Hz"], 1.5e9),
        TableRow("B'_Fz (neighbour)", "T", q["B_Fz_neighbor_T"], 3.6e-2, True, _NEIGHBOR_NOTE),
        TableRow("df'_e", "Hz", q["delta_f_e_neighbor_Hz"], 5e8, True, _NEIGHBOR_NOTE),
        TableRow("|F_z|", "N", q["force_N"], 1e-16),
        TableRow("z_c", "m", q["z_c_m"], 1.2e-10),
        TableRow("tau_c", "s", q["tau_c_s"], 0.2),
        TableRow("z_rms(1 K)", "m", q["z_rms_m"], 0.3e-10),
        TableRow("z'_c", "m", q["z_threshold_m"], 0.4e-10),
        TableRow("tau_m", "s", q["tau_m_s"], 0.08, True, "source rounds z'_c/z_c to 1/3"),
        TableRow("dB_z", "T", q["delta_B_z_T"], 4e-4),
        TableRow("df_e", "Hz", q["delta_f_e_Hz"], 1e7),
        TableRow("B_dz", "T", q["B_dz_T"], -1.5e-5),
        TableRow("far-sum ratio B'_dz/B_dz", "1", q["far_ratio"], 0.202),
        TableRow("B'_dz", "T", q["B_dz_far_T"], -3e-6),
        TableRow("dipole ESR shift", "Hz", q["dipole_esr_shift_Hz"], 5e5),
        TableRow("gamma_n*B_Fz", "Hz", q["nmr_shift_Hz"], 2.3e6),
        TableRow("gamma_n*B'_Fz", "Hz", q["nmr_shift_neighbor_Hz"], 21.5e6, True, _NEIGHBOR_NOTE),
        TableRow("df'_n", "Hz", q["delta_f_n_neighbor_Hz"], 8e5, True, _NEIGHBOR_NOTE),
        TableRow("CN gap gamma_n*|B_dz|", "Hz", q["cn_gap_Hz"], 650.0),
        TableRow("far NMR shift gamma_n*|B'_dz|", "Hz", q["far_nmr_shift_Hz"], 130.0),
        TableRow("electron pi pulse", "s", 1 / (2 * f_eR), 5e-9),
        TableRow("nuclear addressing pi pulse", "s", 1 / (2 * q["delta_f_n_neighbor_Hz"]), 630e-9, True,
                 _NEIGHBOR_NOTE),
        TableRow("CN nuclear pi pulse", "s", 1 / (2 * q["cn_gap_Hz"]), 770e-6),
        TableRow("thermal excitation", "1", q["thermal_excitation"], 1.4e-6),
        TableRow("f_e", "Hz", q["f_e_Hz"], 2.8e11),
        TableRow("f_n", "Hz", q["f_n_Hz"], 4.3e8),
    ]
    return rows


def table_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "unit", "computed", "paper_value", "relative_difference", "flagged", "note"])
    for r in rows:
        w.writerow([r.quantity, r.unit, f"{r.computed:.6e}", f"{r.paper_value:.6e}",
                    f"{r.relative_difference:.6f}", int(r.flagged), r.note])
    return buf.getvalue()


__all__ = [
    "Check", "DesignReport", "TableRow", "adiabatic_inversion_check", "derived_quantities",
    "reproduce_paper_table", "table_to_csv", "validate",
]
