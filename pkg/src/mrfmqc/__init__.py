"""Simulation and feasibility toolkit for a nuclear-spin quantum computer read out by single-spin MRFM."""

from .cantilever import CantileverParams, detection_time, simulate_response
from .chain import ChainState, PulseSpec, apply_pulse
from .compiler import Circuit, InverseCN, RotX, compile_circuit, parse_circuit, rabi_2pik, verify_schedule
from .device import Device, RabiSelection, paper_device, paper_geometry
from .magnetostatics import DeviceGeometry
from .protocol import ensemble_column_readout, inverse_cn_gate, measure_nuclear_spin, polarize_chain
from .spectroscopy import IsingChainSpec, SpinSpecies
from .validator import reproduce_paper_table, validate

__version__ = "0.1.0"

__all__ = [
    "CantileverParams", "ChainState", "Circuit", "Device", "DeviceGeometry", "InverseCN", "IsingChainSpec",
    "PulseSpec", "RabiSelection", "RotX", "SpinSpecies", "apply_pulse", "compile_circuit", "detection_time",
    "ensemble_column_readout", "inverse_cn_gate", "measure_nuclear_spin", "paper_device", "paper_geometry",
    "parse_circuit", "polarize_chain", "rabi_2pik", "reproduce_paper_table", "simulate_response",
    "validate", "verify_schedule",
]
