import math

import numpy as np
import pytest

from mrfmqc.constants import GAMMA_E, GAMMA_N_PROTON, K_B, MU_B
from mrfmqc.spectroscopy import (
    IsingChainSpec,
    SpinSpecies,
    cn_gap_hz,
    esr_measurement_frequency,
    far_dipole_field,
    ising_resonance,
    nmr_target_frequencies,
    thermal_excited_probability,
    transition_table,
)


class TestTransitionTable:
    def test_hyperfine_structure(self):
        sp = SpinSpecies(hyperfine_Hz=7.1e8)
        t = transition_table(sp, 10.0)
        assert t.f_e_Hz == pytest.approx(2.8e11)
        assert t.f_n_Hz == pytest.approx(4.3e8)
        assert t.f_e0_Hz - t.f_e1_Hz == pytest.approx(2 * 7.1e8)
        assert t.f_n0_Hz - t.f_n1_Hz == pytest.approx(2 * t.f_n_Hz)
        assert t.f_n0_Hz + t.f_n1_Hz == pytest.approx(2 * 7.1e8)

    def test_default_species_has_hyperfine_above_nmr(self):
        sp = SpinSpecies()
        assert sp.hyperfine_Hz > sp.gamma_n_Hz_per_T * 10.0

    @pytest.mark.parametrize("b", [0.0, -1.0, float("nan")])
    def test_rejects_nonpositive_field(self, b):
        with pytest.raises(ValueError):
            transition_table(SpinSpecies(), b)

    def test_species_validation(self):
        with pytest.raises(ValueError):
            SpinSpecies(gamma_e_Hz_per_T=-1.0)
        with pytest.raises(ValueError):
            SpinSpecies(hyperfine_Hz=-1.0)


class TestSingleSpinLines:
    def test_measurement_frequency(self, geom):
        sp = SpinSpecies()
        b_fz = 2 * 2.2 * 50**3 / (3 * 150**3)
        expected = GAMMA_E * 10.0 + sp.hyperfine_Hz + GAMMA_E * b_fz
        assert esr_measurement_frequency(sp, geom) == pytest.approx(expected, rel=1e-12)

    def test_cn_gap(self, geom):
        gap = cn_gap_hz(SpinSpecies(), geom)
        assert gap == pytest.approx(GAMMA_N_PROTON * 2e-7 * MU_B / (50e-10) ** 3, rel=1e-12)
        assert gap == pytest.approx(638.05, rel=1e-4)

    def test_target_lines_inner_site(self, geom):
        sp = SpinSpecies()
        lines = nmr_target_frequencies(sp, geom, 500, 499)
        assert lines["gap"] == pytest.approx(cn_gap_hz(sp, geom), rel=1e-9)
        # with the control electron flipped both neighbour fields cancel
        assert lines["f_control_on"] > lines["f_control_off"]

    def test_target_lines_end_site(self, geom):
        sp = SpinSpecies()
        lines = nmr_target_frequencies(sp, geom, 0, 1)
        # one neighbour only: flipping it moves the field by the same 2 mu0 mu_B / 4 pi a^3
        assert lines["gap"] == pytest.approx(cn_gap_hz(sp, geom), rel=1e-9)

    @pytest.mark.parametrize("target,control", [(3, 5), (0, 0), (999, 1000)])
    def test_non_neighbours_rejected(self, geom, target, control):
        with pytest.raises(ValueError):
            nmr_target_frequencies(SpinSpecies(), geom, target, control)

    def test_far_field_shift_range(self, geom):
        # the remote-atom NMR correction stays within 70..130 Hz once an atom has two atoms on each side
        shifts = np.array([GAMMA_N_PROTON * abs(far_dipole_field(geom, k)) for k in range(geom.chain_length)])
        inner = shifts[2:-2]
        assert inner.min() >= 70.0
        assert inner.max() <= 130.0
        assert shifts[geom.chain_length // 2] == pytest.approx(128.9, rel=1e-3)


class TestIsing:
    @pytest.fixture
    def spec(self):
        return IsingChainSpec((100.0, 200.0, 300.0), (10.0, 4.0))

    def test_magic_angle(self, spec):
        assert math.cos(spec.theta0_rad) == pytest.approx(1 / math.sqrt(3))

    @pytest.mark.parametrize("left,right,expected", [
        (0, 0, 214.0), (0, 1, 206.0), (1, 0, 194.0), (1, 1, 186.0),
    ])
    def test_middle_site_lines(self, spec, left, right, expected):
        assert ising_resonance(spec, 1, left, right) == pytest.approx(expected)

    def test_end_sites_need_one_neighbour(self, spec):
        assert ising_resonance(spec, 0, right_state=1) == pytest.approx(90.0)
        assert ising_resonance(spec, 2, left_state=0) == pytest.approx(304.0)
        with pytest.raises(ValueError):
            ising_resonance(spec, 1, 0, None)

    def test_site_range(self, spec):
        with pytest.raises(IndexError):
            ising_resonance(spec, 3, 0, 0)

    def test_coupling_count_checked(self):
        with pytest.raises(ValueError):
            IsingChainSpec((1.0, 2.0), (1.0, 2.0))

    def test_probe_shifts(self, geom):
        spec = IsingChainSpec.from_gammas((1e7, 4.3e7, 4e7), (100.0, 60.0), 10.0)
        shifts = spec.probe_shifts(geom, 1)
        assert shifts[1] == pytest.approx(4.3e7 * 0.0543210, rel=1e-5)
        assert shifts[0] == pytest.approx(1e7 * 0.039423, rel=1e-4)
        assert np.all(spec.probe_shifts(geom, None) == 0)

    def test_probe_shifts_need_gammas(self, geom):
        spec = IsingChainSpec((1.0, 2.0), (0.5,))
        assert np.all(spec.probe_shifts(geom, 0) == 0)


class TestThermal:
    def test_paper_conditions(self):
        p = thermal_excited_probability(10.0, 1.0)
        assert p == pytest.approx(math.exp(-2 * MU_B * 10 / (K_B * 1.0)))
        assert p == pytest.approx(1.469e-6, rel=1e-3)

    def test_room_temperature(self):
        assert thermal_excited_probability(10.0, 300.0) == pytest.approx(math.exp(-0.04477), rel=1e-3)

    def test_rejects_zero_temperature(self):
        with pytest.raises(ValueError):
            thermal_excited_probability(10.0, 0.0)
