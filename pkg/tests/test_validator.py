import json
import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from mrfmqc.constants import ANGSTROM
from mrfmqc.device import RabiSelection, paper_device
from mrfmqc.validator import (
    Check,
    adiabatic_inversion_check,
    derived_quantities,
    reproduce_paper_table,
    table_to_csv,
    validate,
)

CHECK_NAMES = [
    "jitter_floor", "electron_selectivity", "hyperfine_splitting", "hyperfine_vs_jitter", "nuclear_addressing",
    "cn_gap", "electron_lifetime", "thermal_excitation", "dipole_esr_shift", "cantilever_vs_rabi",
    "hyperfine_vs_nmr",
]


def perturbed(**kw):
    dev = paper_device()
    geom_keys = {"temperature_K", "probe_gap_m"}
    geom = {k: kw.pop(k) for k in list(kw) if k in geom_keys}
    rabi = {k: kw.pop(k) for k in list(kw) if k in ("electron_Hz", "nuclear_Hz", "cn_nuclear_Hz")}
    if geom:
        dev = replace(dev, geom=dev.geom.replace(**geom))
    if rabi:
        dev = replace(dev, rabi=replace(dev.rabi, **rabi))
    return replace(dev, **kw)


class TestPaperDesign:
    def test_passes(self):
        rep = validate(paper_device())
        assert rep.ok, rep.to_text()
        assert [c.name for c in rep.checks] == CHECK_NAMES

    def test_window(self):
        lo, hi = validate(paper_device()).electron_window_Hz
        assert lo == pytest.approx(12.42e6, rel=1e-3)
        assert 400e6 <= hi <= 520e6

    def test_selectivity_ratio(self):
        assert validate(paper_device()).check("electron_selectivity").ratio == pytest.approx(4.17, abs=0.01)

    def test_purity(self):
        dev = paper_device()
        assert validate(dev).to_json() == validate(dev).to_json()

    def test_unknown_check(self):
        with pytest.raises(KeyError):
            validate(paper_device()).check("nope")

    def test_bad_margin(self):
        with pytest.raises(ValueError):
            validate(paper_device(), margin=0.5)


class TestPerturbations:
    def test_room_temperature(self):
        rep = validate(perturbed(temperature_K=300.0))
        assert "thermal_excitation" in rep.failed()
        assert rep.check("thermal_excitation").lhs == pytest.approx(math.exp(-0.0448), rel=2e-3)

    def test_fast_electron_rabi(self):
        rep = validate(perturbed(electron_Hz=1e9))
        assert "electron_selectivity" in rep.failed()

    def test_slow_electron_rabi(self):
        rep = validate(perturbed(electron_Hz=1e3))
        assert "jitter_floor" in rep.failed()

    def test_far_probe(self):
        rep = validate(perturbed(probe_gap_m=350 * ANGSTROM))
        assert "electron_selectivity" in rep.failed()

    def test_short_lifetime(self):
        rep = validate(perturbed(electron_lifetime_s=0.05))
        assert rep.failed() == ["electron_lifetime"]

    def test_slow_cn_gap(self):
        rep = validate(perturbed(cn_nuclear_Hz=700.0))
        assert rep.failed() == ["cn_gap"]

    def test_fast_nuclear(self):
        rep = validate(perturbed(nuclear_Hz=1e6))
        assert rep.failed() == ["nuclear_addressing"]


class TestCheck:
    def test_strict(self):
        assert Check("x", "a < b", 1.0, 2.0, 1.0, True).passed
        assert not Check("x", "a < b", 2.0, 2.0, 1.0, True).passed

    def test_margin(self):
        c = Check("x", "a << b", 1.0, 4.0, 4.0, False)
        assert c.passed and c.ratio == 4.0
        assert not Check("x", "a << b", 1.0, 3.9, 4.0, False).passed

    def test_non_finite(self):
        assert not Check("x", "a < b", math.inf, 1.0, 1.0, True).passed
        assert Check("x", "a < b", 0.0, 1.0, 1.0, True).ratio == math.inf

    @settings(max_examples=60, deadline=None)
    @given(st.floats(1.0, 20.0), st.floats(1.0, 20.0), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
    def test_margin_monotone(self, m1, m2, lhs, rhs):
        lo, hi = sorted((m1, m2))
        if not Check("x", "", lhs, rhs, lo, False).passed:
            assert not Check("x", "", lhs, rhs, hi, False).passed


@settings(max_examples=15, deadline=None)
@given(st.floats(1.0, 20.0), st.floats(1.0, 20.0), st.sampled_from([1e3, 1e7, 5e7, 1e8, 2e8, 1e9]))
def test_validate_margin_monotone(m1, m2, f_eR):
    lo, hi = sorted((m1, m2))
    dev = perturbed(electron_Hz=f_eR)
    failed_lo = set(validate(dev, margin=lo).failed())
    assert failed_lo <= set(validate(dev, margin=hi).failed())


class TestAdiabatic:
    def test_example(self):
        b1 = 1e-4
        r = adiabatic_inversion_check(1.4e3, 2 * math.pi * b1 * 1e6, b1, 1e8)
        assert r["middle_Hz"] == pytest.approx(1e6)
        assert r["left_ratio"] == pytest.approx(714.29, rel=1e-4)
        assert r["right_ratio"] == pytest.approx(100.0)
        assert r["pass"]

    def test_middle_at_cantilever(self):
        r = adiabatic_inversion_check(1.4e3, 2 * math.pi * 1.4e3, 1.0, 1e8)
        assert not r["left_pass"] and r["right_pass"] and not r["pass"]

    def test_middle_at_rabi(self):
        r = adiabatic_inversion_check(1.4e3, 2 * math.pi * 1e8, 1.0, 1e8)
        assert r["left_pass"] and not r["right_pass"]

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            adiabatic_inversion_check(0.0, 1.0, 1.0, 1.0)


class TestTable:
    def test_rows(self):
        rows = reproduce_paper_table()
        assert len(rows) >= 18
        assert len({r.quantity for r in rows}) == len(rows)
        flagged = {r.quantity for r in rows if r.flagged}
        assert "tau_m" in flagged and "B'_Fz (neighbour)" in flagged

    def test_examples(self):
        rows = {r.quantity: r for r in reproduce_paper_table()}
        assert rows["B_Fz"].computed == pytest.approx(5.43e-2, rel=1e-3)
        assert rows["CN nuclear pi pulse"].computed == pytest.approx(1 / (2 * 638.05), rel=1e-3)
        assert rows["B'_Fz (neighbour)"].computed == pytest.approx(3.94e-2, rel=1e-3)

    def test_csv(self):
        text = table_to_csv(reproduce_paper_table())
        lines = text.strip().split("\n")
        assert lines[0].startswith("quantity,unit,computed,paper_value")
        assert len(lines) == len(reproduce_paper_table()) + 1

    def test_derived_keys_finite(self):
        q = derived_quantities(paper_device())
        assert all(math.isfinite(v) for v in q.values() if isinstance(v, float))


class TestOutput:
    def test_text_table(self):
        text = validate(paper_device()).to_text()
        assert "electron Rabi window" in text and text.rstrip().endswith("PASS")
        assert all(name in text for name in CHECK_NAMES)

    def test_json(self):
        d = json.loads(validate(perturbed(temperature_K=300.0)).to_json())
        assert d["pass"] is False and "thermal_excitation" in d["failed"]
        assert len(d["checks"]) == len(CHECK_NAMES)
