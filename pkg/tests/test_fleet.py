import numpy as np
import pytest

from flexcast.fleet import METADATA_FIELDS, Distribution, Fleet, FleetSpec, fleet_summary, synthesize


@pytest.fixture(scope="module")
def fleet():
    return synthesize(FleetSpec(n_hp_buildings=30, n_eh_buildings=20, seed=7))


def test_eh_power_and_volume_bounds(fleet):
    eh = fleet.eh_indices
    occ = fleet.occupants[eh]
    assert np.all(fleet.p_nom_el[eh] >= 1.0 * occ) and np.all(fleet.p_nom_el[eh] <= 2.0 * occ)
    assert np.all(fleet.dhw_volume >= 0.08 * fleet.occupants - 1e-12)
    assert np.all(fleet.dhw_volume <= 0.12 * fleet.occupants + 1e-12)


def test_hp_sizing_rule(fleet):
    hp = fleet.hp_indices
    q_dhw = fleet.q_nom_th[hp] - 24.0 / fleet.R[hp]
    occ = fleet.occupants[hp]
    assert np.all(q_dhw >= 1000.0 * occ - 1e-6) and np.all(q_dhw <= 2000.0 * occ + 1e-6)
    assert np.allclose(fleet.p_nom_el[hp], fleet.q_nom_th[hp] / 3.0 / 1000.0)
    assert np.all(fleet.p_nom_el > 0)


def test_zero_buildings():
    f = synthesize(FleetSpec(n_hp_buildings=0, n_eh_buildings=0))
    assert len(f) == 0 and f.n_hp == 0 and f.n_eh == 0


def test_synthesis_is_reproducible(fleet):
    again = synthesize(FleetSpec(n_hp_buildings=30, n_eh_buildings=20, seed=7))
    for name in ("R", "C", "q_nom_th", "serp_L", "serp_m_dot", "occupants"):
        assert np.array_equal(getattr(fleet, name), getattr(again, name))
    other = synthesize(FleetSpec(n_hp_buildings=30, n_eh_buildings=20, seed=8))
    assert not np.array_equal(fleet.R, other.R)


def test_json_round_trip(fleet, tmp_path):
    path = tmp_path / "fleet.json"
    fleet.to_json(path)
    back = Fleet.from_json(path)
    assert np.array_equal(back.R, fleet.R) and np.array_equal(back.is_hp, fleet.is_hp)
    assert back.serpentine == fleet.serpentine


def test_invalid_distribution():
    with pytest.raises(ValueError):
        Distribution("uniform", 2.0, 1.0)
    with pytest.raises(ValueError):
        Distribution("gamma", 1.0, 2.0)
    with pytest.raises(ValueError):
        FleetSpec(n_hp_buildings=-1)
    spec = FleetSpec.from_dict({"n_hp_buildings": 2, "area": {"kind": "constant", "low": 150.0}})
    assert spec.area == Distribution("constant", 150.0)


def test_regional_scale_nominal_totals():
    f = synthesize(FleetSpec(n_hp_buildings=2670, n_eh_buildings=1750, seed=0))
    assert abs(f.p_nom_el[f.is_hp].sum() / 1000.0 - 12.5) / 12.5 < 0.2
    assert abs(f.p_nom_el[~f.is_hp].sum() / 1000.0 - 7.7) / 7.7 < 0.2


def test_summary_single_building(fleet):
    m = fleet_summary(fleet, [3])
    assert m.p_nom_q10 == m.p_nom_q90 == m.p_nom_sum == pytest.approx(fleet.p_nom_el[3])
    assert m.R_q10 == m.R_q90 == m.R_mean == pytest.approx(fleet.R[3])


def test_summary_hp_only_ratio(fleet):
    m = fleet_summary(fleet, fleet.hp_indices)
    assert m.n_eh == 0 and m.n_hp == 30
    assert m.hp_eh_ratio == 30.0


def _quantile_oracle(a, q):
    s = np.sort(a)
    pos = q * (len(s) - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


def test_summary_quantiles_match_sort_oracle():
    f = synthesize(FleetSpec(n_hp_buildings=70, n_eh_buildings=50, seed=1))
    idx = np.random.default_rng(0).choice(len(f), 100, replace=False)
    m = fleet_summary(f, idx)
    for name, arr in (("p_nom", f.p_nom_el[idx]), ("R", f.R[idx]), ("C", f.C[idx])):
        assert getattr(m, f"{name}_q10") == pytest.approx(_quantile_oracle(arr, 0.1), rel=1e-12)
        assert getattr(m, f"{name}_q90") == pytest.approx(_quantile_oracle(arr, 0.9), rel=1e-12)
    assert len(m.as_array()) == len(METADATA_FIELDS)


def test_summary_empty_subset(fleet):
    with pytest.raises(ValueError):
        fleet_summary(fleet, [])
