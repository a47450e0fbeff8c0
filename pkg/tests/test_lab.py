import json
import math

import numpy as np
import pytest

from resoflow.lab import (
    admissible_angles,
    barrier_crossing_distance,
    breit_wigner_sweep,
    config_hash,
    default_config,
    exponential_fit,
    load_config,
    locate_crossing,
    locate_resonances,
    off_resonant_energy,
    pick_admissible_theta,
    plug_edge,
    power_fit,
    robustness_experiment,
)


@pytest.fixture(scope="module")
def fast_config():
    return default_config(hbar=(0.2,))


@pytest.fixture(scope="module")
def resonances_02(fast_config):
    return locate_resonances(fast_config, 0.2)


class TestConfig:
    def test_defaults_are_consistent(self, config):
        assert config.window[0] > 0
        assert config.window[1] < config.e_plus
        triple = config.build_triple()
        assert triple.validate()

    def test_rejects_unsorted_hbar(self):
        with pytest.raises(ValueError):
            default_config(hbar=(0.1, 0.2))

    def test_rejects_window_outside_range(self):
        with pytest.raises(ValueError):
            default_config(e0=1.4, delta=0.2)

    def test_roundtrip_json(self, tmp_path, config):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(config.to_dict()))
        loaded = load_config(path)
        assert config_hash(loaded) == config_hash(config)

    def test_roundtrip_toml(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('hbar = [0.2, 0.15]\ne0 = 1.0\ndelta = 0.3\n')
        loaded = load_config(path)
        assert loaded.hbar == (0.2, 0.15)
        assert loaded.delta == 0.3


class TestResonances:
    def test_window_levels_and_weights(self, resonances_02):
        # at hbar = 0.2 the window holds the even-channel level (weight 5)
        # and the second s-level (weight 1)
        ms = sorted(r.multiplicity for r in resonances_02)
        assert ms == [1, 5]
        for r in resonances_02:
            assert r.isolation > 0
            assert r.crossing is not None
            assert r.width is not None and r.width > 0

    def test_empty_window(self):
        cfg = default_config(e0=0.756, delta=0.004, hbar=(0.2,))
        assert locate_resonances(cfg, 0.2) == []

    def test_crossing_is_exponentially_near_the_level(self, fast_config,
                                                      resonances_02):
        for r in resonances_02:
            assert abs(r.crossing - r.energy) < 1e-4


class TestAdmissibleAngles:
    def test_free_exterior_admits_everything(self):
        # a barrier-free reference has all phases at zero: only the
        # neighbourhood of 1 is blocked
        cfg = default_config(hbar=(0.2,))
        from types import SimpleNamespace
        from resoflow.potentials import step_profile
        triple = cfg.build_triple()
        out = admissible_angles(cfg, triple, 0.9, 0.2, margin=1e-3)
        assert out["measure"] > 5.5

    def test_margin_too_big_gives_empty(self, fast_config):
        triple = fast_config.build_triple()
        out = admissible_angles(fast_config, triple, 0.9, 0.2, margin=2.5)
        assert out["arcs"] == []
        assert out["blocking"]
        with pytest.raises(RuntimeError):
            pick_admissible_theta(out["arcs"])

    def test_preferred_angle_honoured(self):
        arcs = [(1.0, 2.0), (3.0, 4.0)]
        assert pick_admissible_theta(arcs, preferred=3.5) == 3.5
        assert pick_admissible_theta(arcs, preferred=5.0) == pytest.approx(1.5)


class TestSweep:
    def test_flow_equals_multiplicity(self, fast_config, resonances_02):
        triple = fast_config.build_triple()
        for r in resonances_02:
            out = breit_wigner_sweep(fast_config, r, None, 0.2, triple=triple)
            assert out["ok"], out.get("error")
            assert out["flow"] == r.multiplicity
            assert out["clearance"] > 0

    def test_inadmissible_theta_rejected(self, fast_config, resonances_02):
        # an angle pinned on a background eigenphase cannot clear any window
        triple = fast_config.build_triple()
        r = resonances_02[1]
        from resoflow.lab import _swept_background_arcs
        e_lo = r.energy - 1e-4
        e_hi = r.energy + 1e-4
        arcs = _swept_background_arcs(fast_config, triple, e_lo, e_hi, 0.2)
        blocked_theta = float(np.mod(0.5 * (arcs[4][0] + arcs[4][1]), 2 * math.pi))
        out = breit_wigner_sweep(fast_config, r, blocked_theta, 0.2, triple=triple)
        assert not out["ok"]

    def test_unresolved_width_reported(self, fast_config, resonances_02):
        from dataclasses import replace
        broken = replace(resonances_02[0], width=None)
        out = breit_wigner_sweep(fast_config, broken, None, 0.2)
        assert not out["ok"]
        assert "width" in out["error"]


class TestFits:
    def test_exact_exponential(self):
        rows = [(h, math.exp(-3.0 / h)) for h in (0.2, 0.15, 0.12, 0.1)]
        fit = exponential_fit("synthetic", rows)
        assert fit.slope == pytest.approx(-3.0, abs=1e-12)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_constant_values_fit_flat(self):
        rows = [(h, 0.7) for h in (0.2, 0.15, 0.12, 0.1)]
        fit = exponential_fit("flat", rows)
        assert abs(fit.slope) < 1e-12

    def test_nonpositive_filtered_and_sparse_rejected(self):
        with pytest.raises(ValueError):
            exponential_fit("sparse", [(0.2, 1.0), (0.1, -1.0), (0.15, 0.0)])

    def test_power_fit(self):
        rows = [(h, 2.0 * h ** -1.7) for h in (0.2, 0.15, 0.12, 0.1)]
        fit = power_fit("synthetic", rows)
        assert fit.slope == pytest.approx(-1.7, abs=1e-12)


class TestAgmon:
    def test_plug_edge_sits_inside_omega1(self, config):
        triple = config.build_triple()
        edge = plug_edge(triple)
        assert 0 < edge <= triple.omega1
        # the default barrier reaches the plug height at its inner shoulder
        assert edge == pytest.approx(1.025, abs=5e-3)

    def test_distance_positive_below_barrier(self, config):
        triple = config.build_triple()
        assert barrier_crossing_distance(triple, 1.0) > 0.5


class TestRobustness:
    def test_identical_walls_give_zero_gaps(self, config):
        cfg = default_config(hbar=(0.2, 0.17, 0.15))
        rep = robustness_experiment(cfg, omega2_alt=cfg.omega2,
                                    wall_height_alt=2.0)
        assert all(g == 0.0 for _, g in rep["gaps"])
        assert rep["fit"] is None

    def test_shifted_wall_gaps_decay(self):
        cfg = default_config(hbar=(0.2, 0.15, 0.12))
        rep = robustness_experiment(cfg)
        fit = rep["fit"]
        assert fit.slope < 0
        assert fit.r_squared >= 0.9


def test_off_resonant_energy_avoids_levels(fast_config, resonances_02):
    e = off_resonant_energy(fast_config)
    for r in resonances_02:
        assert abs(e - r.energy) > 0.02


def test_locate_crossing_none_without_bracket(fast_config):
    triple = fast_config.build_triple()
    from resoflow.radial import Channel
    # no level of this channel near 0.45: no sign change
    out = locate_crossing(triple, Channel(3, 0), 0, 0.45, 0.2, bracket=0.02)
    assert out is None
