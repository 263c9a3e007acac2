import math

import pytest
from hypothesis import given, strategies as st

from parle import HyperParams, InvalidHyperparameter, gamma_at, rho_at, scoping_value


class TestScopingValue:
    def test_zero_steps_returns_initial(self):
        hp = HyperParams(B=100)
        assert scoping_value(0, hp, 100.0, 1.0) == 100.0

    def test_one_window_decay(self):
        hp = HyperParams(L=25, B=100)
        expected = 100.0 * (1.0 - 1.0 / 200.0)  # direct evaluation
        assert scoping_value(25, hp, 100.0, 1.0) == pytest.approx(expected, abs=0)
        assert scoping_value(25, hp, 100.0, 1.0) == pytest.approx(99.5, abs=1e-12)

    def test_clips_at_floor(self):
        hp = HyperParams(L=25, B=10)
        assert scoping_value(10**9, hp, 100.0, 1.0) == 1.0
        assert rho_at(10**9, hp) == hp.rho_floor

    def test_constant_before_first_window(self):
        hp = HyperParams(L=25, B=10)
        assert all(scoping_value(k, hp, 100.0, 1.0) == 100.0 for k in range(25))

    def test_b_zero_rejected(self):
        hp = HyperParams()
        object.__setattr__(hp, "B", 0)
        with pytest.raises(InvalidHyperparameter):
            scoping_value(10, hp, 100.0, 1.0)

    def test_negative_k_rejected(self):
        with pytest.raises(ValueError):
            scoping_value(-1, HyperParams(), 100.0, 1.0)

    @given(
        st.integers(0, 10_000), st.integers(1, 100), st.integers(1, 50),
        st.floats(0.5, 1e4), st.floats(1e-3, 0.4),
    )
    def test_monotone_and_window_constant(self, k, L, B, v0, floor_frac):
        floor = floor_frac * v0
        hp = HyperParams(L=L, B=B, gamma0=v0, gamma_floor=floor)
        v = scoping_value(k, hp, v0, floor)
        assert floor <= v <= v0
        assert v <= scoping_value(max(0, k - L), hp, v0, floor)
        # constant inside a window of length L
        assert v == scoping_value((k // L) * L, hp, v0, floor)


class TestHyperParams:
    def test_defaults_match_contract(self):
        hp = HyperParams()
        assert (hp.L, hp.alpha, hp.momentum) == (25, 0.75, 0.9)
        assert (hp.gamma0, hp.rho0) == (100.0, 1.0)
        assert (hp.gamma_floor, hp.rho_floor) == (1.0, 0.1)
        assert hp.eta_dprime is None  # rho/n: pure replica averaging
        hp.validate()

    def test_floor_above_initial_rejected(self):
        with pytest.raises(InvalidHyperparameter):
            HyperParams(gamma0=1.0, gamma_floor=2.0).validate()
        with pytest.raises(InvalidHyperparameter):
            HyperParams(rho0=0.05, rho_floor=0.1).validate()

    def test_bad_ranges_rejected(self):
        for kw in (
            dict(eta=-1.0), dict(alpha=1.0), dict(momentum=-0.1),
            dict(L=0), dict(n_replicas=0), dict(B=0), dict(gamma0=0.0),
        ):
            with pytest.raises(InvalidHyperparameter):
                HyperParams(**kw).validate()

    def test_infinite_rho_switches_elastic_off(self):
        hp = HyperParams(rho0=math.inf, rho_floor=1.0).validate()
        assert hp.elastic_off
        assert math.isinf(rho_at(10**6, hp))

    def test_gamma_at_tracks_schedule(self):
        hp = HyperParams(L=5, B=10)
        assert gamma_at(0, hp) == hp.gamma0
        assert gamma_at(5, hp) == hp.gamma0 * (1 - 1 / 20)
