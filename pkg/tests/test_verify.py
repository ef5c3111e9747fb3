import numpy as np
import pytest

from jumpfilter import verify
from jumpfilter.grids import build_grid
from jumpfilter.model import dirac, validate_model
from jumpfilter.rngs import stream

from conftest import m1_variant, tv


class TestExpmOracle:
    def test_zero_time_identity(self, m1):
        nu = dirac(m1, 0)
        out = verify.expm_flow_oracle(m1, nu, 0, 0.0)
        np.testing.assert_allclose(out.weights, nu.weights, atol=1e-15)

    def test_singleton_face_stays_point_mass(self, m1):
        for t in (0.1, 1.0, 5.0):
            out = verify.expm_flow_oracle(m1, dirac(m1, 2), 1, t)
            np.testing.assert_allclose(out.weights, [0.0, 0.0, 1.0], atol=1e-14)


class TestFlowOracleCheck:
    def test_m1_passes(self, m1):
        oracle, inv = verify.flow_oracle_check(m1, seed=1)
        assert oracle.passed and inv.passed
        assert oracle.statistic <= 1e-10

    def test_reports_reproducible(self, m1):
        a = verify.flow_oracle_check(m1, seed=2)[0]
        b = verify.flow_oracle_check(m1, seed=2)[0]
        assert a.to_dict() == b.to_dict()


class TestLipschitz:
    def test_m1_passes(self, m1):
        rep = verify.lipschitz_check(m1, 2000, seed=3)
        assert rep.passed and rep.details["violations"] == 0
        assert rep.statistic <= rep.threshold

    def test_equal_beliefs_excluded(self, m1):
        rep = verify.lipschitz_check(m1, 100, seed=4)
        assert rep.n_samples > 0


class TestSojournLaw:
    def test_m1_both_controls(self, m1):
        for u in range(2):
            rep = verify.sojourn_law_check(m1, u, dirac(m1, 2).weights, 4000, seed=5)
            assert rep.passed, rep

    def test_negative_control_fails(self, m1):
        rep = verify.sojourn_law_check(m1, 0, dirac(m1, 2).weights, 4000, seed=5,
                                       chi_control=1)
        assert not rep.passed

    def test_vacuous_without_jumps(self, no_exit_model):
        rep = verify.sojourn_law_check(no_exit_model, 0,
                                       dirac(no_exit_model, 2).weights, 100, seed=6)
        assert rep.passed and rep.vacuous

    def test_mixed_face_start_rejected(self, m1):
        with pytest.raises(ValueError):
            verify.sojourn_law_check(m1, 0, np.full(3, 1 / 3), 100, seed=7)


class TestLawEquality:
    def test_m1(self, m1):
        rep = verify.law_equality_check(m1, dirac(m1, 0).weights, 0, 4000, seed=8)
        assert rep.passed

    def test_three_label_model(self):
        doc = {
            "states": ["0", "1", "2", "3"],
            "obs": ["a", "b", "c"],
            "h": ["a", "a", "b", "c"],
            "controls": ["u0"],
            "lambda": [
                [[0.0, 0.7, 1.1, 0.4]],
                [[0.3, 0.0, 0.5, 1.2]],
                [[0.8, 0.4, 0.0, 0.6]],
                [[0.2, 0.9, 0.5, 0.0]],
            ],
            "f": [[0.0], [1.0], [2.0], [3.0]],
            "beta": 1.0,
        }
        m = validate_model(doc)
        rep = verify.law_equality_check(m, np.array([0.5, 0.5, 0.0, 0.0]), 0, 6000, seed=9)
        assert rep.passed
        assert rep.details["face_band_worst"] > 0.0  # bands are actually exercised


class TestContraction:
    def test_identical_fields_give_zero(self, m1):
        grid = build_grid(m1, 4)
        op_fields = stream(10, 0).uniform(-1, 1, size=grid.n_vertices)
        from jumpfilter import solver
        op = solver._ModeAOperator(m1, grid, solver.default_t_max(m1, 1e-4),
                                   solver._solver_step(m1))
        v1, _ = op.apply(op_fields)
        v2, _ = op.apply(op_fields.copy())
        assert tv(v1, v2) == 0.0

    def test_m1_both_modes(self, m1):
        grid = build_grid(m1, 8)
        for mode in ("A", "B"):
            rep = verify.contraction_check(m1, grid, mode, 40, seed=11)
            assert rep.passed, rep

    def test_large_discount_variant(self):
        m = validate_model(m1_variant(beta=100.0))
        grid = build_grid(m, 8)
        for mode in ("A", "B"):
            rep = verify.contraction_check(m, grid, mode, 30, seed=12)
            assert rep.passed
            assert rep.threshold == pytest.approx(4.0 / 104.0, abs=1e-8)


class TestEquivalence:
    def test_single_control_tight(self, m1_u0):
        from jumpfilter import solver
        art = solver.solve(m1_u0, k=8, mode="A")
        rep = verify.equivalence_check(m1_u0, art, dirac(m1_u0, 2).weights,
                                       horizon=20.0, n_paths=30_000, seed=13)
        assert rep.passed

    def test_constant_cost_both_sides_hit_closed_form(self, m1_const_cost):
        # both routes must land on c/beta: the Monte-Carlo side exactly up to
        # horizon truncation, the lifted side up to the solve tolerance
        from jumpfilter import solver
        art = solver.solve(m1_const_cost, k=4, mode="A", tol=1e-6)
        rep = verify.equivalence_check(m1_const_cost, art, np.full(3, 1 / 3),
                                       horizon=20.0, n_paths=5000, seed=14)
        assert rep.details["mc_stderr"] == 0.0
        assert abs(rep.details["mc_mean"] - 1.0) <= rep.details["truncation_bias"] + 1e-12
        assert abs(rep.details["lifted_value"] - 1.0) <= 1e-6


def test_weak_feller_smoke(m1):
    assert verify.weak_feller_smoke_check(m1, seed=15).passed


def test_random_model_generator_produces_valid_models():
    rng = stream(16, 0)
    for _ in range(20):
        m = verify.random_model(rng)
        assert 3 <= m.n_states <= 6
        assert 2 <= m.n_obs <= 3
        assert 1 <= m.n_controls <= 3
        assert m.lam.max() <= 5.0


def test_check_reports_reproducible(m1):
    a = verify.lipschitz_check(m1, 500, seed=17).to_dict()
    b = verify.lipschitz_check(m1, 500, seed=17).to_dict()
    assert a == b
