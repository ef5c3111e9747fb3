import math

import numpy as np
import pytest
import scipy.stats

from jumpfilter import pdmp, solver
from jumpfilter.model import dirac, make_belief
from jumpfilter.paths import PathError, PdmpPath, RepeatedLabel
from jumpfilter.rngs import stream

KS_CRIT_01 = 1.628


def half(m1):
    return make_belief(m1, 0, np.array([0.5, 0.5, 0.0]))


class TestJumpRate:
    def test_point_mass(self, m1):
        assert pdmp.jump_rate(m1, dirac(m1, 0), 0) == pytest.approx(1.0)

    def test_mixture(self, m1):
        assert pdmp.jump_rate(m1, half(m1), 0) == pytest.approx(0.75)

    def test_zero_without_cross_face_rates(self, no_exit_model):
        for x in range(3):
            assert pdmp.jump_rate(no_exit_model, dirac(no_exit_model, x), 0) == 0.0

    def test_bounded_by_rate_cap(self, m1):
        rng = stream(5, 0)
        for _ in range(200):
            w = np.zeros(3)
            w[:2] = rng.dirichlet(np.ones(2))
            nu = make_belief(m1, 0, w)
            for u in range(2):
                assert 0.0 <= pdmp.jump_rate(m1, nu, u) <= m1.C_lambda


class TestObsKernel:
    def test_point_mass_targets_other_face(self, m1):
        np.testing.assert_allclose(pdmp.obs_kernel(m1, dirac(m1, 0), 0), [0.0, 1.0])

    def test_no_mass_on_current_face(self, m1):
        for u in range(2):
            kern = pdmp.obs_kernel(m1, half(m1), u)
            assert kern[0] == 0.0
            assert kern.sum() == pytest.approx(1.0)

    def test_zero_rate_branch_is_point_mass(self, no_exit_model):
        kern = pdmp.obs_kernel(no_exit_model, dirac(no_exit_model, 0), 0)
        np.testing.assert_array_equal(kern, [1.0, 0.0])


class TestSurvival:
    def test_at_zero(self, m1):
        assert pdmp.survival(m1, half(m1), 0, 0.0) == 1.0

    def test_singleton_face_closed_form(self, m1):
        for t in (0.2, 1.0, 2.5):
            assert pdmp.survival(m1, dirac(m1, 2), 0, t) == pytest.approx(
                math.exp(-2 * t), abs=1e-9)

    def test_nonincreasing(self, m1):
        ts = np.linspace(0.0, 3.0, 13)
        vals = [pdmp.survival(m1, half(m1), 1, float(t)) for t in ts]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_negative_duration_rejected(self, m1):
        with pytest.raises(pdmp.NegativeDuration):
            pdmp.survival(m1, half(m1), 0, -0.5)


class TestSampleSojourn:
    def test_infinite_without_cross_face_rates(self, no_exit_model):
        dur, _ = pdmp.sample_sojourn(no_exit_model, dirac(no_exit_model, 0), 0, stream(1, 0))
        assert dur == math.inf

    def test_seed_determinism(self, m1):
        a = pdmp.sample_sojourn(m1, dirac(m1, 2), 0, stream(9, 3))
        b = pdmp.sample_sojourn(m1, dirac(m1, 2), 0, stream(9, 3))
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1].weights, b[1].weights)

    def test_singleton_face_sojourns_are_exponential(self, m1):
        # face {2} under u0 leaves at constant rate 2, so sojourns ~ Exp(2)
        rng = stream(17, 0)
        n = 100_000
        samples = np.array([
            pdmp.sample_sojourn(m1, dirac(m1, 2), 0, rng, step=0.01 / m1.C_lambda)[0]
            for _ in range(n)])
        stat = scipy.stats.kstest(samples, scipy.stats.expon(scale=0.5).cdf).statistic
        assert stat <= KS_CRIT_01 / math.sqrt(n)


class TestSampleTransition:
    def test_from_face_a_point_mass(self, m1):
        for i in range(20):
            y, b = pdmp.sample_transition(m1, dirac(m1, 0), 0, stream(2, i))
            assert y == 1
            np.testing.assert_allclose(b.weights, [0.0, 0.0, 1.0])

    def test_from_singleton_face(self, m1):
        for i in range(20):
            y, b = pdmp.sample_transition(m1, dirac(m1, 2), 0, stream(3, i))
            assert y == 0
            np.testing.assert_allclose(b.weights, [0.5, 0.5, 0.0])

    def test_face_always_changes(self, m1):
        rng = stream(4, 0)
        for _ in range(100):
            w = np.zeros(3)
            w[:2] = rng.dirichlet(np.ones(2))
            nu = make_belief(m1, 0, w)
            y, b = pdmp.sample_transition(m1, nu, 1, rng)
            assert y != nu.face and b.face == y

    def test_zero_rate_rejected(self, no_exit_model):
        with pytest.raises(pdmp.ZeroRate):
            pdmp.sample_transition(no_exit_model, dirac(no_exit_model, 0), 0, stream(5, 0))


class TestSimulatePdmp:
    def test_zero_horizon(self, m1):
        path, cost = pdmp.simulate_pdmp(m1, dirac(m1, 0), 0, 0.0, stream(6, 0))
        assert path.jumps == [] and cost == 0.0

    def test_constant_cost_is_deterministic(self, m1_const_cost):
        horizon = 3.0
        want = (1.0 - math.exp(-horizon))
        for i in range(5):
            _, cost = pdmp.simulate_pdmp(m1_const_cost, dirac(m1_const_cost, 0), 1,
                                         horizon, stream(7, i))
            assert cost == pytest.approx(want, abs=1e-7)

    def test_no_jump_model_runs_to_horizon(self, no_exit_model):
        path, cost = pdmp.simulate_pdmp(no_exit_model, dirac(no_exit_model, 0), 0,
                                        2.0, stream(8, 0))
        assert path.jumps == []
        assert cost == pytest.approx(1.0 - math.exp(-2.0), abs=1e-7)

    def test_path_invariants(self, m1):
        path, _ = pdmp.simulate_pdmp(m1, dirac(m1, 0), 1, 10.0, stream(9, 0))
        faces = [path.start.face] + [y for _, _, y in path.jumps]
        assert all(a != b for a, b in zip(faces, faces[1:]))
        times = [t for t, _, _ in path.jumps]
        assert all(a < b for a, b in zip(times, times[1:]))

    def test_mean_cost_matches_solver_value(self, m1):
        art = solver.solve(m1, k=16, mode="A")
        nu0 = dirac(m1, 2)
        mean, se = pdmp.mc_cost(m1, nu0, art.policy, horizon=20.0, n_paths=100_000,
                                rng=stream(10, 0))
        v = art.value_field.grid.interpolate(art.value_field.values, nu0)
        bias = abs(solver.lift_value(m1, art.value_field, nu0.weights)
                   - solver.lift_value(m1, art.coarse_field, nu0.weights))
        assert abs(mean - v) <= 2 * se + bias + 1e-3  # small slack for flow-step bias


class TestPdmpPathValidation:
    def test_face_must_change(self, m1):
        good = dirac(m1, 0)
        with pytest.raises(RepeatedLabel):
            PdmpPath(start=good, jumps=[(1.0, dirac(m1, 1), 0)], horizon=2.0)

    def test_label_matches_belief_face(self, m1):
        with pytest.raises(PathError):
            PdmpPath(start=dirac(m1, 0), jumps=[(1.0, dirac(m1, 2), 0)], horizon=2.0)
