"""
Tests for the fedbatch reactor model.
"""

import unittest

import numpy as np
from pydantic import ValidationError

from odelearn.bioreactor import (
    FbrParams,
    estimate_mu_samples,
    fbr_rhs,
    fbr_rhs_with_nn_mu,
    haldane_mu,
    haldane_relation,
    nn_mu,
    synthesize,
)
from odelearn.errors import ContractViolation
from odelearn.nn import MlpModel, NormStats, param_count


def constant_mu_model(value: float, n_in: int = 3) -> MlpModel:
    """A growth-rate network that always returns ``value``."""
    norm = NormStats(np.zeros(n_in), np.ones(n_in), [value], [1.0])
    return MlpModel((n_in, 4, 1), np.zeros(param_count([n_in, 4, 1])), norm)


class TestHaldane(unittest.TestCase):
    """Tests for the Haldane growth law."""

    def setUp(self):
        """Set up default reactor constants."""
        self.p = FbrParams()

    def test_value_at_one(self):
        """Test mu(1) = 5 / (10 + 1 + 10)."""
        self.assertAlmostEqual(haldane_mu(1.0, self.p), 5.0 / 21.0, places=15)

    def test_zero_substrate(self):
        """Test that there is no growth without substrate."""
        self.assertEqual(haldane_mu(0.0, self.p), 0.0)

    def test_unimodal_peak(self):
        """Test that the rate peaks at S = sqrt(Km Ki)."""
        S = np.linspace(0.01, 5.0, 2000)
        peak = S[np.argmax(haldane_mu(S, self.p))]
        self.assertAlmostEqual(peak, np.sqrt(self.p.Km * self.p.Ki), delta=5e-3)

    def test_vanishes_at_both_ends(self):
        """Test that mu tends to zero for very small and very large substrate."""
        S = np.logspace(-8, 8, 161)
        mu = haldane_mu(S, self.p)
        self.assertLess(mu[0], 1e-7)
        self.assertLess(mu[-1], 1e-7)
        peak = int(np.argmax(mu))
        self.assertTrue(np.all(np.diff(mu[:peak + 1]) > 0))
        self.assertTrue(np.all(np.diff(mu[peak:]) < 0))

    def test_negative_substrate_raises(self):
        """Test the domain check."""
        with self.assertRaises(ContractViolation):
            haldane_mu(np.array([1.0, -0.1]), self.p)

    def test_params_must_be_positive(self):
        """Test constant validation."""
        with self.assertRaises(ValidationError):
            FbrParams(Km=0.0)


class TestBalances(unittest.TestCase):
    """Tests for the mass balances."""

    def setUp(self):
        """Set up constants and a state."""
        self.p = FbrParams()
        self.y = np.array([0.1, 1.0, 10.0])

    def test_rhs_by_hand(self):
        """Test the three balances at one state."""
        mu = 5.0 / 21.0
        dy = fbr_rhs(self.y, 0.0, self.p, haldane_relation(self.p))
        np.testing.assert_allclose(
            dy, [mu * 0.1 - 0.1 * 0.1 / 10.0, -mu * 0.1 + 0.1 * 2.5 / 10.0, 0.1], rtol=1e-14
        )

    def test_batched_rhs(self):
        """Test that rows are evaluated independently."""
        Y = np.array([self.y, [0.2, 1.5, 15.0]])
        dY = fbr_rhs(Y, 0.0, self.p, haldane_relation(self.p))
        self.assertEqual(dY.shape, (2, 3))
        np.testing.assert_allclose(dY[1], fbr_rhs(Y[1], 0.0, self.p, haldane_relation(self.p)), rtol=1e-15)

    def test_biomass_plus_substrate_balance(self):
        """Test d(X + S)/dt = F (S_in - S - X) / V along a trajectory with k1 = 1."""
        traj = synthesize([0.1, 1.0, 10.0], 50.0, 0.05, self.p)
        dY = fbr_rhs(traj.states, 0.0, self.p, haldane_relation(self.p))
        X, S, V = traj.states.T
        expected = self.p.F * (self.p.S_in - S - X) / V
        np.testing.assert_allclose(dY[:, 0] + dY[:, 1], expected, rtol=0, atol=1e-9)

    def test_non_positive_volume_raises(self):
        """Test the volume guard."""
        with self.assertRaises(ContractViolation):
            fbr_rhs(np.array([0.1, 1.0, 0.0]), 0.0, self.p, haldane_relation(self.p))

    def test_learned_mu_substitution(self):
        """Test that a constant mu^NN enters the balances like a known rate."""
        model = constant_mu_model(0.3)
        dy = fbr_rhs_with_nn_mu(self.y, 0.0, self.p, model)
        expected = fbr_rhs(self.y, 0.0, self.p, lambda y: 0.3)
        np.testing.assert_allclose(dy, expected, rtol=1e-15)

    def test_substrate_only_network(self):
        """Test a growth-rate network fed only the S column."""
        model = constant_mu_model(0.2, n_in=1)
        np.testing.assert_allclose(nn_mu(np.array([self.y, self.y]), model), [0.2, 0.2])
        self.assertEqual(fbr_rhs_with_nn_mu(self.y, 0.0, self.p, model).shape, (3,))

    def test_volume_balance_ignores_mu(self):
        """Test that dV/dt = F whatever the growth rate."""
        for value in (-1.0, 0.0, 2.5):
            dy = fbr_rhs_with_nn_mu(self.y, 0.0, self.p, constant_mu_model(value))
            self.assertEqual(dy[2], self.p.F)


class TestSynthesis(unittest.TestCase):
    """Tests for data generation."""

    def test_row_count_and_start(self):
        """Test grid size and initial state."""
        traj = synthesize([0.1, 1.0, 10.0], 25.0, 0.05, FbrParams())
        self.assertEqual(len(traj), 501)
        np.testing.assert_array_equal(traj.states[0], [0.1, 1.0, 10.0])
        self.assertTrue(np.all(traj.states[:, 1] >= 0))

    def test_reference_trajectories_stay_physical(self):
        """Test positive X and S and V = V0 + F t over 50 s from every reference initial condition."""
        p = FbrParams()
        for ic in ([0.1, 1.0, 10.0], [0.2, 1.5, 15.0], [0.15, 1.2, 12.0]):
            traj = synthesize(ic, 50.0, 0.05, p)
            self.assertTrue(np.all(traj.states[:, :2] > 0), ic)
            np.testing.assert_allclose(traj.states[:, 2], ic[2] + p.F * traj.times, rtol=0, atol=1e-10)

    def test_invalid_initial_condition(self):
        """Test that non-physical states are rejected."""
        with self.assertRaises(ContractViolation):
            synthesize([0.1, 1.0, 0.0], 10.0, 0.05, FbrParams())
        with self.assertRaises(ContractViolation):
            synthesize([0.1, 1.0], 10.0, 0.05, FbrParams())

    def test_estimated_mu_tracks_haldane(self):
        """Test finite-difference growth-rate estimates against the true law."""
        p = FbrParams()
        traj = synthesize([0.1, 1.0, 10.0], 25.0, 0.05, p)
        estimate = estimate_mu_samples(traj, p)
        truth = haldane_mu(traj.states[:, 1], p)
        # interior samples use second-order central differences
        np.testing.assert_allclose(estimate[1:-1], truth[1:-1], rtol=5e-3)


if __name__ == '__main__':
    unittest.main()
