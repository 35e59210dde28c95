"""
Tests for integration, multistep residuals and implicit rollouts.
"""

import math
import unittest
from fractions import Fraction

import numpy as np

from odelearn.bioreactor import FbrParams, fbr_system, synthesize
from odelearn.errors import ContractViolation, IntegrationError
from odelearn.ode import (
    DynamicalSystem,
    Trajectory,
    implicit_rollout,
    integrate,
    multistep_residual,
    scheme_adams_moulton,
    scheme_by_name,
    scheme_trapezoidal,
    trajectory_windows,
)


def decay(y, t):
    return -y


class TestTrajectory(unittest.TestCase):
    """Tests for the Trajectory container."""

    def test_uniform_spacing_detected(self):
        """Test that uniform grids expose their step."""
        traj = Trajectory(np.arange(5) * 0.25, np.zeros((5, 3)))
        self.assertTrue(traj.is_uniform)
        self.assertEqual(traj.uniform_dt, 0.25)

    def test_non_uniform_spacing(self):
        """Test that irregular grids have no uniform step."""
        traj = Trajectory([0.0, 0.1, 0.3], np.zeros((3, 1)))
        self.assertFalse(traj.is_uniform)

    def test_non_increasing_times_raise(self):
        """Test that times must be strictly increasing."""
        with self.assertRaises(ContractViolation):
            Trajectory([0.0, 0.1, 0.1], np.zeros((3, 1)))


class TestRungeKutta(unittest.TestCase):
    """Tests for the RK4 integrator."""

    def test_convergence_order_on_decay(self):
        """Test fourth-order self-convergence on y' = -y."""
        errors = []
        for dt in (0.1, 0.05):
            traj = integrate(decay, [1.0], 0.0, 1.0, dt)
            errors.append(abs(traj.states[-1, 0] - math.exp(-1.0)))
        order = math.log2(errors[0] / errors[1])
        self.assertGreater(order, 3.8)
        self.assertLess(order, 4.2)

    def test_convergence_order_on_reactor(self):
        """Test fourth-order self-convergence on the reactor model."""
        system = fbr_system(FbrParams())
        finals = [integrate(system, [0.1, 1.0, 10.0], 0.0, 10.0, dt).states[-1] for dt in (0.4, 0.2, 0.1)]
        e1 = np.max(np.abs(finals[0] - finals[1]))
        e2 = np.max(np.abs(finals[1] - finals[2]))
        order = math.log2(e1 / e2)
        self.assertGreater(order, 3.8)
        self.assertLess(order, 4.2)

    def test_volume_is_exact(self):
        """Test that V(t) = V0 + F t under constant feed."""
        traj = synthesize([0.1, 1.0, 10.0], 50.0, 0.05, FbrParams())
        self.assertEqual(len(traj), 1001)
        np.testing.assert_allclose(traj.states[:, 2], 10.0 + 0.1 * traj.times, rtol=0, atol=1e-10)

    def test_last_step_is_shortened(self):
        """Test that the end time is always included."""
        traj = integrate(decay, [1.0], 0.0, 1.0, 0.3)
        np.testing.assert_allclose(traj.times, [0.0, 0.3, 0.6, 0.9, 1.0])

    def test_blowup_truncates(self):
        """Test that y' = y^2 is truncated before its singularity."""
        traj = integrate(lambda y, t: y * y, [1.0], 0.0, 2.0, 0.01, blowup_threshold=1e6)
        self.assertTrue(traj.truncated)
        self.assertLess(traj.times[-1], 1.1)
        self.assertLessEqual(np.max(np.abs(traj.states)), 1e6)

    def test_non_finite_rhs_raises(self):
        """Test that a NaN right-hand side fails without a threshold."""
        with self.assertRaises(IntegrationError):
            integrate(lambda y, t: np.full_like(y, np.nan), [1.0], 0.0, 1.0, 0.1)

    def test_invalid_span_raises(self):
        """Test span and step preconditions."""
        with self.assertRaises(ContractViolation):
            integrate(decay, [1.0], 1.0, 1.0, 0.1)
        with self.assertRaises(ContractViolation):
            integrate(decay, [1.0], 0.0, 1.0, 0.0)

    def test_system_wrapper(self):
        """Test that a DynamicalSystem integrates like its rhs."""
        system = DynamicalSystem(1, decay, name="decay")
        a = integrate(system, [2.0], 0.0, 1.0, 0.1)
        b = integrate(decay, [2.0], 0.0, 1.0, 0.1)
        np.testing.assert_array_equal(a.states, b.states)


class TestSchemes(unittest.TestCase):
    """Tests for the multistep coefficient tables."""

    def test_trapezoidal_coefficients(self):
        """Test alpha and beta of the trapezoidal rule."""
        scheme = scheme_trapezoidal()
        np.testing.assert_array_equal(scheme.alpha, [1.0, -1.0])
        np.testing.assert_array_equal(scheme.beta, [0.5, 0.5])
        self.assertEqual(scheme.M, 1)

    def test_adams_moulton_family_is_consistent(self):
        """Test exact consistency of every supported member."""
        for M in range(1, 5):
            scheme = scheme_adams_moulton(M)
            scheme.check_consistency()
            self.assertEqual(sum(scheme.beta_exact), 1)

    def test_two_step_coefficients(self):
        """Test the exact AM2 weights."""
        scheme = scheme_adams_moulton(2)
        self.assertEqual(tuple(scheme.beta_exact), (Fraction(5, 12), Fraction(8, 12), Fraction(-1, 12)))
        np.testing.assert_array_equal(scheme.alpha, [1.0, -1.0, 0.0])

    def test_lookup(self):
        """Test scheme names."""
        self.assertEqual(scheme_by_name("am3").M, 3)
        self.assertEqual(scheme_by_name("Trapezoidal").M, 1)
        with self.assertRaises(ContractViolation):
            scheme_by_name("bdf2")
        with self.assertRaises(ContractViolation):
            scheme_adams_moulton(5)


class TestResidual(unittest.TestCase):
    """Tests for window residuals."""

    def test_trapezoidal_window_by_hand(self):
        """Test the residual sign convention on one window."""
        scheme = scheme_trapezoidal()
        r = multistep_residual(scheme, np.array([[2.0], [1.0]]), 0.1, lambda y: 3.0 * y)
        np.testing.assert_allclose(r, [2.0 - 1.0 - 0.05 * (6.0 + 3.0)])

    def test_exact_trapezoidal_data_has_zero_residual(self):
        """Test that data stepped by the trapezoidal rule satisfy it."""
        dt = 0.05
        factor = (1.0 - dt / 2.0) / (1.0 + dt / 2.0)
        states = factor ** np.arange(201)
        traj = Trajectory(dt * np.arange(201), states)
        scheme = scheme_trapezoidal()
        windows = trajectory_windows(traj, scheme.M)
        for n in range(windows[0].shape[0]):
            window = np.array([windows[0][n], windows[1][n]])
            r = multistep_residual(scheme, window, dt, lambda y: -y)
            self.assertLess(abs(r[0]), 1e-13)

    def test_reactor_data_residual_floor(self):
        """Test that RK4 reactor data nearly satisfy the multistep equations."""
        p = FbrParams()
        traj = synthesize([0.1, 1.0, 10.0], 10.0, 0.05, p)
        system = fbr_system(p)
        floors = {}
        for name in ("trapezoidal", "am4"):
            scheme = scheme_by_name(name)
            windows = trajectory_windows(traj, scheme.M)
            worst = 0.0
            for n in range(windows[0].shape[0]):
                window = np.array([w[n] for w in windows])
                r = multistep_residual(scheme, window, traj.uniform_dt, lambda y: system(y, 0.0))
                worst = max(worst, float(np.max(np.abs(r))))
            floors[name] = worst
        self.assertLess(floors["trapezoidal"], 1e-6)
        self.assertLess(floors["am4"], floors["trapezoidal"])

    def test_two_step_scheme_exact_on_cubics(self):
        """Test that AM2 windows of t^k vanish for k <= 3 but not for k = 4."""
        scheme = scheme_adams_moulton(2)
        dt = 0.1
        times = 1.3 - dt * np.arange(3)
        for k in range(5):
            window = np.stack([times, times ** k], axis=1)
            r = multistep_residual(scheme, window, dt, lambda y, k=k: np.array([1.0, k * y[0] ** (k - 1) if k else 0.0]))
            if k <= 3:
                self.assertLess(float(np.max(np.abs(r))), 1e-14, k)
            else:
                self.assertGreater(abs(r[1]), 1e-6)

    def test_residual_is_linear_in_the_window(self):
        """Test superposition for a linear right-hand side."""
        rng = np.random.default_rng(4)
        A = rng.normal(size=(3, 3))
        scheme = scheme_adams_moulton(3)
        w1, w2 = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))

        def residual(w):
            return multistep_residual(scheme, w, 0.05, lambda y: A @ y)

        np.testing.assert_allclose(
            residual(2.0 * w1 - 0.5 * w2), 2.0 * residual(w1) - 0.5 * residual(w2), rtol=1e-12, atol=1e-14
        )

    def test_wrong_window_length_raises(self):
        """Test that the window must hold M+1 states."""
        with self.assertRaises(ContractViolation):
            multistep_residual(scheme_trapezoidal(), np.zeros((3, 1)), 0.1, decay)

    def test_non_uniform_window_times_raise(self):
        """Test that supplied window times must be uniform."""
        with self.assertRaises(ContractViolation):
            multistep_residual(scheme_trapezoidal(), np.zeros((2, 1)), 0.1, lambda y: y, times=[0.25, 0.1])

    def test_non_uniform_trajectory_has_no_windows(self):
        """Test that windows require uniform sampling."""
        traj = Trajectory([0.0, 0.1, 0.3], np.zeros((3, 1)))
        with self.assertRaises(ContractViolation):
            trajectory_windows(traj, 1)


class TestImplicitRollout(unittest.TestCase):
    """Tests for stepping the implicit multistep equation."""

    def test_trapezoidal_rollout_matches_closed_form(self):
        """Test that each step solves the trapezoidal equation for y' = -y."""
        dt = 0.1
        traj = implicit_rollout(scheme_trapezoidal(), decay, np.array([[1.0]]), dt, 20)
        factor = (1.0 - dt / 2.0) / (1.0 + dt / 2.0)
        np.testing.assert_allclose(traj.states[:, 0], factor ** np.arange(21), rtol=1e-11)
        self.assertEqual(len(traj), 21)

    def test_adams_moulton_rollout_accuracy(self):
        """Test that an AM2 rollout with exact warmup tracks exp(-t)."""
        dt = 0.01
        warmup = np.exp(-dt * np.arange(2))[:, None]
        traj = implicit_rollout(scheme_adams_moulton(2), decay, warmup, dt, 99)
        self.assertAlmostEqual(traj.times[-1], 1.0, places=12)
        np.testing.assert_allclose(traj.states[:, 0], np.exp(-traj.times), atol=1e-6)

    def test_reactor_rollout_agrees_with_rk4(self):
        """Test a 50 s trapezoidal rollout of the true reactor against RK4."""
        p = FbrParams()
        system = fbr_system(p)
        ref = integrate(system, [0.1, 1.0, 10.0], 0.0, 50.0, 0.05)
        traj = implicit_rollout(scheme_trapezoidal(), system.rhs, ref.states[:1], 0.05, 1000)
        self.assertEqual(len(traj), len(ref))
        self.assertLess(float(np.max(np.abs(traj.states - ref.states))), 1e-3)

    def test_trapezoidal_rollout_is_second_order(self):
        """Test that halving dt divides the rollout error by about 4."""
        errors = []
        for dt, n in ((0.1, 10), (0.05, 20)):
            traj = implicit_rollout(scheme_trapezoidal(), decay, np.array([[1.0]]), dt, n)
            exact = integrate(decay, [1.0], 0.0, 1.0, 0.001).states[-1, 0]
            errors.append(abs(traj.states[-1, 0] - exact))
        ratio = errors[0] / errors[1]
        self.assertGreater(ratio, 3.8)
        self.assertLess(ratio, 4.2)

    def test_warmup_length_checked(self):
        """Test that the warmup must hold M states."""
        with self.assertRaises(ContractViolation):
            implicit_rollout(scheme_adams_moulton(3), decay, np.ones((2, 1)), 0.1, 5)


if __name__ == '__main__':
    unittest.main()
