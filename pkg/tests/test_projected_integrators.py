"""
Unit tests for the projected NDRE integrators
"""

import unittest
import sys
import os
import numpy as np

# Add src directory to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from src.dense_kernels import solve_small_nare_newton
from src.exceptions import DimensionError, ProblemDefinitionError
from src.projected_integrators import (ProjectedNDRE, Trajectory, integrate_projected, solve_projected_bdf,
                                       solve_projected_exp, solve_projected_rosenbrock2, time_grid,
                                       uniform_steps)


def scalar_riccati():
    """y' = y² - 4y + 3, y(0) = 0"""
    return ProjectedNDRE(T_A=np.array([[2.0]]), T_D=np.array([[2.0]]), S_m=np.array([[1.0]]),
                         F_m=np.array([[np.sqrt(3.0)]]), G_m=np.array([[np.sqrt(3.0)]]))


def scalar_riccati_exact(t):
    growth = np.exp(2.0 * t)
    return 3.0 * (growth - 1.0) / (3.0 * growth - 1.0)


def final_error(trajectory):
    return abs(float(trajectory.final[0, 0]) - scalar_riccati_exact(trajectory.times[-1]))


class TestExponentialScheme(unittest.TestCase):
    """Modified Davison-Maki integration"""

    def test_scalar_linear(self):
        proj = ProjectedNDRE(T_A=np.array([[1.0]]), T_D=np.array([[0.5]]), S_m=np.zeros((1, 1)),
                             F_m=np.array([[1.0]]), G_m=np.array([[3.0]]))
        trajectory = solve_projected_exp(proj, [0.0, 0.5, 1.0, 2.0])
        expected = 2.0 * (1.0 - np.exp(-1.5 * trajectory.times))
        values = [float(Y[0, 0]) for Y in trajectory.values]
        np.testing.assert_allclose(values, expected, rtol=1e-10, atol=1e-14)

    def test_scalar_riccati(self):
        times = np.linspace(0.0, 3.0, 7)
        trajectory = solve_projected_exp(scalar_riccati(), times)
        values = [float(Y[0, 0]) for Y in trajectory.values]
        np.testing.assert_allclose(values, scalar_riccati_exact(times), rtol=1e-9, atol=1e-12)

    def test_initial_value_kept(self):
        proj = scalar_riccati()
        proj.Y0 = np.array([[0.5]])
        trajectory = solve_projected_exp(proj, [0.0, 1.0])
        self.assertEqual(float(trajectory.values[0][0, 0]), 0.5)
        self.assertEqual(trajectory.diagnostics['scheme'], 'exp')

    def test_rectangular_matches_bdf2(self):
        rng = np.random.default_rng(0)
        k, l = 4, 3
        proj = ProjectedNDRE(T_A=np.diag([1.0, 2.0, 3.0, 4.0]) + 0.1 * rng.random((k, k)),
                             T_D=np.diag([1.5, 2.5, 3.5]) + 0.1 * rng.random((l, l)),
                             S_m=0.1 * rng.random((l, k)), F_m=rng.random((k, 1)), G_m=rng.random((l, 1)))
        exact = solve_projected_exp(proj, [0.0, 1.0]).final
        bdf2 = solve_projected_bdf(proj, 2, h=1e-3, t_f=1.0).final
        self.assertLess(np.linalg.norm(bdf2 - exact) / np.linalg.norm(exact), 1e-4)


class TestRichardsonRatios(unittest.TestCase):
    """Observed convergence orders on the scalar Riccati problem"""

    def ratio(self, solve):
        return final_error(solve(0.02)) / final_error(solve(0.01))

    def test_bdf1_first_order(self):
        ratio = self.ratio(lambda h: solve_projected_bdf(scalar_riccati(), 1, h, 1.0))
        self.assertGreaterEqual(ratio, 1.8)
        self.assertLessEqual(ratio, 2.2)

    def test_bdf2_second_order(self):
        ratio = self.ratio(lambda h: solve_projected_bdf(scalar_riccati(), 2, h, 1.0))
        self.assertGreaterEqual(ratio, 3.5)
        self.assertLessEqual(ratio, 4.5)

    def test_rosenbrock_second_order(self):
        for variant in ('ros2', 'literal'):
            with self.subTest(variant=variant):
                ratio = self.ratio(lambda h: solve_projected_rosenbrock2(scalar_riccati(), h, t_f=1.0,
                                                                         variant=variant))
                self.assertGreaterEqual(ratio, 3.5)
                self.assertLessEqual(ratio, 4.5)

    def test_bdf3_more_accurate_than_bdf1(self):
        bdf1 = final_error(solve_projected_bdf(scalar_riccati(), 1, 0.01, 1.0))
        bdf3 = final_error(solve_projected_bdf(scalar_riccati(), 3, 0.01, 1.0))
        self.assertLess(bdf3, bdf1)


def rectangular_instance(seed=0):
    rng = np.random.default_rng(seed)
    k, l = 4, 3
    return ProjectedNDRE(T_A=np.diag([1.0, 2.0, 3.0, 4.0]) + 0.1 * rng.random((k, k)),
                         T_D=np.diag([1.5, 2.5, 3.5]) + 0.1 * rng.random((l, l)),
                         S_m=0.1 * rng.random((l, k)), F_m=rng.random((k, 1)), G_m=rng.random((l, 1)))


class TestSchemeAgreement(unittest.TestCase):
    """All projected schemes describe the same flow"""

    def schemes(self, proj, h):
        return {
            'exp': solve_projected_exp(proj, [0.0, 1.0]),
            'bdf1': solve_projected_bdf(proj, 1, h, 1.0),
            'bdf3': solve_projected_bdf(proj, 3, h, 1.0),
            'rosenbrock2': solve_projected_rosenbrock2(proj, h, t_f=1.0, variant='ros2'),
            'rosenbrock2-literal': solve_projected_rosenbrock2(proj, h, t_f=1.0, variant='literal'),
        }

    def test_equilibrium_preserved(self):
        proj = rectangular_instance()
        root = solve_small_nare_newton(proj.T_A, proj.T_D, proj.S_m, proj.F_m @ proj.G_m.T).X
        proj.Y0 = root
        for name, trajectory in self.schemes(proj, 0.05).items():
            with self.subTest(scheme=name):
                self.assertLess(np.linalg.norm(trajectory.final - root), 1e-10 * np.linalg.norm(root))

    def test_fine_step_schemes_agree(self):
        proj = rectangular_instance(1)
        finals = {name: trajectory.final for name, trajectory in self.schemes(proj, 1e-3).items()
                  if name != 'bdf1'}
        reference = finals.pop('exp')
        for name, Y in finals.items():
            with self.subTest(scheme=name):
                self.assertLess(np.linalg.norm(Y - reference) / np.linalg.norm(reference), 1e-4)


class TestGridsAndValidation(unittest.TestCase):
    """Time grids, stored steps and input checks"""

    def test_time_grid_prepends_zero(self):
        np.testing.assert_allclose(time_grid([0.5, 1.0]), [0.0, 0.5, 1.0])
        with self.assertRaises(ProblemDefinitionError):
            time_grid([1.0, 0.5])
        with self.assertRaises(ProblemDefinitionError):
            time_grid([])

    def test_uniform_steps_adjusts_h(self):
        steps, h = uniform_steps(0.3, 1.0)
        self.assertEqual(steps, 3)
        self.assertAlmostEqual(h, 1.0 / 3.0)

    def test_bdf_keeps_requested_times(self):
        trajectory = solve_projected_bdf(scalar_riccati(), 1, 0.1, 1.0, t_grid=[0.5])
        np.testing.assert_allclose(trajectory.times, [0.0, 0.5, 1.0])

    def test_projected_shapes(self):
        with self.assertRaises(DimensionError):
            ProjectedNDRE(T_A=np.eye(2), T_D=np.eye(3), S_m=np.ones((2, 3)),
                          F_m=np.ones((2, 1)), G_m=np.ones((3, 1)))
        with self.assertRaises(DimensionError):
            ProjectedNDRE(T_A=np.eye(2), T_D=np.eye(3), S_m=np.ones((3, 2)),
                          F_m=np.ones((2, 1)), G_m=np.ones((3, 1)), Y0=np.ones((3, 2)))

    def test_trajectory_times_increase(self):
        with self.assertRaises(ProblemDefinitionError):
            Trajectory(np.array([0.0, 0.0]), [np.zeros((1, 1)), np.zeros((1, 1))])

    def test_unknown_scheme(self):
        with self.assertRaises(ProblemDefinitionError):
            integrate_projected(scalar_riccati(), 'rk4', 0.1, 1.0)
        with self.assertRaises(ProblemDefinitionError):
            solve_projected_rosenbrock2(scalar_riccati(), 0.1, variant='ros3')

    def test_dispatch_exp_covers_final_time(self):
        trajectory = integrate_projected(scalar_riccati(), 'exp', 0.1, 2.0, t_grid=[0.5])
        np.testing.assert_allclose(trajectory.times, [0.0, 0.5, 2.0])
        self.assertAlmostEqual(float(trajectory.final[0, 0]), scalar_riccati_exact(2.0), places=9)


if __name__ == '__main__':
    unittest.main()
