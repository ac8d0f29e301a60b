import numpy as np
import pytest
from scipy.special import logit

from catselect.bilogistic import amh_joint, logistic_cdf
from catselect.errors import NoBracket, NoConvergence, NotPositiveDefinite
from catselect.llr import solve_association
from catselect.numerics import (
    NewtonOptions,
    bisect,
    condition_number,
    fd_gradient,
    fd_jacobian,
    newton_maximize,
    solve_spd,
)


class TestSolveSpd:
    def test_identity(self):
        rhs = np.array([3.0, -1.0, 2.5])
        np.testing.assert_array_equal(solve_spd(np.eye(3), rhs), rhs)

    def test_diagonal(self):
        np.testing.assert_allclose(solve_spd(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])

    @pytest.mark.parametrize("cond", [1e2, 1e5, 1e8])
    def test_random_residual(self, cond):
        # right-hand side built by multiplication from a known solution
        rng = np.random.default_rng(int(np.log10(cond)))
        for _ in range(20):
            q, _ = np.linalg.qr(rng.standard_normal((10, 10)))
            m = q @ np.diag(np.geomspace(1.0, 1.0 / cond, 10)) @ q.T
            m = 0.5 * (m + m.T)
            rhs = m @ rng.standard_normal(10)
            x = solve_spd(m, rhs)
            assert np.linalg.norm(m @ x - rhs) <= 1e-10 * np.linalg.norm(rhs)

    def test_not_positive_definite_pivot(self):
        m = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, -1.0]])
        with pytest.raises(NotPositiveDefinite) as info:
            solve_spd(m, np.ones(3))
        assert info.value.pivot == 2

    def test_condition_number(self):
        assert condition_number(np.diag([1.0, 100.0])) == pytest.approx(100.0)


class TestNewton:
    def test_concave_quadratic_one_step(self):
        a = np.array([[3.0, 1.0], [1.0, 2.0]])
        b = np.array([1.0, -2.0])

        def f(x):
            return -0.5 * x @ a @ x + b @ x

        x, diag = newton_maximize(f, lambda x: b - a @ x, np.zeros(2), hess=lambda x: -a)
        np.testing.assert_allclose(x, np.linalg.solve(a, b), atol=1e-14)
        assert diag.iterations == 1

    def test_logistic_rate(self):
        s = np.array([1, 0, 1, 1, 0, 1, 1, 0, 1, 1], dtype=float)

        def f(b):
            p = logistic_cdf(b[0])
            return float(np.sum(s * np.log(p) + (1 - s) * np.log1p(-p)))

        def g(b):
            return np.array([np.sum(s - logistic_cdf(b[0]))])

        x, diag = newton_maximize(f, g, np.zeros(1))
        assert x[0] == pytest.approx(logit(s.mean()), abs=1e-10)
        assert diag.converged

    def test_rosenbrock_with_cap(self):
        def f(x):
            return -((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

        def g(x):
            return -np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2),
                              200 * (x[1] - x[0] ** 2)])

        x, diag = newton_maximize(f, g, np.array([-1.2, 1.0]), NewtonOptions(step_cap=1.0))
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-8)
        assert diag.iterations < 200

    def test_objective_monotone(self):
        def f(x):
            return -((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

        def g(x):
            return fd_gradient(f, x, 1e-7)

        _, diag = newton_maximize(f, g, np.array([-1.2, 1.0]), NewtonOptions(step_cap=1.0, tol=1e-6))
        hist = np.array(diag.history)
        assert np.all(np.diff(hist) >= 0)

    def test_no_convergence_keeps_best(self):
        # unbounded objective along x: no maximizer
        with pytest.raises(NoConvergence) as info:
            newton_maximize(lambda x: float(x[0]), lambda x: np.array([1.0]), np.zeros(1),
                            NewtonOptions(max_iter=5, step_cap=1.0), hess=lambda x: np.zeros((1, 1)))
        assert info.value.best is not None
        assert info.value.best[0] > 0


class TestBisect:
    def test_identity(self):
        assert abs(bisect(lambda r: r, -1.0, 1.0)) <= 1e-13

    def test_association_root(self):
        root = bisect(lambda r: amh_joint(0.0, 0.0, r) - 0.3, -1.0, 1.0)
        assert root == pytest.approx(2 / 3, abs=1e-12)
        assert root == pytest.approx(solve_association(0.5, 0.5, 0.3), abs=1e-12)

    def test_no_bracket(self):
        with pytest.raises(NoBracket):
            bisect(lambda r: r + 5.0, -1.0, 1.0)

    def test_bracket_halves(self):
        widths = []

        def f(r):
            widths.append(r)
            return r - 0.123

        bisect(f, 0.0, 1.0, tol=1e-3)
        # two endpoint evaluations, then one midpoint per halving: ceil(log2(1/1e-3)) = 10
        assert len(widths) == 2 + 10


class TestFiniteDifferences:
    def test_quadratic_exact(self):
        a = np.array([[2.0, 0.5], [0.5, 1.0]])
        x = np.array([0.3, -1.7])
        g = fd_gradient(lambda t: t @ a @ t, x)
        np.testing.assert_allclose(g, 2 * a @ x, atol=1e-9)

    def test_logistic_slope(self):
        assert fd_gradient(lambda t: logistic_cdf(t[0]), np.zeros(1))[0] == pytest.approx(0.25, abs=1e-10)

    def test_jacobian_shape(self):
        jac = fd_jacobian(lambda t: np.array([t[0] * t[1], t[0] ** 2, np.sin(t[1])]), np.array([1.0, 2.0]))
        np.testing.assert_allclose(jac, [[2.0, 1.0], [2.0, 0.0], [0.0, np.cos(2.0)]], atol=1e-8)
