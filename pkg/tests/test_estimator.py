import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import ConvergenceWarning, NotFittedError

from conftest import random_trajectory, stable_poisson
from gglm.estimator import (FitConfig, GGLMEstimator, empirical_field, fit_least_squares,
                            fit_vi_extragradient, link_moduli, ls_constant,
                            monotonicity_modulus, objective_value, recovery_error_bound)
from gglm.model import (SIGMOID, FeasibleSet, ModelShape, Trajectory, expand_gram,
                        pack_params, transpose_apply)
from oracles import dense_field, dense_gram, dense_H, dense_objective, windows

LINKS = ["identity", "sigmoid", "exp"]


def noiseless_identity(theta=0.7, N=60):
    """``z_t = beta0 + R z_{t-1}`` with ``R`` a rotation about ``z* = (5, 5)``.

    The orbit keeps circling, so the lag design stays well conditioned while
    every response equals its conditional mean exactly.
    """
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    zstar = np.array([5.0, 5.0])
    beta0 = (np.eye(2) - R) @ zstar
    z = np.empty((N + 1, 2))
    z[0] = zstar + [2.0, 0.0]
    for t in range(1, N + 1):
        z[t] = beta0 + R @ z[t - 1]
    return np.concatenate([beta0, R.ravel()]), Trajectory(ModelShape(2, 1), z, "continuous")


class TestField:
    def test_documented_example(self):
        traj = Trajectory(ModelShape(1, 1), np.array([[1.0], [2.0], [0.0]]))
        np.testing.assert_allclose(empirical_field(traj, np.array([0.5, 0.5])), [0.25, 1.0],
                                   rtol=1e-14)

    def test_exact_fit_gives_zero_field(self):
        beta, traj = noiseless_identity()
        np.testing.assert_allclose(empirical_field(traj, beta), 0.0, atol=1e-12)

    def test_weight_scaling(self, rng):
        traj = random_trajectory(rng, N=25)
        x = rng.normal(size=traj.shape.kappa())
        w = rng.uniform(0.5, 2.0, traj.N)
        np.testing.assert_allclose(empirical_field(traj, x, weights=3.0 * w),
                                   empirical_field(traj, x, weights=w) / 3.0, rtol=1e-13)

    @pytest.mark.parametrize("link", LINKS)
    def test_matches_dense_oracle(self, link, rng):
        traj = random_trajectory(rng, L=2, d=2, N=20)
        x = rng.normal(scale=0.3, size=traj.shape.kappa())
        w = rng.uniform(0.5, 2.0, traj.N)
        got = empirical_field(traj, x, link, w)
        want = dense_field(traj.states, 2, x, link, w)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-13)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_nonfinite_link_output(self):
        traj = Trajectory(ModelShape(1, 1), np.array([[1000.0], [1.0]]))
        with pytest.raises((FloatingPointError, ValueError)):
            empirical_field(traj, np.array([1.0, 1.0]), "exp")

    def test_shape_mismatch(self, rng):
        traj = random_trajectory(rng)
        with pytest.raises(ValueError):
            empirical_field(traj, np.zeros(3))


class TestObjective:
    @pytest.mark.parametrize("link", LINKS)
    def test_gradient_matches_field(self, link):
        # 20 random small instances, central differences with h = 1e-6
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(20):
            traj = random_trajectory(rng, L=int(rng.integers(1, 3)), d=int(rng.integers(1, 3)),
                                     N=15)
            x = rng.normal(scale=0.2, size=traj.shape.kappa())
            F = empirical_field(traj, x, link)
            h = 1e-6
            fd = np.array([(objective_value(traj, x + h * e, link)
                            - objective_value(traj, x - h * e, link)) / (2 * h)
                           for e in np.eye(x.size)])
            worst = max(worst, np.linalg.norm(fd - F) / max(np.linalg.norm(F), 1e-12))
        assert worst <= 1e-6

    @pytest.mark.parametrize("link", LINKS)
    def test_matches_dense_oracle(self, link, rng):
        traj = random_trajectory(rng, N=20)
        x = rng.normal(scale=0.3, size=traj.shape.kappa())
        np.testing.assert_allclose(objective_value(traj, x, link),
                                   dense_objective(traj.states, 2, x, link), rtol=1e-12)

    def test_zero_case(self):
        traj = Trajectory(ModelShape(2, 2), np.zeros((6, 2)))
        assert objective_value(traj, np.zeros(10)) == 0.0

    def test_identity_equals_least_squares_up_to_constant(self, rng):
        for _ in range(5):
            traj = random_trajectory(rng, N=30)
            x = rng.normal(size=traj.shape.kappa())
            ls = np.mean([0.5 * np.sum((dense_H(lags).T @ x - y) ** 2)
                          for lags, y in windows(traj.states, 2)])
            assert abs(objective_value(traj, x) + ls_constant(traj) - ls) <= 1e-10


class TestLeastSquares:
    def test_noiseless_recovery(self):
        beta, traj = noiseless_identity()
        res = fit_least_squares(traj, FeasibleSet.unconstrained())
        np.testing.assert_allclose(res.flat, beta, atol=1e-6)

    def test_two_parameter_normal_equations(self, rng):
        traj = random_trajectory(rng, L=1, d=1, N=40, high=6)
        Z = np.column_stack([np.ones(traj.N), traj.states[:-1, 0]])
        y = traj.states[1:, 0]
        want = np.linalg.solve(Z.T @ Z, Z.T @ y)
        res = fit_least_squares(traj, FeasibleSet.unconstrained())
        np.testing.assert_allclose(res.flat, want, atol=1e-8)

    def test_first_order_optimality_over_box(self, small_poisson, rng):
        _, traj = small_poisson
        B = FeasibleSet.box_row_sum(1.1, 0.55)
        res = fit_least_squares(traj, B)
        assert res.converged
        assert B.contains(res.flat, traj.shape, tol=1e-12)
        g = empirical_field(traj, res.flat)
        for _ in range(200):
            x = B.project(rng.uniform(0, 1.2, traj.shape.kappa()), traj.shape)
            assert g @ (x - res.flat) >= -1e-6

    @pytest.mark.parametrize("accelerate", [True, False])
    def test_objective_nonincreasing(self, small_poisson, accelerate):
        _, traj = small_poisson
        cfg = FitConfig(accelerate=accelerate, polish_every=0, max_iters=3000)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            res = fit_least_squares(traj, FeasibleSet.box_row_sum(1.1, 0.55), cfg,
                                    record_history=True)
        h = np.array(res.history)
        assert np.all(np.diff(h) <= 1e-12 * np.abs(h[:-1]))

    def test_unconstrained_field_small(self, rng):
        traj = random_trajectory(rng, L=2, d=2, N=200)
        cfg = FitConfig(tol_residual=1e-10)
        res = fit_least_squares(traj, FeasibleSet.unconstrained(), cfg)
        assert np.max(np.abs(empirical_field(traj, res.flat))) <= 10 * cfg.tol_residual

    def test_polish_agrees_with_plain_iterations(self, small_poisson):
        _, traj = small_poisson
        B = FeasibleSet.box_row_sum(1.1, 0.55)
        a = fit_least_squares(traj, B, FitConfig(polish_every=0))
        b = fit_least_squares(traj, B, FitConfig(polish_every=20))
        assert a.converged and b.converged
        np.testing.assert_allclose(a.flat, b.flat, atol=1e-7)

    def test_nonconvergence_reported(self, small_poisson):
        _, traj = small_poisson
        with pytest.warns(ConvergenceWarning):
            res = fit_least_squares(traj, FeasibleSet.box_row_sum(1.1, 0.55),
                                    FitConfig(max_iters=2, polish_every=0))
        assert not res.converged and res.final_residual > 0

    def test_empty_trajectory(self):
        with pytest.raises(ValueError):
            fit_least_squares(Trajectory(ModelShape(1, 2), np.zeros((2, 1))))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            FitConfig(tol_residual=0)
        with pytest.raises(ValueError):
            FitConfig(max_iters=0)


class TestExtragradient:
    def test_identity_agrees_with_least_squares(self):
        _, traj = stable_poisson(N=800, seed=3)
        B = FeasibleSet.box_row_sum(1.1, 0.55)
        ls = fit_least_squares(traj, B)
        eg = fit_vi_extragradient(traj, "identity", B, FitConfig(tol_residual=1e-11))
        assert eg.converged
        np.testing.assert_allclose(eg.flat, ls.flat, atol=1e-5)

    def test_sigmoid_noiseless_root(self):
        # a strongly rotating sigmoid map keeps the orbit spread out
        th = 1.5
        R = 8.0 * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        b0 = -R @ np.array([0.5, 0.5])
        z = np.empty((201, 2))
        z[0] = [0.1, 0.9]
        for t in range(1, 201):
            z[t] = SIGMOID.value(b0 + R @ z[t - 1])
        traj = Trajectory(ModelShape(2, 1), z, kind="continuous")
        beta = np.concatenate([b0, R.ravel()])
        assert np.max(np.abs(empirical_field(traj, beta, "sigmoid"))) <= 1e-14
        cfg = FitConfig(tol_residual=1e-10, max_iters=200_000)
        res = fit_vi_extragradient(traj, "sigmoid", FeasibleSet.unconstrained(), cfg)
        assert res.converged
        assert np.max(np.abs(empirical_field(traj, res.flat, "sigmoid"))) <= 1e-8
        np.testing.assert_allclose(res.flat, beta, atol=1e-5)

    def test_monotone_along_iterates(self):
        _, traj = stable_poisson(N=400, seed=5)
        B = FeasibleSet.box_row_sum(1.1, 0.55)
        iterates = []
        res = fit_vi_extragradient(traj, "identity", B, FitConfig(tol_residual=1e-9),
                                   callback=lambda k, x: iterates.append(x.copy()))
        xhat = res.flat
        for x in iterates[::10]:
            assert empirical_field(traj, x) @ (x - xhat) >= -1e-12


class TestModulus:
    def test_two_by_two_example(self):
        traj = Trajectory(ModelShape(1, 1), np.array([[1.0], [0.0]]))
        lam, G = monotonicity_modulus(traj, return_matrix=True)
        np.testing.assert_allclose(G, [[1, 1], [1, 1]])
        assert abs(lam) <= 1e-15

    def test_identity_gram_synthetic(self):
        shape = ModelShape(2, 1)
        G = expand_gram(np.eye(3), shape)
        assert np.isclose(np.linalg.eigvalsh(G)[0], 1.0)

    def test_bounded_by_min_diagonal(self, rng):
        for _ in range(10):
            traj = random_trajectory(rng, N=30)
            lam, G = monotonicity_modulus(traj, return_matrix=True)
            assert lam <= G.diagonal().min() + 1e-12

    def test_matches_dense_oracle_in_any_order(self, rng):
        traj = random_trajectory(rng, N=25)
        gamma = rng.uniform(0.1, 1.0, traj.N)
        w = rng.uniform(0.5, 2.0, traj.N)
        lam, G = monotonicity_modulus(traj, gamma, w, return_matrix=True)
        items = list(windows(traj.states, 2))
        perm = rng.permutation(len(items))
        G2 = sum(gamma[i] / w[i] * dense_H(items[i][0]) @ dense_H(items[i][0]).T
                 for i in perm) / traj.N
        np.testing.assert_allclose(G, G2, atol=1e-12)
        np.testing.assert_allclose(G, dense_gram(traj.states, 2, gamma, w), atol=1e-12)
        assert np.isclose(lam, np.linalg.eigvalsh(G2)[0], atol=1e-12)

    def test_kappa_guard(self):
        shape = ModelShape(10, 20)
        assert shape.kappa() > 2000
        traj = Trajectory(shape, np.zeros((21, 10)))
        with pytest.raises(ValueError):
            monotonicity_modulus(traj)

    def test_sigmoid_moduli(self, rng):
        traj = random_trajectory(rng, N=10)
        B = FeasibleSet.box_row_sum(1.0, 0.5)
        g = link_moduli(traj, "sigmoid", B)
        zmax = 1.0 + 0.5 * traj.design[:, 1:].max(axis=1)
        np.testing.assert_allclose(g, SIGMOID.derivative(zmax))
        np.testing.assert_array_equal(link_moduli(traj, "identity"), 1.0)


class TestRecoveryBound:
    def test_examples(self):
        assert recovery_error_bound(0.0, 0.3, 0.1) == 0.0
        assert np.isclose(recovery_error_bound(0.1, 0.04, 0.04), 2.5)

    @pytest.mark.parametrize("theta", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
    def test_uncertified(self, theta):
        with pytest.raises(ValueError, match="modulus not certified"):
            recovery_error_bound(0.1, *theta)


class TestSklearnWrapper:
    def test_clone_and_params(self):
        est = GGLMEstimator(d=3, a_cap=1.1, b_cap=0.55)
        c = clone(est)
        assert c.get_params() == est.get_params()

    def test_fit_predict(self, small_poisson):
        beta, traj = small_poisson
        est = GGLMEstimator(d=2, a_cap=1.1, b_cap=0.55).fit(traj.states)
        assert est.coef_.shape == (traj.shape.kappa(),)
        np.testing.assert_allclose(est.coef_, fit_least_squares(
            traj, FeasibleSet.box_row_sum(1.1, 0.55)).flat, atol=1e-12)
        pred = est.predict(traj.states)
        assert pred.shape == (traj.states.shape[0] - 1, 2)
        np.testing.assert_allclose(pred[0], transpose_apply(traj.window(1), est.coef_))
        lo, hi = est.predict_interval(traj.states)
        assert np.all(lo <= hi)
        assert np.isfinite(est.score(traj.states))

    def test_unfitted(self):
        with pytest.raises(NotFittedError):
            GGLMEstimator().predict(np.zeros((3, 1)))

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            GGLMEstimator(a_cap=1.0).fit(np.zeros((5, 1)))
        with pytest.raises(ValueError):
            GGLMEstimator(solver="least_squares", link="sigmoid").fit(np.zeros((5, 1)))

    def test_pack_consistency(self, small_poisson):
        _, traj = small_poisson
        est = GGLMEstimator(d=2).fit(traj.states)
        np.testing.assert_array_equal(pack_params(est.beta_), est.coef_)
