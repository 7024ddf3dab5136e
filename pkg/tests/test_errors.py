"""Error estimation and return-error bound arithmetic."""

import numpy as np
import pytest

from moesim.core import Dataset, Metric, Transition, write_dataset_csv, read_dataset_csv
from moesim.envs import Windy2DConfig, make_windy2d
from moesim.envs.base import generate_trajectories
from moesim.envs.windy import windy_behavior_policy, windy_no_wind_model
from moesim.errors import (
    BoundParams,
    ErrorEstimate,
    InsufficientPairsError,
    LipschitzEstimates,
    choose_radius,
    estimate_lipschitz,
    global_lipschitz,
    np_error_estimate,
    p_error_estimate,
    parametric_residuals,
    return_error_bound,
    rollforward_state_error,
    state_error_closed_form,
)
from moesim.models import FunctionModel, NonparametricModel


def tr(x, a, r, y, tid=0, t=0):
    return Transition(np.atleast_1d(np.array(x, float)), a, r,
                      np.atleast_1d(np.array(y, float)), tid, t)


def brute_force_ratios(transitions, metric):
    """Independent double loop over all same-action pairs."""
    best_t = 0.0
    best_r = 0.0
    used = 0
    for i, a in enumerate(transitions):
        for b in transitions[i + 1 :]:
            if a.a != b.a:
                continue
            d = metric.distance(a.x, b.x)
            if d == 0.0:
                continue
            used += 1
            best_t = max(best_t, metric.distance(a.x_next, b.x_next) / d)
            best_r = max(best_r, abs(a.r - b.r) / d)
    return best_t, best_r, used


class TestLipschitzEstimation:
    def test_doubling_map_is_exact(self):
        # f(x) = 2x: every pair ratio is exactly 2
        transitions = [tr([float(i)], 0, 0.0, [2.0 * i], t=i) for i in range(1, 8)]
        pairs = [(transitions[i], transitions[j])
                 for i in range(len(transitions)) for j in range(i + 1, len(transitions))]
        est = estimate_lipschitz(pairs, Metric.euclidean(1))
        assert est.l_t == 2.0
        assert est.n_pairs == len(pairs)

    def test_single_pair(self):
        a = tr([0.0], 0, 1.0, [0.0])
        b = tr([1.0], 0, 3.0, [3.0])
        est = estimate_lipschitz([(a, b)], Metric.euclidean(1))
        assert est.l_t == 3.0
        assert est.l_r == 2.0

    def test_zero_distance_pairs_skipped(self):
        a = tr([1.0], 0, 1.0, [5.0])
        b = tr([1.0], 0, 2.0, [7.0])
        c = tr([2.0], 0, 1.0, [6.0])
        est = estimate_lipschitz([(a, b), (a, c)], Metric.euclidean(1))
        assert est.n_pairs == 1
        with pytest.raises(InsufficientPairsError):
            estimate_lipschitz([(a, b)], Metric.euclidean(1))

    def test_global_matches_brute_force(self):
        rng = np.random.default_rng(17)
        transitions = [
            tr(rng.normal(size=2), int(rng.integers(2)), float(rng.normal()),
               rng.normal(size=2), 0, i)
            for i in range(80)
        ]
        ds = Dataset(transitions, [transitions[0].x], 2, 2)
        m = Metric(rng.uniform(0.5, 2.0, size=2))
        got = global_lipschitz(ds, m)
        bt, br, used = brute_force_ratios(transitions, m)
        assert got.l_t == pytest.approx(bt, rel=1e-9)
        assert got.l_r == pytest.approx(br, rel=1e-9)
        assert got.n_pairs == used

    def test_large_input_gram_path_matches_brute_force(self):
        # above the exact-path limit the gram identity kicks in
        rng = np.random.default_rng(23)
        n = 3500
        X = rng.uniform(-5, 5, size=(n, 2))
        transitions = [
            tr(X[i], 0, float(X[i, 0]), X[i] * 1.5 + 0.2, 0, i) for i in range(n)
        ]
        ds = Dataset(transitions, [transitions[0].x], 2, 1)
        got = global_lipschitz(ds, Metric.euclidean(2))
        # the map is linear with factor 1.5, so the true max ratio is exact
        assert got.l_t == pytest.approx(1.5, rel=1e-6)

    def test_linear_map_never_exceeds_operator_norm(self):
        rng = np.random.default_rng(31)
        A = rng.normal(size=(2, 2))
        true_l = float(np.linalg.svd(A, compute_uv=False)[0])
        means = []
        for n in (10, 100, 1000):
            vals = []
            for s in range(30):
                r2 = np.random.default_rng(1000 * n + s)
                X = r2.normal(size=(n, 2))
                transitions = [tr(X[i], 0, 0.0, A @ X[i], 0, i) for i in range(n)]
                ds = Dataset(transitions, [X[0]], 2, 1)
                got = global_lipschitz(ds, Metric.euclidean(2))
                assert got.l_t <= true_l * (1 + 1e-9)
                vals.append(got.l_t)
            means.append(np.mean(vals))
        assert means[0] <= means[1] <= means[2]


class TestNonparametricErrorEstimate:
    def _dataset(self):
        # 1-D doubling dynamics, reward = 3x: local ratios are exactly 2 and 3
        transitions = [tr([float(i)], 0, 3.0 * i, [2.0 * i], t=i) for i in range(8)]
        return Dataset(transitions, [transitions[0].x], 1, 1)

    def test_zero_at_observed_start(self):
        ds = self._dataset()
        est = np_error_estimate(ds, np.array([3.0]), 0, 2.5, Metric.euclidean(1))
        assert est.supported and est.eps_t == 0.0 and est.eps_r == 0.0

    def test_product_of_ratio_and_distance(self):
        ds = self._dataset()
        est = np_error_estimate(ds, np.array([3.5]), 0, 2.0, Metric.euclidean(1))
        assert est.eps_t == pytest.approx(2.0 * 0.5)
        assert est.eps_r == pytest.approx(3.0 * 0.5)

    def test_unsupported_when_radius_excludes_everything(self):
        ds = self._dataset()
        est = np_error_estimate(ds, np.array([100.0]), 0, 1.0, Metric.euclidean(1))
        assert not est.supported
        assert np.isinf(est.eps_t)

    def test_single_neighbor_falls_back_to_global(self):
        transitions = [tr([0.0], 0, 0.0, [0.0], t=0),
                       tr([10.0], 0, 5.0, [40.0], t=1)]
        ds = Dataset(transitions, [transitions[0].x], 1, 1)
        m = Metric.euclidean(1)
        fallback = global_lipschitz(ds, m)  # l_t = 4, l_r = 0.5
        est = np_error_estimate(ds, np.array([0.5]), 0, 1.0, m, fallback=fallback)
        assert est.eps_t == pytest.approx(4.0 * 0.5)
        assert est.eps_r == pytest.approx(0.5 * 0.5)

    def test_true_error_bounded_by_ratio_times_distance(self):
        # the estimate's defining inequality, on a known-Lipschitz map
        rng = np.random.default_rng(3)
        A = np.array([[0.9, 0.2], [-0.1, 0.8]])
        true_l = float(np.linalg.svd(A, compute_uv=False)[0])
        X = rng.uniform(-2, 2, size=(200, 2))
        transitions = [tr(X[i], 0, 0.0, A @ X[i], 0, i) for i in range(200)]
        ds = Dataset(transitions, [X[0]], 2, 1)
        m = Metric.euclidean(2)
        npm = NonparametricModel(ds, m)
        for _ in range(100):
            x = rng.uniform(-2, 2, size=2)
            nearest = ds.nearest(x, 0, m)
            pred, _ = npm.predict(x, 0)
            true_err = m.distance(A @ x, pred)
            assert true_err <= true_l * m.distance(x, nearest.x) + 1e-12


class TestParametricErrorEstimate:
    def test_zero_for_exact_model(self):
        transitions = [tr([float(i)], 0, 1.0, [i + 1.0], t=i) for i in range(6)]
        ds = Dataset(transitions, [transitions[0].x], 1, 1)
        exact = FunctionModel(lambda x, a: x + 1.0, lambda x, a: 1.0)
        est = p_error_estimate(ds, exact, np.array([2.2]), 0, 3.0, Metric.euclidean(1))
        assert est.eps_t == 0.0 and est.eps_r == 0.0

    def test_single_neighbor_residual(self):
        transitions = [tr([0.0], 0, 1.0, [1.3], t=0)]
        ds = Dataset(transitions, [transitions[0].x], 1, 1)
        model = FunctionModel(lambda x, a: x + 1.0, lambda x, a: 1.0)
        est = p_error_estimate(ds, model, np.array([0.1]), 0, 1.0, Metric.euclidean(1))
        assert est.eps_t == pytest.approx(0.3)

    def test_matches_linear_scan_oracle(self):
        rng = np.random.default_rng(8)
        transitions = [
            tr(rng.normal(size=2), 0, float(rng.normal()), rng.normal(size=2), 0, i)
            for i in range(60)
        ]
        ds = Dataset(transitions, [transitions[0].x], 2, 1)
        m = Metric.euclidean(2)
        model = FunctionModel(lambda x, a: 0.8 * x, lambda x, a: float(x[0]))
        res = parametric_residuals(ds, model, m)
        for _ in range(30):
            x = rng.normal(size=2)
            c = float(rng.uniform(0.3, 2.0))
            neighbors = [t for t in transitions if m.distance(t.x, x) <= c]
            est = p_error_estimate(ds, model, x, 0, c, m, residuals=res)
            if not neighbors:
                assert not est.supported
                continue
            expect_t = max(m.distance(0.8 * t.x, t.x_next) for t in neighbors)
            expect_r = max(abs(t.x[0] - t.r) for t in neighbors)
            assert est.eps_t == pytest.approx(expect_t, rel=1e-12)
            assert est.eps_r == pytest.approx(expect_r, rel=1e-12)


class TestChooseRadius:
    def test_simple_ratio(self):
        # residuals are 2 everywhere; pair ratios are 4 exactly
        transitions = [tr([float(i)], 0, 0.0, [4.0 * i], t=i) for i in range(5)]
        ds = Dataset(transitions, [transitions[0].x], 1, 1)
        model = FunctionModel(lambda x, a: 4.0 * x + 2.0, lambda x, a: 0.0)
        c = choose_radius(ds, model, Metric.euclidean(1))
        assert c == pytest.approx(2.0 / 4.0)

    def test_perfect_model_gives_zero(self):
        transitions = [tr([float(i)], 0, 0.0, [i + 1.0], t=i) for i in range(5)]
        ds = Dataset(transitions, [transitions[0].x], 1, 1)
        model = FunctionModel(lambda x, a: x + 1.0, lambda x, a: 0.0)
        assert choose_radius(ds, model, Metric.euclidean(1)) == 0.0

    def test_zero_ratio_gives_infinity(self):
        # constant dynamics: all next states identical, ratios are 0
        transitions = [tr([float(i)], 0, 0.0, [7.0], t=i) for i in range(5)]
        ds = Dataset(transitions, [transitions[0].x], 1, 1)
        model = FunctionModel(lambda x, a: x, lambda x, a: 0.0)
        assert choose_radius(ds, model, Metric.euclidean(1)) == np.inf

    def test_empty_dataset_gives_zero(self):
        ds = Dataset([], [np.zeros(1)], 1, 1)
        model = FunctionModel(lambda x, a: x, lambda x, a: 0.0)
        assert choose_radius(ds, model, Metric.euclidean(1)) == 0.0

    def test_windy_value_recomputed_from_serialized_dataset(self, tmp_path):
        cfg = Windy2DConfig()
        env = make_windy2d(cfg)
        trajs, _ = generate_trajectories(env, windy_behavior_policy(cfg), 6, seed=5)
        ds = Dataset.from_trajectories(trajs, 4)
        model = windy_no_wind_model(cfg)
        m = Metric.euclidean(2)
        c = choose_radius(ds, model, m)

        path = tmp_path / "windy.csv"
        write_dataset_csv(path, ds)
        loaded, _ = read_dataset_csv(path)
        # independent recomputation: plain loops over the reloaded file
        residuals = [
            m.distance(model.predict(t.x, t.a)[0], t.x_next)
            for t in loaded.transitions
        ]
        bt, _, _ = brute_force_ratios(list(loaded.transitions), m)
        assert c == pytest.approx(np.mean(residuals) / bt, rel=1e-9)


class TestBoundArithmetic:
    def test_rollforward_examples(self):
        p1 = BoundParams(1.0, 1.0, 1.0)
        delta = 0.0
        for _ in range(5):
            delta = rollforward_state_error(delta, p1, 0.0)
        assert delta == 0.0
        delta = 0.0
        for _ in range(7):
            delta = rollforward_state_error(delta, p1, 0.25)
        assert delta == pytest.approx(7 * 0.25)
        p2 = BoundParams(2.0, 1.0, 1.0)
        d = rollforward_state_error(0.0, p2, 1.0)
        d = rollforward_state_error(d, p2, 1.0)
        assert d == 3.0

    def test_closed_form_equals_recursion(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            t_len = int(rng.integers(1, 12))
            eps = rng.uniform(0, 2, size=t_len)
            p = BoundParams(float(rng.uniform(0, 2)), 1.0, 1.0)
            delta = 0.0
            for k in range(t_len):
                delta = rollforward_state_error(delta, p, eps[k])
            assert delta == pytest.approx(
                state_error_closed_form(eps, p, t_len), abs=1e-12, rel=1e-12
            )

    def test_bound_zero_for_zero_errors(self):
        p = BoundParams(1.5, 2.0, 0.9)
        assert return_error_bound([0.0] * 6, [0.0] * 6, p) == 0.0

    def test_bound_hand_computed(self):
        p = BoundParams(1.0, 1.0, 1.0)
        got = return_error_bound([0.5, 0.0], [0.1, 0.2], p)
        assert got == pytest.approx(0.8)

    def test_bound_monotone_in_every_entry(self):
        rng = np.random.default_rng(21)
        p = BoundParams(1.3, 0.7, 0.95)
        eps_t = rng.uniform(0, 1, size=6)
        eps_r = rng.uniform(0, 1, size=6)
        base = return_error_bound(eps_t, eps_r, p)
        for i in range(6):
            bumped_t = eps_t.copy()
            bumped_t[i] += 0.5
            assert return_error_bound(bumped_t, eps_r, p) >= base
            bumped_r = eps_r.copy()
            bumped_r[i] += 0.5
            assert return_error_bound(eps_t, bumped_r, p) > base

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            return_error_bound([0.0], [0.0, 0.0], BoundParams(1.0, 1.0, 1.0))


from helpers import simulate_bound_instance


class TestBoundSoundness:
    def test_gap_never_exceeds_bound(self):
        rng = np.random.default_rng(100)
        for _ in range(200):
            gap, bound = simulate_bound_instance(rng)
            assert gap <= bound + 1e-9


class TestErrorEstimateType:
    def test_validation(self):
        with pytest.raises(ValueError):
            ErrorEstimate(-1.0, 0.0)
        with pytest.raises(ValueError):
            ErrorEstimate(np.inf, 0.0, supported=True)
        est = ErrorEstimate.unsupported()
        assert not est.supported and np.isinf(est.eps_t)

    def test_bound_params_validation(self):
        with pytest.raises(ValueError):
            BoundParams(-1.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            BoundParams(1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            BoundParams(np.inf, 1.0, 1.0)
