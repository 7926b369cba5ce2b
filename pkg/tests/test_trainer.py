import time

import numpy as np
import pytest
from flaky import flaky

from weighted_svd.evaluation import epoch_seconds_summary, rmse
from weighted_svd.ingest import generate_synthetic
from weighted_svd.models import ModelKind, bind_training_data, init_params, predict
from weighted_svd.ratings import EmptyDatasetError, RatingsDataset, global_mean
from weighted_svd.trainer import (
    Coefficients,
    HyperParams,
    TrainingDivergedError,
    default_hyperparams,
    gradient_at,
    loss,
    rating_loss,
    sgd_step,
    train,
)

SGD_KINDS = [ModelKind.PMF, ModelKind.SVD, ModelKind.SVDPP, ModelKind.WSVD]


def _random_instance(rng: np.random.Generator, kind: ModelKind):
    m, n, k = (int(v) for v in rng.integers(1, [6, 6, 5]))
    params = init_params(kind, m, n, k, seed=int(rng.integers(1 << 31)))
    if kind.has_mean:
        params.mean = float(rng.uniform(1, 5))
    if kind.has_bias:
        params.user_bias = rng.normal(0, 0.5, m)
        params.item_bias = rng.normal(0, 0.5, n)
    if kind.has_weights:
        params.weights = rng.normal(1, 0.5, k)
    if kind.has_implicit:
        rated = [np.flatnonzero(rng.random(n) < 0.6) for _ in range(m)]
        indptr = np.concatenate([[0], np.cumsum([len(r) for r in rated])]).astype(np.int64)
        indices = np.concatenate([*rated, np.zeros(0)]).astype(np.int64)
        params.implicit = (indptr, indices)
    reg = Coefficients(*rng.choice([0.0, 0.02], size=5))
    u, j = int(rng.integers(m)), int(rng.integers(n))
    return params, u, j, float(rng.uniform(1, 5)), reg


def _central_difference(params, block: str, index: tuple, u, j, r, reg, h=1e-6) -> float:
    array = getattr(params, block)
    original = array[index]
    array[index] = original + h
    upper = rating_loss(params, u, j, r, reg)
    array[index] = original - h
    lower = rating_loss(params, u, j, r, reg)
    array[index] = original
    return (upper - lower) / (2 * h)


class TestHyperParams:
    def test_defaults(self):
        hp = HyperParams()
        assert hp.k == 15
        assert hp.lr == Coefficients.uniform(0.005)
        assert hp.reg == Coefficients.uniform(0.02)
        assert hp.decay == 0.9
        assert hp.epochs == 50

    def test_svdpp_defaults(self):
        hp = default_hyperparams(ModelKind.SVDPP)
        assert hp.lr == Coefficients.uniform(0.007)
        assert hp.reg == Coefficients(w=0.015, p=0.015, q=0.015, user=0.005, item=0.005)

    def test_overrides(self):
        assert default_hyperparams("WSVD", k=40, epochs=3).k == 40

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"k": 0},
            {"decay": 0.0},
            {"decay": 1.5},
            {"epochs": -1},
            {"seed": -1},
            {"lr": Coefficients(0.1, 0.0, 0.1, 0.1, 0.1)},
            {"lr": Coefficients(-0.1, 0.1, 0.1, 0.1, 0.1)},
            {"reg": Coefficients(0.1, -0.1, 0.1, 0.1, 0.1)},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            HyperParams(**kwargs)

    def test_zero_weight_rate_allowed(self):
        assert HyperParams(lr=Coefficients(0.0, 0.005, 0.005, 0.005, 0.005)).lr.w == 0.0

    def test_step_scale(self):
        hp = HyperParams(decay=0.5)
        assert hp.step_scale(0) == 1.0
        assert hp.step_scale(3) == 0.125


@pytest.mark.parametrize("kind", SGD_KINDS)
class TestGradients:
    def test_matches_finite_differences(self, kind):
        rng = np.random.default_rng(sum(map(ord, kind.value)))
        for _ in range(50):
            params, u, j, r, reg = _random_instance(rng, kind)
            bundle = gradient_at(params, u, j, r, reg)
            checks = [("user_factors", (u,), bundle.d_p), ("item_factors", (j,), bundle.d_q)]
            if kind.has_bias:
                checks += [("user_bias", (), bundle.d_bu), ("item_bias", (), bundle.d_bi)]
            if kind.has_weights:
                checks.append(("weights", (), bundle.d_w))
            for block, prefix, analytic in checks:
                analytic = np.atleast_1d(analytic)
                if block == "user_bias":
                    prefix = (u,)
                elif block == "item_bias":
                    prefix = (j,)
                numeric = []
                for f in range(analytic.size):
                    index = (*prefix, f) if block.endswith("factors") else (f,) if block == "weights" else prefix
                    numeric.append(_central_difference(params, block, index, u, j, r, reg))
                np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-6, err_msg=block)
            if kind.has_implicit:
                for row, item in enumerate(bundle.y_items):
                    numeric = [
                        _central_difference(params, "implicit_factors", (item, f), u, j, r, reg)
                        for f in range(params.k)
                    ]
                    np.testing.assert_allclose(bundle.d_y[row], numeric, rtol=1e-5, atol=1e-6)

    def test_residual_matches_prediction(self, kind):
        rng = np.random.default_rng(5)
        params, u, j, r, reg = _random_instance(rng, kind)
        assert gradient_at(params, u, j, r, reg).error == pytest.approx(r - predict(params, u, j))


class TestLoss:
    def test_loss_sums_residuals_and_penalties(self, tiny):
        params = init_params(ModelKind.WSVD, tiny.n_users, tiny.n_items, 2, seed=0)
        params.mean = global_mean(tiny)
        reg = Coefficients(0.1, 0.2, 0.3, 0.4, 0.5)
        residuals = [r - predict(params, u, j) for u, j, r in zip(tiny.users, tiny.items, tiny.ratings)]
        expected = 0.5 * np.sum(np.square(residuals))
        expected += 0.5 * 0.1 * np.sum(params.weights**2)
        expected += 0.5 * 0.2 * np.sum(params.user_factors**2) + 0.5 * 0.3 * np.sum(params.item_factors**2)
        assert loss(params, tiny, reg) == pytest.approx(expected)

    def test_closed_form_kinds_have_no_gradient(self, tiny):
        params = init_params(ModelKind.BIAS, tiny.n_users, tiny.n_items, 0, seed=0)
        with pytest.raises(ValueError, match="not trained by SGD"):
            gradient_at(params, 0, 0, 3.0, Coefficients.uniform(0.0))


class TestSGDStep:
    def _unit_model(self) -> object:
        params = init_params(ModelKind.WSVD, 1, 1, 1, seed=0)
        params.mean = 3.0
        params.user_factors[:] = 1.0
        params.item_factors[:] = 1.0
        return params

    def test_simultaneous_update(self):
        params = self._unit_model()
        sgd_step(params, 0, 0, 5.0, Coefficients.uniform(0.0), Coefficients.uniform(0.1), 1.0)
        # residual 1 for every block
        assert params.user_bias[0] == pytest.approx(0.1)
        assert params.item_bias[0] == pytest.approx(0.1)
        assert params.weights[0] == pytest.approx(1.1)
        assert params.user_factors[0, 0] == pytest.approx(1.1)
        assert params.item_factors[0, 0] == pytest.approx(1.1)

    def test_sequential_update(self):
        params = self._unit_model()
        sgd_step(params, 0, 0, 5.0, Coefficients.uniform(0.0), Coefficients.uniform(0.1), 1.0, sequential=True)
        assert params.user_bias[0] == pytest.approx(0.1)
        assert params.item_bias[0] == pytest.approx(0.09)
        assert params.weights[0] == pytest.approx(1.081)
        assert params.user_factors[0, 0] == pytest.approx(1.0 + 0.1 * 0.729 * 1.081)

    def test_decay_factor_scales_step(self):
        params = self._unit_model()
        sgd_step(params, 0, 0, 5.0, Coefficients.uniform(0.0), Coefficients.uniform(0.1), 0.5)
        assert params.user_bias[0] == pytest.approx(0.05)

    def test_regularization_shrinks_at_zero_residual(self):
        params = self._unit_model()
        sgd_step(params, 0, 0, 4.0, Coefficients.uniform(0.5), Coefficients.uniform(0.1), 1.0)
        assert params.user_factors[0, 0] == pytest.approx(1.0 - 0.1 * 0.5)
        assert params.weights[0] == pytest.approx(0.95)
        assert params.user_bias[0] == 0.0

    def test_regularization_pull_shrinks_every_block_monotonically(self):
        params = init_params(ModelKind.WSVD, 1, 1, 3, seed=1)
        params.mean = 3.0
        params.user_bias[:] = 0.4
        params.item_bias[:] = -0.3

        def sizes() -> list[float]:
            return [
                np.linalg.norm(params.weights),
                np.linalg.norm(params.user_factors),
                np.linalg.norm(params.item_factors),
                abs(params.user_bias[0]),
                abs(params.item_bias[0]),
            ]

        history = [sizes()]
        for _ in range(10):
            # rating equal to the prediction leaves only the regularization term
            sgd_step(params, 0, 0, predict(params, 0, 0), Coefficients.uniform(0.5), Coefficients.uniform(0.1), 1.0)
            history.append(sizes())
        assert np.all(np.diff(np.array(history), axis=0) < 0)

    def test_zero_residual_without_regularization_is_fixed_point(self):
        params = self._unit_model()
        sgd_step(params, 0, 0, 4.0, Coefficients.uniform(0.0), Coefficients.uniform(0.1), 1.0)
        assert params.weights[0] == 1.0
        assert params.user_factors[0, 0] == 1.0

    def test_divergence_detected(self):
        params = self._unit_model()
        params.user_factors[:] = 1e200
        params.item_factors[:] = 1e200
        with pytest.raises(TrainingDivergedError):
            sgd_step(params, 0, 0, 5.0, Coefficients.uniform(0.0), Coefficients.uniform(0.1), 1.0)


class TestTrain:
    @pytest.mark.parametrize("kind", SGD_KINDS)
    @pytest.mark.parametrize("sequential", [False, True])
    def test_compiled_epoch_matches_sgd_step(self, synthetic_split, kind, sequential):
        train_set, _ = synthetic_split
        hp = default_hyperparams(kind, k=3, epochs=1, shuffle=False, sequential=sequential, seed=4)
        trained, _ = train(kind, train_set, hp=hp)

        manual = init_params(kind, train_set.n_users, train_set.n_items, hp.k, hp.seed)
        if kind.has_mean:
            manual.mean = global_mean(train_set)
        bind_training_data(manual, train_set)
        for u, j, r in zip(train_set.users, train_set.items, train_set.ratings):
            sgd_step(manual, int(u), int(j), float(r), hp.reg, hp.lr, hp.step_scale(0), sequential=sequential)

        for name, block in manual.learnable_blocks().items():
            np.testing.assert_allclose(getattr(trained, name), block, rtol=1e-9, atol=1e-12, err_msg=name)

    def test_wsvd_with_frozen_unit_weights_reproduces_svd(self):
        data = generate_synthetic(50, 30, 10, 3, seed=8)
        svd_hp = HyperParams(k=4, epochs=5, seed=6)
        wsvd_hp = HyperParams(k=4, epochs=5, seed=6, lr=Coefficients(0.0, 0.005, 0.005, 0.005, 0.005))
        svd, svd_report = train(ModelKind.SVD, data, data, svd_hp)
        wsvd, wsvd_report = train(ModelKind.WSVD, data, data, wsvd_hp)

        np.testing.assert_array_equal(wsvd.weights, np.ones(4))
        for name in ("user_bias", "item_bias", "user_factors", "item_factors"):
            np.testing.assert_allclose(getattr(wsvd, name), getattr(svd, name), rtol=0, atol=1e-12)
        for wsvd_record, svd_record in zip(wsvd_report.records, svd_report.records):
            assert wsvd_record.train_rmse == pytest.approx(svd_record.train_rmse, abs=1e-12)

    @pytest.mark.parametrize("kind", SGD_KINDS)
    def test_deterministic(self, synthetic_split, kind):
        train_set, test_set = synthetic_split
        hp = default_hyperparams(kind, k=3, epochs=3)
        first, first_report = train(kind, train_set, test_set, hp)
        second, second_report = train(kind, train_set, test_set, hp)
        for name, block in first.learnable_blocks().items():
            np.testing.assert_array_equal(block, getattr(second, name))
        assert [r.test_rmse for r in first_report.records] == [r.test_rmse for r in second_report.records]

    def test_zero_epochs_returns_initial_parameters(self, synthetic_split):
        train_set, test_set = synthetic_split
        params, report = train(ModelKind.WSVD, train_set, test_set, HyperParams(k=3, epochs=0))
        initial = init_params(ModelKind.WSVD, train_set.n_users, train_set.n_items, 3, seed=0)
        np.testing.assert_array_equal(params.user_factors, initial.user_factors)
        assert params.mean == pytest.approx(global_mean(train_set))
        assert len(report) == 0

    def test_report_records_every_epoch(self, synthetic_split):
        train_set, test_set = synthetic_split
        params, report = train(ModelKind.WSVD, train_set, test_set, HyperParams(k=3, epochs=4))
        assert [record.epoch for record in report.records] == [0, 1, 2, 3]
        assert all(record.test_rmse is not None and record.seconds >= 0 for record in report.records)
        assert len(report.weight_history) == 4
        np.testing.assert_array_equal(report.weight_history[-1], params.weights)
        assert report.final_record.train_rmse == pytest.approx(rmse(params, train_set))

    def test_training_error_decreases(self, synthetic):
        _, report = train(ModelKind.WSVD, synthetic, hp=HyperParams(k=3, epochs=20, lr=Coefficients.uniform(0.01)))
        assert report.records[-1].train_rmse < report.records[0].train_rmse
        assert report.records[0].test_rmse is None

    def test_closed_form_reports_no_epochs(self, synthetic):
        params, report = train(ModelKind.BIAS, synthetic)
        assert len(report) == 0
        assert params.user_bias.shape == (synthetic.n_users,)

    def test_divergence_names_epoch(self, synthetic):
        hp = HyperParams(k=3, epochs=5, lr=Coefficients.uniform(50.0))
        with pytest.raises(TrainingDivergedError) as excinfo:
            train(ModelKind.WSVD, synthetic, hp=hp)
        assert excinfo.value.epoch is not None
        assert 0 <= excinfo.value.rating_index < len(synthetic)
        assert "WSVD" in str(excinfo.value)

    def test_empty_training_set(self):
        with pytest.raises(EmptyDatasetError):
            train(ModelKind.WSVD, RatingsDataset.from_triplets([], [], [], (1, 5)))

    @flaky(max_runs=3)
    def test_wsvd_epoch_cost_close_to_svd(self):
        data = generate_synthetic(2000, 1000, 25, 15, seed=1)
        _, svd_report = train(ModelKind.SVD, data, hp=HyperParams(epochs=3))
        _, wsvd_report = train(ModelKind.WSVD, data, hp=HyperParams(epochs=3))
        assert epoch_seconds_summary(wsvd_report) < 2.0 * epoch_seconds_summary(svd_report)

    @flaky(max_runs=3)
    def test_warm_up_keeps_compilation_out_of_first_epoch(self, synthetic):
        start = time.perf_counter()
        _, report = train(ModelKind.PMF, synthetic, hp=HyperParams(k=3, epochs=2))
        elapsed = time.perf_counter() - start
        assert report.records[0].seconds < 0.5 * elapsed or elapsed < 0.05
