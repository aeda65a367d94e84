import io
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from astar_irl.gridworld import DatasetConfig, generate_dataset
from astar_irl.sensor import SensorConfig
from astar_irl.trainer import (
    AdamState,
    CostLearner,
    GradAccumulator,
    NLLDiagnostics,
    ThetaParams,
    adam_step,
    nll_loss,
    policy_grad_wrt_q,
    project_cost,
    write_metrics_csv,
)

from gradcheck import check, rel_error, sample_instance, single_step


@pytest.fixture(scope="module")
def data():
    _, tr = generate_dataset(DatasetConfig(n_maps=6, trajs_per_map=3, width=12, height=12, seed=0), SensorConfig())
    _, va = generate_dataset(DatasetConfig(n_maps=3, trajs_per_map=3, width=12, height=12, seed=1), SensorConfig())
    return tr, va


class TestLoss:
    def test_uniform(self):
        assert nll_loss(np.full(8, 1 / 8), 3) == pytest.approx(np.log(8))
        assert np.log(8) == pytest.approx(2.0794, abs=1e-4)

    def test_certain(self):
        pi = np.zeros(8)
        pi[2] = 1.0
        assert nll_loss(pi, 2) == 0.0

    def test_planner_example(self):
        pi = np.full(8, (1 - 0.2798) / 7)
        pi[0] = 0.2798
        assert nll_loss(pi, 0) == pytest.approx(1.2736, abs=1e-4)

    def test_zero_probability_capped(self):
        diag = NLLDiagnostics()
        pi = np.zeros(8)
        pi[1] = 1.0
        assert nll_loss(pi, 0, diag) == pytest.approx(-np.log(1e-30))
        assert diag.capped == 1

    @given(st.lists(st.floats(0.0, 1.0), min_size=8, max_size=8), st.integers(0, 7))
    def test_nonnegative(self, w, u):
        w = np.array(w) + 1e-12
        assert nll_loss(w / w.sum(), u) >= 0.0


class TestPolicyGrad:
    def test_uniform(self):
        d = policy_grad_wrt_q(np.full(8, 1 / 8), 5)
        assert d[5] == pytest.approx(-7 / 8) and np.allclose(np.delete(d, 5), 1 / 8)

    def test_certain_is_zero(self):
        pi = np.zeros(8)
        pi[4] = 1.0
        assert np.all(policy_grad_wrt_q(pi, 4) == 0.0)

    @given(st.lists(st.floats(0.01, 1.0), min_size=8, max_size=8), st.integers(0, 7))
    def test_zero_sum(self, w, u):
        w = np.array(w)
        assert policy_grad_wrt_q(w / w.sum(), u).sum() == pytest.approx(0.0, abs=1e-12)

    def test_matches_log_softmin_derivative(self):
        rng = np.random.default_rng(0)
        q = rng.normal(size=8)
        from astar_irl.planner import log_policy

        eps = 1e-6
        for u in range(8):
            e = np.zeros(8)
            e[u] = eps
            fd = (log_policy(q + e)[2] - log_policy(q - e)[2]) / (2 * eps)
            assert policy_grad_wrt_q(np.exp(log_policy(q)), 2)[u] == pytest.approx(fd, abs=1e-8)


class TestStepGradient:
    def test_perfect_policy_contributes_nothing(self):
        rng = np.random.default_rng(3)
        demo, t, vec, K = sample_instance(rng)
        vec[-1] = np.log(1e4)  # steep cost makes the expert's move near-certain
        res = single_step(demo, t, vec, K)
        if res.pi[int(demo.controls[t])] == 1.0:
            assert np.allclose(res.grad.vector(), 0.0)

    @pytest.mark.parametrize("shared", [False, True])
    def test_finite_differences(self, shared):
        rng = np.random.default_rng(10 + shared)
        done = 0
        while done < 8:
            demo, t, vec, K = sample_instance(rng, shared_psi=shared, size=10)
            an, fd, stable = check(demo, t, vec, K)
            if not stable:
                continue
            assert rel_error(an, fd) < 1e-5
            done += 1

    def test_closed_only_is_subset(self):
        rng = np.random.default_rng(4)
        demo, t, vec, K = sample_instance(rng)
        a = single_step(demo, t, vec, K, include_open=True)
        b = single_step(demo, t, vec, K, include_open=False)
        assert a.loss == b.loss


class TestAccumulator:
    def test_linear_and_zeroed(self):
        a, b = GradAccumulator.zeros(2), GradAccumulator(np.array([1.0, 2.0]), 3.0, 4.0, 5.0, 1)
        a.add(b)
        a.add(b)
        assert np.allclose(a.vector(), [2, 4, 6, 8, 10]) and a.count == 2
        a.zero()
        assert np.all(a.vector() == 0) and a.count == 0


class TestAdam:
    def test_zero_gradient(self):
        x = np.array([1.0, -2.0])
        assert np.array_equal(adam_step(x, np.zeros(2), AdamState.zeros(2), 0.1), x)

    def test_constant_gradient_step_size(self):
        st_ = AdamState.zeros(1)
        x = np.zeros(1)
        for _ in range(2000):
            new = adam_step(x, np.array([3.0]), st_, 0.01)
            step, x = x - new, new
        assert step[0] == pytest.approx(0.01, rel=1e-3)

    def test_projection(self):
        s, l = project_cost(np.log(2.0), np.log(1.5))
        assert np.exp(l) >= np.exp(s) + 1e-3 - 1e-12


class TestEstimator:
    def test_get_params_clone(self):
        est = CostLearner(epochs=3, learning_rate=0.05)
        assert clone(est).get_params() == est.get_params()

    def test_fit_decreases_loss_and_is_deterministic(self, data):
        tr, va = data
        a = CostLearner(epochs=4).fit(tr, X_val=va)
        b = CostLearner(epochs=4).fit(tr, X_val=va)
        assert a.history_ == b.history_
        assert a.to_checkpoint() == b.to_checkpoint()
        assert a.history_[-1]["train_loss"] < a.history_[0]["train_loss"]
        assert set(a.history_[0]) == {"epoch", "train_loss", "val_loss", "val_acc"}

    def test_best_validation_restored(self, data):
        tr, va = data
        est = CostLearner(epochs=4).fit(tr, X_val=va)
        best = min(h["val_loss"] for h in est.history_)
        assert est.loss(va) == pytest.approx(best)

    def test_hard_coded_encoder(self, data):
        tr, va = data
        est = CostLearner(epochs=2, learn_cost=False).fit(tr)
        assert (est.s_, est.l_) == (1.0, 100.0)
        assert est.score(va) > 0.125 * 3

    def test_h0_frozen_by_default(self, data):
        tr, _ = data
        assert CostLearner(epochs=1).fit(tr).h0_ == 0.0
        assert CostLearner(epochs=1, train_h0=True).fit(tr).h0_ != 0.0

    def test_one_epoch_touches_every_step(self, data):
        tr, _ = data
        est = CostLearner(epochs=0).fit(tr)
        assert est.predict_proba(tr).shape == (sum(len(d) for d in tr), 8)
        assert np.allclose(est.predict_proba(tr).sum(axis=1), 1.0)

    def test_gradient_is_order_independent(self, data):
        tr, _ = data
        est = CostLearner(epochs=0).fit(tr)
        _, g1 = est.gradient(tr)
        _, g2 = est.gradient(tr[::-1])
        assert np.allclose(g1, g2, rtol=0, atol=1e-9)

    def test_batch_whole_epoch(self, data):
        tr, _ = data
        est = CostLearner(epochs=2, batch_size=0).fit(tr)
        assert est.n_updates_ == 2

    def test_warm_start_continues(self, data):
        tr, _ = data
        est = CostLearner(epochs=1, warm_start=True).fit(tr)
        n = est.n_updates_
        est.fit(tr)
        assert est.n_updates_ == 2 * n and len(est.history_) == 2

    def test_checkpoint_roundtrip(self, data):
        tr, va = data
        est = CostLearner(epochs=1).fit(tr)
        obj = json.loads(json.dumps(est.to_checkpoint("abc", {"k": 1})))
        back = CostLearner.from_checkpoint(obj)
        assert back.loss(va) == est.loss(va) and obj["dataset_hash"] == "abc"
        assert ThetaParams.from_dict(obj["theta"]).to_dict() == est.theta_.to_dict()

    def test_not_fitted(self, data):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            CostLearner().predict(data[0])

    @pytest.mark.parametrize("bad", [{"learning_rate": 0.0}, {"epsilon": -1.0}, {"batch_size": -1},
                                     {"epochs": 1.5}, {"beta1": 1.0}])
    def test_invalid_params(self, data, bad):
        with pytest.raises((ValueError, TypeError)):
            CostLearner(**bad).fit(data[0])

    def test_non_finite_loss_aborts(self, data):
        tr, _ = data
        est = CostLearner(epochs=0).fit(tr)
        est.psi_ = np.full_like(est.psi_, np.nan)
        with pytest.raises(FloatingPointError, match="map_id"):
            est.loss(tr)


def test_metrics_csv():
    fh = io.StringIO()
    write_metrics_csv([{"epoch": 1, "train_loss": 1.0, "val_loss": 2.0, "val_acc": 0.5}], fh)
    assert fh.getvalue().splitlines() == ["epoch,train_loss,val_loss,val_acc", "1,1.0,2.0,0.5"]
