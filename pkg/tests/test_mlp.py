import math

import numpy as np
import pytest

from llpbp.data import make_synthetic, split
from llpbp.metrics import auroc
from llpbp.mlp import (
    MLP,
    EarlyStopping,
    TrainConfig,
    TrainingError,
    aggregate_loss,
    dllp_loss,
    train,
    train_supervised,
)
from oracles import finite_difference_grads


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-8))


def test_zero_weights_give_half():
    model = MLP([3, 4, 2, 1])
    for v in model.params.values():
        v[...] = 0.0
    score, emb = model.forward_instance(np.array([1.0, -2.0, 3.0]))
    assert score == 0.5
    assert model.forward_bag(np.ones((4, 3))) == 0.5


def test_logistic_regression_score():
    model = MLP([2, 1])
    model.params["W0"][...] = [[1.0, 0.0]]
    model.params["b0"][...] = 0.0
    score, _ = model.forward_instance(np.array([math.log(3.0), 5.0]))
    assert score == pytest.approx(0.75, abs=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        MLP([3, 4, 1]).forward_instance(np.zeros(2))
    with pytest.raises(ValueError):
        MLP([3, 4, 1]).forward_bag(np.zeros((0, 3)))


def test_embedding_deterministic():
    model = MLP([3, 8, 6, 4, 1], seed=1)
    x = np.array([0.3, -1.0, 2.0])
    a = model.forward_instance(x)[1]
    b = model.forward_instance(x.copy())[1]
    assert a.shape == (6,)  # output of the hidden layer L-2
    assert np.array_equal(a, b)


def test_bag_of_identical_instances():
    model = MLP([3, 8, 6, 4, 1], seed=2)
    x = np.array([0.5, 0.1, -0.4])
    _, h = model.forward_instance(x)
    u = np.maximum(model.params["V1"] @ h + model.params["c1"], 0)
    g = 1 / (1 + np.exp(-(model.params["V2"][0] @ u + model.params["c2"][0])))
    assert model.forward_bag(np.tile(x, (5, 1))) == pytest.approx(g, abs=1e-14)


def test_mean_vs_sum_pooling():
    rng = np.random.default_rng(3)
    mean = MLP([3, 8, 6, 4, 1], pooling="mean", seed=4)
    summ = MLP([3, 8, 6, 4, 1], pooling="sum", seed=4)
    summ.params["V1"] = mean.params["V1"] / 7.0
    bag = rng.normal(size=(7, 3))
    assert summ.forward_bag(bag) == pytest.approx(mean.forward_bag(bag), abs=1e-14)


@pytest.mark.parametrize("pooling", ["mean", "sum", "max"])
def test_pooling_permutation_invariant(pooling):
    rng = np.random.default_rng(5)
    model = MLP([4, 8, 6, 5, 1], pooling=pooling, seed=6)
    bag = rng.normal(size=(9, 4))
    a = model.forward_bag(bag)
    b = model.forward_bag(bag[rng.permutation(9)])
    assert a == pytest.approx(b, abs=1e-14)


def test_ln2_loss():
    model = MLP([2, 1])
    for v in model.params.values():
        v[...] = 0.0
    assert aggregate_loss(model, np.zeros((1, 2)), [1], 1, 0.0) == pytest.approx(math.log(2), abs=1e-15)


def test_lambda_zero_ignores_bag_head():
    rng = np.random.default_rng(7)
    model = MLP([3, 5, 4, 3, 1], seed=8)
    X, y = rng.normal(size=(6, 3)), rng.integers(0, 2, 6)
    a = aggregate_loss(model, X, y, 2, 0.0)
    model.params["V2"] *= 10
    assert aggregate_loss(model, X, y, 2, 0.0) == a


def test_dllp_entropy_minimum():
    model = MLP([2, 1])
    for v in model.params.values():
        v[...] = 0.0
    # every score is 0.5 = 2/4
    ent = -2 * 0.5 * math.log(0.5)
    assert dllp_loss(model, np.zeros((4, 2)), 2) == pytest.approx(ent, abs=1e-15)
    model.params["b0"][...] = -60.0
    # the 1e-12 clamp bounds the limit from below
    assert dllp_loss(model, np.zeros((4, 2)), 0) <= 1.1e-12


def _random_problem(rng, pooling):
    dims = [int(rng.integers(2, 5)), int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 5)), 1]
    model = MLP(dims, pool_hidden=int(rng.integers(2, 5)), pooling=pooling, seed=int(rng.integers(1 << 30)))
    for v in model.params.values():
        v += rng.normal(scale=0.1, size=v.shape)  # nonzero biases
    sizes = rng.integers(1, 5, size=int(rng.integers(1, 4)))
    X = rng.normal(size=(int(sizes.sum()), dims[0]))
    cuts = np.cumsum(sizes)[:-1]
    groups = np.split(np.arange(len(X)), cuts)
    return model, X, groups


@pytest.mark.parametrize("pooling", ["mean", "sum", "max"])
def test_aggregate_gradients(pooling):
    rng = np.random.default_rng({"mean": 10, "sum": 11, "max": 12}[pooling])
    for _ in range(8):
        model, X, groups = _random_problem(rng, pooling)
        t = rng.integers(0, 2, len(X)).astype(float)
        p = rng.random(len(groups))
        w = rng.random(len(X))
        lam = float(rng.uniform(0.1, 3))
        _, g = model.loss_and_grads(X, groups, t, p, lam, "aggregate", w)
        fd = finite_difference_grads(
            lambda: model.loss_and_grads(X, groups, t, p, lam, "aggregate", w)[0], model.params
        )
        for k in g:
            assert rel_err(g[k], fd[k]) < 1e-4, k


def test_dllp_and_instance_gradients():
    rng = np.random.default_rng(13)
    for mode in ("dllp", "instance"):
        for _ in range(6):
            model, X, groups = _random_problem(rng, "mean")
            t = rng.integers(0, 2, len(X)).astype(float)
            p = rng.random(len(groups))
            _, g = model.loss_and_grads(X, groups, t, p, 0.0, mode)
            fd = finite_difference_grads(lambda: model.loss_and_grads(X, groups, t, p, 0.0, mode)[0], model.params)
            for k in g:
                if mode == "dllp" and k[0] in "Vc":
                    assert not np.any(g[k])
                assert rel_err(g[k], fd[k]) < 1e-4, (mode, k)


def test_early_stopping_arithmetic():
    seq = [0.6, 0.7, 0.8] + [0.8 - 0.01 * i for i in range(1, 40)]
    es = EarlyStopping(20)
    stopped = None
    for epoch, v in enumerate(seq, start=1):
        if es.update(epoch, v):
            stopped = epoch
            break
    assert stopped == 23
    assert es.best_epoch == 3


def test_equal_value_is_not_improvement():
    es = EarlyStopping(2)
    assert not es.update(1, 0.5)
    assert not es.update(2, 0.5)
    assert es.update(3, 0.5)
    assert es.best_epoch == 1


def _synthetic(seed=0, m=2000, sep=6.0):
    ds = make_synthetic(m, 2, sep, seed)
    sp = split(ds, (0.8, 0.1, 0.1), seed=seed)
    return ds, sp


def test_supervised_oracle():
    ds, sp = _synthetic(m=4000)
    model = MLP([2, 64, 32, 1], seed=0)
    cfg = TrainConfig(learning_rate=1e-3, batch_size=256, max_epochs=30)
    model, log = train_supervised(model, ds.features[sp.train], ds.labels[sp.train], cfg,
                                  ds.features[sp.validation], ds.labels[sp.validation])
    assert auroc(model.predict(ds.features[sp.test]), ds.labels[sp.test]) >= 0.99


def test_restores_best_weights():
    ds, sp = _synthetic(sep=1.0)
    rng = np.random.default_rng(0)
    noisy = np.where(rng.random(len(sp.train)) < 0.3, 1 - ds.labels[sp.train], ds.labels[sp.train])
    model = MLP([2, 16, 8, 1], seed=1)
    cfg = TrainConfig(learning_rate=3e-2, batch_size=64, max_epochs=40, patience=5)
    model, log = train_supervised(model, ds.features[sp.train], noisy, cfg,
                                  ds.features[sp.validation], ds.labels[sp.validation])
    best = max(e["val_auroc"] for e in log.epochs)
    assert log.best_val_auroc == best
    assert auroc(model.predict(ds.features[sp.validation]), ds.labels[sp.validation]) == best
    assert log.epochs[log.best_epoch - 1]["val_auroc"] == best


def test_lambda_zero_matches_supervised_trajectory():
    ds, sp = _synthetic(m=600)
    Xtr, ytr = ds.features[sp.train], ds.labels[sp.train]
    groups = np.array_split(np.arange(len(ytr)), len(ytr) // 8)
    cfg = TrainConfig(learning_rate=1e-2, weight_decay=1e-3, lambda_a=0.0, batch_size=64, max_epochs=5, seed=3)
    a, la = train(MLP([2, 8, 6, 4, 1], seed=9), Xtr, groups, cfg, ds.features[sp.validation],
                  ds.labels[sp.validation], inst_targets=ytr, bag_targets=np.full(len(groups), 0.5),
                  loss_mode="aggregate")
    b, lb = train_supervised(MLP([2, 8, 6, 4, 1], seed=9), Xtr, ytr, cfg, ds.features[sp.validation],
                             ds.labels[sp.validation], groups=groups)
    assert la.epochs == lb.epochs
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k]), k


def test_deterministic_in_seed():
    ds, sp = _synthetic(m=600)
    groups = np.array_split(np.arange(len(sp.train)), 30)
    cfg = TrainConfig(batch_size=64, max_epochs=3, seed=5)

    def run():
        return train(MLP([2, 8, 4, 1], seed=2), ds.features[sp.train], groups, cfg,
                     ds.features[sp.validation], ds.labels[sp.validation],
                     bag_targets=np.random.default_rng(0).random(30), loss_mode="dllp")

    (a, la), (b, lb) = run(), run()
    assert la.epochs == lb.epochs
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_degenerate_validation():
    with pytest.raises(TrainingError):
        train(MLP([2, 1]), np.zeros((4, 2)), [np.arange(4)], TrainConfig(), np.zeros((3, 2)), [1, 1, 1],
              bag_targets=[0.5], loss_mode="dllp")


def test_nan_loss_reported():
    X = np.array([[np.nan, 0.0], [0.0, 1.0]])
    with pytest.raises(TrainingError, match="epoch 1, batch 0"):
        train(MLP([2, 1]), X, [np.arange(2)], TrainConfig(), np.zeros((2, 2)), [0, 1],
              bag_targets=[0.5], loss_mode="dllp")


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(lambda_a=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)


def test_checkpoint_round_trip(tmp_path):
    model = MLP([3, 6, 5, 4, 1], pooling="max", seed=11)
    model.save(tmp_path / "m.json")
    back = MLP.load(tmp_path / "m.json")
    x = np.random.default_rng(0).normal(size=(10, 3))
    assert np.array_equal(model.predict(x), back.predict(x))
    assert model.forward_bag(x) == back.forward_bag(x)
    assert back.pooling == "max"


def test_float32_model_runs():
    model = MLP([3, 6, 4, 1], dtype=np.float32, seed=0)
    assert model.params["W0"].dtype == np.float32
    out = model.predict(np.ones((2, 3)))
    assert out.shape == (2,) and np.all((out > 0) & (out < 1))


def test_decision_function_keeps_order_past_sigmoid_saturation():
    model = MLP([1, 1], seed=0, dtype="float32")
    model.params["W0"][:] = 1.0
    model.params["b0"][:] = 0.0
    X = np.array([[40.0], [60.0], [50.0]])
    assert np.all(model.predict(X) == 1.0)
    assert np.argsort(model.decision_function(X)).tolist() == [0, 2, 1]
    assert auroc(model.decision_function(X), np.array([0, 1, 0])) == 1.0
