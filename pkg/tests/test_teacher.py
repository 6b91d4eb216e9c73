import numpy as np
import pytest

from shapedistill.datasets import Dataset, Task, gen_f1
from shapedistill.errors import DataError, DimensionMismatch, DivergedLoss, NoLabels, \
    SchemaVersionMismatch
from shapedistill.evalharness import auroc
from shapedistill.teacher import (TeacherNet, TrainConfig, input_gradient, input_gradients,
                                  parse_arch, predict, train_teacher)


def random_net(dims=(4, 16, 8, 1), seed=0, task=Task.REGRESSION):
    rng = np.random.default_rng(seed)
    W = tuple(rng.normal(0, 1 / np.sqrt(a), (a, b)) for a, b in zip(dims[:-1], dims[1:]))
    b = tuple(rng.normal(0, 0.1, d) for d in dims[1:])
    return TeacherNet(dims, W, b, task, rng.normal(0, 1, dims[0]), rng.uniform(0.5, 2, dims[0]))


def finite_difference(net, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (predict(net, x + e)[0] - predict(net, x - e)[0]) / (2 * h)
    return g


def test_input_gradients_match_finite_differences():
    net = random_net()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        x = rng.normal(size=4)
        g = input_gradient(net, x)
        fd = finite_difference(net, x)
        worst = max(worst, np.max(np.abs(g - fd)) / max(1e-8, np.max(np.abs(fd))))
    assert worst < 1e-4


def test_batched_and_single_gradients_agree():
    net = random_net()
    X = np.random.default_rng(2).normal(size=(7, 4))
    G = input_gradients(net, X)
    for i in range(7):
        np.testing.assert_allclose(G[i], input_gradient(net, X[i]), rtol=1e-12, atol=1e-14)


def test_linear_net_gradient_is_weight():
    W = (np.array([[2.0], [-3.0]]),)
    net = TeacherNet((2, 1), W, (np.array([0.5]),))
    X = np.random.default_rng(0).normal(size=(5, 2))
    np.testing.assert_allclose(predict(net, X), X @ [2.0, -3.0] + 0.5)
    np.testing.assert_allclose(input_gradients(net, X), np.tile([2.0, -3.0], (5, 1)))


def test_predict_checks_width():
    with pytest.raises(DimensionMismatch):
        predict(random_net(), np.zeros((3, 5)))


def test_constant_labels_give_constant_net():
    X = np.random.default_rng(0).uniform(-1, 1, (2000, 3))
    ds = Dataset(X, ("a", "b", "c"), np.full(2000, 4.2))
    net = train_teacher(ds, (8,), TrainConfig(epochs=5, early_stop_patience=2))
    out = predict(net, np.random.default_rng(1).uniform(-1, 1, (500, 3)))
    assert np.max(np.abs(out - 4.2)) < 0.01


def test_training_is_deterministic():
    ds, _ = gen_f1(1500, 0)
    cfg = TrainConfig(epochs=3, early_stop_patience=2, seed=5)
    a = train_teacher(ds, (8,), cfg)
    b = train_teacher(ds, (8,), cfg)
    for wa, wb in zip(a.weights, b.weights):
        assert wa.tobytes() == wb.tobytes()


def test_early_stopping_restores_best_epoch():
    ds, _ = gen_f1(2000, 1)
    net = train_teacher(ds, (8,), TrainConfig(epochs=12, early_stop_patience=3))
    h = net.history
    assert h["best_valid_loss"] == pytest.approx(min(h["valid_loss"] + [h["best_valid_loss"]]))
    assert 0 <= h["best_epoch"] <= len(h["valid_loss"])


def test_divergence_is_reported():
    ds, _ = gen_f1(2000, 0)
    with pytest.raises(DivergedLoss):
        train_teacher(ds, (64, 64), TrainConfig(optimizer="sgd", learning_rate=50.0, epochs=3,
                                                early_stop_patience=1))


def test_requires_labels():
    ds, _ = gen_f1(10, 0)
    with pytest.raises(NoLabels):
        train_teacher(ds.without_labels(), (4,))


def test_binary_teacher_outputs_logits():
    rng = np.random.default_rng(3)
    X = rng.uniform(-1, 1, (3000, 2))
    y = (X[:, 0] + 0.5 * X[:, 1] + 0.2 * rng.normal(size=3000) > 0).astype(float)
    ds = Dataset(X, ("a", "b"), y, Task.BINARY)
    net = train_teacher(ds, (8,), TrainConfig(epochs=10, early_stop_patience=3))
    z = predict(net, X)
    assert z.min() < 0 < z.max()
    assert auroc(y, z) > 90.0


def test_save_load_round_trip(tmp_path):
    net = random_net()
    p = tmp_path / "t.json"
    net.save(p)
    back = TeacherNet.load(p)
    X = np.random.default_rng(0).normal(size=(10, 4))
    assert predict(back, X).tobytes() == predict(net, X).tobytes()


def test_load_rejects_other_format(tmp_path):
    d = random_net().to_dict()
    d["format"] = "shapedistill.teacher/0"
    with pytest.raises(SchemaVersionMismatch):
        TeacherNet.from_dict(d)


def test_parse_arch():
    assert parse_arch("2H-128,128") == (128, 128)
    assert parse_arch("1H-8") == (8,)
    assert parse_arch("64,32") == (64, 32)
    with pytest.raises(DataError):
        parse_arch("2H-8")


def test_train_config_validation():
    with pytest.raises(DataError):
        TrainConfig(epochs=0)
    with pytest.raises(DataError):
        TrainConfig(epochs=5, early_stop_patience=6)
    with pytest.raises(DataError):
        TrainConfig(optimizer="rmsprop")
