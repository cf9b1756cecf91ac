import numpy as np
import pytest

from graphix.tensor import (NonFiniteError, ParamStore, ShapeError, add, as_matrix, concat_cols,
                            grad_check, layer_norm, layer_norm_backward, layer_norm_forward,
                            load_checkpoint, matmul, relative_error, relu, row_softmax,
                            rowwise_matmul, save_checkpoint, scale, softmax_backward)


def test_row_softmax():
    assert np.allclose(row_softmax(np.zeros((1, 4))), 0.25)
    x = np.random.default_rng(0).normal(size=(6, 9)) * 30
    p = row_softmax(x)
    assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-12)
    assert np.all((p > 0) & (p < 1))
    assert np.allclose(row_softmax(x + 1000.0), p)


def test_layer_norm():
    assert np.array_equal(layer_norm(np.full((2, 5), 3.0)), np.zeros((2, 5)))
    x = np.random.default_rng(1).normal(size=(4, 8)) * 5 + 2
    y = layer_norm(x)
    assert np.allclose(y.mean(axis=1), 0, atol=1e-12)
    assert np.allclose(y.var(axis=1), 1, atol=1e-5)
    with pytest.raises(ValueError):
        layer_norm(x, eps=0.0)
    with pytest.raises(ShapeError):
        layer_norm(x, gain=np.ones(3))


def test_basic_ops():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(a, np.eye(2)), a)
    assert np.array_equal(add(a, [1.0, 1.0]), a + 1)
    assert np.array_equal(relu([[-1.0, 2.0]]), [[0.0, 2.0]])
    assert np.array_equal(scale(a, 2), 2 * a)
    assert concat_cols([a, a]).shape == (2, 4)
    with pytest.raises(ShapeError):
        matmul(a, np.ones((3, 1)))
    with pytest.raises(ShapeError):
        add(a, np.ones(3))
    with pytest.raises(ShapeError):
        concat_cols([a, np.ones((3, 1))])
    with pytest.raises(ShapeError):
        as_matrix(np.ones(3))
    with pytest.raises(NonFiniteError):
        matmul(a, [[np.nan, 0], [0, 1]])
    with pytest.raises(NonFiniteError):
        scale(a, np.inf)


def test_rowwise_matmul_is_permutation_stable():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(37, 24)), rng.normal(size=(24, 24))
    perm = rng.permutation(37)
    assert np.array_equal(rowwise_matmul(a[perm], b), rowwise_matmul(a, b)[perm])
    assert np.allclose(rowwise_matmul(a, b), a @ b)


def test_softmax_and_layer_norm_backward_against_differences():
    rng = np.random.default_rng(3)
    x, dout = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    g, b = rng.normal(size=5), rng.normal(size=5)
    _, cache = layer_norm_forward(x, g, b, 1e-6)
    dx, dg, db = layer_norm_backward(dout, cache)
    f = lambda x_: (layer_norm_forward(x_, g, b, 1e-6)[0] * dout).sum()  # noqa: E731
    num = np.zeros_like(x)
    for i in np.ndindex(*x.shape):
        e = np.zeros_like(x)
        e[i] = 1e-6
        num[i] = (f(x + e) - f(x - e)) / 2e-6
    assert np.allclose(dx, num, atol=1e-7)
    assert np.allclose(db, dout.sum(axis=0))
    p = row_softmax(x)
    ds = softmax_backward(p, dout, axis=1)
    num = np.zeros_like(x)
    for i in np.ndindex(*x.shape):
        e = np.zeros_like(x)
        e[i] = 1e-6
        num[i] = ((row_softmax(x + e) - row_softmax(x - e)) * dout).sum() / 2e-6
    assert np.allclose(ds, num, atol=1e-8)


def quadratic_store(scale_):
    store = ParamStore(seed=4)
    store.create("w", (3, 4))
    store["w"] = store["w"] / np.abs(store["w"]).max() * scale_
    return store


def test_grad_check_quadratic():
    store = quadratic_store(3.0)
    f = lambda s: float((s["w"] ** 2).sum())  # noqa: E731
    assert grad_check(f, store, {"w": 2 * store["w"]}) < 1e-8


def test_grad_check_catches_wrong_gradient():
    f = lambda s: float((s["w"] ** 2).sum())  # noqa: E731
    # Error is |a - n| / max(1, |n|): with a = 2n it equals min(1, max |n|).
    store = quadratic_store(0.25)  # largest |n| = 0.5
    assert grad_check(f, store, {"w": 4 * store["w"]}) == pytest.approx(0.5, abs=1e-8)
    store = quadratic_store(3.0)
    assert grad_check(f, store, {"w": 4 * store["w"]}) == pytest.approx(1.0, abs=1e-8)


def test_grad_check_guards():
    store = quadratic_store(1.0)
    with pytest.raises(ValueError):
        grad_check(lambda s: 0.0, store, {"w": store["w"]}, eps=1e-2)
    with pytest.raises(NonFiniteError):
        grad_check(lambda s: float("nan"), store, {"w": store["w"]})
    assert relative_error(np.array([3.0]), np.array([1.0])) == 2.0
    report = {}
    grad_check(lambda s: float(s["w"].sum()), store, {"w": np.ones((3, 4))}, report=report)
    assert set(report) == {"w"}


def test_param_store_determinism():
    a, b = ParamStore(seed=9), ParamStore(seed=9)
    a.create("x", (4, 4))
    a.create("y", (2,), "zeros")
    b.create("y", (2,), "zeros")
    b.create("x", (4, 4))
    assert np.array_equal(a["x"], b["x"])
    c = ParamStore(seed=10)
    c.create("x", (4, 4))
    assert not np.array_equal(a["x"], c["x"])
    with pytest.raises(KeyError):
        a.create("x", (1,))
    with pytest.raises(ShapeError):
        a["x"] = np.zeros((3, 3))
    with pytest.raises(ValueError):
        a.create("z", (1,), "orthogonal")
    assert a.size() == 18 and a.names() == ["x", "y"]
    limit = np.sqrt(6 / 8)
    assert np.abs(a["x"]).max() <= limit


def test_checkpoint_round_trip(tmp_path):
    store = ParamStore(seed=5)
    store.create("enc.w", (3, 2))
    store.create("enc.b", (2,), "normal", std=1.0)
    save_checkpoint(store, tmp_path / "ck", {"note": "x"})
    params, manifest = load_checkpoint(tmp_path / "ck")
    assert manifest["note"] == "x" and manifest["dtype"] == "<f8"
    for name in store:
        assert np.array_equal(params[name], store[name])
    raw = (tmp_path / "ck" / "params.bin").read_bytes()
    (tmp_path / "ck" / "params.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(tmp_path / "ck")
