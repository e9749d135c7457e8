import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import naive_loss
from shufldp.errors import InvalidDimensionError, LayoutMismatchError, ShapeMismatchError
from shufldp.model import (
    Batch,
    GradientTuple,
    ModelParams,
    _log_softmax,
    apply_update,
    backward,
    flatten,
    forward,
    model_init,
    unflatten,
)


def central_difference(params, batch, h=1e-5):
    grad = np.empty(params.layout.size)
    for i in range(params.layout.size):
        up, down = params.flat.copy(), params.flat.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (forward(ModelParams(up, params.layout), batch)[0] - forward(ModelParams(down, params.layout), batch)[0]) / (2 * h)
    return grad


def test_init_shapes_and_count():
    p = model_init(1, 64, 3, seed=42)
    assert p["conv.weight"].shape == (8, 1, 8)
    assert p["dense.weight"].shape == (3, 8)
    assert p.layout.size == 8 * 1 * 8 + 8 + 3 * 8 + 3 == 99
    assert p.layout.extractor_size == 72 and p.layout.classifier_size == 27
    assert not p["conv.bias"].any() and not p["dense.bias"].any()


def test_init_deterministic():
    assert np.array_equal(model_init(2, 32, 4, seed=7).flat, model_init(2, 32, 4, seed=7).flat)
    assert not np.array_equal(model_init(2, 32, 4, seed=7).flat, model_init(2, 32, 4, seed=8).flat)


def test_init_fan_in_range():
    p = model_init(3, 32, 4, seed=1)
    assert np.abs(p["conv.weight"]).max() <= 1 / np.sqrt(24)
    assert np.abs(p["dense.weight"]).max() <= 1 / np.sqrt(8)


@pytest.mark.parametrize("dims", [(1, 8, 3), (0, 32, 3), (1, 32, 1)])
def test_init_rejects_bad_dims(dims):
    with pytest.raises(InvalidDimensionError):
        model_init(*dims, seed=0)


def test_flatten_roundtrip():
    p = model_init(2, 20, 5, seed=3)
    tensors = unflatten(p.flat, p.layout)
    assert np.array_equal(flatten(tensors, p.layout), p.flat)
    starts = sorted((s.start, s.stop) for s in p.layout.slots)
    assert starts[0][0] == 0 and starts[-1][1] == p.layout.size
    assert all(a[1] == b[0] for a, b in zip(starts, starts[1:]))


def test_zero_classifier_gives_uniform():
    p = model_init(1, 32, 4, seed=0)
    flat = p.flat.copy()
    flat[p.layout.extractor_size:] = 0
    p = ModelParams(flat, p.layout)
    batch = Batch(np.random.default_rng(0).normal(size=(5, 1, 32)), [0, 1, 2, 3, 0])
    loss, probs = forward(p, batch)
    assert np.allclose(probs, 0.25, atol=1e-15)
    assert loss == pytest.approx(np.log(4), abs=1e-12)


def test_saturated_logits_loss_near_zero():
    p = model_init(1, 32, 3, seed=0)
    s = p.layout.slot("dense.bias")
    flat = p.flat.copy()
    flat[s.start + 2] = 50.0
    loss, _ = forward(ModelParams(flat, p.layout), Batch(np.zeros((1, 1, 32)), [2]))
    assert loss < 1e-9


def test_forward_matches_naive(small_problem):
    params, batch = small_problem
    loss, probs = forward(params, batch)
    assert loss == pytest.approx(naive_loss(params, batch), abs=1e-10)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    params = model_init(1, 32, 2, seed=5)
    batch = Batch(rng.normal(size=(3, 1, 32)), [0, 1, 1])
    analytic = backward(params, batch).flat()
    numeric = central_difference(params, batch)
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)
    assert rel.max() < 1e-4


def test_dense_bias_gradient_zero_for_uniform_balanced():
    p = model_init(1, 32, 2, seed=0)
    flat = p.flat.copy()
    flat[p.layout.extractor_size:] = 0
    p = ModelParams(flat, p.layout)
    g = backward(p, Batch(np.random.default_rng(1).normal(size=(4, 1, 32)), [0, 1, 0, 1]))
    s = p.layout.slot("dense.bias")
    bias = g.classifier[s.start - p.layout.extractor_size:]
    assert np.allclose(bias, 0.0, atol=1e-15)


def test_duplicated_batch_same_gradient(small_problem):
    params, batch = small_problem
    doubled = Batch(np.concatenate([batch.inputs, batch.inputs]), np.concatenate([batch.labels, batch.labels]))
    assert np.allclose(backward(params, batch).flat(), backward(params, doubled).flat(), atol=1e-12, rtol=0)


def test_forward_backward_pure(small_problem):
    params, batch = small_problem
    assert np.array_equal(backward(params, batch).flat(), backward(params, batch).flat())
    assert forward(params, batch)[0] == forward(params, batch)[0]


def test_shape_errors():
    p = model_init(1, 32, 3, seed=0)
    with pytest.raises(ShapeMismatchError):
        forward(p, Batch(np.zeros((2, 2, 32)), [0, 1]))
    with pytest.raises(ShapeMismatchError):
        forward(p, Batch(np.zeros((2, 1, 32)), [0, 3]))
    with pytest.raises(ShapeMismatchError):
        Batch(np.zeros((2, 1, 32)), [0])


def test_apply_update_rules(small_problem):
    params, batch = small_problem
    u1 = backward(params, batch)
    u2 = GradientTuple.from_flat(np.random.default_rng(2).normal(size=params.layout.size), params.layout)
    assert np.array_equal(apply_update(params, u1, 0.0).flat, params.flat)
    self_update = GradientTuple.from_flat(params.flat, params.layout)
    assert not apply_update(params, self_update, 1.0).flat.any()
    two = apply_update(apply_update(params, u1, 0.1), u2, 0.1)
    one = apply_update(params, GradientTuple.from_flat(u1.flat() + u2.flat(), params.layout), 0.1)
    assert np.allclose(two.flat, one.flat, atol=1e-12, rtol=0)


def test_apply_update_layout_mismatch():
    p = model_init(1, 32, 3, seed=0)
    q = model_init(1, 32, 4, seed=0)
    with pytest.raises(LayoutMismatchError):
        apply_update(p, GradientTuple.from_flat(q.flat, q.layout), 0.1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=6))
def test_softmax_rows_sum_to_one(row):
    probs = np.exp(_log_softmax(np.array([row])))
    assert abs(probs.sum() - 1.0) < 1e-9
    assert np.isfinite(probs).all()


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("classes", [2, 3])
def test_gradient_randomized_instances(seed, classes):
    rng = np.random.default_rng(100 + seed)
    params = model_init(1, 20, classes, seed=seed)
    batch = Batch(rng.normal(size=(2, 1, 20)), rng.integers(0, classes, 2))
    analytic = backward(params, batch).flat()
    numeric = central_difference(params, batch)
    assert (np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)).max() < 1e-4
