import math

import numpy as np
import pytest

from minipali.numerics import (
    NondeterministicFunctionError,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    bilinear_resize_grid,
    finite_difference_grad,
    ops,
    relative_error,
)


def test_softmax_uniform():
    np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)


def test_cross_entropy_two_class():
    loss = ops.cross_entropy(Tensor([[0.0, 0.0]]), np.array([0]))
    assert loss.item() == pytest.approx(math.log(2), abs=1e-15)


def test_cross_entropy_ignore_index():
    logits = Tensor([[0.0, 0.0], [5.0, -5.0]])
    loss = ops.cross_entropy(logits, np.array([0, -1]), ignore_index=-1)
    assert loss.item() == pytest.approx(math.log(2))


def test_matmul_identity():
    A = np.random.default_rng(0).normal(size=(3, 3))
    np.testing.assert_array_equal(ops.matmul(Tensor(np.eye(3)), Tensor(A)).data, A)


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError) as err:
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    assert "matmul" in str(err.value) and "(2, 3)" in str(err.value)
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_non_finite_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, float("nan")])
    with pytest.raises(NonFiniteError):
        ops.exp(Tensor([1000.0]))


def test_layer_norm_eps_must_be_positive():
    with pytest.raises(ValueError):
        ops.layer_norm(Tensor(np.ones((2, 3))), eps=0.0)


def test_tensors_are_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 3.0


# -- backward ----------------------------------------------------------------

def test_square_gradient():
    with Tape() as tape:
        x = tape.watch("x", 3.0)
        y = x * x
    assert backward(tape, y)["x"] == pytest.approx(6.0)


def test_softmax_first_entry_gradient_matches_fd():
    def f(p):
        return ops.softmax(Tensor(p["x"])).data[0]

    fd = finite_difference_grad(f, {"x": np.zeros(2)}, eps=1e-6)["x"]
    np.testing.assert_allclose(fd, [0.25, -0.25], atol=1e-9)
    with Tape() as tape:
        x = tape.watch("x", np.zeros(2))
        y = ops.softmax(x)[0]
    np.testing.assert_allclose(backward(tape, y)["x"], fd, atol=1e-9)


def test_disconnected_parameter_gets_zero_gradient():
    with Tape() as tape:
        x = tape.watch("x", np.array([1.0, 2.0]))
        p = tape.watch("p", np.ones((2, 2)))
        loss = ops.sum(x * x)
    g = backward(tape, loss)
    np.testing.assert_array_equal(g["p"], np.zeros((2, 2)))


def test_backward_errors():
    with Tape() as tape:
        x = tape.watch("x", np.ones(3))
        y = x * 2.0
    with pytest.raises(ValueError, match="scalar"):
        backward(tape, y)
    with pytest.raises(ValueError, match="tape"):
        backward(tape, Tensor(1.0))


def test_tape_replay_bit_exact():
    rng = np.random.default_rng(1)
    with Tape() as tape:
        w = tape.watch("w", rng.normal(size=(4, 3)))
        h = ops.gelu(ops.matmul(Tensor(rng.normal(size=(2, 4))), w))
        loss = ops.mean(ops.softmax(h, axis=-1))
    assert tape.replay()
    assert len(tape.nodes) >= 4


def test_backward_is_deterministic():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(5, 4))

    def run():
        with Tape() as tape:
            w = tape.watch("w", A)
            loss = ops.mean(ops.gelu(w @ Tensor(A.T)))
        return backward(tape, loss)["w"]

    np.testing.assert_array_equal(run(), run())


# -- finite difference oracle ------------------------------------------------

def test_fd_square():
    g = finite_difference_grad(lambda p: float(p["x"] ** 2), {"x": np.array(3.0)}, eps=1e-5)
    assert abs(g["x"] - 6.0) < 1e-8


def test_fd_constant_function():
    g = finite_difference_grad(lambda p: 4.2, {"x": np.ones(5)}, eps=1e-4)
    assert np.all(np.abs(g["x"]) <= 1e-8)


def test_fd_rejects_bad_eps_and_nondeterminism():
    with pytest.raises(ValueError):
        finite_difference_grad(lambda p: 0.0, {"x": np.ones(1)}, eps=0.1)
    rng = np.random.default_rng(0)
    with pytest.raises(NondeterministicFunctionError):
        finite_difference_grad(lambda p: float(rng.random()), {"x": np.ones(1)}, eps=1e-5)


def _two_layer(p, x, labels):
    h = ops.gelu(ops.linear(x, p["w1"], p["b1"]))
    h = ops.layer_norm(h, p["g"], p["beta"])
    return ops.cross_entropy(ops.linear(h, p["w2"]), labels)


def test_fd_matches_backward_two_layer_model():
    rng = np.random.default_rng(3)
    params = {"w1": rng.normal(size=(4, 6)), "b1": rng.normal(size=6), "g": rng.normal(size=6) + 1,
              "beta": rng.normal(size=6), "w2": rng.normal(size=(6, 5))}
    x = Tensor(rng.normal(size=(7, 4)))
    labels = rng.integers(0, 5, size=7)
    with Tape() as tape:
        watched = {k: tape.watch(k, v) for k, v in params.items()}
        loss = _two_layer(watched, x, labels)
    grads = backward(tape, loss)
    fd = finite_difference_grad(lambda p: _two_layer({k: Tensor(v) for k, v in p.items()}, x, labels).item(),
                                params, eps=1e-5)
    for k in params:
        assert relative_error(grads[k], fd[k], floor=1e-6).max() < 1e-5, k


# -- per-op gradient checks over random shapes -----------------------------

def _check_op(build, arrays, rng, eps=1e-5):
    """Compare backward and finite differences for sum(out * r) with random r."""
    out0 = build({k: Tensor(v) for k, v in arrays.items()})
    r = rng.normal(size=out0.shape)

    def f(p):
        return float(np.sum(build({k: Tensor(v) for k, v in p.items()}).data * r))

    with Tape() as tape:
        watched = {k: tape.watch(k, v) for k, v in arrays.items()}
        loss = ops.sum(ops.mul(build(watched), Tensor(r)))
    grads = backward(tape, loss)
    fd = finite_difference_grad(f, arrays, eps=eps)
    for k in arrays:
        err = relative_error(grads[k], fd[k], floor=1e-5).max()
        assert err < 1e-5, (k, err)


def _rand_shape(rng, nd):
    return tuple(int(s) for s in rng.integers(1, 5, size=nd))


OP_CASES = {
    "add": lambda rng: ({"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4,))}, lambda p: p["a"] + p["b"]),
    "sub": lambda rng: ({"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(2, 1))}, lambda p: p["a"] - p["b"]),
    "mul": lambda rng: ({"a": rng.normal(size=(2, 3, 2)), "b": rng.normal(size=(3, 1))}, lambda p: p["a"] * p["b"]),
    "matmul": lambda rng: ({"a": rng.normal(size=(2, 3, 4)), "b": rng.normal(size=(4, 5))}, lambda p: p["a"] @ p["b"]),
    "gelu": lambda rng: ({"a": rng.normal(size=_rand_shape(rng, 2)) * 2}, lambda p: ops.gelu(p["a"])),
    "softmax": lambda rng: ({"a": rng.normal(size=(3, 5))}, lambda p: ops.softmax(p["a"], axis=0)),
    "masked_softmax": lambda rng: ({"a": rng.normal(size=(3, 4))},
                                   lambda p: ops.softmax(p["a"], mask=np.tril(np.ones((3, 4), bool)))),
    "log_softmax": lambda rng: ({"a": rng.normal(size=(2, 6))}, lambda p: ops.log_softmax(p["a"])),
    "layer_norm": lambda rng: ({"a": rng.normal(size=(3, 5)), "g": rng.normal(size=5), "b": rng.normal(size=5)},
                               lambda p: ops.layer_norm(p["a"], p["g"], p["b"], eps=1e-6)),
    "embedding": lambda rng: ({"t": rng.normal(size=(6, 3))}, lambda p: ops.embedding(p["t"], np.array([[0, 5], [5, 2]]))),
    "concat": lambda rng: ({"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(2, 2))},
                           lambda p: ops.concat([p["a"], p["b"]], axis=1)),
    "slice": lambda rng: ({"a": rng.normal(size=(4, 5))}, lambda p: p["a"][1:3, ::2]),
    "reshape_transpose": lambda rng: ({"a": rng.normal(size=(2, 6))},
                                      lambda p: p["a"].reshape(2, 3, 2).transpose(2, 0, 1)),
    "sum": lambda rng: ({"a": rng.normal(size=(3, 4))}, lambda p: ops.sum(p["a"], axis=1, keepdims=True)),
    "mean": lambda rng: ({"a": rng.normal(size=(3, 4, 2))}, lambda p: ops.mean(p["a"], axis=(0, 2))),
    "attention": lambda rng: (
        {"q": rng.normal(size=(2, 3, 4)), "k": rng.normal(size=(2, 5, 4)), "v": rng.normal(size=(2, 5, 3)),
         "bias": rng.normal(size=(3, 5))},
        lambda p: ops.scaled_dot_product_attention(p["q"], p["k"], p["v"],
                                                   mask=np.array([True, True, True, False, True]), bias=p["bias"])),
    "cross_entropy": lambda rng: ({"a": rng.normal(size=(4, 5))},
                                  lambda p: ops.cross_entropy(p["a"], np.array([1, -1, 4, 0]))),
}


@pytest.mark.parametrize("op", sorted(OP_CASES))
@pytest.mark.parametrize("seed", range(20))
def test_op_gradients_match_finite_differences(op, seed):
    rng = np.random.default_rng(seed)
    arrays, build = OP_CASES[op](rng)
    _check_op(build, arrays, rng)


@pytest.mark.parametrize("seed", range(20))
def test_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(_rand_shape(rng, 1)[0] + 1, 7)) * 10
    np.testing.assert_allclose(ops.softmax(Tensor(x)).data.sum(axis=-1), 1.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_layer_norm_statistics(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(loc=3.0, scale=5.0, size=(4, 16))
    y = ops.layer_norm(Tensor(x), eps=1e-12).data
    assert np.abs(y.mean(axis=-1)).max() < 1e-10
    assert np.abs(y.var(axis=-1) - 1.0).max() < 1e-8


def test_float32_selectable():
    t = Tensor(np.ones((2, 2), dtype=np.float32))
    assert (t @ t).dtype == np.float32
    assert (t * 2.0).dtype == np.float32


# -- bilinear resize ---------------------------------------------------------

def test_resize_same_size_is_identity():
    g = np.random.default_rng(0).normal(size=(4, 5, 3))
    out = bilinear_resize_grid(g, 4, 5)
    np.testing.assert_array_equal(out, g)


def test_resize_2x2_to_3x3_by_hand():
    g = np.array([[0.0, 1.0], [2.0, 3.0]])[:, :, None]
    out = bilinear_resize_grid(g, 3, 3)[:, :, 0]
    np.testing.assert_array_equal(out, [[0, 0.5, 1], [1, 1.5, 2], [2, 2.5, 3]])


def test_resize_preserves_corners():
    g = np.random.default_rng(1).normal(size=(16, 16, 4))
    out = bilinear_resize_grid(g, 42, 42)
    for (i, j), (a, b) in zip([(0, 0), (0, -1), (-1, 0), (-1, -1)], [(0, 0), (0, -1), (-1, 0), (-1, -1)]):
        np.testing.assert_array_equal(out[i, j], g[a, b])


def test_resize_constant_grid_exact():
    g = np.full((3, 4, 2), 0.1)
    np.testing.assert_array_equal(bilinear_resize_grid(g, 7, 9), np.full((7, 9, 2), 0.1))


def test_resize_is_linear_and_channelwise():
    rng = np.random.default_rng(5)
    g1, g2 = rng.normal(size=(2, 3, 3, 2))
    lhs = bilinear_resize_grid(2.0 * g1 - 3.0 * g2, 5, 6)
    rhs = 2.0 * bilinear_resize_grid(g1, 5, 6) - 3.0 * bilinear_resize_grid(g2, 5, 6)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    np.testing.assert_array_equal(bilinear_resize_grid(g1[:, :, :1], 5, 6)[:, :, 0],
                                  bilinear_resize_grid(g1, 5, 6)[:, :, 0])


def test_resize_rejects_small_extents():
    with pytest.raises(ValueError):
        bilinear_resize_grid(np.ones((1, 3, 1)), 4, 4)
    with pytest.raises(ValueError):
        bilinear_resize_grid(np.ones((3, 3, 1)), 1, 4)


def test_resize_tensor_roundtrip_type():
    t = Tensor(np.ones((2, 2, 1)), name="vit.pos")
    out = bilinear_resize_grid(t, 3, 3)
    assert isinstance(out, Tensor) and out.name == "vit.pos"
