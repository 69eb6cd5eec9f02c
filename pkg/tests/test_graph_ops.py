import math

import numpy as np
import pytest

from dpc.errors import ContractViolation, NumericError
from dpc.graph import ops
from dpc.graph.gradcheck import grad_check
from dpc.graph.tape import GraphTape, backward
from dpc.graph.tensor import Parameter, Tensor, precision


def test_add_and_softmax_examples():
    np.testing.assert_array_equal(ops.add(Tensor([1, 2]), Tensor([3, 4])).data, [4, 6])
    np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-7)


def _matmul_oracle(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += float(a[i, k]) * float(b[k, j])
    return out


def _softmax_oracle(x):
    out = np.zeros(x.shape)
    for i in range(x.shape[0]):
        top = max(float(v) for v in x[i])
        exps = [math.exp(float(v) - top) for v in x[i]]
        total = sum(exps)
        out[i] = [e / total for e in exps]
    return out


def _layer_norm_oracle(x, gamma, beta, eps=1e-5):
    out = np.zeros(x.shape)
    for i in range(x.shape[0]):
        row = [float(v) for v in x[i]]
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        out[i] = [(v - mu) / math.sqrt(var + eps) * float(g) + float(b) for v, g, b in zip(row, gamma, beta)]
    return out


def _gelu_oracle(x):
    k = math.sqrt(2 / math.pi)
    return np.vectorize(lambda v: 0.5 * v * (1 + math.tanh(k * (v + 0.044715 * v ** 3))))(x.astype(np.float64))


def _l2_oracle(x):
    return np.array([math.sqrt(sum(float(v) ** 2 for v in row)) for row in x])


def _mean_oracle(x):
    return np.array([sum(float(x[i, j]) for i in range(x.shape[0])) / x.shape[0] for j in range(x.shape[1])])


ORACLE_CASES = {
    "matmul": lambda rng: ((rng.normal(size=(2, 3)), rng.normal(size=(3, 4))),
                           lambda a, b: ops.matmul(a, b), _matmul_oracle),
    "softmax": lambda rng: ((rng.normal(size=(4, 6)),), lambda x: ops.softmax(x, axis=-1), _softmax_oracle),
    "layer_norm": lambda rng: ((rng.normal(size=(3, 8)),
                                rng.uniform(-0.5, 0.5, size=8),
                                rng.uniform(-0.5, 0.5, size=8)),
                               ops.layer_norm, _layer_norm_oracle),
    "gelu": lambda rng: ((rng.normal(size=(3, 5)),), ops.gelu, _gelu_oracle),
    "l2_norm": lambda rng: ((rng.normal(size=(4, 7)),), ops.l2_norm, _l2_oracle),
    "mean": lambda rng: ((rng.normal(size=(5, 3)),), lambda x: ops.mean(x, axis=0), _mean_oracle),
}


@pytest.mark.parametrize("kind", sorted(ORACLE_CASES))
@pytest.mark.parametrize("dtype,tolerance", [("float32", 1e-6), ("float64", 1e-12)])
def test_primitive_matches_loop_oracle(kind, dtype, tolerance):
    rng = np.random.default_rng(7)
    inputs, forward, oracle = ORACLE_CASES[kind](rng)
    with precision(dtype):
        tensors = [Tensor(x) for x in inputs]
        result = forward(*tensors).data
    assert result.dtype == np.dtype(dtype)
    expected = oracle(*[t.data for t in tensors])
    np.testing.assert_allclose(result, expected, rtol=0, atol=tolerance)


def test_structural_primitives_match_indexing():
    rng = np.random.default_rng(3)
    table = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(ops.gather(Tensor(table), [4, 0, 4]).data, Tensor(table).data[[4, 0, 4]])
    x = Tensor(rng.normal(size=(2, 3, 4)))
    transposed = ops.transpose(x, (2, 0, 1)).data
    for i in range(2):
        for j in range(3):
            for k in range(4):
                assert transposed[k, i, j] == x.data[i, j, k]
    a, b = Tensor(np.ones((2, 3))), Tensor(np.zeros((1, 3)))
    assert ops.concat([a, b], axis=0).shape == (3, 3)
    np.testing.assert_array_equal(ops.select(x, 1, axis=1).data, x.data[:, 1, :])


# Every primitive against central differences, through a random linear readout.
def _cases(rng):
    def param(shape, name):
        return Parameter(rng.normal(size=shape), name=name)

    def signed(shape, name):
        magnitude = rng.uniform(0.2, 1.0, size=shape)
        return Parameter(magnitude * rng.choice([-1.0, 1.0], size=shape), name=name)

    return {
        "add": lambda: ([param((3, 4), "a"), param((4,), "b")], ops.add),
        "mul": lambda: ([param((3, 4), "a"), param((3, 1), "b")], ops.mul),
        "scale": lambda: ([param((3, 4), "a")], lambda a: ops.scale(a, 2.5)),
        "gelu": lambda: ([param((3, 4), "x")], ops.gelu),
        "relu": lambda: ([signed((3, 4), "x")], ops.relu),
        "matmul": lambda: ([param((2, 3, 4), "a"), param((4, 5), "b")], ops.matmul),
        "l2_norm": lambda: ([param((3, 4), "x")], ops.l2_norm),
        "cosine_similarity": lambda: ([param((3, 4), "a"), param((1, 4), "b")], ops.cosine_similarity),
        "sum": lambda: ([param((3, 4), "x")], lambda x: ops.sum(x, axis=1)),
        "mean": lambda: ([param((3, 4), "x")], lambda x: ops.mean(x, axis=0, keepdims=True)),
        "layer_norm": lambda: ([param((3, 5), "x"), param((5,), "gamma"), param((5,), "beta")], ops.layer_norm),
        "softmax": lambda: ([param((3, 4), "x")], lambda x: ops.softmax(x, axis=0)),
        "log_softmax": lambda: ([param((3, 4), "x")], ops.log_softmax),
        "concat": lambda: ([param((2, 3), "a"), param((1, 3), "b")], lambda a, b: ops.concat([a, b], axis=0)),
        "gather": lambda: ([param((5, 3), "table")], lambda t: ops.gather(t, [0, 2, 2, 4])),
        "reshape": lambda: ([param((3, 4), "x")], lambda x: ops.reshape(x, (2, 6))),
        "transpose": lambda: ([param((2, 3, 4), "x")], lambda x: ops.transpose(x, (2, 0, 1))),
        "select": lambda: ([param((2, 3, 4), "x")], lambda x: ops.select(x, 1, axis=1)),
    }


@pytest.mark.parametrize("kind", sorted(_cases(np.random.default_rng(0))))
def test_backward_matches_finite_differences(kind, float64):
    rng = np.random.default_rng(11)
    parameters, forward = _cases(rng)[kind]()
    readout = Tensor(rng.normal(size=forward(*parameters).shape))

    def loss():
        return ops.sum(ops.mul(forward(*parameters), readout))

    report = grad_check(loss, parameters, step=1e-5, tolerance=1e-4)
    assert report.passed, f"{kind}: max rel err {report.max_rel_error:.3e}"


def test_cosine_examples():
    assert ops.cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == pytest.approx(0.0, abs=1e-7)
    assert ops.cosine_similarity(Tensor([3.0, 4.0]), Tensor([3.0, 4.0])).item() == pytest.approx(1.0, abs=1e-6)
    assert ops.cosine_similarity(Tensor([1.0, 1.0]), Tensor([1.0, 0.0])).item() == pytest.approx(0.7071068, abs=1e-6)


def test_cosine_is_bounded_and_scale_invariant():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, b = rng.normal(size=8), rng.normal(size=8)
        s = ops.cosine_similarity(Tensor(a), Tensor(b)).item()
        assert -1 - 1e-6 <= s <= 1 + 1e-6
        for alpha in (0.5, 2.0, 10.0):
            assert ops.cosine_similarity(Tensor(alpha * a), Tensor(b)).item() == pytest.approx(s, abs=1e-6)


def test_cosine_zero_norm_is_an_error():
    with pytest.raises(NumericError, match="zero norm"):
        ops.cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))


def test_cosine_gradient_example(float64):
    a = Parameter([1.0, 0.0], name="a")
    b = Tensor([1.0, 1.0])
    report = grad_check(lambda: ops.cosine_similarity(a, b), [a], step=1e-6, tolerance=1e-6)
    assert report.passed
    np.testing.assert_allclose(report.checks[0].analytic, [0.0, 1 / math.sqrt(2)], atol=1e-12)


def test_shape_mismatch_names_kind_and_shapes():
    with pytest.raises(ContractViolation, match=r"add: shapes \(2, 3\) and \(4,\)"):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))
    with pytest.raises(ContractViolation, match="matmul"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_non_finite_output_is_a_numeric_error():
    with np.errstate(over="ignore"), pytest.raises(NumericError, match="scale"):
        ops.scale(Tensor([1e30]), 1e30)


def test_backward_product_rule_and_freeze():
    x = Parameter(2.0, name="x")
    y = Parameter(5.0, trainable=False, name="y")
    with GraphTape() as tape:
        loss = ops.mul(x, y)
    tape.backward(loss)
    assert float(x.grad) == pytest.approx(5.0)
    assert y.grad is None


def test_backward_requires_scalar_loss():
    x = Parameter(np.ones(3), name="x")
    with GraphTape() as tape:
        out = ops.scale(x, 2.0)
    with pytest.raises(ContractViolation, match="scalar"):
        tape.backward(out)


def test_item_needs_a_single_value():
    assert Tensor([[2.5]]).item() == 2.5
    with pytest.raises(ContractViolation, match=r"single value, got shape \(3,\)"):
        Tensor(np.ones(3)).item()
    with pytest.raises(ContractViolation, match="single value"):
        Tensor(np.zeros((0,))).item()


def test_disconnected_parameter_gets_zero_gradient():
    x = Parameter(np.ones(3), name="x")
    z = Parameter(np.ones(2), name="z")
    with GraphTape():
        loss = ops.sum(ops.scale(x, 3.0))
    grads = backward(loss, [x, z])
    np.testing.assert_array_equal(x.grad, [3.0, 3.0, 3.0])
    np.testing.assert_array_equal(z.grad, [0.0, 0.0])
    assert set(grads) == {x, z}


def test_nothing_is_recorded_without_a_tape():
    x = Parameter(np.ones(3), name="x")
    out = ops.sum(ops.scale(x, 2.0))
    assert out._node is None
    with pytest.raises(ContractViolation, match="outside of a GraphTape"):
        backward(out)


def test_each_node_is_replayed_once():
    x = Parameter(np.array([1.0, 2.0]), name="x")
    with GraphTape() as tape:
        h = ops.mul(x, x)
        loss = ops.sum(ops.add(h, h))
    assert len(tape) == 3
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, 4 * x.data)
