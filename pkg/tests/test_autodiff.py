import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rs2g import autodiff as ad
from rs2g.autodiff import (
    Optimizer,
    ParameterSet,
    Tape,
    Tensor,
    check_gradients,
    optimizer_step,
    read_checkpoint,
    save_checkpoint,
)

RTOL = 1e-4
ATOL = 1e-6


def rand(rng, *shape, grad=True):
    return Tensor(rng.normal(size=shape), requires_grad=grad)


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(a, Tensor(np.eye(2))).data, [[1, 2], [3, 4]])


def test_softmax_uniform():
    np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_sigmoid_zero():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5


def test_grad_of_sum_is_ones():
    w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = w.sum()
    tape.backward(loss)
    np.testing.assert_array_equal(w.grad, [1, 1, 1])


def test_grad_of_square_sum():
    w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = (w * w).sum()
    tape.backward(loss)
    np.testing.assert_array_equal(w.grad, [2, 4, 6])


def test_backward_twice_raises():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = (w * w).sum()
    tape.backward(loss)
    with pytest.raises(RuntimeError, match="already ran"):
        tape.backward(loss)
    np.testing.assert_array_equal(w.grad, [2, 4])


def test_non_scalar_loss_rejected():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        out = w * 2.0
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(out)


def test_no_recording_outside_tape():
    w = Tensor([1.0], requires_grad=True)
    y = w * 3.0
    assert not y.requires_grad


def test_unreachable_parameter_gets_zero_grad():
    ps = ParameterSet()
    a = ps.register("a", [1.0, 2.0])
    ps.register("b", [[5.0]])
    with Tape() as tape:
        loss = (a * a).sum()
    tape.backward(loss)
    grads = ps.grads()
    np.testing.assert_array_equal(grads["a"], [2, 4])
    np.testing.assert_array_equal(grads["b"], [[0.0]])


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
        ad.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_nonfinite_rejected_at_construction():
    with pytest.raises(ValueError):
        Tensor([1.0, np.nan])
    with pytest.raises(ValueError):
        Tensor([np.inf])


def test_debug_mode_catches_nonfinite_results():
    ad.set_debug(True)
    try:
        with pytest.raises(FloatingPointError, match="log"):
            with np.errstate(all="ignore"):
                ad.log(Tensor([-1.0]))
    finally:
        ad.set_debug(False)


# ---------------------------------------------------------- finite differences

def _unary(op):
    return lambda rng: (lambda x: op(x).sum(), [rand(rng, 3, 4)])


OP_CASES = {
    "add": lambda rng: ((lambda a, b: ad.add(a, b).sum()), [rand(rng, 3, 4), rand(rng, 4)]),
    "sub": lambda rng: ((lambda a, b: (ad.sub(a, b) * ad.sub(a, b)).sum()), [rand(rng, 2, 3), rand(rng, 2, 3)]),
    "mul": lambda rng: ((lambda a, b: ad.mul(a, b).sum()), [rand(rng, 3, 4), rand(rng, 3, 1)]),
    "div": lambda rng: ((lambda a, b: ad.div(a, b).sum()),
                        [rand(rng, 3), Tensor(rng.uniform(1, 2, size=3), requires_grad=True)]),
    "scalar_divide": lambda rng: ((lambda a: (ad.scalar_divide(a, 3.0) * a).sum()), [rand(rng, 4)]),
    "matmul": lambda rng: ((lambda a, b: (ad.matmul(a, b) * ad.matmul(a, b)).sum()), [rand(rng, 3, 4), rand(rng, 4, 2)]),
    "matmul_batched": lambda rng: ((lambda a, b: ad.tanh(ad.matmul(a, b)).sum()), [rand(rng, 2, 3, 4), rand(rng, 4, 2)]),
    "matmul_vec": lambda rng: ((lambda a, b: ad.tanh(ad.matmul(a, b)).sum()), [rand(rng, 4), rand(rng, 4, 3)]),
    "concat": lambda rng: ((lambda a, b: ad.tanh(ad.concat([a, b], axis=1)).sum()), [rand(rng, 2, 3), rand(rng, 2, 2)]),
    "stack": lambda rng: ((lambda a, b: ad.tanh(ad.stack([a, b])).sum()), [rand(rng, 3), rand(rng, 3)]),
    "sigmoid": _unary(ad.sigmoid),
    "tanh": _unary(ad.tanh),
    "relu": _unary(lambda x: ad.relu(x) * x),
    "softmax": lambda rng: ((lambda a, w: (ad.softmax(a, axis=1) * w).sum()), [rand(rng, 3, 4), rand(rng, 3, 4)]),
    "log_softmax": lambda rng: ((lambda a: ad.log_softmax(a, axis=0)[1].sum()), [rand(rng, 3, 4)]),
    "sum_axis": lambda rng: ((lambda a: ad.tanh(a.sum(axis=0)).sum()), [rand(rng, 3, 4)]),
    "mean_axis": lambda rng: ((lambda a: ad.tanh(a.mean(axis=-1)).sum()), [rand(rng, 3, 4)]),
    "max_axis": lambda rng: ((lambda a: ad.tanh(a.max(axis=1)).sum()), [rand(rng, 3, 4)]),
    "getitem_fancy": lambda rng: ((lambda a: ad.tanh(a[np.array([0, 2, 2])]).sum()), [rand(rng, 3, 4)]),
    "transpose": lambda rng: ((lambda a, w: ad.tanh(a.T @ w).sum()), [rand(rng, 3, 4), rand(rng, 3, 2)]),
    "exp_log": lambda rng: ((lambda a: ad.log(ad.exp(a) + 1.0).sum()), [rand(rng, 5)]),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_op_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    f, inputs = OP_CASES[name](rng)
    errs = check_gradients(lambda: f(*inputs), inputs, atol=ATOL)
    assert max(errs.values()) < RTOL, errs


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_composite_expression_gradients(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b, c = rand(rng, n, m), rand(rng, m, n), rand(rng, n)
    f = lambda: (ad.sigmoid(a @ b) @ ad.tanh(c) + ad.softmax(c, axis=0)).sum()
    errs = check_gradients(f, [a, b, c], atol=ATOL)
    assert max(errs.values()) < RTOL


def test_ops_are_deterministic():
    def run():
        rng = np.random.default_rng(7)
        a, b = rand(rng, 4, 5), rand(rng, 5, 3)
        with Tape() as tape:
            loss = ad.softmax(ad.tanh(a @ b), axis=1).max(axis=0).sum()
        tape.backward(loss)
        return loss.data.tobytes(), a.grad.tobytes(), b.grad.tobytes()

    assert run() == run()


def test_straight_through_forwards_value_and_passes_gradient():
    a = Tensor([0.2, 0.7, 0.5], requires_grad=True)
    w = Tensor([1.0, 2.0, 3.0])
    with Tape() as tape:
        hard = ad.straight_through(a, (a.data >= 0.5).astype(float))
        loss = (hard * w).sum()
    np.testing.assert_array_equal(hard.data, [0.0, 1.0, 1.0])
    tape.backward(loss)
    np.testing.assert_array_equal(a.grad, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError, match="shape"):
        ad.straight_through(a, np.ones(2))


# ----------------------------------------------------------------- optimizer

def test_optimizer_single_step():
    ps = ParameterSet()
    ps.register("w", [1.0])
    optimizer_step(ps, {"w": np.array([0.5])}, 0.1)
    assert ps["w"].data[0] == pytest.approx(0.95, abs=1e-15)


def test_optimizer_zero_lr_is_noop():
    ps = ParameterSet()
    ps.register("w", [1.0, -2.0])
    optimizer_step(ps, {"w": np.array([3.0, 4.0])}, 0.0)
    np.testing.assert_array_equal(ps["w"].data, [1.0, -2.0])


def test_two_steps_on_quadratic():
    ps = ParameterSet()
    w = ps.register("w", [1.0])
    opt = Optimizer(ps, lr=0.1)
    seen = []
    for _ in range(2):
        ps.zero_grad()
        with Tape() as tape:
            loss = (w * w).sum()
        tape.backward(loss)
        opt.step()
        seen.append(w.data[0])
    assert seen == pytest.approx([0.8, 0.64], abs=1e-15)


def test_nonfinite_gradient_names_parameter():
    ps = ParameterSet()
    ps.register("layer.weight", [1.0])
    with pytest.raises(FloatingPointError, match="layer.weight"):
        optimizer_step(ps, {"layer.weight": np.array([np.nan])}, 0.1)


def test_global_norm_clipping():
    ps = ParameterSet()
    w = ps.register("w", [0.0, 0.0])
    w.grad = np.array([30.0, 40.0])
    Optimizer(ps, lr=1.0, clip_norm=5.0).step()
    np.testing.assert_allclose(w.data, [-3.0, -4.0])


def test_adam_moves_against_gradient():
    ps = ParameterSet()
    w = ps.register("w", [1.0, -1.0])
    w.grad = np.array([2.0, -0.5])
    Optimizer(ps, lr=0.01, adam=True).step()
    np.testing.assert_allclose(w.data, [0.99, -0.99])


def test_duplicate_registration_rejected():
    ps = ParameterSet()
    ps.register("w", [1.0])
    with pytest.raises(KeyError):
        ps.register("w", [2.0])


def test_assign_keeps_shape():
    ps = ParameterSet()
    ps.register("w", np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ps.assign("w", np.zeros((3, 2)))


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    ps = ParameterSet()
    ps.register("a", rng.normal(size=(3, 4)))
    ps.register("b", rng.normal(size=(5,)) * 1e-300)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, ps, {"kind": "test"})
    other = ParameterSet()
    other.register("a", np.zeros((3, 4)))
    other.register("b", np.zeros(5))
    payload = read_checkpoint(path)
    other.load_state_dict(payload["parameters"])
    assert payload["architecture"] == {"kind": "test"}
    for name in ps:
        assert ps[name].data.tobytes() == other[name].data.tobytes()
