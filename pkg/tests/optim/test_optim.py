import numpy as np
import pytest

from contrastive_variational_ssl.autodiff import Tensor
from contrastive_variational_ssl.errors import (
    InvalidLearningRate,
    MissingGradient,
    NonFiniteGradient,
    UnknownOptimizer,
)
from contrastive_variational_ssl.optim import OptimizerState, make_optimizer, step


def param_with_grad(value, grad):
    tensor = Tensor(np.array(value, dtype=float), requires_grad=True)
    tensor.grad = np.array(grad, dtype=float)
    return tensor


def test_sgd_hand_step():
    theta = param_with_grad([1.0], [0.5])
    step(make_optimizer({"kind": "sgd", "lr": 0.1}), {"theta": theta})
    assert theta.data[0] == pytest.approx(0.95, abs=1e-15)


def test_sgd_update_is_linear_in_the_gradient():
    rng = np.random.default_rng(3)

    def update(theta, grad):
        param = param_with_grad(theta, grad)
        step(make_optimizer({"kind": "sgd", "lr": 0.05}), {"theta": param})
        return param.data - theta

    for _ in range(20):
        theta = rng.normal(size=(3, 2))
        first, second = rng.normal(size=(2, 3, 2))
        a, b = rng.uniform(-2.0, 2.0, size=2)
        combined = update(theta, a * first + b * second)
        np.testing.assert_allclose(combined, a * update(theta, first) + b * update(theta, second), rtol=0, atol=1e-12)
        np.testing.assert_allclose(update(theta, first), -0.05 * first, rtol=0, atol=1e-14)


def test_adam_first_step_is_bias_corrected():
    theta = param_with_grad([0.0], [1.0])
    step(make_optimizer({"kind": "adam", "lr": 0.1}), {"theta": theta})
    assert theta.data[0] == pytest.approx(-0.1, abs=1e-8)


def test_adamw_decay_is_decoupled():
    theta = param_with_grad([1.0], [0.0])
    state = make_optimizer({"kind": "adamw", "lr": 0.1, "weight_decay": 0.01})
    step(state, {"theta": theta})
    # a coupled L2 penalty would move theta to about 0.9 instead
    assert theta.data[0] == pytest.approx(0.999, abs=1e-15)


def test_adamw_without_decay_matches_adam_bit_for_bit():
    rng = np.random.default_rng(17)
    gradients = rng.normal(size=(100, 3, 2))
    start = rng.normal(size=(3, 2))
    adam_param = Tensor(start.copy(), requires_grad=True)
    adamw_param = Tensor(start.copy(), requires_grad=True)
    adam = make_optimizer({"kind": "adam", "lr": 0.01})
    adamw = make_optimizer({"kind": "adamw", "lr": 0.01, "weight_decay": 0.0})
    for grad in gradients:
        adam_param.grad = grad.copy()
        adamw_param.grad = grad.copy()
        step(adam, {"w": adam_param})
        step(adamw, {"w": adamw_param})
        assert adam_param.data.tobytes() == adamw_param.data.tobytes()


def test_make_optimizer_kinds():
    sgd = make_optimizer({"kind": "sgd", "lr": 0.01})
    assert sgd.m is None and sgd.v is None
    adamw = make_optimizer({"kind": "adamw", "lr": 0.002})
    assert adamw.weight_decay == 0.01
    assert adamw.t == 0
    assert make_optimizer({"kind": "adam", "lr": 0.002}).weight_decay == 0.0


def test_make_optimizer_reads_objects():
    section = type("Section", (), {"kind": "AdamW", "lr": 0.003, "weight_decay": 0.05})()
    state = make_optimizer(section)
    assert isinstance(state, OptimizerState)
    assert state.kind == "adamw"
    assert state.weight_decay == 0.05


def test_make_optimizer_rejects_unknown_kind():
    with pytest.raises(UnknownOptimizer):
        make_optimizer({"kind": "rmsprop", "lr": 0.01})


@pytest.mark.parametrize("lr", [0.0, 1.0, -0.5])
def test_make_optimizer_rejects_bad_learning_rate(lr):
    with pytest.raises(InvalidLearningRate):
        make_optimizer({"kind": "sgd", "lr": lr})


def test_step_requires_gradients():
    state = make_optimizer({"kind": "adam", "lr": 0.01})
    with pytest.raises(MissingGradient):
        step(state, {"w": Tensor([1.0], requires_grad=True)})
    assert state.t == 0


def test_step_rejects_non_finite_gradient():
    state = make_optimizer({"kind": "sgd", "lr": 0.01})
    with pytest.raises(NonFiniteGradient):
        step(state, {"w": param_with_grad([1.0], [np.nan])})


def test_step_clears_gradients_and_counts():
    state = make_optimizer({"kind": "adamw", "lr": 0.01})
    w = param_with_grad([1.0, 2.0], [0.1, -0.1])
    _, state = step(state, {"w": w})
    assert w.grad is None
    assert state.t == 1
    assert set(state.m) == {"w"}


def test_step_only_touches_given_parameters():
    state = make_optimizer({"kind": "adam", "lr": 0.1})
    active = param_with_grad([1.0], [1.0])
    frozen = param_with_grad([1.0], [1.0])
    step(state, {"active": active})
    assert frozen.data[0] == 1.0
    assert frozen.grad is not None
    assert "frozen" not in state.m
