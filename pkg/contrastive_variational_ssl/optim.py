"""
First-order optimizers: plain SGD, Adam and AdamW with decoupled weight decay.

Parameters are handed to step() as a name -> Tensor mapping, so a training
loop that disables part of the model simply leaves those parameters out and
they are never touched.
"""

from typing import Any, Dict, Optional, Tuple

import numpy as np
from aws_lambda_powertools import Logger

from .autodiff import Tensor
from .constants import (
    DEFAULT_ADAMW_WEIGHT_DECAY,
    DEFAULT_BETA1,
    DEFAULT_BETA2,
    DEFAULT_EPS,
    OPTIMIZER_KINDS,
    SERVICE_NAME,
)
from .errors import InvalidLearningRate, InvalidValue, MissingGradient, NonFiniteGradient, UnknownOptimizer

logger = Logger(service=SERVICE_NAME, child=True)


class OptimizerState:
    """
    Hyperparameters, step counter and per-parameter moment estimates
    """

    def __init__(
        self,
        kind: str,
        lr: float,
        beta1: float = DEFAULT_BETA1,
        beta2: float = DEFAULT_BETA2,
        eps: float = DEFAULT_EPS,
        weight_decay: float = 0.0,
    ):
        """
        Initialize an OptimizerState

        Args:
            kind (str): One of sgd, adam, adamw
            lr (float): Learning rate
            beta1 (float): First-moment decay
            beta2 (float): Second-moment decay
            eps (float): Denominator guard
            weight_decay (float): Decoupled decay rate (adamw only)
        """
        self.kind = kind
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        # moments are created lazily per parameter name; sgd keeps none
        self.m: Optional[Dict[str, np.ndarray]] = None if kind == "sgd" else {}
        self.v: Optional[Dict[str, np.ndarray]] = None if kind == "sgd" else {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "t": self.t,
        }


def make_optimizer(section: Any) -> OptimizerState:
    """Create an optimizer state from the optimizer section of a config.

    Args:
        section: Object or dict with kind, lr and optional beta1, beta2, eps, weight_decay

    Returns:
        OptimizerState: Fresh state with t = 0 and zero moments

    Raises:
        UnknownOptimizer: If kind is not sgd, adam or adamw
        InvalidLearningRate: If lr is outside (0, 1)
    """
    get = section.get if isinstance(section, dict) else lambda key, default=None: getattr(section, key, default)

    kind = str(get("kind", "")).lower()
    if kind not in OPTIMIZER_KINDS:
        raise UnknownOptimizer(f"unknown optimizer '{kind}', expected one of {', '.join(OPTIMIZER_KINDS)}")
    lr = float(get("lr", 0.0))
    if not (0.0 < lr < 1.0):
        raise InvalidLearningRate(f"learning rate must be in (0, 1), got {lr}")

    beta1 = _or_default(get("beta1"), DEFAULT_BETA1)
    beta2 = _or_default(get("beta2"), DEFAULT_BETA2)
    eps = _or_default(get("eps"), DEFAULT_EPS)
    weight_decay = _or_default(get("weight_decay"), DEFAULT_ADAMW_WEIGHT_DECAY if kind == "adamw" else 0.0)
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise InvalidValue(f"betas must lie in [0, 1), got {beta1}, {beta2}")
    if eps <= 0 or weight_decay < 0:
        raise InvalidValue(f"eps must be > 0 and weight_decay >= 0, got {eps}, {weight_decay}")

    state = OptimizerState(kind, lr, beta1, beta2, eps, weight_decay)
    logger.debug("Created optimizer", extra=state.to_dict())
    return state


def _or_default(value: Optional[Any], default: float) -> float:
    return float(default) if value is None else float(value)


def step(state: OptimizerState, params: Dict[str, Tensor]) -> Tuple[Dict[str, Tensor], OptimizerState]:
    """Apply one update to every parameter in place and clear the gradients.

    Args:
        state (OptimizerState): Optimizer state; t is incremented
        params (Dict[str, Tensor]): Named parameters with populated grads

    Returns:
        Tuple[Dict[str, Tensor], OptimizerState]: The updated parameters and state

    Raises:
        MissingGradient: If a parameter has no gradient
        NonFiniteGradient: If a gradient holds NaN or Inf
    """
    for name, param in params.items():
        if param.grad is None:
            raise MissingGradient(f"parameter '{name}' has no gradient")
        if not np.all(np.isfinite(param.grad)):
            raise NonFiniteGradient(f"gradient of '{name}' is not finite")

    state.t += 1
    if state.kind == "sgd":
        for param in params.values():
            param.data -= state.lr * param.grad
    else:
        bias1 = 1.0 - state.beta1**state.t
        bias2 = 1.0 - state.beta2**state.t
        for name, param in params.items():
            grad = param.grad
            m = state.m.get(name)
            v = state.v.get(name)
            if m is None:
                m = np.zeros_like(param.data)
                v = np.zeros_like(param.data)
            m = state.beta1 * m + (1.0 - state.beta1) * grad
            v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
            state.m[name] = m
            state.v[name] = v
            m_hat = m / bias1
            v_hat = v / bias2
            param.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
            if state.kind == "adamw" and state.weight_decay != 0.0:
                param.data -= state.lr * state.weight_decay * param.data

    for param in params.values():
        param.grad = None
    return params, state
