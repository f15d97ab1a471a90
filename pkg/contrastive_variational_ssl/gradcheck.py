"""
Gradient verification suite.

Checks every differentiable operation, both losses and the full weighted
objective of a small model against central finite differences.
"""

from typing import Any, Callable, Dict, List, Sequence

import numpy as np
from aws_lambda_powertools import Logger

from .autodiff import (
    Tensor,
    clip,
    combine_binary,
    concat,
    grad_check_many,
    log_sum_exp,
    map_unary,
    matmul,
    reduce,
    transpose,
)
from .constants import GRADCHECK_EPS, GRADCHECK_RELU_MARGIN, GRADCHECK_TOLERANCE, LOGVAR_MAX, LOGVAR_MIN, SERVICE_NAME
from .data_pipeline import AugmentConfig, make_views
from .losses import LossWeights, elbo_loss, gaussian_kl, info_nce, recon_nll
from .models import LinearParams, ModelBundle, ModelDims, init_model
from .seeding import substream
from .train_eval import compute_objective

logger = Logger(service=SERVICE_NAME, child=True)


class GradCheckResult:
    """
    Outcome of one finite-difference comparison
    """

    def __init__(self, name: str, max_rel_error: float, tolerance: float):
        self.name = name
        self.max_rel_error = float(max_rel_error)
        self.passed = self.max_rel_error < tolerance

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "max_rel_error": self.max_rel_error, "passed": self.passed}


class GradientReport:
    """
    All results of a suite run
    """

    def __init__(self, results: List[GradCheckResult], tolerance: float):
        self.results = results
        self.tolerance = tolerance

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> List[GradCheckResult]:
        return [r for r in self.results if not r.passed]

    def to_text(self) -> str:
        width = max(len(r.name) for r in self.results)
        lines = [
            f"{r.name.ljust(width)}  {r.max_rel_error:.3e}  {'ok' if r.passed else 'FAIL'}" for r in self.results
        ]
        summary = "passed" if self.passed else f"{len(self.failures())} failed"
        lines.append(f"{len(self.results)} checks, tolerance {self.tolerance:g}: {summary}")
        return "\n".join(lines) + "\n"


def _leaf(rng: np.random.Generator, shape: Sequence[int], low: float = -1.0, high: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=tuple(shape)), requires_grad=True)


def _away_from_zero(rng: np.random.Generator, shape: Sequence[int]) -> Tensor:
    magnitude = rng.uniform(0.2, 1.0, size=tuple(shape))
    sign = np.where(rng.random(size=tuple(shape)) < 0.5, -1.0, 1.0)
    return Tensor(magnitude * sign, requires_grad=True)


def _cases(seed: int) -> List[Any]:
    """(name, function, inputs) triples; every function returns a scalar."""
    rng = substream(seed, "gradcheck/ops")
    cases: List[Any] = []

    for kind in ("exp", "tanh", "neg", "square"):
        x = _leaf(rng, [3, 4])
        cases.append((f"unary:{kind}", lambda x=x, kind=kind: reduce("sum", map_unary(kind, x) * map_unary(kind, x)), [x]))
    positive = _leaf(rng, [3, 4], 0.5, 2.0)
    cases.append(("unary:log", lambda: reduce("sum", map_unary("log", positive)), [positive]))
    positive_sqrt = _leaf(rng, [3, 4], 0.5, 2.0)
    cases.append(("unary:sqrt", lambda: reduce("sum", map_unary("sqrt", positive_sqrt)), [positive_sqrt]))
    signed = _away_from_zero(rng, [3, 4])
    cases.append(("unary:relu", lambda: reduce("sum", map_unary("square", map_unary("relu", signed))), [signed]))

    for kind in ("add", "sub", "mul", "div"):
        a = _leaf(rng, [3, 4])
        b_same = _away_from_zero(rng, [3, 4])
        b_row = _away_from_zero(rng, [4])
        b_scalar = _away_from_zero(rng, [])
        for mode, b in (("same", b_same), ("row", b_row), ("scalar", b_scalar)):
            cases.append(
                (
                    f"binary:{kind}:{mode}",
                    lambda a=a, b=b, kind=kind: reduce("sum", map_unary("square", combine_binary(kind, a, b))),
                    [a, b],
                )
            )

    left, right = _leaf(rng, [3, 4]), _leaf(rng, [4, 2])
    cases.append(("matmul", lambda: reduce("sum", map_unary("square", matmul(left, right))), [left, right]))

    for kind in ("sum", "mean", "max"):
        for axis in (None, 0, 1):
            # distinct values keep the max winner stable under perturbation
            x = Tensor(rng.permutation(12).reshape(3, 4) * 0.1 + rng.uniform(0, 0.01, size=(3, 4)), requires_grad=True)
            cases.append(
                (
                    f"reduce:{kind}:{axis}",
                    lambda x=x, kind=kind, axis=axis: reduce("sum", map_unary("square", reduce(kind, x, axis))),
                    [x],
                )
            )

    lse_input = _leaf(rng, [3, 4], -3.0, 3.0)
    cases.append(("log_sum_exp", lambda: reduce("sum", log_sum_exp(lse_input, axis=1) * Tensor([1.0, 2.0, 3.0])), [lse_input]))
    t_input = _leaf(rng, [3, 4])
    cases.append(("transpose", lambda: reduce("sum", map_unary("square", transpose(t_input)) * Tensor(np.arange(3.0))), [t_input]))
    c_first, c_second = _leaf(rng, [2, 3]), _leaf(rng, [2, 3])
    for axis in (0, 1):
        cases.append(
            (
                f"concat:{axis}",
                lambda axis=axis: reduce("sum", map_unary("square", concat([c_first, c_second], axis=axis))),
                [c_first, c_second],
            )
        )
    clip_input = Tensor(np.array([[-2.0, -0.5, 0.3], [0.6, 1.7, -0.2]]), requires_grad=True)
    cases.append(("clip", lambda: reduce("sum", map_unary("square", clip(clip_input, -1.0, 1.0))), [clip_input]))

    loss_rng = substream(seed, "gradcheck/losses")
    view1, view2 = _leaf(loss_rng, [4, 3]), _leaf(loss_rng, [4, 3])
    cases.append(("loss:info_nce", lambda: info_nce(view1, view2, 0.5), [view1, view2]))
    mu, logvar = _leaf(loss_rng, [4, 2]), _leaf(loss_rng, [4, 2])
    cases.append(("loss:gaussian_kl", lambda: gaussian_kl(mu, logvar), [mu, logvar]))
    x, x_hat = _leaf(loss_rng, [4, 3]), _leaf(loss_rng, [4, 3])
    cases.append(("loss:recon_nll", lambda: recon_nll(x, x_hat), [x, x_hat]))
    cases.append(("loss:elbo", lambda: elbo_loss(x, x_hat, mu, logvar), [x_hat, mu, logvar]))

    cases.append(_objective_case(seed))
    return cases


def _lift_hidden_biases(layers: List[LinearParams], rows: np.ndarray, margin: float) -> np.ndarray:
    """Raise the bias of every ReLU-fed layer until all its pre-activations on rows are >= margin.

    Returns:
        np.ndarray: Output of the chain for rows, after lifting
    """
    h = rows
    for index, layer in enumerate(layers):
        pre = h @ layer.weights.data + layer.bias.data
        if index == len(layers) - 1:
            return pre
        layer.bias.data = layer.bias.data + np.maximum(0.0, margin - pre.min(axis=0))
        h = np.maximum(h @ layer.weights.data + layer.bias.data, 0.0)
    return h


def _activate_check_units(bundle: ModelBundle, batch: Tensor, aug: AugmentConfig, seed: int, stream: str) -> None:
    # Replays the view and latent draws of compute_objective(..., stream) so no ReLU sits near its kink
    view1, view2 = make_views(batch, aug, seed, name=f"{stream}/views")
    n_rows = batch.data.shape[0]
    trunk_out = _lift_hidden_biases(
        bundle.trunk, np.vstack([batch.data, view1.data, view2.data]), GRADCHECK_RELU_MARGIN
    )
    _lift_hidden_biases(bundle.projection, trunk_out[n_rows:], GRADCHECK_RELU_MARGIN)

    clean = trunk_out[:n_rows]
    mu = clean @ bundle.mu_head.weights.data + bundle.mu_head.bias.data
    logvar = clean @ bundle.logvar_head.weights.data + bundle.logvar_head.bias.data
    if logvar.min() <= LOGVAR_MIN or logvar.max() >= LOGVAR_MAX:
        bundle.logvar_head.weights.data = bundle.logvar_head.weights.data * 0.1
        logvar = clean @ bundle.logvar_head.weights.data + bundle.logvar_head.bias.data
    noise = substream(seed, f"{stream}/latent").standard_normal(size=mu.shape)
    _lift_hidden_biases(bundle.decoder, mu + np.exp(0.5 * logvar) * noise, GRADCHECK_RELU_MARGIN)


def _objective_case(seed: int):
    bundle = init_model(ModelDims(input_dim=3, hidden_dims=[4], latent_dim=2, projection_dim=2), seed)
    batch = Tensor(substream(seed, "gradcheck/batch").normal(size=(4, 3)))
    weights = LossWeights(1.0, 1.0, 0.5)
    aug = AugmentConfig(noise_sigma=0.1)
    _activate_check_units(bundle, batch, aug, seed, "gradcheck")
    params = list(bundle.parameters().values())
    objective: Callable[[], Tensor] = lambda: compute_objective(bundle, batch, weights, aug, seed, "gradcheck").objective
    return ("objective:end_to_end", objective, params)


def run_gradient_suite(
    seed: int = 0, eps: float = GRADCHECK_EPS, tolerance: float = GRADCHECK_TOLERANCE
) -> GradientReport:
    """Run every finite-difference check.

    Args:
        seed (int): Seed for the random check inputs
        eps (float): Finite-difference step
        tolerance (float): Largest accepted relative error

    Returns:
        GradientReport: Per-check errors and the overall verdict
    """
    results = []
    for name, function, inputs in _cases(seed):
        error = grad_check_many(function, inputs, eps)
        results.append(GradCheckResult(name, error, tolerance))
        logger.debug("Gradient check", extra={"check": name, "max_rel_error": error})
    report = GradientReport(results, tolerance)
    logger.info("Gradient suite finished", extra={"checks": len(results), "passed": report.passed})
    return report
