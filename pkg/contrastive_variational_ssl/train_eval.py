"""
Self-supervised pretraining on the combined objective, loss-curve capture,
frozen-feature extraction, the linear-probe classifier and classification
metrics.
"""

from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from aws_lambda_powertools import Logger
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from .autodiff import Tape, Tensor, backward, log_sum_exp, matmul, no_grad, reduce
from .config import ExperimentConfig
from .constants import LOSS_CURVE_COLUMNS, SERVICE_NAME, STD_FLOOR
from .data_pipeline import AugmentConfig, kfold, make_views, smote
from .errors import (
    BatchTooSmall,
    DomainError,
    LengthMismatch,
    NonFiniteGradient,
    NonFiniteLoss,
    NonFiniteValue,
    ShapeMismatch,
    SingleClass,
)
from .losses import LossBreakdown, LossWeights, elbo_terms, info_nce, total_loss
from .models import ModelBundle, ModelDims, decode, encode, init_model, project, reparameterize, vae_encode
from .optim import make_optimizer, step
from .seeding import substream
from .storage import write_text_atomic

logger = Logger(service=SERVICE_NAME, child=True)


class LossCurve:
    """
    Ordered loss records logged during pretraining
    """

    def __init__(self):
        self.entries: List[Dict[str, float]] = []

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, step: int, train_loss: float, val_loss: float, nce: float, recon_nll: float, kl: float) -> None:
        """Add one record.

        Raises:
            ShapeMismatch: If the step does not increase
            NonFiniteLoss: If any value is not finite
        """
        if self.entries and step <= self.entries[-1]["step"]:
            raise ShapeMismatch(f"loss curve steps must increase, got {step} after {self.entries[-1]['step']}")
        values = [train_loss, val_loss, nce, recon_nll, kl]
        if not all(np.isfinite(v) for v in values):
            raise NonFiniteLoss(f"non-finite loss record at step {step}", step)
        self.entries.append(dict(zip(LOSS_CURVE_COLUMNS, [int(step)] + [float(v) for v in values])))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.entries, columns=LOSS_CURVE_COLUMNS)

    def write_csv(self, path: str) -> str:
        return write_text_atomic(path, self.to_frame().to_csv(index=False))


class MetricsReport:
    """
    Confusion matrix (rows true, columns predicted) with accuracy and macro scores
    """

    def __init__(
        self,
        classes: List[Any],
        confusion: np.ndarray,
        accuracy: float,
        macro_precision: float,
        macro_recall: float,
        macro_f1: float,
    ):
        self.classes = classes
        self.confusion = confusion
        self.accuracy = accuracy
        self.macro_precision = macro_precision
        self.macro_recall = macro_recall
        self.macro_f1 = macro_f1

    def metrics(self) -> Dict[str, float]:
        """Metric values keyed like the results columns."""
        return {
            "acc": self.accuracy,
            "f1": self.macro_f1,
            "recall": self.macro_recall,
            "precision": self.macro_precision,
        }

    def to_dict(self) -> Dict[str, Any]:
        report = self.metrics()
        report["classes"] = [str(c) for c in self.classes]
        report["confusion"] = self.confusion.tolist()
        return report


def resolve_loss_weights(config: ExperimentConfig) -> LossWeights:
    """Objective weights after the ablation switches zero their terms."""
    lambda1 = 0.0 if config.ablation.disable_contrastive else config.loss.lambda1
    lambda2 = 0.0 if config.ablation.disable_variational else config.loss.lambda2
    return LossWeights(lambda1, lambda2, config.loss.tau)


def resolve_augment(config: ExperimentConfig) -> AugmentConfig:
    """View and oversampling settings; disabling augmentation zeroes noise and masking and turns SMOTE off."""
    if config.ablation.disable_augmentation:
        return AugmentConfig(noise_sigma=0.0, mask_prob=0.0, smote=False, smote_k=config.augment.smote_k)
    return AugmentConfig(
        noise_sigma=config.augment.noise_sigma,
        mask_prob=config.augment.mask_prob,
        smote=config.augment.smote,
        smote_k=config.augment.smote_k,
    )


def compute_objective(
    bundle: ModelBundle,
    x: Tensor,
    weights: LossWeights,
    aug: AugmentConfig,
    seed: int,
    stream: str,
) -> LossBreakdown:
    """Evaluate the weighted objective on one batch.

    Terms with a zero weight are skipped along with their forward passes.

    Args:
        bundle (ModelBundle): Model parameters
        x (Tensor): Standardized feature rows [B, D]
        weights (LossWeights): Effective weights and temperature
        aug (AugmentConfig): View settings
        seed (int): Run seed
        stream (str): Substream prefix for view and latent noise, unique per batch

    Returns:
        LossBreakdown: Components and the differentiable objective
    """
    nce = None
    if weights.lambda1 > 0:
        view1, view2 = make_views(x, aug, seed, name=f"{stream}/views")
        p1 = project(bundle, encode(bundle, view1))
        p2 = project(bundle, encode(bundle, view2))
        nce = info_nce(p1, p2, weights.tau)

    elbo = recon = kl = None
    if weights.lambda2 > 0:
        mu, logvar = vae_encode(bundle, encode(bundle, x))
        noise = substream(seed, f"{stream}/latent").standard_normal(size=tuple(mu.shape))
        x_hat = decode(bundle, reparameterize(mu, logvar, noise))
        recon, kl = elbo_terms(x, x_hat, mu, logvar)
        elbo = recon + kl

    return total_loss(nce, elbo, weights, recon, kl)


def _chunks(n_rows: int, size: int) -> List[np.ndarray]:
    starts = list(range(0, n_rows, size))
    chunks = [np.arange(s, min(s + size, n_rows)) for s in starts]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def validation_loss(
    bundle: ModelBundle,
    val_x: Tensor,
    weights: LossWeights,
    aug: AugmentConfig,
    seed: int,
    batch_size: int,
) -> Dict[str, float]:
    """Average objective over the validation rows in batch-sized chunks, without recording.

    View and latent noise come from the same substreams at every call, so
    successive log points differ only through the parameters.

    Returns:
        Dict[str, float]: Mean total, nce, recon_nll and kl
    """
    if val_x.shape[0] < 2:
        raise BatchTooSmall(f"validation set needs at least 2 rows, got {val_x.shape[0]}")
    sums = {"total": 0.0, "nce": 0.0, "recon_nll": 0.0, "kl": 0.0}
    chunks = _chunks(val_x.shape[0], batch_size)
    with no_grad():
        for number, rows in enumerate(chunks):
            breakdown = compute_objective(
                bundle, Tensor(val_x.data[rows]), weights, aug, seed, f"val/{number}"
            )
            for key in sums:
                sums[key] += getattr(breakdown, key)
    return {key: value / len(chunks) for key, value in sums.items()}


def pretrain(
    config: ExperimentConfig,
    train_features: Tensor,
    val_features: Tensor,
    bundle: Optional[ModelBundle] = None,
) -> Tuple[ModelBundle, LossCurve]:
    """Optimize lambda1·InfoNCE + lambda2·(−ELBO) with the configured optimizer.

    Each step samples min(batch_size, n) distinct rows, builds two views for
    the contrastive term, runs the VAE path on the clean rows, backpropagates
    and updates only the parameters of the active terms. The curve records
    step 1, every log_interval steps and the final step.

    Args:
        config (ExperimentConfig): Resolved experiment settings
        train_features (Tensor): Standardized training rows [n, D]
        val_features (Tensor): Standardized validation rows [m, D], m >= 2
        bundle (ModelBundle, optional): Starting parameters; initialized from the seed when absent

    Returns:
        Tuple[ModelBundle, LossCurve]: Trained parameters and the loss curve

    Raises:
        InvalidLossWeights: If both objective terms are disabled
        BatchTooSmall: If a batch would hold fewer than 2 rows
        NonFiniteLoss: If training diverges; carries the step index
    """
    seed = config.run.seed
    weights = resolve_loss_weights(config)
    aug = resolve_augment(config)
    if train_features.ndim != 2 or val_features.ndim != 2 or train_features.shape[1] != val_features.shape[1]:
        raise ShapeMismatch(f"feature shapes differ: {train_features.shape} vs {val_features.shape}")
    n_rows = train_features.shape[0]
    batch = min(config.training.batch_size, n_rows)
    if batch < 2:
        raise BatchTooSmall(f"training needs at least 2 rows per batch, got {batch}")

    if bundle is None:
        dims = ModelDims(
            input_dim=train_features.shape[1],
            hidden_dims=config.model.hidden_dims,
            latent_dim=config.model.latent_dim,
            projection_dim=config.model.projection_dim,
        )
        bundle = init_model(dims, seed)
    params = bundle.parameters(contrastive=weights.lambda1 > 0, variational=weights.lambda2 > 0)
    optimizer = make_optimizer(config.optimizer)
    batch_rng = substream(seed, "batches")
    steps = config.training.steps
    interval = config.training.log_interval
    curve = LossCurve()

    logger.info(
        "Starting pretraining",
        extra={"steps": steps, "batch_size": batch, "parameters": len(params), **weights.to_dict()},
    )
    for step_index in range(1, steps + 1):
        rows = batch_rng.choice(n_rows, size=batch, replace=False)
        x = Tensor(train_features.data[rows])
        try:
            with Tape() as tape:
                breakdown = compute_objective(bundle, x, weights, aug, seed, f"train/{step_index}")
                backward(tape, breakdown.objective)
            step(optimizer, params)
            if step_index == 1 or step_index % interval == 0 or step_index == steps:
                val = validation_loss(bundle, val_features, weights, aug, seed, batch)
                curve.append(step_index, breakdown.total, val["total"], breakdown.nce, breakdown.recon_nll, breakdown.kl)
                logger.info(
                    "Training progress",
                    extra={
                        "step": step_index,
                        "train_loss": breakdown.total,
                        "val_loss": val["total"],
                        "nce": breakdown.nce,
                        "recon_nll": breakdown.recon_nll,
                        "kl": breakdown.kl,
                    },
                )
        except (NonFiniteValue, NonFiniteGradient, NonFiniteLoss, DomainError) as e:
            logger.error(f"Training diverged at step {step_index}", extra={"step": step_index})
            raise NonFiniteLoss(f"objective became non-finite at step {step_index}: {e}", step_index) from e

    return bundle, curve


def extract_features(bundle: ModelBundle, features) -> Tensor:
    """Trunk representations of the rows, computed without recording."""
    x = features if isinstance(features, Tensor) else Tensor(features)
    with no_grad():
        return Tensor(encode(bundle, x).data)


class ProbeClassifier:
    """
    Multinomial logistic regression over standardized frozen features
    """

    def __init__(self, weights: np.ndarray, bias: np.ndarray, classes: List[Any], mean: np.ndarray, std: np.ndarray):
        self.weights = weights
        self.bias = bias
        self.classes = classes
        self.mean = mean
        self.std = std

    def _logits(self, features) -> np.ndarray:
        data = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != self.weights.shape[0]:
            raise ShapeMismatch(f"probe expects width {self.weights.shape[0]}, got {list(data.shape)}")
        return ((data - self.mean) / self.std) @ self.weights + self.bias

    def predict_proba(self, features) -> np.ndarray:
        logits = self._logits(features)
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)

    def predict(self, features) -> List[Any]:
        return [self.classes[i] for i in np.argmax(self._logits(features), axis=1)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "classes": [str(c) for c in self.classes],
        }


def linear_probe(train_features, train_labels: Sequence[Any], config: ExperimentConfig) -> ProbeClassifier:
    """Fit a softmax-regression probe with full-batch steps of the configured optimizer.

    SMOTE balances the classes first when enabled. Weights start at zero, so
    the result is a deterministic function of the inputs and the seed.

    Args:
        train_features (Tensor | array-like): Frozen features [n, F]
        train_labels (Sequence): One label per row
        config (ExperimentConfig): Supplies probe steps, learning rate and optimizer

    Returns:
        ProbeClassifier: Fitted classifier

    Raises:
        SingleClass: If fewer than two classes are present
    """
    data = train_features.data if isinstance(train_features, Tensor) else np.asarray(train_features, dtype=np.float64)
    labels = list(train_labels)
    if data.ndim != 2 or data.shape[0] != len(labels):
        raise LengthMismatch(f"{data.shape[0] if data.ndim else 0} feature rows but {len(labels)} labels")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise SingleClass(f"probe needs at least two classes, got {classes}")

    aug = resolve_augment(config)
    if aug.smote:
        data, labels = smote(data, labels, aug.smote_k, config.run.seed)

    mean = data.mean(axis=0)
    std = np.maximum(data.std(axis=0), STD_FLOOR)
    x = Tensor((data - mean) / std)
    index = {c: i for i, c in enumerate(classes)}
    one_hot = np.zeros((len(labels), len(classes)))
    one_hot[np.arange(len(labels)), [index[label] for label in labels]] = 1.0
    targets = Tensor(one_hot)

    weights = Tensor(np.zeros((data.shape[1], len(classes))), requires_grad=True)
    bias = Tensor(np.zeros(len(classes)), requires_grad=True)
    params = {"probe.weights": weights, "probe.bias": bias}
    optimizer = make_optimizer({"kind": config.evaluation.probe_optimizer, "lr": config.evaluation.probe_lr})
    for _ in range(config.evaluation.probe_steps):
        with Tape() as tape:
            logits = matmul(x, weights) + bias
            loss = reduce("mean", log_sum_exp(logits, axis=1) - reduce("sum", logits * targets, axis=1))
            backward(tape, loss)
        step(optimizer, params)

    logger.debug("Fitted linear probe", extra={"classes": len(classes), "rows": len(labels), "loss": loss.item()})
    return ProbeClassifier(weights.numpy(), bias.numpy(), classes, mean, std)


def evaluate(predictions: Sequence[Any], labels: Sequence[Any]) -> MetricsReport:
    """Accuracy and macro precision, recall and F1 over the observed classes.

    Args:
        predictions (Sequence): Predicted class per row
        labels (Sequence): True class per row

    Returns:
        MetricsReport: Confusion matrix over the sorted union of classes and the scores

    Raises:
        LengthMismatch: If the sequences differ in length or are empty
    """
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels) or not labels:
        raise LengthMismatch(f"{len(predictions)} predictions for {len(labels)} labels")
    classes = sorted(set(labels) | set(predictions))
    confusion = confusion_matrix(labels, predictions, labels=classes)
    precision, recall, f1, _ = precision_recall_fscore_support(
        labels, predictions, labels=classes, average="macro", zero_division=0
    )
    accuracy = float(np.trace(confusion)) / float(confusion.sum())
    return MetricsReport(classes, confusion, accuracy, float(precision), float(recall), float(f1))


def cross_validate_probe(features, labels: Sequence[Any], folds: int, config: ExperimentConfig) -> List[MetricsReport]:
    """Fit and score the probe on each of k seeded folds of the given rows.

    Args:
        features (Tensor | array-like): Frozen features [n, F]
        labels (Sequence): One label per row
        folds (int): Number of folds
        config (ExperimentConfig): Probe settings and seed

    Returns:
        List[MetricsReport]: One report per validation fold
    """
    data = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    labels = list(labels)
    reports = []
    for fold, (train_idx, val_idx) in enumerate(kfold(len(labels), folds, config.run.seed)):
        probe = linear_probe(data[train_idx], [labels[i] for i in train_idx], config)
        report = evaluate(probe.predict(data[val_idx]), [labels[i] for i in val_idx])
        logger.debug("Cross-validation fold", extra={"fold": fold, **report.metrics()})
        reports.append(report)
    return reports
