import numpy as np
import pytest

from contrastive_variational_ssl.autodiff import Tape, Tensor, backward
from contrastive_variational_ssl.errors import (
    LengthMismatch,
    NonFiniteLoss,
    NonFiniteValue,
    ShapeMismatch,
    SingleClass,
)
from contrastive_variational_ssl.harness import prepare_data
from contrastive_variational_ssl.losses import LossWeights
from contrastive_variational_ssl.data_pipeline import AugmentConfig
from contrastive_variational_ssl.models import ModelDims, encode, init_model
from contrastive_variational_ssl.train_eval import (
    LossCurve,
    compute_objective,
    cross_validate_probe,
    evaluate,
    extract_features,
    linear_probe,
    pretrain,
    resolve_augment,
    resolve_loss_weights,
    validation_loss,
)


@pytest.fixture
def tiny_data(tiny_config):
    return prepare_data(tiny_config)


@pytest.fixture
def separable():
    rng = np.random.default_rng(0)
    features = np.vstack([rng.normal(-2.0, 0.3, size=(20, 2)), rng.normal(2.0, 0.3, size=(20, 2))])
    labels = ["neg"] * 20 + ["pos"] * 20
    return features, labels


def test_loss_curve_rules():
    curve = LossCurve()
    curve.append(1, 2.0, 2.1, 1.0, 0.8, 0.2)
    with pytest.raises(ShapeMismatch):
        curve.append(1, 1.0, 1.0, 1.0, 0.0, 0.0)
    with pytest.raises(NonFiniteLoss) as error:
        curve.append(2, float("nan"), 1.0, 1.0, 0.0, 0.0)
    assert error.value.step == 2
    assert list(curve.to_frame().columns) == ["step", "train_loss", "val_loss", "nce", "recon_nll", "kl"]


def test_evaluate_all_correct():
    report = evaluate(["a", "b", "c"], ["a", "b", "c"])
    assert report.accuracy == 1.0
    assert report.macro_f1 == 1.0


def test_evaluate_binary_hand_counts():
    labels = ["1", "1", "1", "0", "0", "0"]
    predictions = ["1", "1", "0", "1", "0", "0"]
    report = evaluate(predictions, labels)
    assert report.accuracy == pytest.approx(4 / 6)
    assert report.confusion.tolist() == [[2, 1], [1, 2]]
    assert report.macro_precision == pytest.approx(2 / 3)
    assert report.macro_recall == pytest.approx(2 / 3)
    assert report.macro_f1 == pytest.approx(2 / 3)


def test_evaluate_unpredicted_class_scores_zero_precision():
    report = evaluate(["a", "b", "b"], ["a", "b", "c"])
    assert report.macro_precision == pytest.approx((1.0 + 0.5 + 0.0) / 3)
    assert report.accuracy * report.confusion.sum() == np.trace(report.confusion)


def test_evaluate_length_mismatch():
    with pytest.raises(LengthMismatch):
        evaluate(["a"], ["a", "b"])
    with pytest.raises(LengthMismatch):
        evaluate([], [])


def test_linear_probe_separates_classes(tiny_config, separable):
    features, labels = separable
    config = tiny_config.with_overrides({"evaluation.probe_steps": 500})
    probe = linear_probe(features, labels, config)
    assert probe.predict(features) == labels
    np.testing.assert_allclose(probe.predict_proba(features).sum(axis=1), 1.0)


def test_linear_probe_is_deterministic(tiny_config, separable):
    features, labels = separable
    first = linear_probe(features, labels, tiny_config)
    second = linear_probe(features, labels, tiny_config)
    assert np.array_equal(first.weights, second.weights)
    assert np.array_equal(first.bias, second.bias)


def test_linear_probe_needs_two_classes(tiny_config):
    with pytest.raises(SingleClass):
        linear_probe(np.zeros((3, 2)), ["a", "a", "a"], tiny_config)


def test_linear_probe_with_smote(tiny_config):
    rng = np.random.default_rng(1)
    features = np.vstack([rng.normal(-2.0, 0.3, size=(12, 2)), rng.normal(2.0, 0.3, size=(3, 2))])
    labels = ["major"] * 12 + ["minor"] * 3
    config = tiny_config.with_overrides({"augment.smote": True, "augment.smote_k": 2, "evaluation.probe_steps": 200})
    assert linear_probe(features, labels, config).predict(features) == labels


def test_ablation_switches_resolve(tiny_config):
    config = tiny_config.with_overrides(
        {"ablation.disable_contrastive": True, "ablation.disable_augmentation": True, "augment.smote": True}
    )
    weights = resolve_loss_weights(config)
    assert weights.lambda1 == 0.0 and weights.lambda2 == 1.0
    aug = resolve_augment(config)
    assert aug.noise_sigma == 0.0 and aug.mask_prob == 0.0 and not aug.smote


def test_compute_objective_skips_zero_weight_terms():
    bundle = init_model(ModelDims(3, [4], 2, 2), 0)
    x = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    aug = AugmentConfig(noise_sigma=0.1)
    variational_only = compute_objective(bundle, x, LossWeights(0.0, 1.0, 0.5), aug, 0, "test")
    assert variational_only.nce == 0.0
    assert variational_only.total == pytest.approx(variational_only.recon_nll + variational_only.kl)
    contrastive_only = compute_objective(bundle, x, LossWeights(1.0, 0.0, 0.5), aug, 0, "test")
    assert contrastive_only.recon_nll == 0.0 and contrastive_only.kl == 0.0
    assert contrastive_only.total == pytest.approx(contrastive_only.nce)


def objective_gradients(bundle, x, weights, aug):
    params = bundle.parameters()
    for tensor in params.values():
        tensor.zero_grad()
    with Tape() as tape:
        loss = compute_objective(bundle, x, weights, aug, 0, "test").objective
        backward(tape, loss)
    return {name: np.zeros_like(t.data) if t.grad is None else t.grad.copy() for name, t in params.items()}


def test_objective_gradient_is_weighted_sum_of_term_gradients():
    bundle = init_model(ModelDims(3, [5, 4], 2, 3), 1)
    x = Tensor(np.random.default_rng(1).normal(size=(6, 3)))
    aug = AugmentConfig(noise_sigma=0.1, mask_prob=0.1)
    nce_grads = objective_gradients(bundle, x, LossWeights(1.0, 0.0, 0.5), aug)
    elbo_grads = objective_gradients(bundle, x, LossWeights(0.0, 1.0, 0.5), aug)
    total_grads = objective_gradients(bundle, x, LossWeights(0.7, 1.3, 0.5), aug)
    for name, grad in total_grads.items():
        np.testing.assert_allclose(grad, 0.7 * nce_grads[name] + 1.3 * elbo_grads[name], rtol=0, atol=1e-9)


def test_contrastive_only_objective_leaves_variational_parts_untouched():
    bundle = init_model(ModelDims(3, [4], 2, 2), 2)
    x = Tensor(np.random.default_rng(2).normal(size=(5, 3)))
    grads = objective_gradients(bundle, x, LossWeights(1.0, 0.0, 0.5), AugmentConfig(noise_sigma=0.1))
    variational = [name for name in grads if name.split(".")[0] in ("decoder", "mu_head", "logvar_head")]
    assert variational
    for name in variational:
        assert not np.any(grads[name]), name
    assert any(np.any(grads[name]) for name in grads if name.startswith("projection"))


def test_pretrain_logs_expected_steps(tiny_config, tiny_data):
    _, curve = pretrain(tiny_config, tiny_data.pretrain_x, tiny_data.val_x)
    frame = curve.to_frame()
    assert frame["step"].tolist() == [1, 2, 4, 5]
    assert np.isfinite(frame.drop(columns="step").to_numpy()).all()


def test_pretrain_is_deterministic(tiny_config, tiny_data):
    first_bundle, first_curve = pretrain(tiny_config, tiny_data.pretrain_x, tiny_data.val_x)
    second_bundle, second_curve = pretrain(tiny_config, tiny_data.pretrain_x, tiny_data.val_x)
    assert first_curve.entries == second_curve.entries
    second_params = second_bundle.parameters()
    for name, tensor in first_bundle.parameters().items():
        assert tensor.data.tobytes() == second_params[name].data.tobytes()


def test_pretrain_leaves_disabled_parts_untouched(tiny_config, tiny_data):
    config = tiny_config.with_overrides({"ablation.disable_variational": True})
    dims = ModelDims(tiny_data.width, [8], 2, 4)
    initial = init_model(dims, config.run.seed)
    trained, curve = pretrain(config, tiny_data.pretrain_x, tiny_data.val_x, bundle=init_model(dims, config.run.seed))
    assert np.array_equal(trained.decoder[0].weights.data, initial.decoder[0].weights.data)
    assert not np.array_equal(trained.trunk[0].weights.data, initial.trunk[0].weights.data)
    assert all(entry["kl"] == 0.0 for entry in curve.entries)


def test_validation_loss_repeats_its_noise(tiny_config, tiny_data):
    bundle = init_model(ModelDims(tiny_data.width, [8], 2, 4), 0)
    weights = resolve_loss_weights(tiny_config)
    aug = resolve_augment(tiny_config)
    first = validation_loss(bundle, tiny_data.val_x, weights, aug, 0, 4)
    assert validation_loss(bundle, tiny_data.val_x, weights, aug, 0, 4) == first
    assert validation_loss(bundle, tiny_data.val_x, weights, aug, 1, 4) != first


def test_frozen_parameters_give_a_flat_validation_curve(mocker, tiny_config, tiny_data):
    mocker.patch("contrastive_variational_ssl.train_eval.step")
    _, curve = pretrain(tiny_config, tiny_data.pretrain_x, tiny_data.val_x)
    val_losses = curve.to_frame()["val_loss"].tolist()
    assert len(val_losses) == 4
    assert val_losses == [val_losses[0]] * 4


def test_pretrain_reports_divergence_step(mocker, tiny_config, tiny_data):
    mocker.patch(
        "contrastive_variational_ssl.train_eval.compute_objective",
        side_effect=NonFiniteValue("exp: result holds NaN or Inf"),
    )
    with pytest.raises(NonFiniteLoss) as error:
        pretrain(tiny_config, tiny_data.pretrain_x, tiny_data.val_x)
    assert error.value.step == 1


def test_extract_features_matches_encoder(tiny_data):
    bundle = init_model(ModelDims(tiny_data.width, [8], 2, 4), 0)
    features = extract_features(bundle, tiny_data.test_x)
    assert not features.requires_grad
    assert np.array_equal(features.data, encode(bundle, tiny_data.test_x).data)


def test_cross_validate_probe(tiny_config, separable):
    features, labels = separable
    reports = cross_validate_probe(features, labels, 4, tiny_config)
    assert len(reports) == 4
    assert sum(int(r.confusion.sum()) for r in reports) == len(labels)
