import pytest

from contrastive_variational_ssl.config import ExperimentConfig, load_config, parse_config
from contrastive_variational_ssl.errors import InvalidValue, ParseError, TableFileNotFound, UnknownKey


def test_empty_text_gives_defaults():
    config = parse_config("")
    assert config == ExperimentConfig()
    assert config.optimizer.kind == "adamw"
    assert config.optimizer.weight_decay == 0.01
    assert config.model.hidden_dims == [128, 64]


def test_parse_values_and_comments():
    config = parse_config(
        """
        # best cell of the sweep
        optimizer.kind = adamw
        optimizer.lr = 0.002   # trailing comment
        model.hidden_dims = 32, 16
        ablation.disable_variational = true
        data.path = data/train.csv
        """
    )
    assert config.optimizer.lr == 0.002
    assert config.model.hidden_dims == [32, 16]
    assert config.ablation.disable_variational is True
    assert config.data.path == "data/train.csv"


def test_weight_decay_follows_optimizer_kind():
    assert parse_config("optimizer.kind = adam").optimizer.weight_decay == 0.0
    assert parse_config("optimizer.kind = sgd\noptimizer.weight_decay = 0.1").optimizer.weight_decay == 0.1


def test_misspelled_key_is_rejected():
    with pytest.raises(UnknownKey):
        parse_config("optimzer.lr = 1")
    with pytest.raises(UnknownKey):
        parse_config("optimizer.learning_rate = 0.1")


@pytest.mark.parametrize(
    "text, line",
    [
        ("optimizer.lr 0.1", 1),
        ("run.seed = 1\nseed = 2", 2),
        ("run.seed = 1\n\nrun.seed = 2", 3),
    ],
)
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(ParseError) as error:
        parse_config(text)
    assert error.value.line_number == line
    assert str(error.value).startswith(f"line {line}:")


@pytest.mark.parametrize(
    "text, key",
    [
        ("optimizer.lr = 1.5", "optimizer.lr"),
        ("loss.tau = 0", "loss.tau"),
        ("training.batch_size = 1", "training.batch_size"),
        ("evaluation.cv_folds = 1", "evaluation.cv_folds"),
        ("run.seed = abc", "run.seed"),
        ("augment.smote = maybe", "augment.smote"),
        ("optimizer.kind = rmsprop", "optimizer.kind"),
        ("data.blob_noise_features = 16", "data.blob_noise_features"),
    ],
)
def test_invalid_values_name_the_key(text, key):
    with pytest.raises(InvalidValue, match=key):
        parse_config(text)


def test_resolved_text_roundtrip():
    config = parse_config("optimizer.kind = sgd\noptimizer.lr = 0.005\nmodel.hidden_dims = 8\ndata.source = blobs")
    assert parse_config(config.to_text()) == config
    assert "optimizer.weight_decay = 0.0" in config.to_text()
    assert "data.path = \n" in config.to_text()


def test_fingerprint_tracks_resolved_values():
    base = ExperimentConfig()
    assert base.fingerprint() == parse_config("").fingerprint()
    assert len(base.fingerprint()) == 16
    assert base.fingerprint() != base.with_overrides({"run.seed": 1}).fingerprint()


def test_with_overrides_returns_new_config():
    base = ExperimentConfig()
    changed = base.with_overrides({"optimizer.kind": "sgd", "optimizer.lr": "0.01"})
    assert base.optimizer.kind == "adamw"
    assert changed.optimizer.kind == "sgd"
    assert changed.optimizer.lr == 0.01
    assert changed.optimizer.weight_decay == 0.0
    with pytest.raises(UnknownKey):
        base.with_overrides({"run.sead": 1})


def test_load_config(tmp_path):
    path = tmp_path / "experiment.conf"
    path.write_text("run.seed = 4\n", encoding="utf-8")
    assert load_config(str(path)).run.seed == 4
    with pytest.raises(TableFileNotFound):
        load_config(str(tmp_path / "missing.conf"))


def test_explicit_weight_decay_survives_kind_override():
    explicit = parse_config("optimizer.kind = adamw\noptimizer.weight_decay = 0.05")
    assert explicit.with_overrides({"optimizer.kind": "adam"}).optimizer.weight_decay == 0.05
    assert explicit.with_overrides({"run.seed": 2}).with_overrides({"optimizer.kind": "sgd"}).optimizer.weight_decay == 0.05

    implicit = parse_config("optimizer.kind = adamw")
    assert implicit.with_overrides({"run.seed": 2}).with_overrides({"optimizer.kind": "sgd"}).optimizer.weight_decay == 0.0
    assert implicit.with_overrides({"optimizer.kind": "adam", "optimizer.weight_decay": 0.2}).optimizer.weight_decay == 0.2
