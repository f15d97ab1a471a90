import pytest

from contrastive_variational_ssl.config import parse_config

TINY_CONFIG = """
data.source = blobs
data.blob_rows = 60
data.blob_features = 4
data.blob_classes = 2
data.blob_std = 0.5
model.hidden_dims = 8
model.latent_dim = 2
model.projection_dim = 4
training.steps = 5
training.batch_size = 16
training.log_interval = 2
evaluation.probe_steps = 20
evaluation.cv_folds = 0
"""


@pytest.fixture
def tiny_config():
    """A blobs experiment small enough to run end to end in well under a second."""
    return parse_config(TINY_CONFIG)


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.conf"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return str(path)
