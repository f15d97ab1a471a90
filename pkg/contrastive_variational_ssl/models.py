"""
Model domain types: the shared encoder trunk, the contrastive projection head,
the VAE posterior heads and the decoder, plus initialization, forward passes,
reparameterized sampling and checkpoint I/O.
"""

import io
import json
import re
from typing import Any, Dict, List, Tuple

import numpy as np
from aws_lambda_powertools import Logger

from .autodiff import Tensor, as_tensor, clip, map_unary, matmul
from .constants import LOGVAR_MAX, LOGVAR_MIN, SERVICE_NAME
from .errors import CheckpointError, InvalidDims, ShapeMismatch
from .seeding import substream
from .storage import write_bytes_atomic

logger = Logger(service=SERVICE_NAME, child=True)

DIMS_KEY = "__dims__"
_PARAM_KEY = re.compile(r"^(trunk|projection|decoder)\.(\d+)\.(weights|bias)$")


class ModelDims:
    """
    Architecture record: input width, trunk widths, latent and projection widths
    """

    def __init__(self, input_dim: int, hidden_dims: List[int], latent_dim: int, projection_dim: int):
        """
        Initialize a ModelDims

        Args:
            input_dim (int): Width of the standardized feature vector
            hidden_dims (List[int]): Trunk layer widths; the last one is the representation width
            latent_dim (int): VAE latent width
            projection_dim (int): Contrastive projection width

        Raises:
            InvalidDims: If any width is below 1 or no trunk layer is given
        """
        self.input_dim = int(input_dim)
        self.hidden_dims = [int(h) for h in hidden_dims]
        self.latent_dim = int(latent_dim)
        self.projection_dim = int(projection_dim)
        if not self.hidden_dims:
            raise InvalidDims("at least one trunk layer width is required")
        widths = [self.input_dim, self.latent_dim, self.projection_dim] + self.hidden_dims
        if any(w < 1 for w in widths):
            raise InvalidDims(f"all dims must be >= 1, got {self.to_dict()}")

    @property
    def trunk_out(self) -> int:
        return self.hidden_dims[-1]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "latent_dim": self.latent_dim,
            "projection_dim": self.projection_dim,
        }

    def __eq__(self, other) -> bool:
        return isinstance(other, ModelDims) and self.to_dict() == other.to_dict()


class LinearParams:
    """
    Affine layer parameters: weights [in_dim, out_dim] and bias [out_dim]
    """

    def __init__(self, weights: Tensor, bias: Tensor):
        if weights.ndim != 2 or bias.ndim != 1 or bias.shape[0] != weights.shape[1]:
            raise ShapeMismatch(f"inconsistent layer shapes: weights {weights.shape}, bias {bias.shape}")
        self.weights = weights
        self.bias = bias

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"layer expects width {self.in_dim}, got input of shape {x.shape}")
        return matmul(x, self.weights) + self.bias

    def copy(self) -> "LinearParams":
        return LinearParams(
            Tensor(self.weights.data.copy(), requires_grad=self.weights.requires_grad),
            Tensor(self.bias.data.copy(), requires_grad=self.bias.requires_grad),
        )


class ModelBundle:
    """
    All trainable parameters: encoder trunk, projection head, posterior heads and decoder
    """

    def __init__(
        self,
        trunk: List[LinearParams],
        projection: List[LinearParams],
        mu_head: LinearParams,
        logvar_head: LinearParams,
        decoder: List[LinearParams],
        dims: ModelDims,
    ):
        """
        Initialize a ModelBundle

        Args:
            trunk (List[LinearParams]): Shared encoder body
            projection (List[LinearParams]): Contrastive head
            mu_head (LinearParams): Posterior mean head
            logvar_head (LinearParams): Posterior log-variance head
            decoder (List[LinearParams]): Generative decoder
            dims (ModelDims): Architecture record

        Raises:
            ShapeMismatch: If the layer chain is inconsistent with dims
        """
        self.trunk = trunk
        self.projection = projection
        self.mu_head = mu_head
        self.logvar_head = logvar_head
        self.decoder = decoder
        self.dims = dims
        self._validate()

    def _validate(self) -> None:
        if not self.trunk or not self.projection or not self.decoder:
            raise ShapeMismatch("trunk, projection and decoder need at least one layer each")
        _check_chain("trunk", self.trunk, self.dims.input_dim)
        trunk_out = self.trunk[-1].out_dim
        _check_chain("projection", self.projection, trunk_out)
        for name, head in (("mu_head", self.mu_head), ("logvar_head", self.logvar_head)):
            if head.in_dim != trunk_out or head.out_dim != self.dims.latent_dim:
                raise ShapeMismatch(f"{name} must map {trunk_out} -> {self.dims.latent_dim}")
        _check_chain("decoder", self.decoder, self.dims.latent_dim)
        if self.decoder[-1].out_dim != self.dims.input_dim:
            raise ShapeMismatch("decoder output width must equal input_dim")

    def parameters(self, contrastive: bool = True, variational: bool = True) -> Dict[str, Tensor]:
        """Named parameters of the parts used by the active objective terms.

        Args:
            contrastive (bool): Include the trunk and projection head
            variational (bool): Include the trunk, posterior heads and decoder

        Returns:
            Dict[str, Tensor]: Parameter name to tensor, in a fixed order
        """
        named: Dict[str, Tensor] = {}
        if contrastive or variational:
            _add_layers(named, "trunk", self.trunk)
        if contrastive:
            _add_layers(named, "projection", self.projection)
        if variational:
            for name, head in (("mu_head", self.mu_head), ("logvar_head", self.logvar_head)):
                named[f"{name}.weights"] = head.weights
                named[f"{name}.bias"] = head.bias
            _add_layers(named, "decoder", self.decoder)
        return named

    def copy(self) -> "ModelBundle":
        """Deep copy, e.g. a frozen snapshot for evaluation."""
        return ModelBundle(
            trunk=[layer.copy() for layer in self.trunk],
            projection=[layer.copy() for layer in self.projection],
            mu_head=self.mu_head.copy(),
            logvar_head=self.logvar_head.copy(),
            decoder=[layer.copy() for layer in self.decoder],
            dims=ModelDims(**self.dims.to_dict()),
        )

    def to_dict(self) -> Dict[str, Any]:
        """Convert the bundle to a name -> array dictionary.

        Returns:
            Dict[str, Any]: Every parameter array plus the dims record under DIMS_KEY
        """
        arrays: Dict[str, Any] = {name: t.data for name, t in self.parameters().items()}
        arrays[DIMS_KEY] = self.dims.to_dict()
        return arrays


def _check_chain(name: str, layers: List[LinearParams], in_dim: int) -> None:
    width = in_dim
    for index, layer in enumerate(layers):
        if layer.in_dim != width:
            raise ShapeMismatch(f"{name}[{index}] expects width {layer.in_dim}, receives {width}")
        width = layer.out_dim


def _add_layers(named: Dict[str, Tensor], prefix: str, layers: List[LinearParams]) -> None:
    for index, layer in enumerate(layers):
        named[f"{prefix}.{index}.weights"] = layer.weights
        named[f"{prefix}.{index}.bias"] = layer.bias


def _glorot_layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> LinearParams:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    weights = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    return LinearParams(Tensor(weights, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True))


def _mlp(rng: np.random.Generator, widths: List[int]) -> List[LinearParams]:
    return [_glorot_layer(rng, widths[i], widths[i + 1]) for i in range(len(widths) - 1)]


def init_model(dims: ModelDims, seed: int) -> ModelBundle:
    """Create a Glorot-uniform initialized bundle with zero biases.

    Args:
        dims (ModelDims): Architecture record
        seed (int): Seed; the same (dims, seed) gives a bit-identical bundle

    Returns:
        ModelBundle: Freshly initialized parameters
    """
    if not isinstance(dims, ModelDims):
        dims = ModelDims(**dims)
    rng = substream(seed, "init")
    trunk_out = dims.trunk_out
    trunk = _mlp(rng, [dims.input_dim] + dims.hidden_dims)
    projection = _mlp(rng, [trunk_out, trunk_out, dims.projection_dim])
    mu_head = _glorot_layer(rng, trunk_out, dims.latent_dim)
    logvar_head = _glorot_layer(rng, trunk_out, dims.latent_dim)
    decoder = _mlp(rng, [dims.latent_dim] + list(reversed(dims.hidden_dims)) + [dims.input_dim])
    logger.debug("Initialized model", extra={"dims": dims.to_dict(), "seed": seed})
    return ModelBundle(trunk, projection, mu_head, logvar_head, decoder, dims)


def _run_mlp(layers: List[LinearParams], x: Tensor) -> Tensor:
    h = x
    for index, layer in enumerate(layers):
        h = layer.forward(h)
        if index < len(layers) - 1:
            h = map_unary("relu", h)
    return h


def encode(bundle: ModelBundle, x: Tensor) -> Tensor:
    """Trunk forward pass z = f_θ(x): ReLU between layers, linear last layer."""
    if x.ndim != 2 or x.shape[1] != bundle.dims.input_dim:
        raise ShapeMismatch(f"encode expects [B, {bundle.dims.input_dim}], got {x.shape}")
    return _run_mlp(bundle.trunk, x)


def project(bundle: ModelBundle, h: Tensor) -> Tensor:
    """Contrastive projection head applied to trunk output."""
    return _run_mlp(bundle.projection, h)


def vae_encode(bundle: ModelBundle, h: Tensor) -> Tuple[Tensor, Tensor]:
    """Posterior heads on the trunk output.

    Args:
        bundle (ModelBundle): Model parameters
        h (Tensor): Trunk output [B, trunk_out]

    Returns:
        Tuple[Tensor, Tensor]: (mu, logvar), logvar clamped to [-10, 10]
    """
    mu = bundle.mu_head.forward(h)
    logvar = clip(bundle.logvar_head.forward(h), LOGVAR_MIN, LOGVAR_MAX)
    return mu, logvar


def reparameterize(mu: Tensor, logvar: Tensor, noise) -> Tensor:
    """Sample z = mu + exp(0.5·logvar) ⊙ noise with caller-supplied standard normals.

    The noise is treated as a constant: gradients reach mu and logvar only.
    """
    noise_tensor = Tensor(as_tensor(noise).data, requires_grad=False)
    if mu.shape != logvar.shape or mu.shape != noise_tensor.shape:
        raise ShapeMismatch(
            f"reparameterize needs equal shapes, got mu {mu.shape}, logvar {logvar.shape}, noise {noise_tensor.shape}"
        )
    sigma = map_unary("exp", logvar * 0.5)
    return mu + sigma * noise_tensor


def decode(bundle: ModelBundle, z: Tensor) -> Tensor:
    """Decoder forward pass into standardized feature space (linear output)."""
    if z.ndim != 2 or z.shape[1] != bundle.dims.latent_dim:
        raise ShapeMismatch(f"decode expects [B, {bundle.dims.latent_dim}], got {z.shape}")
    return _run_mlp(bundle.decoder, z)


def save_checkpoint(bundle: ModelBundle, path: str) -> str:
    """Write every parameter and the dims header to an .npz archive, atomically.

    Args:
        bundle (ModelBundle): Model to save
        path (str): Destination path

    Returns:
        str: The destination path
    """
    arrays = bundle.to_dict()
    arrays[DIMS_KEY] = np.array(json.dumps(arrays[DIMS_KEY], sort_keys=True))
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    write_bytes_atomic(path, buffer.getvalue())
    logger.info(f"Saved checkpoint to {path}", extra={"parameters": len(arrays) - 1})
    return path


def load_checkpoint(path: str) -> ModelBundle:
    """Load a bundle saved by save_checkpoint; values round-trip bit-exactly.

    Args:
        path (str): Archive path

    Returns:
        ModelBundle: Restored parameters (requires_grad set)

    Raises:
        CheckpointError: If the archive is missing keys or inconsistent
    """
    try:
        with np.load(path, allow_pickle=False) as archive:
            dims = ModelDims(**json.loads(str(archive[DIMS_KEY])))
            arrays = {key: archive[key] for key in archive.files if key != DIMS_KEY}
    except KeyError as e:
        raise CheckpointError(f"checkpoint {path} has no dims header") from e
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    return create_model_bundle_from_dict(arrays, dims)


def create_model_bundle_from_dict(arrays: Dict[str, np.ndarray], dims: ModelDims) -> ModelBundle:
    """Create a ModelBundle from a parameter-name -> array mapping.

    Args:
        arrays (Dict[str, np.ndarray]): Parameter arrays keyed like ModelBundle.parameters()
        dims (ModelDims): Architecture record

    Returns:
        ModelBundle: Bundle built from the arrays
    """
    layers: Dict[str, Dict[int, Dict[str, Tensor]]] = {"trunk": {}, "projection": {}, "decoder": {}}
    heads: Dict[str, Dict[str, Tensor]] = {"mu_head": {}, "logvar_head": {}}
    for key, array in arrays.items():
        tensor = Tensor(np.array(array, dtype=np.float64), requires_grad=True)
        match = _PARAM_KEY.match(key)
        if match:
            part, index, field = match.group(1), int(match.group(2)), match.group(3)
            layers[part].setdefault(index, {})[field] = tensor
            continue
        head, _, field = key.partition(".")
        if head in heads and field in ("weights", "bias"):
            heads[head][field] = tensor
            continue
        raise CheckpointError(f"unexpected parameter '{key}'")

    def build(part: str) -> List[LinearParams]:
        entries = layers[part]
        if sorted(entries) != list(range(len(entries))):
            raise CheckpointError(f"{part} layers are not numbered contiguously")
        try:
            return [LinearParams(entries[i]["weights"], entries[i]["bias"]) for i in range(len(entries))]
        except KeyError as e:
            raise CheckpointError(f"{part} layer is missing {e}") from e

    try:
        mu_head = LinearParams(heads["mu_head"]["weights"], heads["mu_head"]["bias"])
        logvar_head = LinearParams(heads["logvar_head"]["weights"], heads["logvar_head"]["bias"])
    except KeyError as e:
        raise CheckpointError(f"posterior head is missing {e}") from e

    return ModelBundle(build("trunk"), build("projection"), mu_head, logvar_head, build("decoder"), dims)
