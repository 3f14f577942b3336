"""
Detector contract and a small reference network.

A detector maps a grayscale image to a same-resolution probability map.
The reference network is a miniature feature pyramid: a full-resolution
stem, `scales` stride-2 stages, 1x1 lateral projections, a top-down path
that upsamples and adds coarser features into finer ones, a 3x3 fusion
conv and a 1x1 sigmoid head.

Weights travel as a ModelCheckpoint: a flat parameter vector plus an
architecture id from which the network can be rebuilt.
"""

import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Sequence, Tuple, Type, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from fracture_distill.errors import ConfigError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

ACTIVATIONS: Dict[str, Type[nn.Module]] = {
    "relu": nn.ReLU,
    "tanh": nn.Tanh,
    "elu": nn.ELU,
}

INITIAL_OUTPUT = 0.1

CHECKPOINT_MAGIC = b"FDCKPT1\n"

LossHead = Callable[[torch.Tensor], torch.Tensor]
ImageLike = Union[np.ndarray, torch.Tensor]

_ID_PATTERN = re.compile(r"^minifpn-c(?P<c>\d+(?:x\d+)+)-f(?P<f>\d+)-k(?P<k>\d+)-(?P<a>[a-z]+)$")


def _conv_size(c_in: int, c_out: int, k: int) -> int:
    return c_out * c_in * k * k + c_out


@dataclass(frozen=True)
class ArchitectureSpec:
    """Widths and kernel of the mini feature pyramid."""

    # Stem width followed by one width per downsampling scale.
    channels: Tuple[int, ...] = (8, 16, 32)
    fpn_width: int = 24
    kernel_size: int = 3
    nonlinearity: str = "relu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) < 2:
            raise ConfigError("channels needs a stem width and at least one scale")
        if any(c < 1 for c in self.channels) or self.fpn_width < 1:
            raise ConfigError("channel widths must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.nonlinearity not in ACTIVATIONS:
            raise ConfigError(
                f"unknown nonlinearity '{self.nonlinearity}'. "
                f"Choose from: {', '.join(ACTIVATIONS)}"
            )

    @property
    def scales(self) -> int:
        return len(self.channels) - 1

    @property
    def architecture_id(self) -> str:
        widths = "x".join(str(c) for c in self.channels)
        return f"minifpn-c{widths}-f{self.fpn_width}-k{self.kernel_size}-{self.nonlinearity}"

    @classmethod
    def from_id(cls, architecture_id: str) -> "ArchitectureSpec":
        match = _ID_PATTERN.match(architecture_id)
        if match is None:
            raise ConfigError(f"unrecognized architecture id '{architecture_id}'")
        return cls(
            channels=tuple(int(c) for c in match["c"].split("x")),
            fpn_width=int(match["f"]),
            kernel_size=int(match["k"]),
            nonlinearity=match["a"],
        )

    def parameter_count(self) -> int:
        """Declared parameter count, computed without building the network."""
        k, fw = self.kernel_size, self.fpn_width
        c = self.channels
        total = _conv_size(1, c[0], k) + _conv_size(c[0], c[0], k)
        for prev, cur in zip(c[:-1], c[1:]):
            total += _conv_size(prev, cur, k) + _conv_size(cur, cur, k)
        total += sum(_conv_size(ci, fw, 1) for ci in c)
        total += _conv_size(fw, fw, k) + _conv_size(fw, 1, 1)
        return total


class MiniFPN(nn.Module):
    """Two-scale (by default) fully convolutional detector with top-down fusion."""

    def __init__(self, arch: ArchitectureSpec):
        super().__init__()
        self.arch = arch
        act = ACTIVATIONS[arch.nonlinearity]
        k, pad = arch.kernel_size, arch.kernel_size // 2
        c = arch.channels

        self.stem = nn.Sequential(
            nn.Conv2d(1, c[0], k, padding=pad), act(),
            nn.Conv2d(c[0], c[0], k, padding=pad), act(),
        )
        self.stages = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(prev, cur, k, stride=2, padding=pad), act(),
                nn.Conv2d(cur, cur, k, padding=pad), act(),
            )
            for prev, cur in zip(c[:-1], c[1:])
        )
        self.laterals = nn.ModuleList(nn.Conv2d(ci, arch.fpn_width, 1) for ci in c)
        self.fuse = nn.Sequential(
            nn.Conv2d(arch.fpn_width, arch.fpn_width, k, padding=pad), act()
        )
        self.head = nn.Conv2d(arch.fpn_width, 1, 1)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        features = [self.stem(x)]
        for stage in self.stages:
            features.append(stage(features[-1]))
        laterals = [proj(f) for proj, f in zip(self.laterals, features)]
        top = laterals[-1]
        for lateral in reversed(laterals[:-1]):
            top = lateral + F.interpolate(top, size=lateral.shape[-2:], mode="nearest")
        return self.head(self.fuse(top))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 1, H, W) images -> (B, 1, H, W) probabilities."""
        return torch.sigmoid(self.logits(x))


@dataclass(eq=False)
class ModelCheckpoint:
    """Flat parameter vector tagged with its architecture and training step."""

    parameters: np.ndarray
    architecture_id: str
    step_index: int = 0
    arch: ArchitectureSpec = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.arch = ArchitectureSpec.from_id(self.architecture_id)
        self.parameters = np.asarray(self.parameters)
        if self.parameters.ndim != 1:
            raise ShapeError("checkpoint parameters must be a flat vector")
        expected = self.arch.parameter_count()
        if self.parameters.size != expected:
            raise ShapeError(
                f"{self.architecture_id} declares {expected} parameters, "
                f"got {self.parameters.size}"
            )
        if self.step_index < 0:
            raise ConfigError("step_index must be non-negative")

    @property
    def parameter_count(self) -> int:
        return int(self.parameters.size)

    def copy(self) -> "ModelCheckpoint":
        return ModelCheckpoint(self.parameters.copy(), self.architecture_id, self.step_index)


# =============================================================================
# Checkpoint <-> module
# =============================================================================

def build_module(checkpoint: ModelCheckpoint, dtype: torch.dtype = torch.float32) -> MiniFPN:
    """Instantiate the network and load the checkpoint's parameters."""
    module = MiniFPN(checkpoint.arch).to(dtype)
    vector = torch.as_tensor(np.array(checkpoint.parameters), dtype=dtype)
    with torch.no_grad():
        vector_to_parameters(vector, module.parameters())
    return module


def checkpoint_from_module(module: MiniFPN, step_index: int = 0) -> ModelCheckpoint:
    vector = parameters_to_vector(module.parameters()).detach().cpu().numpy().copy()
    return ModelCheckpoint(vector, module.arch.architecture_id, step_index)


def init_parameters(arch: ArchitectureSpec, seed: int) -> ModelCheckpoint:
    """
    Variance-scaled random init, deterministic given `seed`.

    Hidden convs draw N(0, gain / fan_in) with zero bias. The head starts
    near zero with its bias at logit(0.1), so a fresh model predicts a
    low probability everywhere.
    """
    generator = torch.Generator().manual_seed(int(seed))
    gain = 2.0 if arch.nonlinearity == "relu" else 1.0
    module = MiniFPN(arch)
    with torch.no_grad():
        for name, conv in module.named_modules():
            if not isinstance(conv, nn.Conv2d):
                continue
            fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
            if name == "head":
                std = 0.01
                bias = math.log(INITIAL_OUTPUT / (1.0 - INITIAL_OUTPUT))
            else:
                std = math.sqrt(gain / fan_in)
                bias = 0.0
            conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator) * std)
            conv.bias.fill_(bias)
    return checkpoint_from_module(module, step_index=0)


# =============================================================================
# Forward passes
# =============================================================================

def as_image_batch(image: ImageLike, arch: ArchitectureSpec, dtype: torch.dtype) -> torch.Tensor:
    """Validate a 2-D image and shape it as a (1, 1, H, W) tensor."""
    tensor = torch.as_tensor(np.ascontiguousarray(image)) if isinstance(image, np.ndarray) else image
    if tensor.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {tuple(tensor.shape)}")
    check_divisible(tuple(tensor.shape), arch)
    return tensor.to(dtype).reshape(1, 1, *tensor.shape)


def check_divisible(shape: Tuple[int, ...], arch: ArchitectureSpec) -> None:
    factor = 2 ** arch.scales
    h, w = shape[-2], shape[-1]
    if h % factor or w % factor:
        raise ShapeError(
            f"image size {h}x{w} is not divisible by 2^{arch.scales}={factor}"
        )


def forward(checkpoint: ModelCheckpoint, image: ImageLike) -> np.ndarray:
    """Probability map of one image, same spatial size, float32."""
    module = build_module(checkpoint)
    batch = as_image_batch(image, checkpoint.arch, torch.float32)
    with torch.no_grad():
        probabilities = module(batch)
    return probabilities[0, 0].numpy()


def predict_maps(
    model: Union[ModelCheckpoint, MiniFPN],
    images: Sequence[np.ndarray],
    batch_size: int = 64,
) -> np.ndarray:
    """Probability maps of a list of equally sized images, as a float64 (N, H, W) stack."""
    module = build_module(model) if isinstance(model, ModelCheckpoint) else model
    dtype = next(module.parameters()).dtype
    if len(images) == 0:
        return np.empty((0, 0, 0), dtype=np.float64)
    check_divisible(images[0].shape, module.arch)
    maps = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            chunk = np.stack(images[start : start + batch_size])[:, None]
            batch = torch.as_tensor(np.ascontiguousarray(chunk)).to(dtype)
            maps.append(module(batch)[:, 0].to(torch.float64).numpy())
    return np.concatenate(maps)


def forward_with_gradients(
    checkpoint: ModelCheckpoint,
    image: ImageLike,
    loss_tail: LossHead,
    dtype: torch.dtype = torch.float64,
) -> Tuple[float, np.ndarray]:
    """
    Loss of one image under `loss_tail` and its gradient w.r.t. every parameter.

    `loss_tail` receives the (H, W) probability map and returns a scalar.
    Runs in float64 by default so the gradient can be compared against
    finite differences.
    """
    module = build_module(checkpoint, dtype=dtype)
    batch = as_image_batch(image, checkpoint.arch, dtype)
    prediction = module(batch)[0, 0]
    loss = loss_tail(prediction)
    if loss.ndim != 0:
        raise ShapeError("loss head must return a scalar")
    if not torch.isfinite(loss):
        raise NumericalError(
            "non-finite loss",
            {
                "loss": float(loss.detach()),
                "prediction_min": float(prediction.detach().min()),
                "prediction_max": float(prediction.detach().max()),
            },
        )
    module.zero_grad()
    loss.backward()
    gradient = torch.cat([p.grad.reshape(-1) for p in module.parameters()])
    return float(loss.detach()), gradient.detach().numpy().copy()


# =============================================================================
# Serialization
# =============================================================================

def checkpoint_to_bytes(checkpoint: ModelCheckpoint) -> bytes:
    header = {
        "architecture_id": checkpoint.architecture_id,
        "parameter_count": checkpoint.parameter_count,
        "step_index": checkpoint.step_index,
    }
    block = np.asarray(checkpoint.parameters, dtype="<f4").tobytes()
    return CHECKPOINT_MAGIC + json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + block


def checkpoint_from_bytes(payload: bytes) -> ModelCheckpoint:
    if not payload.startswith(CHECKPOINT_MAGIC):
        raise ConfigError("not a fracture-distill checkpoint")
    rest = payload[len(CHECKPOINT_MAGIC):]
    header_line, _, block = rest.partition(b"\n")
    header = json.loads(header_line.decode("utf-8"))
    count = int(header["parameter_count"])
    if len(block) != 4 * count:
        raise ShapeError(f"checkpoint block holds {len(block) // 4} values, header says {count}")
    parameters = np.frombuffer(block, dtype="<f4", count=count).astype(np.float32)
    return ModelCheckpoint(parameters, header["architecture_id"], int(header["step_index"]))


def save_checkpoint(checkpoint: ModelCheckpoint, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_to_bytes(checkpoint))
    return path


def load_checkpoint(path: Path) -> ModelCheckpoint:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return checkpoint_from_bytes(path.read_bytes())
