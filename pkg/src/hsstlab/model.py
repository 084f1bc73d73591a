"""Reference feature extractor and the probe/gallery parameter pair.

The network is written functionally: a :class:`NetworkParams` is just an
ordered mapping of named tensors plus the :class:`Arch` that produced it, and
:func:`forward` evaluates the embedding for any parameter set.  That keeps the
probe-net and gallery-net interchangeable (same call, different tensors) and
makes the moving-average update a plain tensor expression.

Layout (per conv block): 3x3 conv (same padding) -> ReLU -> 2x2 max-pool.
After the last block the feature map is flattened and projected to the
embedding dimension by a fully connected layer without bias, then
L2-normalized.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, DegenerateInputError, InputError

DEFAULT_EMA_WEIGHT = 0.999


@dataclass(frozen=True)
class Arch:
    """Architecture descriptor of the reference conv net."""

    input_size: int = 48
    in_channels: int = 3
    channels: tuple = (8, 16, 32)
    embedding_dim: int = 64
    kernel_size: int = 3

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        self.validate()

    def validate(self):
        sizes = {
            "input_size": self.input_size,
            "in_channels": self.in_channels,
            "embedding_dim": self.embedding_dim,
            "kernel_size": self.kernel_size,
        }
        for name, value in sizes.items():
            if int(value) <= 0:
                raise ConfigError(f"arch.{name} must be positive, got {value}")
        if not self.channels:
            raise ConfigError("arch.channels must list at least one conv block")
        for c in self.channels:
            if c <= 0:
                raise ConfigError(f"arch.channels entries must be positive, got {self.channels}")
        if self.kernel_size % 2 != 1:
            raise ConfigError("arch.kernel_size must be odd (same padding)")
        if self.input_size % (2 ** len(self.channels)) != 0:
            raise ConfigError(
                f"arch.input_size={self.input_size} is not divisible by 2**{len(self.channels)}"
            )

    @property
    def final_spatial(self) -> int:
        return self.input_size // (2 ** len(self.channels))

    def tensor_shapes(self) -> "OrderedDict[str, tuple]":
        shapes = OrderedDict()
        prev = self.in_channels
        k = self.kernel_size
        for i, c in enumerate(self.channels):
            shapes[f"conv{i}.weight"] = (c, prev, k, k)
            shapes[f"conv{i}.bias"] = (c,)
            prev = c
        shapes["fc.weight"] = (self.embedding_dim, prev * self.final_spatial**2)
        return shapes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Arch":
        known = {"input_size", "in_channels", "channels", "embedding_dim", "kernel_size"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown arch keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class NetworkParams:
    arch: Arch
    tensors: "OrderedDict[str, torch.Tensor]" = field(default_factory=OrderedDict)

    def __post_init__(self):
        expected = self.arch.tensor_shapes()
        if list(self.tensors) != list(expected):
            raise InputError(
                f"tensor names {list(self.tensors)} do not match architecture {list(expected)}"
            )
        for name, shape in expected.items():
            if tuple(self.tensors[name].shape) != shape:
                raise InputError(
                    f"tensor {name} has shape {tuple(self.tensors[name].shape)}, expected {shape}"
                )

    def clone(self) -> "NetworkParams":
        return NetworkParams(
            self.arch,
            OrderedDict((k, v.detach().clone()) for k, v in self.tensors.items()),
        )

    def to(self, dtype) -> "NetworkParams":
        return NetworkParams(
            self.arch,
            OrderedDict((k, v.detach().to(dtype).clone()) for k, v in self.tensors.items()),
        )

    def requires_grad_(self, flag: bool = True) -> "NetworkParams":
        for v in self.tensors.values():
            v.requires_grad_(flag)
        return self

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(v).all()) for v in self.tensors.values())

    def equal(self, other: "NetworkParams") -> bool:
        """Exact (bitwise) equality of architecture and every tensor."""
        if self.arch != other.arch:
            return False
        return all(torch.equal(self.tensors[k], other.tensors[k]) for k in self.tensors)

    def numpy(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.detach().cpu().numpy()) for k, v in self.tensors.items())


@dataclass
class ModelPair:
    """Probe-net and gallery-net parameters of one architecture."""

    probe: NetworkParams
    gallery: NetworkParams
    ema_weight: float = DEFAULT_EMA_WEIGHT

    def __post_init__(self):
        if self.probe.arch != self.gallery.arch:
            raise ConfigError("probe and gallery must share one architecture descriptor")
        if not 0.0 <= float(self.ema_weight) <= 1.0:
            raise ConfigError(f"ema_weight must lie in [0, 1], got {self.ema_weight}")

    @property
    def arch(self) -> Arch:
        return self.probe.arch


def init_params(seed: int, arch: Arch, dtype=torch.float32) -> NetworkParams:
    """Fan-in scaled uniform init (He-uniform bound), zero biases."""
    if not isinstance(arch, Arch):
        arch = Arch.from_dict(dict(arch))
    arch.validate()
    rng = np.random.default_rng(seed)
    tensors = OrderedDict()
    for name, shape in arch.tensor_shapes().items():
        if name.endswith(".bias"):
            values = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            values = rng.uniform(-bound, bound, size=shape)
        tensors[name] = torch.as_tensor(values, dtype=dtype)
    return NetworkParams(arch, tensors)


def init_pair(seed: int, arch: Arch = None, ema_weight: float = DEFAULT_EMA_WEIGHT) -> ModelPair:
    arch = Arch() if arch is None else arch
    probe = init_params(seed, arch)
    return ModelPair(probe=probe, gallery=probe.clone(), ema_weight=ema_weight)


def _as_nchw(images, arch: Arch, dtype) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(images) if not torch.is_tensor(images) else images)
    if x.ndim == 3:
        x = x.unsqueeze(0)
    expected = (arch.input_size, arch.input_size, arch.in_channels)
    if x.ndim != 4 or tuple(x.shape[1:]) != expected:
        raise InputError(f"images must have shape (N, {expected[0]}, {expected[1]}, {expected[2]}), got {tuple(x.shape)}")
    if x.shape[0] < 1:
        raise InputError("batch must contain at least one image")
    return x.to(dtype).permute(0, 3, 1, 2) - 0.5


def forward(params: NetworkParams, images) -> torch.Tensor:
    """Embed a batch of H x W x C images; rows of the result have unit norm.

    Gradients flow to any tensor of ``params`` that requires grad.
    """
    arch = params.arch
    w = params.tensors
    dtype = w["fc.weight"].dtype
    h = _as_nchw(images, arch, dtype)
    pad = arch.kernel_size // 2
    for i in range(len(arch.channels)):
        h = F.conv2d(h, w[f"conv{i}.weight"], w[f"conv{i}.bias"], padding=pad)
        h = F.max_pool2d(F.relu(h), 2)
    raw = h.flatten(1) @ w["fc.weight"].T
    norms = raw.norm(dim=1, keepdim=True)
    if bool((norms == 0).any()):
        raise DegenerateInputError("network produced a zero embedding; cannot normalize")
    return raw / norms


def embed(params: NetworkParams, images, batch_size: int = 256) -> np.ndarray:
    """No-grad embedding as a float64 numpy array, evaluated in chunks."""
    images = np.asarray(images)
    if len(images) == 0:
        return np.zeros((0, params.arch.embedding_dim))
    out = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            out.append(forward(params, images[start:start + batch_size]).double().numpy())
    return np.concatenate(out, axis=0)


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0.0:
        raise DegenerateInputError("cannot L2-normalize a zero or non-finite vector")
    return v / norm


def ema_update(pair: ModelPair) -> ModelPair:
    """gallery <- a * gallery + (1 - a) * probe, tensor by tensor; probe is untouched."""
    a = float(pair.ema_weight)
    tensors = OrderedDict()
    with torch.no_grad():
        for name, g in pair.gallery.tensors.items():
            p = pair.probe.tensors[name].detach()
            # lerp is exact at both ends and when probe == gallery
            tensors[name] = torch.lerp(g.detach(), p, 1.0 - a)
    return ModelPair(pair.probe, NetworkParams(pair.arch, tensors), pair.ema_weight)
