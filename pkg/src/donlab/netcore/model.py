"""The fully-convolutional descriptor network and its parameter container."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeMismatch
from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class ConvLayer:
    kernel: int
    cin: int
    cout: int
    stride: int = 1
    relu: bool = True

    @property
    def padding(self) -> int:
        return self.kernel // 2


@dataclass(frozen=True)
class Architecture:
    layers: tuple

    def __post_init__(self):
        layers = tuple(ConvLayer(**l) if isinstance(l, dict) else l for l in self.layers)
        if not layers:
            raise ValueError("architecture needs at least one layer")
        if layers[0].cin != 3:
            raise ValueError("first layer must take RGB input")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.cout != nxt.cin:
                raise ValueError(f"channel mismatch {prev.cout} -> {nxt.cin}")
        object.__setattr__(self, "layers", layers)

    @property
    def stride(self) -> int:
        return int(np.prod([l.stride for l in self.layers]))

    @property
    def descriptor_dim(self) -> int:
        return self.layers[-1].cout

    @classmethod
    def default(cls, descriptor_dim: int = 16) -> "Architecture":
        """Three stride-2 3x3 convs (output stride 8) and two 1x1 heads."""
        return cls((
            ConvLayer(3, 3, 16, 2),
            ConvLayer(3, 16, 32, 2),
            ConvLayer(3, 32, 32, 2),
            ConvLayer(1, 32, 32, 1),
            ConvLayer(1, 32, descriptor_dim, 1, relu=False),
        ))

    @classmethod
    def tiny(cls, descriptor_dim: int = 3, hidden: int = 4) -> "Architecture":
        """Two-layer net used for gradient checks."""
        return cls((ConvLayer(3, 3, hidden, 2), ConvLayer(1, hidden, descriptor_dim, 1, relu=False)))

    def to_dict(self) -> dict:
        return {"layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(tuple(ConvLayer(**l) for l in d["layers"]))


class ModelParams:
    """Ordered named parameter tensors plus the architecture they instantiate."""

    def __init__(self, arch: Architecture, tensors: dict):
        self.arch = arch
        self.tensors = dict(tensors)
        expected = dict(param_shapes(arch))
        if list(expected) != list(self.tensors):
            raise ShapeMismatch(f"parameter names {list(self.tensors)} != {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeMismatch(f"{name}: {self.tensors[name].shape} != {shape}")

    @classmethod
    def init(cls, arch: Architecture, seed: int = 0, dtype=np.float32) -> "ModelParams":
        """He-normal kernels, zero biases."""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in param_shapes(arch):
            if name.endswith(".weight"):
                fan_in = shape[0] * shape[1] * shape[2]
                data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            else:
                data = np.zeros(shape)
            tensors[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
        return cls(arch, tensors)

    @classmethod
    def from_arrays(cls, arch: Architecture, arrays: dict) -> "ModelParams":
        return cls(arch, {k: Tensor(np.array(v), requires_grad=True, name=k) for k, v in arrays.items()})

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def arrays(self) -> dict:
        return {k: t.data for k, t in self.tensors.items()}

    def grads(self) -> dict:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.tensors.items()}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays(self.arch, {k: v.copy() for k, v in self.arrays().items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams.from_arrays(self.arch, {k: v.astype(dtype) for k, v in self.arrays().items()})

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype


def param_shapes(arch: Architecture):
    for i, l in enumerate(arch.layers):
        yield f"conv{i}.weight", (l.kernel, l.kernel, l.cin, l.cout)
        yield f"conv{i}.bias", (l.cout,)


def preprocess(images, dtype=np.float32) -> np.ndarray:
    """uint8 RGB (.., H, W, 3) to centred floats of roughly unit scale."""
    x = np.asarray(images)
    if x.dtype == np.uint8:
        x = x.astype(dtype) / np.asarray(255.0, dtype=dtype)
    return ((x - 0.5) * 4.0).astype(dtype)


def bilinear_upsample(t, factor: int) -> Tensor:
    """Upsample an (h, w, C) or (N, h, w, C) tensor by an integer factor."""
    t = ad.as_tensor(t)
    if t.ndim == 3:
        return ad.upsample_bilinear(t.reshape((1,) + t.shape), factor).reshape(
            (t.shape[0] * factor, t.shape[1] * factor, t.shape[2]))
    return ad.upsample_bilinear(t, factor)


def forward(params: ModelParams, image) -> Tensor:
    """Descriptor image(s) at input resolution.

    ``image`` is (H, W, 3) or (N, H, W, 3), either uint8 or already
    preprocessed floats (or a Tensor, for input gradients).
    """
    if isinstance(image, Tensor):
        x = image
    else:
        x = Tensor(preprocess(image, params.dtype))
    single = x.ndim == 3
    if single:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 4 or x.shape[3] != 3:
        raise ShapeMismatch(f"expected (N, H, W, 3) input, got {x.shape}")
    stride = params.arch.stride
    if x.shape[1] % stride or x.shape[2] % stride:
        raise ShapeMismatch(f"input {x.shape[1:3]} not divisible by stride {stride}")
    for i, layer in enumerate(params.arch.layers):
        x = ad.conv2d(x, params[f"conv{i}.weight"], params[f"conv{i}.bias"], layer.stride, layer.padding)
        if layer.relu:
            x = ad.relu(x)
    x = ad.upsample_bilinear(x, stride)
    if single:
        x = x.reshape(x.shape[1:])
    return x


class NetworkModel:
    """Wraps parameters as a frame -> descriptor-image callable for evaluation."""

    def __init__(self, params: ModelParams, measure: str = "cosine"):
        self.params = params
        self.measure = measure

    def describe_images(self, images) -> np.ndarray:
        return forward(self.params, images).data

    def __call__(self, frame) -> np.ndarray:
        return self.describe_images(frame.rgb)
