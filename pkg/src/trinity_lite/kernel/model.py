"""Two small encoder-decoder segmentation architectures.

"fcn_mini" and "unet_mini" share the layer stack; the unet variant adds
the matching encoder activation (element-wise) to each decoder conv
output before its ReLU. Heads are per-task 1x1 convs producing logits at
input resolution. Spatial size must be a multiple of 4 (two pools).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from .ops import (
    conv1x1_backward,
    conv1x1_forward,
    conv3x3_backward,
    conv3x3_forward,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
    upsample2_backward,
    upsample2_forward,
)
from .rng import Lcg

ARCHITECTURES = ("fcn_mini", "unet_mini")
_WIDTHS = (16, 32, 64)


@dataclass(frozen=True)
class ModelSpec:
    architecture_id: str
    in_channels: int
    tasks: tuple                      # ((task_name, class_count), ...)

    def __post_init__(self):
        if self.architecture_id not in ARCHITECTURES:
            raise ValidationError(f"unknown architecture {self.architecture_id!r}")
        if self.in_channels < 1:
            raise ValidationError("in_channels must be positive")
        if not self.tasks:
            raise ValidationError("model needs at least one task")
        for name, k in self.tasks:
            if k < 2:
                raise ValidationError(f"task {name!r}: class_count must be >= 2")

    def to_json(self) -> dict:
        return {
            "architecture_id": self.architecture_id,
            "in_channels": self.in_channels,
            "tasks": [[n, k] for n, k in self.tasks],
        }

    @classmethod
    def from_json(cls, d: dict) -> "ModelSpec":
        return cls(d["architecture_id"], int(d["in_channels"]),
                   tuple((n, int(k)) for n, k in d["tasks"]))


def parameter_shapes(spec: ModelSpec) -> list:
    """Ordered (name, shape) pairs; the order fixes init draws and file layout."""
    c1, c2, c3 = _WIDTHS
    shapes = [
        ("enc1_w", (c1, spec.in_channels, 3, 3)), ("enc1_b", (c1,)),
        ("enc2_w", (c2, c1, 3, 3)), ("enc2_b", (c2,)),
        ("enc3_w", (c3, c2, 3, 3)), ("enc3_b", (c3,)),
        ("dec1_w", (c2, c3, 3, 3)), ("dec1_b", (c2,)),
        ("dec2_w", (c1, c2, 3, 3)), ("dec2_b", (c1,)),
    ]
    for name, k in spec.tasks:
        shapes.append((f"head_{name}_w", (k, c1)))
        shapes.append((f"head_{name}_b", (k,)))
    return shapes


def parameter_count(spec: ModelSpec) -> int:
    return sum(int(np.prod(s)) for _, s in parameter_shapes(spec))


def _fan_in(name: str, shape) -> int:
    if name.endswith("_b"):
        return 0
    if len(shape) == 4:
        return shape[1] * shape[2] * shape[3]
    return shape[1]


def build_model(spec: ModelSpec, init_seed: int) -> dict:
    """He-uniform weights (bound sqrt(6/fan_in)) drawn in order; biases zero."""
    rng = Lcg(init_seed)
    params = {}
    for name, shape in parameter_shapes(spec):
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=np.float32)
            continue
        bound = math.sqrt(6.0 / _fan_in(name, shape))
        n = int(np.prod(shape))
        flat = np.array([rng.uniform_in(-bound, bound) for _ in range(n)],
                        dtype=np.float32)
        params[name] = flat.reshape(shape)
    return params


def forward(spec: ModelSpec, params: dict, image: np.ndarray,
            want_cache: bool = False):
    """Per-task logits {task_name: (class_count, H, W)}; optionally the cache
    of intermediate activations needed by backward."""
    if image.ndim != 3 or image.shape[0] != spec.in_channels:
        raise ValidationError(
            f"expected ({spec.in_channels}, H, W) input, got {image.shape}")
    if image.shape[1] % 4 or image.shape[2] % 4:
        raise ValidationError("spatial size must be a multiple of 4")
    skip = spec.architecture_id == "unet_mini"

    z1e = conv3x3_forward(image, params["enc1_w"], params["enc1_b"])
    a1 = relu_forward(z1e)
    p1, idx1 = maxpool2_forward(a1)
    z2e = conv3x3_forward(p1, params["enc2_w"], params["enc2_b"])
    a2 = relu_forward(z2e)
    p2, idx2 = maxpool2_forward(a2)
    z3e = conv3x3_forward(p2, params["enc3_w"], params["enc3_b"])
    a3 = relu_forward(z3e)

    u1 = upsample2_forward(a3)
    z1d = conv3x3_forward(u1, params["dec1_w"], params["dec1_b"])
    if skip:
        z1d = z1d + a2
    d1 = relu_forward(z1d)
    u2 = upsample2_forward(d1)
    z2d = conv3x3_forward(u2, params["dec2_w"], params["dec2_b"])
    if skip:
        z2d = z2d + a1
    d2 = relu_forward(z2d)

    logits = {name: conv1x1_forward(d2, params[f"head_{name}_w"], params[f"head_{name}_b"])
              for name, _ in spec.tasks}
    if not want_cache:
        return logits
    cache = {"image": image, "z1e": z1e, "a1": a1, "idx1": idx1, "p1": p1,
             "z2e": z2e, "a2": a2, "idx2": idx2, "p2": p2, "z3e": z3e,
             "u1": u1, "z1d": z1d, "d1": d1, "u2": u2, "z2d": z2d, "d2": d2}
    return logits, cache


def backward(spec: ModelSpec, params: dict, cache: dict, dlogits: dict) -> dict:
    """Parameter gradients for upstream per-task logit gradients."""
    skip = spec.architecture_id == "unet_mini"
    grads = {}
    d2 = cache["d2"]
    dd2 = None
    for name, _ in spec.tasks:
        dx, dw, db = conv1x1_backward(d2, params[f"head_{name}_w"], dlogits[name])
        grads[f"head_{name}_w"] = dw
        grads[f"head_{name}_b"] = db
        dd2 = dx if dd2 is None else dd2 + dx

    dz2d = relu_backward(cache["z2d"], dd2)
    da1_skip = dz2d if skip else None
    du2, grads["dec2_w"], grads["dec2_b"] = conv3x3_backward(
        cache["u2"], params["dec2_w"], dz2d)
    dd1 = upsample2_backward(du2)
    dz1d = relu_backward(cache["z1d"], dd1)
    da2_skip = dz1d if skip else None
    du1, grads["dec1_w"], grads["dec1_b"] = conv3x3_backward(
        cache["u1"], params["dec1_w"], dz1d)
    da3 = upsample2_backward(du1)

    dz3e = relu_backward(cache["z3e"], da3)
    dp2, grads["enc3_w"], grads["enc3_b"] = conv3x3_backward(
        cache["p2"], params["enc3_w"], dz3e)
    da2 = maxpool2_backward(dp2, cache["idx2"], cache["a2"].shape)
    if da2_skip is not None:
        da2 = da2 + da2_skip
    dz2e = relu_backward(cache["z2e"], da2)
    dp1, grads["enc2_w"], grads["enc2_b"] = conv3x3_backward(
        cache["p1"], params["enc2_w"], dz2e)
    da1 = maxpool2_backward(dp1, cache["idx1"], cache["a1"].shape)
    if da1_skip is not None:
        da1 = da1 + da1_skip
    dz1e = relu_backward(cache["z1e"], da1)
    _, grads["enc1_w"], grads["enc1_b"] = conv3x3_backward(
        cache["image"], params["enc1_w"], dz1e)
    return grads
