"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError


@dataclass
class Hyperparams:
    epochs: int
    learning_rate: float = 1e-3
    batch_size: int = 4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    init_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be positive")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")

    def to_json(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_epsilon": self.adam_epsilon,
            "init_seed": self.init_seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Hyperparams":
        return cls(
            epochs=int(d["epochs"]),
            learning_rate=float(d.get("learning_rate", 1e-3)),
            batch_size=int(d.get("batch_size", 4)),
            adam_beta1=float(d.get("adam_beta1", 0.9)),
            adam_beta2=float(d.get("adam_beta2", 0.999)),
            adam_epsilon=float(d.get("adam_epsilon", 1e-8)),
            init_seed=int(d.get("init_seed", 0)),
        )


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, hp: Hyperparams) -> None:
    """One in-place update:
    m <- b1*m + (1-b1)g; v <- b2*v + (1-b2)g^2;
    theta <- theta - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
    """
    state.t += 1
    b1, b2 = hp.adam_beta1, hp.adam_beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name].astype(p.dtype, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= hp.learning_rate * (m / c1) / (np.sqrt(v / c2) + hp.adam_epsilon)
