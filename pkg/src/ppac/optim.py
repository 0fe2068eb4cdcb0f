"""Named parameters, Adam updates, and a stepwise-halving learning rate.

Parameters are plain numpy arrays wrapped with a name, a group label, and
a gradient slot.  The optimizer state (first/second moment estimates and
the shared step counter) lives on the store so it can be checkpointed
alongside the values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MissingGradient(RuntimeError):
    """Raised when a step is attempted while some parameter has no gradient."""


@dataclass
class Parameter:
    """One named learnable array with an optional gradient of the same shape."""

    name: str
    value: np.ndarray
    group: str = "default"
    grad: np.ndarray | None = None

    def __post_init__(self):
        if self.value.dtype not in (np.float32, np.float64):
            raise ValueError(f"{self.name}: parameters must be float32 or float64")


class ParamStore:
    """Ordered collection of parameters plus Adam moments and step count.

    Group names map to learning-rate multipliers, so one schedule can move
    different parts of a network at different speeds (for example a slower
    combination stage on top of faster branch convolutions).
    """

    def __init__(self, lr_multipliers: dict[str, float] | None = None):
        self._params: dict[str, Parameter] = {}
        self.lr_multipliers = dict(lr_multipliers) if lr_multipliers else {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, param: Parameter) -> Parameter:
        if param.name in self._params:
            raise ValueError(f"duplicate parameter name {param.name!r}")
        self._params[param.name] = param
        return param

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def total_size(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def clear_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def group_lr(self, group: str, base_lr: float) -> float:
        return base_lr * self.lr_multipliers.get(group, 1.0)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat view of the optimizer state for checkpointing."""
        out = {}
        for name in self._params:
            if name in self.m:
                out["adam_m." + name] = self.m[name]
                out["adam_v." + name] = self.v[name]
        out["adam_step"] = np.array([self.step_count], dtype=np.int64)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays.get("adam_step", np.zeros(1, np.int64))[0])
        self.m.clear()
        self.v.clear()
        for name, p in self._params.items():
            mk, vk = "adam_m." + name, "adam_v." + name
            if mk in arrays:
                if arrays[mk].shape != p.value.shape:
                    raise ValueError(f"optimizer state shape mismatch for {name}")
                self.m[name] = arrays[mk].astype(p.value.dtype)
                self.v[name] = arrays[vk].astype(p.value.dtype)


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update over every parameter in the store.

    Group learning-rate multipliers are applied on top of ``lr``.  Every
    parameter must carry a gradient; a missing one raises MissingGradient
    rather than being silently skipped.  Gradients are cleared afterwards.
    No weight decay.
    """
    for p in store:
        if p.grad is None:
            raise MissingGradient(f"parameter {p.name!r} has no gradient")
        if p.grad.shape != p.value.shape:
            raise ValueError(f"gradient shape mismatch for {p.name!r}")

    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p in store:
        g = p.grad.astype(p.value.dtype, copy=False)
        if p.name not in store.m:
            store.m[p.name] = np.zeros_like(p.value)
            store.v[p.name] = np.zeros_like(p.value)
        m = store.m[p.name]
        v = store.v[p.name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        step = store.group_lr(p.group, lr) * m_hat / (np.sqrt(v_hat) + eps)
        p.value -= step.astype(p.value.dtype)
    store.clear_grads()


@dataclass
class LrSchedule:
    """Base rate halved every ``halve_every`` epochs (0 disables halving).

    ``group_base`` optionally overrides the base rate per parameter group;
    the same halving factor applies to every group.
    """

    base_lr: float
    halve_every: int = 0
    group_base: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.halve_every < 0:
            raise ValueError("halve_every must be >= 0")

    def factor(self, epoch: int) -> float:
        if self.halve_every == 0:
            return 1.0
        return 2.0 ** -(epoch // self.halve_every)

    def lr(self, epoch: int, group: str | None = None) -> float:
        base = self.group_base.get(group, self.base_lr) if group else self.base_lr
        return base * self.factor(epoch)
