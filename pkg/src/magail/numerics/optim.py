from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .params import ParamStore


@dataclass
class OptState:
    """RMSprop state: running mean of squared gradients per parameter."""

    lr: float = 5e-5
    rho: float = 0.9
    eps: float = 1e-8
    step: int = 0
    acc: dict = field(default_factory=dict)


def rmsprop_step(params: ParamStore, opt: OptState, names=None) -> None:
    """In-place descent step ``p -= lr * g / (sqrt(acc) + eps)``."""
    for name in names if names is not None else list(params):
        g = params.grad(name)
        acc = opt.acc.get(name)
        if acc is None:
            acc = opt.acc[name] = np.zeros_like(g)
        acc *= opt.rho
        acc += (1.0 - opt.rho) * g * g
        params[name] = params[name] - opt.lr * g / (np.sqrt(acc) + opt.eps)
    opt.step += 1


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adam_step(params: ParamStore, opt: AdamState, names=None) -> None:
    opt.step += 1
    c1 = 1.0 - opt.beta1 ** opt.step
    c2 = 1.0 - opt.beta2 ** opt.step
    for name in names if names is not None else list(params):
        g = params.grad(name)
        if name not in opt.m:
            opt.m[name] = np.zeros_like(g)
            opt.v[name] = np.zeros_like(g)
        m, v = opt.m[name], opt.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        params[name] = params[name] - opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


def clip_params(params: ParamStore, c: float, names=None) -> None:
    """Clamp every coordinate into ``[-c, c]``; ``c = inf`` disables clipping."""
    if c <= 0:
        raise ValueError(f"clip bound must be positive, got {c}")
    if math.isinf(c):
        return
    for name in names if names is not None else list(params):
        v = params[name]
        np.clip(v, -c, c, out=v)
