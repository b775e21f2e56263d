"""Adam optimizer and step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Bias-corrected Adam over a named parameter table."""

    def __init__(self, params: dict[str, Tensor], lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        for name, p in params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        st = self.state
        missing = [n for n, p in self.params.items() if p.grad is None]
        if missing:
            raise ValueError(f"adam: no gradient for parameters {missing}")
        st.t += 1
        bc1 = 1.0 - st.beta1**st.t
        bc2 = 1.0 - st.beta2**st.t
        for name, p in self.params.items():
            g = p.grad
            m, v = st.m[name], st.v[name]
            if m.shape != p.data.shape:
                raise ValueError(f"adam: state shape {m.shape} != parameter {name} shape {p.data.shape}")
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= (st.lr * mhat / (np.sqrt(vhat) + st.eps)).astype(p.data.dtype)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """Functional form: one Adam update using each parameter's ``.grad``."""
    opt = Adam.__new__(Adam)
    opt.params = params
    opt.state = state
    for name, p in params.items():
        state.m.setdefault(name, np.zeros_like(p.data))
        state.v.setdefault(name, np.zeros_like(p.data))
    opt.step()


def step_lr(base_lr: float, iteration: int, decay_every: int, factor: float = 10.0) -> float:
    """Learning rate divided by ``factor`` after every ``decay_every`` updates."""
    if decay_every <= 0:
        return base_lr
    return base_lr / factor ** (iteration // decay_every)
