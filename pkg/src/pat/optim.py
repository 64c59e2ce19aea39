"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ContractError, Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: Tensor, **hyper) -> "AdamState":
        return cls(np.zeros_like(param.data), np.zeros_like(param.data), **hyper)


def adam_step(param: Tensor, state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place and clear ``param.grad``."""
    if param.grad is None:
        raise ContractError(f"adam_step: parameter {param.name or ''} has no gradient")
    if state.m.shape != param.shape or state.v.shape != param.shape:
        raise ContractError(
            f"adam_step: state shape {state.m.shape} does not match parameter {param.shape}"
        )
    g = param.grad.astype(param.data.dtype, copy=False)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * g
    state.v *= b2
    state.v += (1.0 - b2) * (g * g)
    m_hat = state.m / (1.0 - b1**state.step)
    v_hat = state.v / (1.0 - b2**state.step)
    param.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(
        param.data.dtype, copy=False
    )
    param.grad = None


class Adam:
    """Adam over a fixed, ordered mapping of named parameters."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.states = {
            name: AdamState.for_param(p, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            for name, p in self.params.items()
        }

    def step(self):
        for name, p in self.params.items():
            adam_step(p, self.states[name])

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
