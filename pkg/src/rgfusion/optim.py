"""Adam with bias correction and linear learning-rate warmup."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class Adam:
    """Standard Adam. Effective lr = lr * min(1, step / warmup_steps).

    Parameters added later with `add_params` (e.g. when a frozen group
    unfreezes) get fresh first/second moments but share the global step
    count, so the warmup schedule is not restarted for them.
    """

    def __init__(self, params, lr: float = 1e-3, warmup_steps: int = 0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if warmup_steps < 0:
            raise ValueError(f"warmup_steps must be >= 0, got {warmup_steps}")
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.params: list[Tensor] = []
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []
        self.add_params(params)

    def add_params(self, params):
        seen = {id(p) for p in self.params}
        for p in params:
            if id(p) in seen:
                continue
            self.params.append(p)
            self.m.append(np.zeros_like(p.data))
            self.v.append(np.zeros_like(p.data))

    def effective_lr(self) -> float:
        if self.warmup_steps > 0:
            return self.lr * min(1.0, self.step_count / self.warmup_steps)
        return self.lr

    def step(self):
        """One update from the gradients currently stored on the params.
        A missing gradient counts as zero."""
        self.step_count += 1
        t = self.step_count
        lr_t = self.effective_lr()
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr_t * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
