"""Adam with per-scalar freeze masks.

A frozen scalar is never touched: neither its value nor its first/second
moment changes on a step, so frozen values stay bit-identical to whatever
they were when the mask was installed.
"""

from __future__ import annotations

import torch


class MaskedAdam:
    def __init__(self, named_params, lr: float = 5e-5, betas=(0.9, 0.999), eps: float = 1e-8):
        self.named_params = list(named_params)
        names = [n for n, _ in self.named_params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {n: torch.zeros_like(p) for n, p in self.named_params}
        self.v = {n: torch.zeros_like(p) for n, p in self.named_params}
        self.frozen = {n: torch.zeros(p.shape, dtype=torch.bool) for n, p in self.named_params}

    def set_frozen(self, masks: dict[str, torch.Tensor]) -> None:
        """Install per-scalar freeze masks (True = frozen)."""
        for n, mask in masks.items():
            if n not in self.frozen:
                raise KeyError(f"unknown parameter {n!r}")
            if mask.shape != self.frozen[n].shape:
                raise ValueError(f"mask shape {tuple(mask.shape)} != param shape for {n!r}")
            self.frozen[n] = mask.bool().clone()

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None

    def reset_state(self) -> None:
        """Zero moments and the step counter (used at parameter-reset boundaries)."""
        self.step_count = 0
        for n, p in self.named_params:
            self.m[n].zero_()
            self.v[n].zero_()

    @torch.no_grad()
    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for n, p in self.named_params:
            g = p.grad
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(f"gradient shape mismatch for {n!r}")
            mask = self.frozen[n]
            m_new = self.beta1 * self.m[n] + (1 - self.beta1) * g
            v_new = self.beta2 * self.v[n] + (1 - self.beta2) * g * g
            p_new = p - self.lr * (m_new / bc1) / ((v_new / bc2).sqrt() + self.eps)
            self.m[n] = torch.where(mask, self.m[n], m_new)
            self.v[n] = torch.where(mask, self.v[n], v_new)
            p.copy_(torch.where(mask, p, p_new))
