"""AdamW with decoupled weight decay and post-step constraint hooks.

Parameters are re-pointed into one contiguous buffer at construction so the
update runs as a handful of vectorized passes instead of a dozen small ops
per tensor. When every parameter has a gradient (the normal case) the whole
step is fused; parameters without gradients fall back to per-tensor skip
semantics. Constraint hooks run after every step; the adapter set uses them
to re-zero masked codec slots (defeating weight-decay drift) and to clamp
gate coefficients back into [0, 1].
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError
from .tensor import Tensor


class AdamW:
    def __init__(self, params, lr: float, weight_decay: float = 0.1,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 warmup_steps: int = 0, post_step=()):
        self.params: list[tuple[str, Tensor]] = list(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.warmup_steps = int(warmup_steps)
        self.post_step = list(post_step)
        self.t = 0

        total = sum(p.data.size for _, p in self.params)
        self._flat = np.empty(total)
        self._slices: list[tuple[str, Tensor, slice, tuple]] = []
        off = 0
        for name, p in self.params:
            sl = slice(off, off + p.data.size)
            self._flat[sl] = p.data.reshape(-1)
            # re-point the tensor at a view so in-place tensor updates and
            # the fused flat update see the same memory
            p.data = self._flat[sl].reshape(p.data.shape)
            self._slices.append((name, p, sl, p.data.shape))
            off += p.data.size
        self._g = np.zeros(total)
        self._m = np.zeros(total)
        self._v = np.zeros(total)
        self._denom = np.empty(total)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def current_lr(self) -> float:
        if self.warmup_steps > 0 and self.t < self.warmup_steps:
            return self.lr * (self.t + 1) / self.warmup_steps
        return self.lr

    def _gather(self) -> bool:
        """Copy per-tensor grads into the flat buffer; False if any are absent."""
        complete = True
        for name, p, sl, _ in self._slices:
            g = p.grad
            if g is None:
                complete = False
                self._g[sl] = 0.0
            else:
                self._g[sl] = g.reshape(-1)
        return complete

    def _check_finite(self) -> None:
        if math.isfinite(float(np.sum(self._g))):
            return
        for name, p, _, _ in self._slices:
            if p.grad is not None and not math.isfinite(float(np.sum(p.grad))):
                raise NumericError(f"non-finite gradient in tensor {name!r}")
        raise NumericError("non-finite gradient")

    def _update_span(self, g, m, v, span, lr, bc1, bc2) -> None:
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        g *= g
        v *= self.beta2
        v += (1.0 - self.beta2) * g
        denom = np.multiply(v, 1.0 / bc2, out=self._denom[: v.size].reshape(v.shape))
        np.sqrt(denom, out=denom)
        denom += self.eps
        update = np.divide(m, denom, out=denom)
        if self.weight_decay:
            span *= 1.0 - lr * self.weight_decay
        span -= (lr / bc1) * update

    def step(self) -> None:
        lr = self.current_lr()
        self.t += 1
        complete = self._gather()
        self._check_finite()
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t

        if complete:
            self._update_span(self._g, self._m, self._v, self._flat, lr, bc1, bc2)
        else:
            # params without a gradient are skipped entirely
            for name, p, sl, _ in self._slices:
                if p.grad is None:
                    continue
                self._update_span(self._g[sl], self._m[sl], self._v[sl],
                                  self._flat[sl], lr, bc1, bc2)

        for hook in self.post_step:
            hook()
