"""Adam optimizer over named autodiff tensors."""

from typing import Dict

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, NumericError


class Adam:
    """Standard Adam with bias correction.

    Moment buffers are keyed by parameter name so they can be saved and
    restored alongside the weights. A non-finite gradient raises before any
    parameter is touched, leaving the model in its pre-step state.
    """

    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ContractError(f"learning rate must be > 0, got {lr}")
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {}
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            grads[name] = g

        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)

    def state(self):
        """Moment buffers and step count, for checkpointing."""
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, t: int, m: Dict[str, np.ndarray], v: Dict[str, np.ndarray]):
        if set(m) != set(self.params) or set(v) != set(self.params):
            raise ContractError("optimizer state keys do not match parameters")
        self.t = int(t)
        for k in self.params:
            if m[k].shape != self.params[k].data.shape:
                raise ContractError(f"optimizer state shape mismatch for {k!r}")
            self.m[k] = m[k].astype(self.params[k].data.dtype).copy()
            self.v[k] = v[k].astype(self.params[k].data.dtype).copy()
