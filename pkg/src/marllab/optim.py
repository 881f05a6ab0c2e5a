"""Adam optimizer over a ParamSet, with serializable state."""

from __future__ import annotations

import numpy as np

from .errors import NumericalError
from .tensor import ParamSet


class Adam:
    """Standard Adam with bias correction.

    step() consumes and zeroes the accumulated gradients, so repeated
    forward/backward passes between steps sum their gradients.
    """

    def __init__(self, params: ParamSet, lr: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = {name: np.zeros_like(node.value) for name, node in params.items()}
        self._v = {name: np.zeros_like(node.value) for name, node in params.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, node in self.params.items():
            g = node.grad
            if g is None:
                g = np.zeros_like(node.value)
            elif not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            node.value = node.value - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            node.grad = None

    def state_tensors(self) -> dict:
        """Flat name -> array dict for checkpointing (moments only)."""
        out = {}
        for name in self.params.names():
            out[f"m.{name}"] = self._m[name].copy()
            out[f"v.{name}"] = self._v[name].copy()
        return out

    def load_state_tensors(self, tensors: dict, step_count: int) -> None:
        for name in self.params.names():
            self._m[name] = np.array(tensors[f"m.{name}"], dtype=np.float64)
            self._v[name] = np.array(tensors[f"v.{name}"], dtype=np.float64)
        self.step_count = int(step_count)
