"""Adam over named parameter tensors."""

from typing import Dict, Tuple

import numpy as np

from wrflow.autodiff import Tensor


class Adam:
    """
    Adaptive moment estimation with bias correction.

    Parameters are updated in place; moments are kept per parameter name.
    """

    def __init__(
        self,
        parameters: Dict[str, Tensor],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.parameters = parameters
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in parameters.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in parameters.items()}

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        unknown = set(grads) - set(self.parameters)
        if unknown:
            raise ValueError(f"Adam.step: gradients for unknown parameters {sorted(unknown)[:5]}")

        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for name, param in self.parameters.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            param.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
