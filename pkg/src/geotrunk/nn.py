"""Parameter containers for the pointwise networks."""

from __future__ import annotations

import numpy as np

from .engine import Tensor, mlp_forward


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype, copy=False)


class Mlp:
    """Fully connected stack.

    Hidden layers share one activation; the final projection uses
    ``out_activation`` (default linear). Weights are Glorot-uniform,
    biases zero.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        in_dim: int,
        hidden: tuple[int, ...],
        out_dim: int,
        activation: str = "relu",
        out_activation: str | None = None,
        dtype=np.float64,
        name: str = "mlp",
    ):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        widths = [in_dim, *hidden, out_dim]
        acts = [activation] * len(hidden) + [out_activation]
        self.layers = []
        for a, b, act in zip(widths[:-1], widths[1:], acts):
            w = Tensor(glorot_uniform(rng, a, b, dtype), requires_grad=True)
            bias = Tensor(np.zeros(b, dtype=dtype), requires_grad=True)
            self.layers.append((w, bias, act))

    def __call__(self, x) -> Tensor:
        return mlp_forward(x, self.layers)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (w, b, _) in enumerate(self.layers):
            out[f"{self.name}.{i}.w"] = w
            out[f"{self.name}.{i}.b"] = b
        return out
