"""Branch networks and the trunk-branch combination.

The operator output at query point x_i is

    u_i = sum_j (prod_b c_b^j) f_i^j

where f is the trunk output and each branch b maps its parameter
vector to coefficients c_b in R^J. Multiple branches fuse by
elementwise product before contracting with the trunk; there is no
output bias. With no branches configured the trunk output passes
through unchanged (trunk-only mode, typically J = 1).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import engine as eg
from .engine import Tensor
from .errors import ConfigurationError, DimensionError, ValidationError
from .nn import Mlp
from .trunks import BranchSpec, GeometryCloud, ModelSpec, QueryBatch, TrunkModel


class BranchNet:
    """MLP from one parameter vector to trunk-output coefficients."""

    def __init__(self, rng: np.random.Generator, spec: BranchSpec, out_dim: int, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.mlp = Mlp(rng, spec.width, spec.hidden, out_dim, "relu", dtype=dtype,
                       name=f"branch.{spec.name}")

    def __call__(self, values: np.ndarray) -> Tensor:
        v = np.asarray(values, dtype=self.dtype).reshape(1, -1)
        if v.shape[1] != self.spec.width:
            raise ValidationError(
                f"branch {self.spec.name!r} expects {self.spec.width} values, got {v.shape[1]}"
            )
        if not np.isfinite(v).all():
            raise ValidationError(f"branch {self.spec.name!r} received non-finite values")
        return self.mlp(Tensor(v))

    def parameters(self) -> dict[str, Tensor]:
        return self.mlp.parameters()


def combine(trunk_out: Tensor, branch_outs: Sequence[Tensor]) -> Tensor:
    """Contract trunk outputs [N x J] with fused branch coefficients."""
    if len(branch_outs) == 0:
        raise ConfigurationError("combine needs at least one branch output")
    n, j = trunk_out.data.shape
    fused = branch_outs[0]
    for extra in branch_outs[1:]:
        fused = eg.mul(fused, extra)
    if fused.data.shape != (1, j):
        raise DimensionError(
            f"branch outputs have shape {fused.data.shape}, trunk width is {j}"
        )
    return eg.reshape(eg.matmul(trunk_out, eg.transpose(fused)), (n,))


def trunk_only(trunk_out: Tensor) -> Tensor:
    """No branch scaling; the trunk columns are the outputs."""
    return trunk_out


class OperatorModel:
    """Trunk plus zero or more branch networks."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator, dtype=np.float64):
        self.spec = spec
        self.trunk = TrunkModel(spec, rng, dtype=dtype)
        self.branches = [BranchNet(rng, b, spec.trunk_out, dtype=dtype) for b in spec.branches]
        names = [b.name for b in spec.branches]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"branch names must be unique, got {names}")

    def forward(
        self,
        batch: QueryBatch,
        geom: GeometryCloud | None = None,
        branch_values: Sequence[np.ndarray] | None = None,
    ) -> Tensor:
        f = self.trunk.forward(batch, geom)
        if not self.branches:
            return trunk_only(f)
        if branch_values is None or len(branch_values) != len(self.branches):
            got = 0 if branch_values is None else len(branch_values)
            raise ValidationError(
                f"model has {len(self.branches)} branches but received {got} value vectors"
            )
        outs = [net(vals) for net, vals in zip(self.branches, branch_values)]
        return combine(f, outs)

    __call__ = forward

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.trunk.parameters())
        for net in self.branches:
            out.update(net.parameters())
        return out


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float64) -> OperatorModel:
    return OperatorModel(spec, np.random.default_rng(seed), dtype=dtype)
