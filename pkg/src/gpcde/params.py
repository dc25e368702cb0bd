"""Named model parameters with constraints, mapped to flat optimizer views.

Parameters are stored in the unconstrained domain.  Positive parameters go
through a log/exp bijection; lower-triangular parameters keep their strict
lower triangle and exponentiate the diagonal, which guarantees a strictly
positive diagonal after mapping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

FREE = "free"
POSITIVE = "positive"
TRIL = "lower-triangular-positive-diagonal"

_CONSTRAINTS = (FREE, POSITIVE, TRIL)


@dataclass
class ParamSpec:
    name: str
    shape: tuple
    constraint: str = FREE

    def __post_init__(self):
        self.shape = tuple(self.shape)
        if self.constraint not in _CONSTRAINTS:
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if self.constraint == TRIL and (
                len(self.shape) < 2 or self.shape[-1] != self.shape[-2]):
            raise ValueError("tril constraint needs square trailing dims")


def constrain(spec: ParamSpec, raw):
    """Map an unconstrained value (array or Node) to the constrained domain."""
    if spec.constraint == FREE:
        return raw
    if spec.constraint == POSITIVE:
        return ad.exp(raw)
    # TRIL: strict lower triangle + exp(diagonal)
    strict = ad.tril(raw, -1)
    diag = ad.diag_part(raw)
    return strict + ad.diag_matrix(ad.exp(diag))


def unconstrain(spec: ParamSpec, value):
    """Inverse of :func:`constrain` on plain arrays."""
    value = np.asarray(value, dtype=np.float64)
    if spec.constraint == FREE:
        return value.copy()
    if spec.constraint == POSITIVE:
        return np.asarray(np.log(value))
    out = np.tril(value, -1)
    idx = np.arange(value.shape[-1])
    out[..., idx, idx] = np.log(value[..., idx, idx])
    return out


@dataclass
class ParameterStore:
    """Registry of named parameters; raw storage is unconstrained."""

    specs: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def register(self, name, value, constraint=FREE):
        value = np.asarray(value, dtype=np.float64)
        spec = ParamSpec(name, value.shape, constraint)
        if name in self.specs:
            raise ValueError(f"parameter {name!r} already registered")
        self.specs[name] = spec
        self.raw[name] = unconstrain(spec, value)

    def leaves(self, tape, names=None):
        """Create unconstrained leaf nodes on `tape` for the given names."""
        names = list(self.specs) if names is None else list(names)
        return {n: ad.leaf(self.raw[n], tape, name=n) for n in names}

    def constrained_value(self, name):
        spec = self.specs[name]
        raw = self.raw[name]
        if spec.constraint == FREE:
            return raw.copy()
        if spec.constraint == POSITIVE:
            return np.exp(raw)
        out = np.tril(raw, -1)
        idx = np.arange(raw.shape[-1])
        out[..., idx, idx] = np.exp(raw[..., idx, idx])
        return out

    def set_constrained(self, name, value):
        self.raw[name] = unconstrain(self.specs[name], value)

    def constrain_leaf(self, name, leaf_node):
        return constrain(self.specs[name], leaf_node)

    def copy(self):
        out = ParameterStore()
        out.specs = dict(self.specs)
        out.raw = {k: v.copy() for k, v in self.raw.items()}
        return out
