"""Amortized recognition network mapping (x, y) to latent posterior params.

A fully connected tanh network with a linear output layer producing D_w
means and D_w log standard deviations (diagonal posterior).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

DEFAULT_WIDTHS = (50, 100, 50)


@dataclass
class EncoderNetwork:
    d_in: int
    d_w: int
    widths: tuple = field(default_factory=lambda: DEFAULT_WIDTHS)

    def layer_sizes(self):
        return [self.d_in, *self.widths, 2 * self.d_w]

    def param_names(self):
        n = len(self.layer_sizes()) - 1
        return [f"enc_W{i}" for i in range(n)] + [f"enc_b{i}" for i in range(n)]

    def register(self, store, rng):
        """Xavier fan-based weight init, zero biases."""
        sizes = self.layer_sizes()
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            store.register(f"enc_W{i}",
                           rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            store.register(f"enc_b{i}", np.zeros(fan_out))

    def forward(self, params, xy):
        """xy: (B, d_in) constants; params: name -> array/Node.

        Returns (mu, scale), each (B, d_w), with scale strictly positive.
        """
        if ad.value_of(xy).shape[1] != self.d_in:
            raise ValueError("encoder input dimension mismatch")
        h = xy
        n_layers = len(self.layer_sizes()) - 1
        for i in range(n_layers):
            h = h @ params[f"enc_W{i}"] + params[f"enc_b{i}"]
            if i < n_layers - 1:
                h = ad.tanh(h)
        mu = h[:, : self.d_w]
        scale = ad.exp(h[:, self.d_w:])
        return mu, scale


def encode(net: EncoderNetwork, params, x, y):
    """Single-point convenience wrapper; returns plain arrays."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    mu, scale = net.forward(params, np.concatenate([x, y], axis=1))
    return ad.value_of(mu)[0], ad.value_of(scale)[0]
