"""Scalar-objective evaluation with gradients, plus a finite-difference
check used as the gradient oracle throughout the test suite."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def evaluate_with_grad(store, build_fn, names=None):
    """Evaluate a scalar objective and its gradients.

    `build_fn(leaves)` receives unconstrained leaf nodes (name -> Node) and
    must return a scalar Node.  Gradients are returned per parameter in the
    unconstrained domain.
    """
    tape = ad.Tape()
    leaves = store.leaves(tape, names)
    target = build_fn(leaves)
    if np.asarray(target.value).size != 1:
        raise ValueError("objective must be scalar")
    grads = ad.grad(target, list(leaves.values()))
    return float(target.value), dict(zip(leaves.keys(), grads))


def _value(store, build_fn, names):
    tape = ad.Tape()
    leaves = store.leaves(tape, names)
    return float(ad.value_of(build_fn(leaves)))


def finite_diff_check(store, build_fn, eps=1e-5, names=None):
    """Compare reverse-mode gradients against central finite differences.

    Returns {name: (max_rel_err, worst_coordinate)}.  Relative error is
    measured against max(|fd|, |grad|, 1e-6) per coordinate.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    names = list(store.specs) if names is None else list(names)
    _, grads = evaluate_with_grad(store, build_fn, names)
    report = {}
    for name in names:
        raw = store.raw[name]
        g = grads[name]
        worst_err, worst_coord = 0.0, None
        for coord in np.ndindex(raw.shape if raw.shape else (1,)):
            c = coord if raw.shape else ()
            orig = raw[c]
            raw[c] = orig + eps
            f_plus = _value(store, build_fn, names)
            raw[c] = orig - eps
            f_minus = _value(store, build_fn, names)
            raw[c] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            gc = g[c] if g.shape else float(g)
            err = abs(fd - gc) / max(abs(fd), abs(gc), 1e-6)
            if err > worst_err:
                worst_err, worst_coord = err, c
        report[name] = (worst_err, worst_coord)
    return report
