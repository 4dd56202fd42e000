"""Gradient checking of taped backward rules against central differences."""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor, backward, finite_diff_grad, mul, sum_all


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference over the max magnitude seen in either gradient.

    Gradients below the floor compare absolutely (scaled by the floor), so
    mathematically-zero paths, e.g. a key bias that softmax shift-invariance
    makes inert, are judged by their ~1e-11 finite-difference noise instead
    of a 0/0 ratio.
    """
    diff = np.abs(analytic - numeric).max() if analytic.size else 0.0
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-2)
    return float(diff / denom)


def check_gradients(fn, leaves: dict[str, Tensor], eps: float = 1e-5) -> dict[str, float]:
    """Compare taped gradients of ``fn(**leaves) -> scalar`` with the oracle.

    Returns the relative error per leaf. ``fn`` must be deterministic and
    must read each leaf through the passed tensors.
    """
    for t in leaves.values():
        t.requires_grad = True
    with Tape() as tape:
        loss = fn(**leaves)
        backward(loss, tape)
    analytic = {k: t.grad.copy() for k, t in leaves.items()}

    errs = {}
    for name, t in leaves.items():
        others = dict(leaves)

        def f(x, _name=name):
            args = dict(others)
            args[_name] = x
            return fn(**args)

        numeric = finite_diff_grad(f, t, eps=eps)
        errs[name] = rel_error(analytic[name], numeric.data)
    return errs


def random_scalar_head(rng, out_dims) -> tuple:
    """A fixed random linear functional collapsing an output to a scalar.

    Plain sums hide permutation and transposition bugs; projecting onto a
    random tensor does not.
    """
    r = Tensor(rng.uniform_array(out_dims, -1.0, 1.0))
    return r, lambda y: sum_all(mul(y, r))
