"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError
from .tensor import Tensor, no_grad, zero_grad


def finite_diff_check(f, params, h: float = 1e-5) -> float:
    """Compare backward() gradients of f against central differences.

    f is a zero-argument callable rebuilding the forward pass from the current
    values of `params` (a list of Tensors) and returning a scalar Tensor. The
    return value is max over every coordinate of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    params = list(params)
    for p in params:
        if not p.requires_grad:
            raise ContractError("finite_diff_check params must have requires_grad set")
    zero_grad(params)
    out = f()
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("finite_diff_check needs f to return a scalar Tensor")
    if not np.isfinite(out.data).all():
        raise NumericError("f returned NaN/Inf at the expansion point")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def probe() -> float:
        val = f()
        v = float(val.data.reshape(()))
        if not np.isfinite(v):
            raise NumericError("f returned NaN/Inf while probing")
        return v

    max_rel = 0.0
    with no_grad():
        for p, an in zip(params, analytic):
            flat = p.data.reshape(-1)
            aflat = an.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = probe()
                flat[i] = orig - h
                f_minus = probe()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                rel = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-8)
                max_rel = max(max_rel, rel)
    zero_grad(params)
    return max_rel
