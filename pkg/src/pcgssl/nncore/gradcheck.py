"""Finite-difference verification of reverse-mode gradients."""
import numpy as np

from ..errors import NonFiniteGradient
from .tensor import PieceLock


def grad_check(f, params, eps=1e-5, max_coords=None, rng=None, floor=1e-8, piecewise=False):
    """Compare autodiff gradients of scalar ``f(params)`` with central differences.

    ``params`` is a ``ParameterSet`` (64-bit).  Returns the largest relative
    error ``|a - n| / max(|a|, |n|, floor)`` over the checked coordinates.
    ``max_coords`` samples that many coordinates per tensor instead of all.

    ``piecewise`` differentiates the smooth piece containing ``params``: the
    ReLU signs and pooling winners of the unperturbed pass are replayed in
    the probes, so no kink falls inside the stencil.  Where ``f`` is
    differentiable this is its derivative, and it allows a step large enough
    to keep roundoff well below small gradients.
    """
    rng = rng or np.random.default_rng(0)
    lock = PieceLock()
    params.zero_grad()
    if piecewise:
        with lock.record():
            out = f(params)
    else:
        out = f(params)
    out.backward()

    def probe():
        if not piecewise:
            return float(f(params).data)
        with lock.replay():
            return float(f(params).data)

    worst = 0.0
    for path, t in params.trainable().items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        if not np.all(np.isfinite(analytic)):
            raise NonFiniteGradient(f"non-finite gradient in {path}")
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = probe()
            flat[i] = orig - eps
            down = probe()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    params.zero_grad()
    return worst
