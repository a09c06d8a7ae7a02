"""Directional central finite-difference oracle for scalar losses."""
import torch


def directional_check(loss_fn, params, seed, eps=1e-6):
    """Return (analytic, numeric) directional derivatives along a random unit direction.

    ``loss_fn`` is re-evaluated with every tensor in ``params`` shifted in place.
    """
    gen = torch.Generator().manual_seed(10_000 + seed)
    dirs = [torch.randn(p.shape, generator=gen, dtype=p.dtype) for p in params]
    norm = sum(float((v * v).sum()) for v in dirs) ** 0.5
    dirs = [v / norm for v in dirs]
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    analytic = sum(float((g * v).sum()) for g, v in zip(grads, dirs) if g is not None)
    with torch.no_grad():
        for p, v in zip(params, dirs):
            p.add_(eps * v)
        plus = float(loss_fn())
        for p, v in zip(params, dirs):
            p.sub_(2 * eps * v)
        minus = float(loss_fn())
        for p, v in zip(params, dirs):
            p.add_(eps * v)
    return analytic, (plus - minus) / (2 * eps)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)
