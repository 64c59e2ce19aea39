"""Central finite-difference gradient checking."""

import numpy as np


def numerical_grad(loss_fn, param, h=1e-3, indices=None):
    """d loss / d param by central differences, perturbing ``param.data`` in place.

    ``indices`` restricts the check to those flat positions; the others stay
    zero in the returned array.
    """
    grad = np.zeros(param.shape, dtype=np.float64)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + h
        up = float(loss_fn().data)
        flat[i] = orig - h
        down = float(loss_fn().data)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-3):
    """Elementwise |a - n| / max(|a|, |n|, floor), maximised."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(loss_fn, params, h=1e-3, samples=None, rng=None):
    """Max relative error between backprop and finite differences over ``params``.

    ``params`` maps names to leaf tensors. With ``samples`` set, only that many
    randomly chosen entries per tensor are checked. Run under float64 for
    meaningful results.
    """
    rng = np.random.default_rng(rng)
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    analytic = {n: np.array(p.grad, dtype=np.float64) for n, p in params.items()}
    worst = 0.0
    per_param = {}
    for name, p in params.items():
        idx = None
        if samples is not None and p.size > samples:
            idx = np.sort(rng.choice(p.size, samples, replace=False))
        numeric = numerical_grad(loss_fn, p, h, idx)
        a = analytic[name].reshape(-1)
        n = numeric.reshape(-1)
        if idx is not None:
            a, n = a[idx], n[idx]
        err = relative_error(a, n)
        per_param[name] = err
        worst = max(worst, err)
    return worst, per_param
