"""Shared test helpers: finite-difference gradient checking and friends."""

import numpy as np


def central_fd(fun, weights, h=1e-5):
    """Central finite differences of a scalar function over dict weights.

    `fun(weights)` must return (value, signature) where signature is an
    array encoding the discrete activation pattern of the forward pass
    (ReLU masks, hinge active flags). A coordinate whose +h/-h evaluations
    disagree on the signature sits within h of a kink and is marked
    excluded rather than differenced.

    Returns (fd_grads, excluded) as dicts of arrays shaped like `weights`.
    """
    fd = {k: np.zeros_like(v) for k, v in weights.items()}
    excluded = {k: np.zeros(v.shape, dtype=bool) for k, v in weights.items()}
    for key, arr in weights.items():
        flat = arr.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, sig_up = fun(weights)
            flat[i] = orig - h
            down, sig_down = fun(weights)
            flat[i] = orig
            fd[key].ravel()[i] = (up - down) / (2.0 * h)
            if not np.array_equal(sig_up, sig_down):
                excluded[key].ravel()[i] = True
    return fd, excluded


def relative_errors(analytic, fd, floor=1e-6):
    """Elementwise |a - f| / max(|a|, |f|, floor) over dict grads."""
    out = {}
    for key in analytic:
        a = analytic[key]
        f = fd[key]
        out[key] = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    return out


def check_grads(analytic, fd, excluded, tol=1e-4):
    """Fraction of non-excluded coordinates within tolerance, with counts."""
    errs = relative_errors(analytic, fd)
    n_ok = 0
    n_checked = 0
    n_excluded = 0
    worst = 0.0
    for key in analytic:
        keep = ~excluded[key]
        n_excluded += int(excluded[key].sum())
        vals = errs[key][keep]
        n_checked += vals.size
        n_ok += int((vals < tol).sum())
        if vals.size:
            worst = max(worst, float(vals.max()))
    return n_ok, n_checked, n_excluded, worst
