"""Independent reference implementations used as test oracles."""

import numpy as np

from fedsim.nn import LAYER_SLICES, NUM_PARAMS


def batched_forward(param_rows, x):
    """Predictions of many parameter vectors at once: (K, P) x (n, 110) -> (K, n).

    Plain einsum over explicitly sliced weights; shares no code with the
    package's forward pass.
    """
    param_rows = np.atleast_2d(param_rows)
    k = param_rows.shape[0]
    a = np.broadcast_to(x, (k,) + x.shape)
    for layer, (w_sl, shape, b_sl) in enumerate(LAYER_SLICES):
        w = param_rows[:, w_sl].reshape((k,) + shape)
        z = np.einsum("kni,kio->kno", a, w) + param_rows[:, None, b_sl]
        a = 1.0 / (1.0 + np.exp(-z)) if layer == len(LAYER_SLICES) - 1 else np.maximum(z, 0.0)
    return a[:, :, 0]


def potential_terms(param_rows, modifier=None):
    """Per-coordinate terms of the scalar field whose gradient is the
    modifier's extra term; the field is their sum over the last axis."""
    param_rows = np.atleast_2d(param_rows)
    if modifier is None or modifier.kind == "none":
        return np.zeros_like(param_rows)
    if modifier.kind == "proximal":
        return 0.5 * modifier.lam * (param_rows - modifier.anchor) ** 2
    if modifier.kind == "variate_correction":
        return param_rows * (modifier.c_global - modifier.c_local)
    if modifier.kind == "additive":
        return modifier.lam * param_rows * modifier.term
    raise ValueError(modifier.kind)


def potential(param_rows, modifier=None):
    return potential_terms(param_rows, modifier).sum(axis=1)


def objective(param_rows, x, y, modifier=None):
    """Mean BCE (no clamp) plus the potential whose gradient is the modifier."""
    p = batched_forward(param_rows, x)
    loss = np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p)), axis=1)
    return loss + potential(param_rows, modifier)


def fd_gradient(params, x, y, modifier=None, h=1e-5, coords=None, chunk=256):
    """Central finite differences on every (or the given) coordinate."""
    coords = np.arange(NUM_PARAMS) if coords is None else np.asarray(coords)
    y = np.asarray(y, dtype=np.float64)
    out = np.empty(len(coords))
    for start in range(0, len(coords), chunk):
        idx = coords[start:start + chunk]
        up = np.repeat(params[None, :], len(idx), axis=0)
        dn = up.copy()
        up[np.arange(len(idx)), idx] += h
        dn[np.arange(len(idx)), idx] -= h
        out[start:start + len(idx)] = (objective(up, x, y, modifier) - objective(dn, x, y, modifier)) / (2 * h)
    return out


def fd_potential(params, modifier, h=1e-5):
    """Central differences of the potential alone, on every coordinate.

    The potential is a sum of per-coordinate terms, so nudging coordinate j
    changes only term j. Central differences are linear in the objective,
    so adding this to the loss-only estimate gives the full estimate."""
    up = potential_terms(params + h, modifier)[0]
    dn = potential_terms(params - h, modifier)[0]
    return (up - dn) / (2 * h)


def max_relative_error(analytic, numeric, floor=1e-6):
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def jsd_histograms(a, b, bins=20):
    """Mean over feature columns of the Jensen-Shannon distance between
    per-column histograms on [0, 1]."""
    from scipy.spatial.distance import jensenshannon

    edges = np.linspace(0.0, 1.0, bins + 1)
    dists = []
    for col in range(a.shape[1]):
        ha, _ = np.histogram(a[:, col], bins=edges)
        hb, _ = np.histogram(b[:, col], bins=edges)
        dists.append(jensenshannon(ha + 1e-12, hb + 1e-12, base=2))
    return float(np.mean(dists))


def brute_weighted_sum(weights, vectors):
    """sum_i weights[i] * vectors[i], coordinate by coordinate in Python."""
    n = len(vectors[0])
    out = [0.0] * n
    for w, v in zip(weights, vectors):
        for j in range(n):
            out[j] += float(w) * float(v[j])
    return np.array(out)
