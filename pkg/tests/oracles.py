"""Slow, independent reference implementations used by the tests."""

import math

import numpy as np


def naive_badness(bins, alpha=10.0, low=10.0, ref=20.0, decay=80, per_floor=False):
    """Loop over every bin and cell; NaN cells are void."""
    n, floors, ny, nx = bins.shape
    total = []
    for i in range(n):
        groups = [range(floors)] if not per_floor else [[f] for f in range(floors)]
        fracs, defs = [], []
        for group in groups:
            count = below = 0
            deficit = 0.0
            for f in group:
                for y in range(ny):
                    for x in range(nx):
                        v = float(bins[i, f, y, x])
                        if math.isnan(v):
                            continue
                        count += 1
                        if v < low:
                            below += 1
                        deficit += max(ref - v, 0.0)
            fracs.append(below / count)
            defs.append(deficit / count)
        frac = sum(fracs) / len(fracs)
        mdef = sum(defs) / len(defs)
        total.append(frac)
        total.append(alpha * max(1 - i / decay, 0.0) * mdef)
    return math.fsum(total)


def naive_bin_average(raw, dt_out, n_bins, width):
    out = np.zeros((n_bins,) + raw.shape[1:])
    for i in range(n_bins):
        members = [k for k in range(raw.shape[0]) if i * width <= k * dt_out < (i + 1) * width]
        acc = np.zeros(raw.shape[1:])
        for k in members:
            acc += raw[k]
        out[i] = acc / len(members)
    return out


def transitive_closure(edges, node, forward=True):
    """Nodes reachable from ``node`` along ``edges`` (pairs src -> dst)."""
    adj = {}
    for a, b in edges:
        if not forward:
            a, b = b, a
        adj.setdefault(a, set()).add(b)
    seen, stack = set(), [node]
    while stack:
        cur = stack.pop()
        for nxt in adj.get(cur, ()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def gp_posterior_dense(X, y, x, lengthscales, signal_var, noise_var):
    """Zero-mean GP posterior with a squared-exponential ARD kernel, via solve."""
    X, x = np.atleast_2d(X), np.atleast_2d(x)

    def k(a, b):
        d = (a[:, None, :] - b[None, :, :]) / np.asarray(lengthscales)
        return signal_var * np.exp(-0.5 * (d ** 2).sum(-1))

    K = k(X, X) + noise_var * np.eye(len(X))
    ks = k(x, X)
    mean = ks @ np.linalg.solve(K, y)
    var = signal_var - np.einsum("ij,ji->i", ks, np.linalg.solve(K, ks.T))
    return mean, var


def ei_closed_form(mean, sigma, best, jitter=0.0):
    if sigma <= 0:
        return max(mean - best - jitter, 0.0)
    z = (mean - best - jitter) / sigma
    pdf = math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    cdf = 0.5 * math.erfc(-z / math.sqrt(2))
    return (mean - best - jitter) * cdf + sigma * pdf
