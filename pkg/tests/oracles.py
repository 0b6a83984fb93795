"""Reference computations that share no code with the package paths they check."""

import itertools
import math

import numpy as np


def two_pass_mean_std(a):
    n = a.shape[0]
    mean = a.sum(axis=0) / n
    return mean, np.sqrt(((a - mean) ** 2).sum(axis=0) / n)


def central_differences(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def riemann_ig(f_grad, x, baseline, steps=100_000, chunk=20_000):
    """Left-closed midpoint sum of path gradients, evaluated in chunks."""
    total = np.zeros_like(x)
    for s in range(0, steps, chunk):
        alphas = (np.arange(s, min(s + chunk, steps)) + 0.5) / steps
        pts = baseline + alphas[:, None] * (x - baseline)
        total += f_grad(pts).sum(axis=0)
    return (x - baseline) * total / steps


def shapley_by_enumeration(value, m):
    """phi_i = sum_S |S|!(m-|S|-1)!/m! [v(S+i) - v(S)] over S not containing i."""
    phi = np.zeros(m)
    for i in range(m):
        others = [j for j in range(m) if j != i]
        for r in range(m):
            w = math.factorial(r) * math.factorial(m - r - 1) / math.factorial(m)
            for S in itertools.combinations(others, r):
                with_i = np.zeros(m, dtype=bool)
                with_i[list(S)] = True
                without = with_i.copy()
                with_i[i] = True
                phi[i] += w * (value(with_i) - value(without))
    return phi


def masked_value(model, x, background):
    def value(mask):
        z = np.where(mask[None, :], x[None, :], background)
        return float(np.mean(model.forward(z)))
    return value


def best_contiguous_inertia(x, k):
    s = np.sort(np.asarray(x, dtype=float))
    best = math.inf
    for cuts in itertools.combinations(range(1, len(s)), k - 1):
        parts = np.split(s, cuts)
        best = min(best, sum(float(((p - p.mean()) ** 2).sum()) for p in parts))
    return best


def spearman(a, b):
    from scipy.stats import spearmanr
    return float(spearmanr(a, b).statistic)


def kkt_violation(X, y, fit):
    """Largest KKT residual of the centred problem at ``fit``."""
    Xc, yc = X - X.mean(axis=0), y - y.mean()
    grad = Xc.T @ (yc - Xc @ fit.coef) / X.shape[0]
    active = fit.coef != 0
    stat = np.abs(grad[active] - fit.lam * np.sign(fit.coef[active]))
    slack = np.maximum(np.abs(grad[~active]) - fit.lam, 0.0)
    return max(stat.max(initial=0.0), slack.max(initial=0.0))


def mlp_forward_ld(weights, biases, x, slope):
    """Forward pass in extended precision; slope 0 is ReLU."""
    h = np.asarray(x, dtype=np.longdouble)
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w.astype(np.longdouble) + b.astype(np.longdouble)
        if i < len(weights) - 1:
            h = np.where(h > 0, h, slope * h)
    return h[..., 0]


def central_differences_ld(weights, biases, x, slope, h=1e-5):
    """Central differences with rounding error far below the float64 level."""
    x = np.asarray(x, dtype=np.longdouble)
    g = np.zeros(x.shape[0], dtype=np.longdouble)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        up = mlp_forward_ld(weights, biases, x + e, slope)
        down = mlp_forward_ld(weights, biases, x - e, slope)
        g[i] = (up - down) / (2 * np.longdouble(h))
    return g
