"""Independent reference computations used by the tests.

Nothing here imports the package: these are deliberately naive, loop-based
re-statements of the formulas so they can act as oracles.
"""
import math

import numpy as np


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def mlp_forward_loops(weights, biases, activations, x):
    h = [float(v) for v in x]
    for W, b, act in zip(weights, biases, activations):
        out = []
        for i in range(len(b)):
            s = b[i]
            for j in range(len(h)):
                s += W[i][j] * h[j]
            out.append(max(s, 0.0) if act == "relu" else s)
        h = out
    return np.array(h)


def _norm(v):
    return math.sqrt(sum(t * t for t in v))


def _dot(a, b):
    return sum(s * t for s, t in zip(a, b))


def deconfound_logit_direct(x, W, K, tau, gamma):
    """Multi-head normalized logits written straight from the formula."""
    D = len(x)
    d = D // K
    out = []
    for w in W:
        total = 0.0
        for k in range(K):
            xk, wk = x[k * d:(k + 1) * d], w[k * d:(k + 1) * d]
            total += _dot(wk, xk) / ((_norm(wk) + gamma) * _norm(xk))
        out.append(tau / K * total)
    return np.array(out)


def tde_logit_direct(x, W, K, tau, gamma, alpha, d_hat):
    """TDE logits from the formula; ``d_hat`` is the full-length EMA direction."""
    D = len(x)
    d = D // K
    out = []
    for w in W:
        total = 0.0
        for k in range(K):
            xk, wk = x[k * d:(k + 1) * d], w[k * d:(k + 1) * d]
            dk = d_hat[k * d:(k + 1) * d]
            nd = _norm(dk)
            dk = [t / nd for t in dk]
            cos = _dot(xk, dk) / (_norm(xk) * _norm(dk))
            total += (_dot(wk, xk) / ((_norm(wk) + gamma) * _norm(xk))
                      - alpha * cos * _dot(wk, dk) / (_norm(wk) + gamma))
        out.append(tau / K * total)
    return np.array(out)


def ema_loop(xs, mu):
    acc = np.zeros(len(xs[0]))
    for x in xs:
        acc = [mu * a + v for a, v in zip(acc, x)]
    return np.array(acc)


def velocity_unrolled(grads, mu):
    T = len(grads)
    return sum(mu ** (T - 1 - i) * np.asarray(g) for i, g in enumerate(grads))
