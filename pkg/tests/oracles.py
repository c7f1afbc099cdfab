"""Reference computations written independently of the package code paths."""

import math

import numpy as np


def forward_loops(w1, b1, w2, b2, x):
    """Softmax outputs of the 2-layer ReLU net by explicit scalar loops."""
    n_in, n_hidden = len(w1), len(w1[0])
    n_out = len(w2[0])
    hidden = []
    for j in range(n_hidden):
        s = float(b1[j])
        for i in range(n_in):
            s += float(x[i]) * float(w1[i][j])
        hidden.append(max(0.0, s))
    logits = []
    for k in range(n_out):
        s = float(b2[k])
        for j in range(n_hidden):
            s += hidden[j] * float(w2[j][k])
        logits.append(s)
    top = max(logits)
    exps = [math.exp(z - top) for z in logits]
    total = sum(exps)
    return [e / total for e in exps]


def mean_nll(arrays, x, y):
    """Mean cross-entropy in float64 via log-sum-exp."""
    w1, b1, w2, b2 = arrays
    hidden = np.maximum(x @ w1 + b1, 0.0)
    logits = hidden @ w2 + b2
    top = logits.max(axis=1, keepdims=True)
    log_norm = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    return float(np.mean(log_norm - logits[np.arange(len(y)), y]))


def central_difference_grads(arrays, x, y, h=1e-4):
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + h
            up = mean_nll(arrays, x, y)
            a[idx] = orig - h
            down = mean_nll(arrays, x, y)
            a[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor=1e-7):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def scripted_adam(x0, grad_fn, steps, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar Adam trace in plain Python floats."""
    x, m, v, trace = x0, 0.0, 0.0, []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        x = x - lr * m_hat / (math.sqrt(v_hat) + eps)
        trace.append(x)
    return trace


def weighted_mean_loops(values, counts):
    """Scalar-by-scalar weighted mean of equally shaped arrays."""
    total = sum(counts)
    flat = [np.asarray(v, dtype=np.float64).ravel() for v in values]
    out = []
    for i in range(flat[0].size):
        out.append(sum(c * f[i] for c, f in zip(counts, flat)) / total)
    return np.array(out).reshape(np.shape(values[0]))


def random_instance(rng, max_dims=(8, 6, 4), max_batch=5, kink_margin=1e-3):
    """Random float64 net and batch whose hidden pre-activations stay clear of the ReLU kink."""
    while True:
        dims = tuple(int(rng.integers(1, m + 1)) for m in max_dims)
        n = int(rng.integers(1, max_batch + 1))
        w1 = rng.normal(0, 1, (dims[0], dims[1]))
        b1 = rng.normal(0, 0.5, dims[1])
        w2 = rng.normal(0, 1, (dims[1], dims[2]))
        b2 = rng.normal(0, 0.5, dims[2])
        x = rng.normal(0, 1, (n, dims[0]))
        y = rng.integers(0, dims[2], n)
        if np.abs(x @ w1 + b1).min() > kink_margin:
            return (w1, b1, w2, b2), x, y
