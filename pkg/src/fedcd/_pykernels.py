"""Numpy implementation of the MLP kernels.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
reference the compiled path is tested against. All functions take the layer
sizes, an activation code (0 = relu, 1 = tanh) and the flat parameter vector
laid out as ``W_0, b_0, W_1, b_1, ...`` with each ``W_l`` row-major
``(fan_in, fan_out)``.
"""

import numpy as np

RELU, TANH = 0, 1


def _layers(sizes, params):
    out = []
    off = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        fan_in, fan_out = int(fan_in), int(fan_out)
        W = params[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = params[off:off + fan_out]
        off += fan_out
        out.append((W, b))
    return out


def _act(z, act):
    return np.maximum(z, 0.0) if act == RELU else np.tanh(z)


def _act_grad(z, h, act):
    return (z > 0.0).astype(np.float64) if act == RELU else 1.0 - h * h


def logits(sizes, act, params, X):
    h = X
    layers = _layers(sizes, params)
    for l, (W, b) in enumerate(layers):
        z = h @ W + b
        h = z if l == len(layers) - 1 else _act(z, act)
    return h


def predict(sizes, act, params, X):
    # np.argmax returns the first maximal index, i.e. lowest class on ties
    return np.argmax(logits(sizes, act, params, X), axis=1).astype(np.int64)


def loss_and_grad(sizes, act, params, X, y):
    layers = _layers(sizes, params)
    n = X.shape[0]
    hs = [X]
    zs = []
    for l, (W, b) in enumerate(layers):
        z = hs[-1] @ W + b
        zs.append(z)
        if l < len(layers) - 1:
            hs.append(_act(z, act))

    z = zs[-1]
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = float(np.mean(np.log(s[:, 0]) + zmax[:, 0] - z[rows, y]))

    delta = e / s
    delta[rows, y] -= 1.0
    delta /= n

    grads = []
    for l in range(len(layers) - 1, -1, -1):
        W, _ = layers[l]
        grads.append(delta.sum(axis=0))
        grads.append((hs[l].T @ delta).ravel())
        if l > 0:
            delta = (delta @ W.T) * _act_grad(zs[l - 1], hs[l], act)
    grad = np.concatenate(grads[::-1])
    return loss, grad


def sgd_epochs(sizes, act, params, X, y, order, lr, batch_size):
    """Run mini-batch SGD in place over the index sequence ``order``.

    ``order`` holds one permutation of ``range(len(X))`` per epoch,
    concatenated; batches never straddle an epoch boundary.
    """
    n = X.shape[0]
    epochs = len(order) // n
    for e in range(epochs):
        perm = order[e * n:(e + 1) * n]
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            _, g = loss_and_grad(sizes, act, params, X[idx], y[idx])
            params -= lr * g
