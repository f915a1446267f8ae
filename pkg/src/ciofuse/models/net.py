"""Multi-head MLP regressor trained by full-batch gradient descent.

One shared tanh trunk feeds ``n_heads`` linear outputs. Each training row is
scored only on its own head, so ``n_heads=1`` is an ordinary MLP and
``n_heads=2`` is the shared-representation two-arm model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NetState:
    weights: tuple  # (W1, b1, ..., Wout, bout)
    x_shift: np.ndarray
    x_scale: np.ndarray
    y_shift: float
    y_scale: float

    @property
    def n_heads(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def hidden_widths(self) -> tuple:
        return tuple(W.shape[1] for W in self.weights[:-2:2])

    def copy(self) -> "NetState":
        return NetState(
            tuple(a.copy() for a in self.weights),
            self.x_shift.copy(), self.x_scale.copy(), self.y_shift, self.y_scale,
        )

    def predict(self, X, head=0):
        Z = (X - self.x_shift) / self.x_scale
        out, _ = forward(self.weights, Z)
        return out[:, head] * self.y_scale + self.y_shift


def init_weights(p, hidden_widths, n_heads, rng):
    sizes = [p, *hidden_widths, n_heads]
    weights = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        weights.append(np.zeros(fan_out))
    return tuple(weights)


def forward(weights, Z):
    acts = [Z]
    h = Z
    n_layers = len(weights) // 2
    for k in range(n_layers - 1):
        h = np.tanh(h @ weights[2 * k] + weights[2 * k + 1])
        acts.append(h)
    out = h @ weights[-2] + weights[-1]
    return out, acts


def loss_and_grad(weights, Z, y, heads, w):
    """Weighted squared error ``sum_i w_i (out[i, heads[i]] - y_i)^2`` and its gradient."""
    out, acts = forward(weights, Z)
    rows = np.arange(Z.shape[0])
    r = out[rows, heads] - y
    loss = float(w @ r**2)
    g_out = np.zeros_like(out)
    g_out[rows, heads] = 2.0 * w * r
    grads = [None] * len(weights)
    g = g_out
    n_layers = len(weights) // 2
    for k in range(n_layers - 1, -1, -1):
        a = acts[k]
        grads[2 * k] = a.T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        if k > 0:
            g = (g @ weights[2 * k].T) * (1.0 - a**2)
    return loss, grads


def train(weights, Z, y, heads, w, epochs, step_size):
    weights = [a.copy() for a in weights]
    for _ in range(epochs):
        _, grads = loss_and_grad(weights, Z, y, heads, w)
        for a, g in zip(weights, grads):
            a -= step_size * g
    return tuple(weights)


def make_state(X, y, hidden_widths, n_heads, rng):
    x_shift = X.mean(axis=0)
    x_scale = X.std(axis=0)
    x_scale[x_scale < 1e-12] = 1.0
    y_shift = float(y.mean())
    y_scale = float(y.std()) or 1.0
    weights = init_weights(X.shape[1], hidden_widths, n_heads, rng)
    return NetState(weights, x_shift, x_scale, y_shift, y_scale)


def fit_state(state: NetState, X, y, heads, w, epochs, step_size) -> NetState:
    """Continue training ``state`` on ``(X, y)``; the scalers are kept as-is."""
    Z = (X - state.x_shift) / state.x_scale
    yz = (y - state.y_shift) / state.y_scale
    weights = train(state.weights, Z, yz, np.asarray(heads, dtype=np.intp), w, epochs, step_size)
    return NetState(weights, state.x_shift, state.x_scale, state.y_shift, state.y_scale)
