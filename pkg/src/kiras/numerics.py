"""Small dense-network stack: batched forward, exact reverse-mode gradients, Adam.

Everything runs in float64. A network is a list of (W, b) pairs plus one
activation name per layer; ``forward_cached`` returns the output and an
explicit cache, and ``backward`` consumes that cache, so no state hides in
the object between calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("elu", "tanh", "linear")


class NonFiniteError(FloatingPointError):
    """Raised when a parameter or loss becomes NaN/Inf."""


def _act(name, x):
    if name == "elu":
        return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))
    if name == "tanh":
        return np.tanh(x)
    return x


def _act_grad(name, pre, post):
    # derivative expressed through pre-activation and activation output
    if name == "elu":
        return np.where(pre > 0.0, 1.0, post + 1.0)
    if name == "tanh":
        return 1.0 - post * post
    return np.ones_like(pre)


def orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float = 1.0) -> np.ndarray:
    """Orthogonal init of an (n_in, n_out) matrix."""
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return np.ascontiguousarray(gain * q[:n_in, :n_out])


class DenseNet:
    """Fully connected network; ``weights[k]`` has shape (dims[k], dims[k+1])."""

    def __init__(self, layer_dims, activations=None, rng=None, out_gain=1.0, zero=False):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise ValueError(f"bad layer dims {layer_dims}")
        n_layers = len(layer_dims) - 1
        if activations is None:
            activations = ["elu"] * (n_layers - 1) + ["linear"]
        if len(activations) != n_layers or any(a not in ACTIVATIONS for a in activations):
            raise ValueError(f"bad activations {activations}")
        self.layer_dims = layer_dims
        self.activations = list(activations)
        rng = np.random.default_rng(0) if rng is None else rng
        self.weights = []
        self.biases = []
        for k in range(n_layers):
            gain = out_gain if k == n_layers - 1 else 1.0
            if zero:
                w = np.zeros((layer_dims[k], layer_dims[k + 1]))
            else:
                w = orthogonal(rng, layer_dims[k], layer_dims[k + 1], gain)
            self.weights.append(w)
            self.biases.append(np.zeros(layer_dims[k + 1]))

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, params) -> None:
        params = list(params)
        for k in range(len(self.weights)):
            w, b = params[2 * k], params[2 * k + 1]
            if w.shape != self.weights[k].shape or b.shape != self.biases[k].shape:
                raise ValueError("parameter shape mismatch")
            self.weights[k] = np.array(w, dtype=np.float64)
            self.biases[k] = np.array(b, dtype=np.float64)

    def copy(self) -> "DenseNet":
        other = DenseNet.__new__(DenseNet)
        other.layer_dims = list(self.layer_dims)
        other.activations = list(self.activations)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input dim {x.shape[-1]} != {self.in_dim}")
        return x

    def __call__(self, x):
        x = self._check_input(x)
        h = x
        for w, b, a in zip(self.weights, self.biases, self.activations):
            h = _act(a, h @ w + b)
        return h

    def forward_cached(self, x):
        """Forward pass returning ``(output, cache)`` for a later ``backward``."""
        x = self._check_input(x)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        inputs, pres, posts = [], [], []
        for w, b, a in zip(self.weights, self.biases, self.activations):
            inputs.append(h)
            pre = h @ w + b
            h = _act(a, pre)
            pres.append(pre)
            posts.append(h)
        cache = {"inputs": inputs, "pres": pres, "posts": posts, "squeeze": squeeze}
        return (h[0] if squeeze else h), cache

    def backward(self, cache, grad_out):
        """Return ``(param_grads, input_grad)``; param grads are summed over the batch."""
        if cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        g = np.asarray(grad_out, dtype=np.float64)
        if cache["squeeze"]:
            g = g[None, :]
        grads = [None] * (2 * len(self.weights))
        for k in reversed(range(len(self.weights))):
            g = g * _act_grad(self.activations[k], cache["pres"][k], cache["posts"][k])
            grads[2 * k] = cache["inputs"][k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.weights[k].T
        return grads, (g[0] if cache["squeeze"] else g)

    def widen_input(self, extra: int, at: int | None = None) -> None:
        """Insert ``extra`` zero-initialized input columns (rows of W1) at index ``at``."""
        at = self.in_dim if at is None else at
        w = self.weights[0]
        self.weights[0] = np.concatenate([w[:at], np.zeros((extra, w.shape[1])), w[at:]], axis=0)
        self.layer_dims[0] += extra

    def widen_output(self, extra: int, at: int | None = None) -> None:
        """Insert ``extra`` zero output units into the last layer."""
        at = self.out_dim if at is None else at
        w, b = self.weights[-1], self.biases[-1]
        self.weights[-1] = np.concatenate([w[:, :at], np.zeros((w.shape[0], extra)), w[:, at:]], axis=1)
        self.biases[-1] = np.concatenate([b[:at], np.zeros(extra), b[at:]])
        self.layer_dims[-1] += extra


def check_finite(arrays, what="parameters") -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite {what}")


def clip_grad_norm(grads, max_norm: float):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        grads = [g * scale for g in grads]
    return grads, total


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   learning_rate=learning_rate, **kw)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update. Returns new parameter arrays; ``state`` is advanced in place."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("parameter/gradient count mismatch")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = b2 * state.second_moment[i] + (1.0 - b2) * g * g
        state.first_moment[i] = m
        state.second_moment[i] = v
        out.append(p - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon))
    return out


class Adam:
    """Adam bound to a fixed list of parameter-owning objects (nets or raw arrays)."""

    def __init__(self, owners, learning_rate=1e-3, max_grad_norm=None):
        self.owners = list(owners)
        self.state = AdamState.for_params(self._params(), learning_rate=learning_rate)
        self.max_grad_norm = max_grad_norm

    def _params(self):
        out = []
        for o in self.owners:
            out += o.params()
        return out

    def step(self, grads):
        if self.max_grad_norm is not None:
            grads, _ = clip_grad_norm(grads, self.max_grad_norm)
        check_finite(grads, "gradients")
        new = adam_step(self._params(), grads, self.state)
        check_finite(new)
        k = 0
        for o in self.owners:
            n = len(o.params())
            o.set_params(new[k:k + n])
            k += n


class ParamVector:
    """A bare learnable array exposing the ``params``/``set_params`` protocol."""

    def __init__(self, value):
        self.value = np.array(value, dtype=np.float64)

    def params(self):
        return [self.value]

    def set_params(self, params):
        (v,) = params
        if v.shape != self.value.shape:
            raise ValueError("parameter shape mismatch")
        self.value = np.array(v, dtype=np.float64)
